#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "csg/common.hpp"
#include "csg/corpus.hpp"
#include "csg/vocab.hpp"

namespace csg {

struct OovPlan {
  double ratio = 0.0;
  std::uint64_t seed = 0;
  // Sorted, distinct.
  std::vector<std::string> oov_words;

  bool contains(const std::string& w) const {
    return std::binary_search(oov_words.begin(), oov_words.end(), w);
  }

  json to_json() const { return {{"ratio", ratio}, {"seed", seed}, {"oov_words", oov_words}}; }

  static OovPlan from_json(const json& j) {
    OovPlan p;
    p.ratio = j.at("ratio").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.oov_words = j.at("oov_words").get<std::vector<std::string>>();
    std::sort(p.oov_words.begin(), p.oov_words.end());
    p.oov_words.erase(std::unique(p.oov_words.begin(), p.oov_words.end()), p.oov_words.end());
    return p;
  }

  bool operator==(const OovPlan&) const = default;
};

enum class ValueType { KSV, USV_O, USV_M };

inline const char* to_string(ValueType t) {
  switch (t) {
    case ValueType::KSV: return "KSV";
    case ValueType::USV_O: return "USV-O";
    case ValueType::USV_M: return "USV-M";
  }
  return "KSV";
}

inline constexpr ValueType kAllValueTypes[] = {ValueType::KSV, ValueType::USV_O, ValueType::USV_M};

// Distinct word types occurring in gold slot values of the given splits.
inline std::vector<std::string> value_word_types(const Corpus& c,
                                                 std::initializer_list<Split> splits) {
  std::set<std::string> w;
  for (Split s : splits)
    for (const auto& d : c.split(s))
      for (const auto& t : d.turns)
        for (const auto& [slot, v] : t.gold_state.entries())
          for (const auto& word : v.words) w.insert(word);
  return {w.begin(), w.end()};
}

inline OovPlan select_oov_words(const Corpus& corpus, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0))
    throw ConfigError("OOV ratio must be in [0,1], got " + std::to_string(ratio));
  auto types = value_word_types(corpus, {Split::Dev, Split::Test});
  const auto k = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(types.size())));
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + uniform_index(rng, types.size() - i);
    std::swap(types[i], types[j]);
  }
  types.resize(k);
  std::sort(types.begin(), types.end());
  return {ratio, seed, std::move(types)};
}

// Replaces every plan word in the training split (utterances and gold values)
// by the literal UNK token. Gold value start positions are recorded on the
// unmasked history first, so supervision stays aligned after masking.
inline Corpus apply_oov_masking(const Corpus& corpus, const OovPlan& plan) {
  if (plan.oov_words.empty()) return corpus;
  auto types = value_word_types(corpus, {Split::Dev, Split::Test});
  for (const auto& w : plan.oov_words)
    if (!std::binary_search(types.begin(), types.end(), w))
      throw ConsistencyError("plan word '" + w +
                             "' does not occur in any dev/test slot value of this corpus");

  Corpus out = corpus;
  auto mask = [&](std::vector<std::string>& toks) {
    for (auto& w : toks)
      if (plan.contains(w)) w = std::string(kUnkToken);
  };
  for (auto& d : out.train) {
    for (int ti = 0; ti < static_cast<int>(d.turns.size()); ++ti) {
      auto& t = d.turns[ti];
      auto hist = flatten_history(d, ti);
      for (const auto& [slot, v] : t.gold_state.entries()) {
        if (!v.is_words() || t.spans.count(slot)) continue;
        if (auto s = find_last_span(hist.tokens, v.words)) t.spans[slot] = *s;
      }
    }
    for (auto& t : d.turns) {
      for (auto& u : t.context) mask(u.tokens);
      if (t.system) mask(t.system->tokens);
      mask(t.user.tokens);
      BeliefState masked;
      for (auto [slot, v] : t.gold_state.entries()) {
        mask(v.words);
        masked.set(slot, std::move(v));
      }
      t.gold_state = std::move(masked);
    }
  }
  std::set<std::string> excl(out.excluded_words.begin(), out.excluded_words.end());
  excl.insert(plan.oov_words.begin(), plan.oov_words.end());
  out.excluded_words.assign(excl.begin(), excl.end());
  return out;
}

struct DropReport {
  std::map<std::string, std::size_t> turns_before, turns_after;
};

// Removes turns whose gold state is entirely NONE. Their utterances are
// carried into the next surviving turn so histories are unchanged.
inline Corpus drop_negative_samples(const Corpus& corpus, DropReport* report = nullptr) {
  Corpus out = corpus;
  for (Split s : kAllSplits) {
    std::size_t before = 0, after = 0;
    std::vector<Dialogue> kept_dialogues;
    for (const auto& d : corpus.split(s)) {
      before += d.turns.size();
      Dialogue nd;
      nd.id = d.id;
      std::vector<Utterance> carry;
      for (const auto& t : d.turns) {
        if (t.gold_state.all_none()) {
          for (const auto* u : turn_utterances(t)) carry.push_back(*u);
          continue;
        }
        DialogueTurn nt = t;
        if (!carry.empty()) {
          carry.insert(carry.end(), nt.context.begin(), nt.context.end());
          nt.context = std::move(carry);
          carry.clear();
        }
        nt.turn_index = static_cast<int>(nd.turns.size());
        nd.turns.push_back(std::move(nt));
      }
      after += nd.turns.size();
      if (!nd.turns.empty()) kept_dialogues.push_back(std::move(nd));
    }
    out.split(s) = std::move(kept_dialogues);
    if (report) {
      report->turns_before[to_string(s)] = before;
      report->turns_after[to_string(s)] = after;
    }
  }
  return out;
}

inline int count_oov_words(const std::vector<std::string>& value, const Vocabulary& vocab) {
  int k = 0;
  for (const auto& w : value)
    if (!vocab.is_known(w)) ++k;
  return k;
}

inline ValueType label_value_type(const std::vector<std::string>& value, const Vocabulary& vocab) {
  if (value.empty()) throw std::invalid_argument("label_value_type: empty value");
  int k = count_oov_words(value, vocab);
  return k == 0 ? ValueType::KSV : k == 1 ? ValueType::USV_O : ValueType::USV_M;
}

struct StatsTable {
  // Corpus-level counts.
  int slots = 0;
  int distinct_values = 0;
  double avg_value_length = 0.0;
  double avg_states_per_turn = 0.0;
  std::map<std::string, std::size_t> turns;
  // OOV plan.
  double requested_ratio = 0.0;
  std::size_t value_word_types = 0;
  std::size_t oov_word_types = 0;
  // Test split labeling, counted per (turn, slot) gold value.
  std::size_t test_values = 0;
  std::map<std::string, std::size_t> test_counts;
  std::map<std::string, double> test_percent;

  double measured_ratio() const {
    return value_word_types ? static_cast<double>(oov_word_types) / value_word_types : 0.0;
  }

  json to_json() const {
    return {{"slots", slots},
            {"values", distinct_values},
            {"avg_value_length", avg_value_length},
            {"avg_states_per_turn", avg_states_per_turn},
            {"turns", turns},
            {"oov_ratio_requested", requested_ratio},
            {"oov_ratio_measured", measured_ratio()},
            {"value_word_types", value_word_types},
            {"oov_word_types", oov_word_types},
            {"test_values", test_values},
            {"test_counts", test_counts},
            {"test_percent", test_percent}};
  }

  std::string to_text() const {
    std::ostringstream o;
    auto line = [&](const std::string& k, const std::string& v) {
      o << k << std::string(k.size() < 28 ? 28 - k.size() : 1, ' ') << v << "\n";
    };
    line("Slots", std::to_string(slots));
    line("Values", std::to_string(distinct_values));
    line("Avg lengths per value", format_fixed(avg_value_length, 2));
    line("Avg states per turn", format_fixed(avg_states_per_turn, 2));
    line("Training turns", std::to_string(turns.at("train")));
    line("Development turns", std::to_string(turns.at("dev")));
    line("Test turns", std::to_string(turns.at("test")));
    line("OOV ratio (requested)", format_fixed(requested_ratio * 100, 1) + "%");
    line("OOV ratio (measured)", format_fixed(measured_ratio() * 100, 1) + "% (" +
                                     std::to_string(oov_word_types) + "/" +
                                     std::to_string(value_word_types) + " types)");
    for (ValueType vt : kAllValueTypes)
      line(std::string(to_string(vt)) + " in test set",
           format_fixed(test_percent.at(to_string(vt)), 1) + "%");
    return o.str();
  }
};

inline StatsTable oov_stats(const Corpus& corpus, const OovPlan& plan, const Vocabulary& vocab) {
  StatsTable st;
  st.slots = static_cast<int>(corpus.schema.size());
  std::set<std::vector<std::string>> values;
  std::size_t n_turns = 0, n_states = 0;
  for (Split s : kAllSplits) {
    std::size_t turns = 0;
    for (const auto& d : corpus.split(s)) {
      for (const auto& t : d.turns) {
        ++turns;
        n_states += t.gold_state.entries().size();
        for (const auto& [slot, v] : t.gold_state.entries())
          if (v.is_words()) values.insert(v.words);
      }
    }
    st.turns[to_string(s)] = turns;
    n_turns += turns;
  }
  st.distinct_values = static_cast<int>(values.size());
  std::size_t len = 0;
  for (const auto& v : values) len += v.size();
  st.avg_value_length = values.empty() ? 0.0 : static_cast<double>(len) / values.size();
  st.avg_states_per_turn = n_turns ? static_cast<double>(n_states) / n_turns : 0.0;

  st.requested_ratio = plan.ratio;
  st.value_word_types = value_word_types(corpus, {Split::Dev, Split::Test}).size();
  st.oov_word_types = plan.oov_words.size();

  for (ValueType vt : kAllValueTypes) st.test_counts[to_string(vt)] = 0;
  for (const auto& d : corpus.test)
    for (const auto& t : d.turns)
      for (const auto& [slot, v] : t.gold_state.entries())
        if (v.is_words()) {
          ++st.test_counts[to_string(label_value_type(v.words, vocab))];
          ++st.test_values;
        }
  for (const auto& [k, n] : st.test_counts)
    st.test_percent[k] = st.test_values ? 100.0 * static_cast<double>(n) / st.test_values : 0.0;
  return st;
}

}  // namespace csg
