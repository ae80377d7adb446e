#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "csg/common.hpp"

namespace csg {

using json = nlohmann::json;

enum class Speaker { System, User };

inline const char* to_string(Speaker s) { return s == Speaker::System ? "system" : "user"; }

struct Utterance {
  Speaker speaker = Speaker::User;
  std::vector<std::string> tokens;

  bool operator==(const Utterance&) const = default;
};

struct SlotValue {
  enum class Kind { None, DontCare, Words };

  Kind kind = Kind::None;
  std::vector<std::string> words;

  static SlotValue none() { return {}; }
  static SlotValue dontcare() { return {Kind::DontCare, {}}; }
  static SlotValue of(std::vector<std::string> w) {
    if (w.empty()) throw std::invalid_argument("slot value word list must be non-empty");
    return {Kind::Words, std::move(w)};
  }

  bool is_none() const { return kind == Kind::None; }
  bool is_words() const { return kind == Kind::Words; }

  bool operator==(const SlotValue&) const = default;

  std::string str() const {
    switch (kind) {
      case Kind::None: return "none";
      case Kind::DontCare: return "dontcare";
      case Kind::Words: return join(words);
    }
    return "none";
  }

  static SlotValue parse(std::string_view text) {
    auto toks = tokenize(text);
    if (toks.empty() || (toks.size() == 1 && toks[0] == "none")) return none();
    if (toks.size() == 1 && toks[0] == "dontcare") return dontcare();
    return of(std::move(toks));
  }
};

// Slot -> value map. Absent slots are NONE, so two states compare equal iff
// their non-NONE entries agree.
class BeliefState {
 public:
  SlotValue get(const std::string& slot) const {
    auto it = entries_.find(slot);
    return it == entries_.end() ? SlotValue::none() : it->second;
  }

  void set(const std::string& slot, SlotValue v) {
    if (v.is_none())
      entries_.erase(slot);
    else
      entries_[slot] = std::move(v);
  }

  bool all_none() const { return entries_.empty(); }
  const std::map<std::string, SlotValue>& entries() const { return entries_; }

  bool operator==(const BeliefState&) const = default;

 private:
  std::map<std::string, SlotValue> entries_;
};

struct DialogueTurn {
  int turn_index = 0;
  // Utterances of earlier turns that were removed as negative samples; they
  // stay part of this turn's history.
  std::vector<Utterance> context;
  std::optional<Utterance> system;
  Utterance user;
  BeliefState gold_state;
  // Start position of each slot's gold value in the flattened history, when
  // known independently of the (possibly masked) surface tokens.
  std::map<std::string, int> spans;

  bool operator==(const DialogueTurn&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<DialogueTurn> turns;

  bool operator==(const Dialogue&) const = default;
};

enum class Split { Train, Dev, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "dev" || s == "validation" || s == "valid") return Split::Dev;
  if (s == "test") return Split::Test;
  throw ParseError("unknown split '" + std::string(s) + "'");
}

struct Corpus {
  std::vector<std::string> schema;
  std::vector<Dialogue> train, dev, test;
  std::string provenance;
  // Words that must never enter a vocabulary built from this corpus.
  std::vector<std::string> excluded_words;

  std::vector<Dialogue>& split(Split s) {
    return s == Split::Train ? train : s == Split::Dev ? dev : test;
  }
  const std::vector<Dialogue>& split(Split s) const {
    return s == Split::Train ? train : s == Split::Dev ? dev : test;
  }

  bool operator==(const Corpus&) const = default;
};

inline constexpr Split kAllSplits[] = {Split::Train, Split::Dev, Split::Test};

enum class CorpusFormat { MultiwozLike, Dstc2Like };

inline CorpusFormat parse_corpus_format(std::string_view s) {
  if (s == "multiwoz_like" || s == "multiwoz") return CorpusFormat::MultiwozLike;
  if (s == "dstc2_like" || s == "dstc2") return CorpusFormat::Dstc2Like;
  throw ConfigError("unknown corpus format '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// History flattening

struct Origin {
  int turn = 0;
  Speaker speaker = Speaker::User;
  // Index into the turn's utterance sequence (context..., system, user).
  int utterance = 0;
  int offset = 0;

  bool operator==(const Origin&) const = default;
};

struct History {
  std::vector<std::string> tokens;
  std::vector<Origin> origins;

  std::size_t size() const { return tokens.size(); }
};

// Utterances of one turn in chronological order.
inline std::vector<const Utterance*> turn_utterances(const DialogueTurn& t) {
  std::vector<const Utterance*> out;
  for (const auto& u : t.context) out.push_back(&u);
  if (t.system) out.push_back(&*t.system);
  out.push_back(&t.user);
  return out;
}

inline History flatten_history(const Dialogue& d, int turn_index) {
  if (turn_index < 0 || turn_index >= static_cast<int>(d.turns.size()))
    throw std::out_of_range("flatten_history: turn index " + std::to_string(turn_index) +
                            " out of range for dialogue '" + d.id + "' with " +
                            std::to_string(d.turns.size()) + " turns");
  History h;
  for (int t = 0; t <= turn_index; ++t) {
    auto utts = turn_utterances(d.turns[t]);
    for (int u = 0; u < static_cast<int>(utts.size()); ++u) {
      const auto& toks = utts[u]->tokens;
      for (int k = 0; k < static_cast<int>(toks.size()); ++k) {
        h.tokens.push_back(toks[k]);
        h.origins.push_back({t, utts[u]->speaker, u, k});
      }
    }
  }
  return h;
}

inline const std::string& token_at(const Dialogue& d, const Origin& o) {
  return turn_utterances(d.turns.at(o.turn)).at(o.utterance)->tokens.at(o.offset);
}

// Most recent contiguous occurrence of `value` in `tokens`, searching
// backward from the end. Returns the start position.
inline std::optional<int> find_last_span(const std::vector<std::string>& tokens,
                                         const std::vector<std::string>& value) {
  if (value.empty() || value.size() > tokens.size()) return std::nullopt;
  for (int s = static_cast<int>(tokens.size() - value.size()); s >= 0; --s) {
    if (std::equal(value.begin(), value.end(), tokens.begin() + s)) return s;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// JSON I/O

namespace detail {

inline std::size_t line_of_offset(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte, '\n'));
}

inline Utterance make_utterance(Speaker s, const std::string& text) {
  return {s, tokenize(text)};
}

}  // namespace detail

inline Corpus corpus_from_json(const json& j, CorpusFormat format) {
  Corpus c;
  if (!j.is_object() || !j.contains("schema") || !j.contains("dialogues"))
    throw ParseError("corpus JSON must be an object with 'schema' and 'dialogues'");
  for (const auto& s : j.at("schema")) c.schema.push_back(s.get<std::string>());
  std::set<std::string> schema(c.schema.begin(), c.schema.end());
  if (schema.size() != c.schema.size()) throw SchemaError("duplicate slot name in schema");
  c.provenance = j.value("provenance", std::string{});
  if (j.contains("excluded_words"))
    for (const auto& w : j.at("excluded_words")) c.excluded_words.push_back(w.get<std::string>());

  const char* id_key = format == CorpusFormat::Dstc2Like ? "session-id" : "id";
  const char* state_key = format == CorpusFormat::Dstc2Like ? "goal-labels" : "state";

  std::set<std::string> seen_ids;
  for (const auto& dj : j.at("dialogues")) {
    Dialogue d;
    if (dj.contains(id_key))
      d.id = dj.at(id_key).get<std::string>();
    else if (dj.contains("id"))
      d.id = dj.at("id").get<std::string>();
    else
      throw ParseError("dialogue without id");
    if (!seen_ids.insert(d.id).second)
      throw SchemaError("dialogue id '" + d.id + "' appears more than once");
    Split split = parse_split(dj.value("split", std::string("train")));
    int idx = 0;
    for (const auto& tj : dj.at("turns")) {
      DialogueTurn t;
      t.turn_index = idx++;
      if (tj.contains("context")) {
        for (const auto& cj : tj.at("context")) {
          Speaker sp = cj.value("speaker", std::string("user")) == "system" ? Speaker::System
                                                                              : Speaker::User;
          t.context.push_back(detail::make_utterance(sp, cj.at("text").get<std::string>()));
        }
      }
      std::string sys = tj.value("system", std::string{});
      auto sys_utt = detail::make_utterance(Speaker::System, sys);
      if (!sys_utt.tokens.empty()) t.system = std::move(sys_utt);
      t.user = detail::make_utterance(Speaker::User, tj.value("user", std::string{}));
      if (t.user.tokens.empty())
        throw ParseError("dialogue '" + d.id + "' turn " + std::to_string(t.turn_index) +
                         ": empty user utterance");
      if (tj.contains(state_key)) {
        for (const auto& [slot, v] : tj.at(state_key).items()) {
          if (!schema.count(slot))
            throw SchemaError("slot '" + slot + "' in dialogue '" + d.id +
                              "' is not in the corpus schema");
          t.gold_state.set(slot, SlotValue::parse(v.get<std::string>()));
        }
      }
      if (tj.contains("spans")) {
        for (const auto& [slot, v] : tj.at("spans").items()) t.spans[slot] = v.get<int>();
      }
      d.turns.push_back(std::move(t));
    }
    c.split(split).push_back(std::move(d));
  }
  return c;
}

inline Corpus parse_corpus(std::string_view text, CorpusFormat format) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed corpus JSON at line " +
                     std::to_string(detail::line_of_offset(text, e.byte)) + ": " + e.what());
  }
  try {
    return corpus_from_json(j, format);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid corpus structure: ") + e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot write '" + path + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw ArtifactError("write failed for '" + path + "'");
}

inline Corpus load_corpus(const std::string& path, CorpusFormat format) {
  return parse_corpus(read_file(path), format);
}

// Serializes in the multiwoz_like layout; the reader accepts it back.
inline json corpus_to_json(const Corpus& c) {
  json j;
  j["schema"] = c.schema;
  if (!c.provenance.empty()) j["provenance"] = c.provenance;
  if (!c.excluded_words.empty()) j["excluded_words"] = c.excluded_words;
  json dialogues = json::array();
  for (Split s : kAllSplits) {
    for (const auto& d : c.split(s)) {
      json dj;
      dj["id"] = d.id;
      dj["split"] = to_string(s);
      json turns = json::array();
      for (const auto& t : d.turns) {
        json tj;
        if (!t.context.empty()) {
          json ctx = json::array();
          for (const auto& u : t.context)
            ctx.push_back({{"speaker", to_string(u.speaker)}, {"text", join(u.tokens)}});
          tj["context"] = ctx;
        }
        tj["system"] = t.system ? join(t.system->tokens) : std::string{};
        tj["user"] = join(t.user.tokens);
        json state = json::object();
        for (const auto& [slot, v] : t.gold_state.entries()) state[slot] = v.str();
        tj["state"] = state;
        if (!t.spans.empty()) tj["spans"] = t.spans;
        turns.push_back(tj);
      }
      dj["turns"] = turns;
      dialogues.push_back(dj);
    }
  }
  j["dialogues"] = dialogues;
  return j;
}

inline void save_corpus(const Corpus& c, const std::string& path) {
  write_file(path, corpus_to_json(c).dump(1) + "\n");
}

struct CorpusSummary {
  std::map<std::string, std::size_t> dialogues, turns, tokens;
};

inline CorpusSummary summarize(const Corpus& c) {
  CorpusSummary s;
  for (Split sp : kAllSplits) {
    std::size_t turns = 0, tokens = 0;
    for (const auto& d : c.split(sp)) {
      turns += d.turns.size();
      for (const auto& t : d.turns)
        for (const auto* u : turn_utterances(t)) tokens += u->tokens.size();
    }
    s.dialogues[to_string(sp)] = c.split(sp).size();
    s.turns[to_string(sp)] = turns;
    s.tokens[to_string(sp)] = tokens;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Desk-scale synthetic corpus

struct ToyConfig {
  int n_dialogues = 700;
  int n_slots = 4;
  std::pair<int, int> value_len_range{1, 3};
  // Number of generated content word types (value words plus distractors).
  // Template and cue words come on top of this.
  int vocab_size = 160;
  std::pair<int, int> distractor_len_range{0, 3};
  double multiword_value_fraction = 0.5;
  int max_turns = 4;
  double dontcare_prob = 0.05;
  int max_utterance_len = 40;
};

inline json toy_config_to_json(const ToyConfig& c) {
  return {{"n_dialogues", c.n_dialogues},
          {"n_slots", c.n_slots},
          {"value_len_range", {c.value_len_range.first, c.value_len_range.second}},
          {"vocab_size", c.vocab_size},
          {"distractor_len_range", {c.distractor_len_range.first, c.distractor_len_range.second}},
          {"multiword_value_fraction", c.multiword_value_fraction},
          {"max_turns", c.max_turns},
          {"dontcare_prob", c.dontcare_prob},
          {"max_utterance_len", c.max_utterance_len}};
}

namespace detail {

struct ToySlot {
  std::string name;
  std::string domain;
  std::vector<std::string> cue;
};

inline std::vector<ToySlot> toy_slots(int n) {
  static const std::vector<ToySlot> base = {
      {"restaurant-name", "restaurant", {"restaurant", "called"}},
      {"hotel-name", "hotel", {"hotel", "called"}},
      {"train-destination", "train", {"train", "to"}},
      {"attraction-name", "attraction", {"attraction", "called"}},
      {"taxi-departure", "taxi", {"taxi", "from"}},
      {"train-departure", "train", {"train", "from"}},
      {"taxi-destination", "taxi", {"taxi", "to"}},
  };
  std::vector<ToySlot> out;
  for (int i = 0; i < n; ++i) {
    if (i < static_cast<int>(base.size())) {
      out.push_back(base[i]);
    } else {
      std::string dom = "place" + std::to_string(i);
      out.push_back({dom + "-name", dom, {dom, "named"}});
    }
  }
  return out;
}

inline const std::vector<std::vector<std::string>>& toy_system_templates() {
  static const std::vector<std::vector<std::string>> t = {
      {"how", "can", "i", "help"},
      {"what", "else", "do", "you", "need"},
      {"sure", "anything", "else"},
      {"ok", "what", "would", "you", "like"},
  };
  return t;
}

inline const std::vector<std::vector<std::string>>& toy_leads() {
  static const std::vector<std::vector<std::string>> t = {
      {"i", "want", "a"}, {"i", "need", "the"}, {"looking", "for", "a"}, {"book", "the"}};
  return t;
}

// Distinct pseudo-words built from consonant-vowel syllables.
inline std::vector<std::string> make_word_pool(Rng& rng, std::size_t n,
                                               const std::set<std::string>& reserved) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::set<std::string> used(reserved);
  std::vector<std::string> out;
  while (out.size() < n) {
    std::size_t syl = 2 + uniform_index(rng, 2);
    std::string w;
    for (std::size_t k = 0; k < syl; ++k) {
      w.push_back(consonants[uniform_index(rng, consonants.size())]);
      w.push_back(vowels[uniform_index(rng, vowels.size())]);
    }
    if (used.insert(w).second) out.push_back(w);
  }
  return out;
}

}  // namespace detail

inline void validate(const ToyConfig& c) {
  auto [lo, hi] = c.value_len_range;
  auto [dlo, dhi] = c.distractor_len_range;
  if (c.n_dialogues < 1) throw ConfigError("toy: n_dialogues must be >= 1");
  if (c.n_slots < 1) throw ConfigError("toy: n_slots must be >= 1");
  if (c.vocab_size < 20) throw ConfigError("toy: vocab_size must be >= 20");
  if (lo < 1 || hi > 5 || lo > hi) throw ConfigError("toy: value_len_range must lie within [1,5]");
  if (dlo < 0 || dlo > dhi) throw ConfigError("toy: bad distractor_len_range");
  if (c.multiword_value_fraction < 0 || c.multiword_value_fraction > 1)
    throw ConfigError("toy: multiword_value_fraction must be in [0,1]");
  if (c.max_turns < 1) throw ConfigError("toy: max_turns must be >= 1");
  // One slot mention: distractors, lead (3), cue (2), value, distractors.
  if (2 * dhi + 5 + hi > c.max_utterance_len)
    throw ConfigError("toy: value of length " + std::to_string(hi) +
                      " does not fit the utterance budget of " +
                      std::to_string(c.max_utterance_len) + " tokens");
}

inline Corpus generate_toy_corpus(const ToyConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  const auto slots = detail::toy_slots(cfg.n_slots);

  std::set<std::string> reserved;
  for (const auto& s : slots) {
    reserved.insert(s.domain);
    for (const auto& w : s.cue) reserved.insert(w);
  }
  for (const auto& t : detail::toy_system_templates()) reserved.insert(t.begin(), t.end());
  for (const auto& t : detail::toy_leads()) reserved.insert(t.begin(), t.end());
  for (const char* w : {"any", "is", "fine", "thanks", "hello", "and", "also", "none", "dontcare"})
    reserved.insert(w);
  reserved.insert(std::string(kUnkToken));

  const auto n_value = std::max<std::size_t>(
      static_cast<std::size_t>(cfg.value_len_range.second),
      static_cast<std::size_t>(std::lround(0.6 * cfg.vocab_size)));
  const std::size_t n_distract = std::max<std::size_t>(1, cfg.vocab_size - n_value);
  auto pool = detail::make_word_pool(rng, n_value + n_distract, reserved);
  std::vector<std::string> value_pool(pool.begin(), pool.begin() + n_value);
  std::vector<std::string> distract_pool(pool.begin() + n_value, pool.end());

  auto pick = [&](const std::vector<std::string>& from) {
    return from[uniform_index(rng, from.size())];
  };
  auto range = [&](std::pair<int, int> r) {
    return r.first + static_cast<int>(uniform_index(rng, r.second - r.first + 1));
  };
  auto distractors = [&](std::vector<std::string>& out) {
    int n = range(cfg.distractor_len_range);
    for (int i = 0; i < n; ++i) out.push_back(pick(distract_pool));
  };
  auto make_value = [&] {
    auto [lo, hi] = cfg.value_len_range;
    int len;
    if (lo >= 2 || (hi >= 2 && bernoulli(rng, cfg.multiword_value_fraction)))
      len = std::max(2, lo) + static_cast<int>(uniform_index(rng, hi - std::max(2, lo) + 1));
    else
      len = 1;
    std::vector<std::string> v;
    while (static_cast<int>(v.size()) < len) {
      auto w = pick(value_pool);
      if (std::find(v.begin(), v.end(), w) == v.end()) v.push_back(w);
    }
    return v;
  };

  Corpus c;
  for (const auto& s : slots) c.schema.push_back(s.name);
  c.provenance = "toy:" + toy_config_to_json(cfg).dump() + ":seed=" + std::to_string(seed);

  const int n_train = std::max(1, static_cast<int>(std::lround(0.8 * cfg.n_dialogues)));
  const int n_dev = (cfg.n_dialogues - n_train) / 2;

  for (int di = 0; di < cfg.n_dialogues; ++di) {
    Dialogue d;
    char id[32];
    std::snprintf(id, sizeof(id), "toy-%05d", di);
    d.id = id;
    BeliefState state;
    int n_turns = 1 + static_cast<int>(uniform_index(rng, cfg.max_turns));
    for (int ti = 0; ti < n_turns; ++ti) {
      DialogueTurn t;
      t.turn_index = ti;
      if (ti > 0) {
        Utterance sys{Speaker::System, detail::toy_system_templates()[uniform_index(
                                           rng, detail::toy_system_templates().size())]};
        distractors(sys.tokens);
        t.system = std::move(sys);
      }
      double r = uniform_real(rng);
      int mentions = r < 0.15 ? 0 : r < 0.75 ? 1 : 2;
      std::vector<std::size_t> order(slots.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      shuffle(order.begin(), order.end(), rng);
      Utterance user{Speaker::User, {}};
      for (int m = 0; m < std::min<int>(mentions, static_cast<int>(slots.size())); ++m) {
        const auto& slot = slots[order[m]];
        if (m > 0) user.tokens.push_back("and");
        distractors(user.tokens);
        if (bernoulli(rng, cfg.dontcare_prob)) {
          for (const char* w : {"any", slot.domain.c_str(), "is", "fine"}) user.tokens.push_back(w);
          state.set(slot.name, SlotValue::dontcare());
        } else {
          const auto& lead = detail::toy_leads()[uniform_index(rng, detail::toy_leads().size())];
          user.tokens.insert(user.tokens.end(), lead.begin(), lead.end());
          user.tokens.insert(user.tokens.end(), slot.cue.begin(), slot.cue.end());
          auto value = make_value();
          user.tokens.insert(user.tokens.end(), value.begin(), value.end());
          state.set(slot.name, SlotValue::of(std::move(value)));
        }
        distractors(user.tokens);
      }
      if (user.tokens.empty() || mentions == 0) {
        user.tokens.push_back(ti == 0 ? "hello" : "thanks");
        distractors(user.tokens);
      }
      t.user = std::move(user);
      t.gold_state = state;
      d.turns.push_back(std::move(t));
    }
    Split sp = di < n_train ? Split::Train : di < n_train + n_dev ? Split::Dev : Split::Test;
    c.split(sp).push_back(std::move(d));
  }
  return c;
}

// ---------------------------------------------------------------------------

inline Corpus subsample_training(const Corpus& corpus, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ConfigError("subsample fraction must be in (0,1], got " + std::to_string(fraction));
  const std::size_t n = corpus.train.size();
  // Guard against 0.01 * 1600 evaluating to 16.000000000000004.
  const double scaled = fraction * static_cast<double>(n);
  auto keep = static_cast<std::size_t>(std::ceil(scaled - 1e-9 * std::max(1.0, scaled)));
  if (keep == 0) throw ConfigError("subsampling leaves an empty training split");
  if (keep >= n) return corpus;
  Rng rng(seed);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < keep; ++i) {
    std::size_t j = i + uniform_index(rng, n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  Corpus out = corpus;
  out.train.clear();
  for (auto i : idx) out.train.push_back(corpus.train[i]);
  return out;
}

}  // namespace csg
