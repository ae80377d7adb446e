#include <catch_amalgamated.hpp>

#include <random>

#include "csg/oov_lab.hpp"
#include "test_support.hpp"

using namespace csg;
using Catch::Approx;

namespace {

Corpus toy(int n = 300, std::uint64_t seed = 1) {
  ToyConfig cfg;
  cfg.n_dialogues = n;
  return generate_toy_corpus(cfg, seed);
}

bool mentions(const Corpus& c, const OovPlan& plan) {
  for (const auto& d : c.train)
    for (const auto& t : d.turns) {
      for (const auto* u : turn_utterances(t))
        for (const auto& w : u->tokens)
          if (plan.contains(w)) return true;
      for (const auto& [slot, v] : t.gold_state.entries())
        for (const auto& w : v.words)
          if (plan.contains(w)) return true;
    }
  return false;
}

}  // namespace

TEST_CASE("select_oov_words: requested ratio, determinism, sorted output") {
  Corpus c = toy();
  const auto types = value_word_types(c, {Split::Dev, Split::Test});
  REQUIRE(types.size() > 20);
  for (double r : {0.0, 0.3, 0.7, 1.0}) {
    OovPlan p = select_oov_words(c, r, 11);
    const double measured = static_cast<double>(p.oov_words.size()) / types.size();
    CHECK(std::abs(measured - r) <= 0.02);
    CHECK(std::is_sorted(p.oov_words.begin(), p.oov_words.end()));
    CHECK(std::adjacent_find(p.oov_words.begin(), p.oov_words.end()) == p.oov_words.end());
    CHECK(select_oov_words(c, r, 11).oov_words == p.oov_words);
  }
  CHECK(select_oov_words(c, 1.0, 3).oov_words == types);
  CHECK(select_oov_words(c, 0.3, 1).oov_words != select_oov_words(c, 0.3, 2).oov_words);
  CHECK_THROWS_AS(select_oov_words(c, 1.2, 1), ConfigError);
  CHECK_THROWS_AS(select_oov_words(c, -0.1, 1), ConfigError);
}

TEST_CASE("apply_oov_masking: plan words vanish from train, vocab and stats agree") {
  Corpus c = toy();
  for (double r : {0.0, 0.3, 0.7, 1.0}) {
    OovPlan p = select_oov_words(c, r, 5);
    Corpus m = apply_oov_masking(c, p);
    CHECK_FALSE(mentions(m, p));
    CHECK(m.dev == c.dev);
    CHECK(m.test == c.test);
    Vocabulary v = build_vocab(m);
    for (const auto& w : p.oov_words) CHECK_FALSE(v.is_known(w));
    StatsTable st = oov_stats(m, p, v);
    CHECK(std::abs(st.measured_ratio() - r) <= 0.02);
    double total = 0;
    for (const auto& [k, pct] : st.test_percent) total += pct;
    CHECK(total == Approx(100.0).margin(1e-9));
    if (r == 0.0) CHECK(st.test_percent.at("KSV") == Approx(100.0));
  }
}

TEST_CASE("apply_oov_masking: token counts and spans survive masking") {
  Corpus c = toy(120, 4);
  OovPlan p = select_oov_words(c, 0.7, 2);
  Corpus m = apply_oov_masking(c, p);
  REQUIRE(m.train.size() == c.train.size());
  for (std::size_t i = 0; i < c.train.size(); ++i) {
    const auto& a = c.train[i];
    const auto& b = m.train[i];
    for (int t = 0; t < static_cast<int>(a.turns.size()); ++t) {
      auto ha = flatten_history(a, t), hb = flatten_history(b, t);
      REQUIRE(ha.size() == hb.size());
      for (std::size_t k = 0; k < ha.size(); ++k)
        CHECK(hb.tokens[k] == (p.contains(ha.tokens[k]) ? std::string("UNK") : ha.tokens[k]));
      for (const auto& [slot, v] : a.turns[t].gold_state.entries()) {
        if (!v.is_words()) continue;
        REQUIRE(b.turns[t].spans.count(slot));
        const int s = b.turns[t].spans.at(slot);
        std::vector<std::string> got(ha.tokens.begin() + s, ha.tokens.begin() + s + v.words.size());
        CHECK(got == v.words);
      }
    }
  }
}

TEST_CASE("apply_oov_masking: a plan from another corpus is rejected") {
  Corpus c = toy();
  OovPlan p{0.5, 1, {"zzzz-not-a-value"}};
  CHECK_THROWS_AS(apply_oov_masking(c, p), ConsistencyError);
}

TEST_CASE("OovPlan JSON round trip") {
  OovPlan p = select_oov_words(toy(), 0.3, 8);
  OovPlan q = OovPlan::from_json(p.to_json());
  CHECK(q.ratio == p.ratio);
  CHECK(q.seed == p.seed);
  CHECK(q.oov_words == p.oov_words);
}

TEST_CASE("label_value_type: examples") {
  Vocabulary v({"name"}, {"da", "pizzeria"});
  CHECK(label_value_type({"da", "pizzeria"}, v) == ValueType::KSV);
  CHECK(label_value_type({"da", "vinci", "pizzeria"}, v) == ValueType::USV_O);
  CHECK(label_value_type({"golden", "wok"}, v) == ValueType::USV_M);
  CHECK(label_value_type({"UNK", "pizzeria"}, v) == ValueType::USV_O);
  CHECK_THROWS_AS(label_value_type({}, v), std::invalid_argument);
}

TEST_CASE("label_value_type: brute-force oracle on random values") {
  std::vector<std::string> known, pool;
  for (int i = 0; i < 30; ++i) known.push_back("k" + std::to_string(i));
  pool = known;
  for (int i = 0; i < 30; ++i) pool.push_back("u" + std::to_string(i));
  Vocabulary v({"s"}, known);
  std::mt19937_64 rng(9);
  std::map<ValueType, int> counts;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> value(1 + rng() % 5);
    for (auto& w : value) w = pool[rng() % pool.size()];
    int unknown = 0;
    for (const auto& w : value)
      if (std::find(known.begin(), known.end(), w) == known.end()) ++unknown;
    const ValueType oracle = unknown == 0 ? ValueType::KSV : unknown == 1 ? ValueType::USV_O : ValueType::USV_M;
    CHECK(label_value_type(value, v) == oracle);
    CHECK(count_oov_words(value, v) == unknown);
    ++counts[oracle];
  }
  CHECK(counts.size() == 3);
}

TEST_CASE("drop_negative_samples: removes all-NONE turns and carries their utterances") {
  Corpus c;
  c.schema = {"food"};
  Dialogue d;
  d.id = "d";
  d.turns.push_back(testing::turn(0, "", "hello", {}));
  d.turns.push_back(testing::turn(1, "how can i help", "thai food", {{"food", "thai"}}));
  d.turns.push_back(testing::turn(2, "ok", "thanks", {{"food", "thai"}}));
  c.train.push_back(d);
  Dialogue empty;
  empty.id = "e";
  empty.turns.push_back(testing::turn(0, "", "bye", {}));
  c.train.push_back(empty);

  DropReport rep;
  Corpus out = drop_negative_samples(c, &rep);
  CHECK(rep.turns_before.at("train") == 4);
  CHECK(rep.turns_after.at("train") == 2);
  REQUIRE(out.train.size() == 1);
  REQUIRE(out.train[0].turns.size() == 2);
  CHECK(out.train[0].turns[0].turn_index == 0);
  CHECK(flatten_history(out.train[0], 0).tokens ==
        std::vector<std::string>{"hello", "how", "can", "i", "help", "thai", "food"});
  CHECK(flatten_history(out.train[0], 1).tokens == flatten_history(d, 2).tokens);
  // Idempotent.
  CHECK(drop_negative_samples(out).train == out.train);
}

TEST_CASE("stats table text lists the value-type rows") {
  Corpus c = toy(100);
  OovPlan p = select_oov_words(c, 0.3, 1);
  Corpus m = apply_oov_masking(c, p);
  StatsTable st = oov_stats(m, p, build_vocab(m));
  const std::string txt = st.to_text();
  for (const char* row : {"KSV in test set", "USV-O in test set", "USV-M in test set", "OOV ratio (measured)"})
    CHECK(txt.find(row) != std::string::npos);
  CHECK(st.to_json().at("test_values").get<std::size_t>() == st.test_values);
}

TEST_CASE("apply_oov_masking: single-word example and empty plan") {
  Corpus c;
  c.schema = {"name"};
  Dialogue d;
  d.id = "d";
  d.turns.push_back(testing::turn(0, "", "the varsity restaurant", {{"name", "varsity"}}));
  c.train.push_back(d);
  c.test.push_back(d);
  CHECK(apply_oov_masking(c, OovPlan{}) == c);
  Corpus m = apply_oov_masking(c, OovPlan{1.0, 0, {"varsity"}});
  CHECK(m.train[0].turns[0].user.tokens == std::vector<std::string>{"the", "UNK", "restaurant"});
  CHECK(m.train[0].turns[0].spans.at("name") == 1);
  CHECK(m.test[0].turns[0].user.tokens == std::vector<std::string>{"the", "varsity", "restaurant"});
  CHECK_FALSE(build_vocab(m).is_known("varsity"));
}

TEST_CASE("drop_negative_samples: 10-turn fixture with 4 all-NONE turns") {
  Corpus c;
  c.schema = {"food"};
  Dialogue d;
  d.id = "d";
  for (int t = 0; t < 10; ++t) {
    const bool negative = t == 0 || t == 3 || t == 4 || t == 8;
    d.turns.push_back(testing::turn(t, "", "turn " + std::to_string(t),
                                    negative ? std::vector<std::pair<std::string, std::string>>{}
                                             : std::vector<std::pair<std::string, std::string>>{{"food", "thai"}}));
  }
  c.dev.push_back(d);
  DropReport rep;
  Corpus out = drop_negative_samples(c, &rep);
  CHECK(out.dev[0].turns.size() == 6);
  CHECK(rep.turns_before.at("dev") == 10);
  CHECK(rep.turns_after.at("dev") == 6);
  CHECK(flatten_history(out.dev[0], 5).tokens == flatten_history(d, 9).tokens);

  // Brute-force count on a toy corpus.
  Corpus toy_c = toy(100, 6);
  std::size_t expect = 0;
  for (const auto& dd : toy_c.train)
    for (const auto& t : dd.turns) expect += !t.gold_state.all_none();
  std::size_t got = 0;
  for (const auto& dd : drop_negative_samples(toy_c).train) got += dd.turns.size();
  CHECK(got == expect);
}
