#include <catch_amalgamated.hpp>

#include <random>

#include "csg/model.hpp"
#include "test_support.hpp"

using namespace csg;
using Catch::Approx;
using V = ad::Vec<double>;

namespace {

V random_simplex(std::mt19937_64& rng, int n) {
  std::exponential_distribution<double> e(1.0);
  V v(n);
  for (int i = 0; i < n; ++i) v(i) = e(rng);
  return v / v.sum();
}

ModelConfig tiny(Scheme scheme, int d) {
  ModelConfig c;
  c.model = ModelKind::Hybrid;
  c.scheme = scheme;
  c.encoder.d_emb = d;
  c.encoder.d_hid = d;
  c.encoder.dropout = 0.0;
  c.encoder.word_dropout = 0.0;
  c.max_value_len = 4;
  c.embedding_init = 0.5;
  return c;
}

}  // namespace

TEST_CASE("blend: hand-computed case") {
  V pv(5), ph(3);
  pv << 0.1, 0.2, 0.3, 0.25, 0.15;
  ph << 0.5, 0.3, 0.2;
  std::vector<int> ids{4, Vocabulary::kUnk, 4};
  auto f = blend<double>(pv, ph, 0.6, ids);
  CHECK(f.vocab(4) == Approx(0.6 * 0.15 + 0.4 * 0.7));
  CHECK(f.vocab(1) == Approx(0.6 * 0.2));
  CHECK(f.position(1) == Approx(0.4 * 0.3));
  CHECK(f.position(0) == 0.0);
  CHECK(f.total() == Approx(1.0));
  CHECK_THROWS_AS(blend<double>(pv, ph, 0.5, std::vector<int>{1, 2}), std::invalid_argument);
}

TEST_CASE("blend: conservation and OOV copy mass on 1,000 random triples") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int nv = 5 + static_cast<int>(rng() % 20);
    const int l = 1 + static_cast<int>(rng() % 15);
    const double p_gen = u(rng);
    V pv = random_simplex(rng, nv), ph = random_simplex(rng, l);
    std::vector<int> ids(l);
    for (auto& i : ids) i = rng() % 3 == 0 ? Vocabulary::kUnk : 4 + static_cast<int>(rng() % (nv - 4));
    auto f = blend<double>(pv, ph, p_gen, ids);
    CHECK(std::abs(f.total() - 1.0) < 1e-6);
    double oov_hist = 0.0;
    for (int i = 0; i < l; ++i)
      if (ids[i] == Vocabulary::kUnk) oov_hist += ph(i);
    for (int i = 0; i < l; ++i)
      CHECK(f.position(i) == (ids[i] == Vocabulary::kUnk ? (1.0 - p_gen) * ph(i) : 0.0));
    CHECK(std::abs(f.position.sum() - (1.0 - p_gen) * oov_hist) < 1e-12);
    // UNK entry only carries generation mass.
    CHECK(f.vocab(Vocabulary::kUnk) == p_gen * pv(Vocabulary::kUnk));
  }
}

TEST_CASE("argmax_final: lowest index wins, vocabulary before positions") {
  FinalDistribution<double> f;
  f.vocab = V::Zero(4);
  f.position = V::Zero(2);
  f.vocab << 0.1, 0.3, 0.3, 0.0;
  f.position << 0.3, 0.0;
  auto e = argmax_final(f);
  CHECK(e.from_vocab);
  CHECK(e.index == 1);
  f.position(1) = 0.31;
  e = argmax_final(f);
  CHECK_FALSE(e.from_vocab);
  CHECK(e.index == 1);
}

TEST_CASE("gold_credit: in-vocabulary and OOV words") {
  std::vector<int> ids{5, Vocabulary::kUnk, 6, Vocabulary::kUnk, 5};
  std::vector<std::string> surface{"a", "x", "b", "x", "a"};
  auto in = gold_credit("a", 5, 0, ids, surface);
  CHECK(in.vocab_index == 5);
  CHECK(in.positions == std::vector<int>{0, 4});
  auto aligned = gold_credit("x", Vocabulary::kUnk, 3, ids, surface);
  CHECK(aligned.vocab_index == -1);
  CHECK(aligned.positions == std::vector<int>{3});
  auto loose = gold_credit("x", Vocabulary::kUnk, -1, ids, surface);
  CHECK(loose.positions == std::vector<int>{1, 3});
  auto missing = gold_credit("y", Vocabulary::kUnk, -1, ids, surface);
  CHECK_FALSE(creditable(missing));

  V pv = V::Constant(8, 1.0 / 8), ph = V::Constant(5, 0.2);
  auto f = blend<double>(pv, ph, 0.5, ids);
  CHECK(gold_mass(f, in) == Approx(0.5 / 8 + 0.5 * 0.4));
  CHECK(gold_mass(f, aligned) == Approx(0.5 * 0.2));
}

TEST_CASE("hybrid_loss: hand-computed value") {
  HybridSlotTarget<double> s;
  s.gate_probs = V(3);
  s.gate_probs << 0.6, 0.1, 0.3;
  s.gold_gate = GateClass::Ptr;
  FinalDistribution<double> f;
  f.vocab = V(4);
  f.vocab << 0.1, 0.1, 0.2, 0.4;
  f.position = V(1);
  f.position << 0.2;
  s.finals = {f, f};
  s.credits = {GoldCredit{-1, {0}}, GoldCredit{Vocabulary::kEos, {}}};
  const double expect = -(std::log(0.6) + std::log(0.2) + std::log(0.4));
  CHECK(hybrid_loss<double>({{s}}) == Approx(expect).margin(1e-12));
}

TEST_CASE("hybrid decoding: OOV words decode to surface form, EOS terminates") {
  Corpus c;
  c.schema = {"name"};
  Dialogue d;
  d.id = "d";
  d.turns.push_back(testing::turn(0, "", "book the red lion", {{"name", "red lion"}}));
  c.train.push_back(d);
  Vocabulary v({"name"}, {"book", "the"});
  auto ex = make_example(d, 0, v);
  CHECK(ex.ids[2] == Vocabulary::kUnk);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    DstModel<double> m(tiny(Scheme::Sum, 6), v, c.schema, seed);
    std::vector<SlotTrace<double>> trace;
    BeliefState b = m.predict(ex, &trace);
    for (const auto& step : trace[0].gen_steps) {
      CHECK(step.p_final.total() == Approx(1.0).margin(1e-9));
      CHECK(step.emitted != "UNK");
    }
    if (trace[0].gate == GateClass::Ptr) {
      CHECK(trace[0].gen_steps.size() <= 5);
      for (const auto& w : b.get("name").words) CHECK(w != "UNK");
    }
  }
}

TEST_CASE("hybrid teacher forcing: word from gold, context by configuration") {
  Corpus c;
  c.schema = {"name"};
  Dialogue d;
  d.id = "d";
  d.turns.push_back(testing::turn(0, "", "book the red lion tonight", {{"name", "red lion"}}));
  Vocabulary v({"name"}, {"book", "the", "tonight"});
  auto ex = make_example(d, 0, v);
  for (bool force_ctx : {false, true}) {
    ModelConfig mc = tiny(Scheme::Cat, 6);
    mc.force_context = force_ctx;
    DstModel<double> m(mc, v, c.schema, 9);
    HybridTeacher teacher = make_hybrid_teacher({"red", "lion"}, 2, v, ex.ids, ex.tokens, 4);
    CHECK(teacher.word_indices == std::vector<int>{Vocabulary::kUnk, Vocabulary::kUnk, Vocabulary::kEos});
    CHECK(teacher.aligned_positions == std::vector<int>{2, 3, -1});
    ad::Graph<double> g;
    auto enc = m.encode(g, ex, false, nullptr);
    Rng rng(1);
    TeacherForcing tf(1.0, &rng);
    auto r = m.hybrid().decode_value(g, enc, ex.tokens, ex.ids, m.embedding(), v, v.slot_index("name"),
                                     &teacher, &tf);
    REQUIRE(r.steps.size() == 3);
    CHECK(r.gold_probs.size() == 3);
    for (int t = 1; t < 3; ++t) {
      CHECK(r.steps[t].forced);
      CHECK(r.steps[t].input_word == teacher.word_indices[t - 1]);
      const int expect_ctx = force_ctx ? teacher.aligned_positions[t - 1] : r.steps[t - 1].attention_pos;
      CHECK(r.steps[t].input_ctx_pos == expect_ctx);
    }
    CHECK(tf.forced() == 2);
  }
}

TEST_CASE("gradient check: tiny hybrid model, |V|=20, l=6") {
  Corpus c;
  c.schema = {"name", "area"};
  Dialogue d;
  d.id = "d";
  d.turns.push_back(testing::turn(0, "", "book the red lion north", {{"name", "red lion"}, {"area", "north"}}));
  std::vector<std::string> words{"book", "the", "north", "tonight", "for", "two", "people",
                                 "at", "seven", "in", "a", "cheap", "place", "please"};
  Vocabulary v(c.schema, words);
  REQUIRE(v.size() == 20);
  auto ex = make_example(d, 0, v);
  ex.tokens.push_back("please");
  ex.ids.push_back(v.index("please"));
  REQUIRE(ex.tokens.size() == 6);
  for (Scheme s : kAllSchemes) {
    DstModel<double> m(tiny(s, 8), v, c.schema, 31);
    auto rep = testing::check_gradients(m.parameters(), [&](ad::Graph<double>& g) {
      Rng rng(1);
      TeacherForcing tf(1.0, &rng);
      return m.turn_loss(g, ex, rng, tf, false);
    });
    INFO(to_string(s) << " worst tensor " << rep.worst_name);
    CHECK(rep.worst < 1e-4);
  }
}

TEST_CASE("blend: boundary cases") {
  V pv(6), ph(2);
  pv << 0.05, 0.05, 0.1, 0.2, 0.4, 0.2;
  ph << 0.3, 0.7;
  std::vector<int> oov{Vocabulary::kUnk, Vocabulary::kUnk};
  auto gen = blend<double>(pv, ph, 1.0, oov);
  CHECK(gen.vocab == pv);
  CHECK(gen.position.sum() == 0.0);

  // p_gen = 0 with "da vinci" both OOV: all mass on positions, surfaces copied.
  auto copy = blend<double>(pv, ph, 0.0, oov);
  CHECK(copy.vocab.sum() == 0.0);
  CHECK(copy.position == ph);
  auto e = argmax_final(copy);
  CHECK_FALSE(e.from_vocab);
  std::vector<std::string> surface{"da", "vinci"};
  CHECK(surface[e.index] == "vinci");

  // "cheap" one-hot in both distributions.
  V onehot = V::Zero(6), here = V::Zero(2);
  onehot(4) = 1.0;
  here(1) = 1.0;
  auto pooled = blend<double>(onehot, here, 0.5, std::vector<int>{Vocabulary::kUnk, 4});
  CHECK(pooled.vocab(4) == 1.0);
}

TEST_CASE("hybrid_loss: analytic cases") {
  HybridSlotTarget<double> s;
  s.gate_probs = V(3);
  s.gate_probs << 1.0, 0.0, 0.0;
  s.gold_gate = GateClass::Ptr;
  FinalDistribution<double> uniform;
  uniform.vocab = V::Constant(50, 1.0 / 50);
  uniform.position = V::Zero(0);
  s.finals = {uniform};
  s.credits = {GoldCredit{7, {}}};
  CHECK(hybrid_loss<double>({{s}}) == Approx(std::log(50.0)).margin(1e-12));
  FinalDistribution<double> perfect;
  perfect.vocab = V::Zero(50);
  perfect.vocab(7) = 1.0;
  perfect.position = V::Zero(0);
  s.finals = {perfect};
  CHECK(hybrid_loss<double>({{s}}) == 0.0);
}
