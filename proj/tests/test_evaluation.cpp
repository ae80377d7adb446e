#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "csg/evaluation.hpp"

using namespace csg;
using Catch::Approx;

namespace {

const std::vector<std::string> kSchema{"food", "area", "price"};

// Plain-string view of a state: "" is NONE, "*" is DONTCARE.
using Row = std::vector<std::string>;

BeliefState state(const Row& row) {
  BeliefState b;
  for (std::size_t i = 0; i < kSchema.size(); ++i) b.set(kSchema[i], SlotValue::parse(row[i]));
  return b;
}

std::vector<BeliefState> states(const std::vector<Row>& rows) {
  std::vector<BeliefState> out;
  for (const auto& r : rows) out.push_back(state(r));
  return out;
}

Row random_row(std::mt19937_64& rng) {
  static const std::vector<std::string> values{"", "", "dontcare", "thai", "red lion", "north",
                                               "cheap", "golden wok house"};
  Row r(kSchema.size());
  for (auto& v : r) v = values[rng() % values.size()];
  return r;
}

Row perturb(Row r, std::mt19937_64& rng) {
  for (auto& v : r)
    if (rng() % 4 == 0) v = random_row(rng)[0];
  return r;
}

}  // namespace

TEST_CASE("metrics: 5-turn fixture with one wrong slot") {
  std::vector<Row> gold{{"thai", "", ""},
                        {"thai", "north", ""},
                        {"thai", "north", "cheap"},
                        {"thai", "north", "dontcare"},
                        {"red lion", "north", "dontcare"}};
  std::vector<Row> pred = gold;
  pred[2][2] = "";  // missed "cheap"
  auto p = states(pred), g = states(gold);
  CHECK(joint_accuracy(p, g, kSchema) == 0.8);
  CHECK(slot_accuracy(p, g, kSchema) == Approx(14.0 / 15.0).margin(1e-15));
  // 12 gold values, 11 predicted, all 11 correct.
  const double prec = 1.0, rec = 11.0 / 12.0;
  CHECK(slot_f1(p, g, kSchema) == Approx(2 * prec * rec / (prec + rec)).margin(1e-15));
  CHECK(joint_accuracy(g, g, kSchema) == 1.0);
  CHECK(slot_accuracy(g, g, kSchema) == 1.0);
  CHECK(slot_f1(g, g, kSchema) == 1.0);
}

TEST_CASE("slot_accuracy: 2 turns x 3 slots with one wrong cell") {
  auto g = states({{"thai", "north", ""}, {"thai", "north", "cheap"}});
  auto p = states({{"thai", "north", ""}, {"thai", "south", "cheap"}});
  CHECK(slot_accuracy(p, g, kSchema) == Approx(5.0 / 6.0).margin(1e-15));
  CHECK(joint_accuracy(p, g, kSchema) == 0.5);
}

TEST_CASE("slot_f1: P=2/3, R=2/4 gives 4/7") {
  auto g = states({{"thai", "north", ""}, {"thai", "", "cheap"}});
  auto p = states({{"thai", "north", ""}, {"korean", "", ""}});
  CHECK(slot_f1(p, g, kSchema) == Approx(4.0 / 7.0).margin(1e-15));
  CHECK(slot_f1(states({{"", "", ""}, {"", "", ""}}), g, kSchema) == 0.0);
  CHECK(slot_f1(states({{"", "", ""}}), states({{"", "", ""}}), kSchema) == 0.0);
}

TEST_CASE("metrics: count mismatch is an error") {
  auto g = states({{"thai", "", ""}});
  CHECK_THROWS_AS(joint_accuracy({}, g, kSchema), ConsistencyError);
  CHECK_THROWS_AS(slot_accuracy({}, g, kSchema), ConsistencyError);
  CHECK_THROWS_AS(slot_f1({}, g, kSchema), ConsistencyError);
}

TEST_CASE("metrics: brute-force oracles, ordering and permutation invariance on random pairs") {
  std::mt19937_64 rng(77);
  Vocabulary vocab({"food", "area", "price"}, {"thai", "red", "north", "golden"});
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 50);
    std::vector<Row> gold, pred;
    for (int i = 0; i < n; ++i) {
      gold.push_back(random_row(rng));
      pred.push_back(rng() % 3 == 0 ? gold.back() : perturb(gold.back(), rng));
    }
    std::size_t joint = 0, cells = 0, tp = 0, np = 0, ng = 0;
    std::map<std::string, std::pair<int, int>> by_type;
    std::map<int, std::pair<int, int>> by_count;
    for (int i = 0; i < n; ++i) {
      bool all = true;
      for (std::size_t s = 0; s < kSchema.size(); ++s) {
        const std::string &a = pred[i][s], &b = gold[i][s];
        all &= a == b;
        cells += a == b;
        np += !a.empty();
        ng += !b.empty();
        tp += !a.empty() && a == b;
        if (b.empty()) continue;
        int oov = 0;
        if (b != "dontcare") {
          std::istringstream words(b);
          for (std::string w; words >> w;) oov += !(w == "thai" || w == "red" || w == "north" || w == "golden");
        }
        const std::string type = oov == 0 ? "KSV" : oov == 1 ? "USV-O" : "USV-M";
        by_type[type].first += a == b;
        by_type[type].second += 1;
        by_count[std::min(oov, 4)].first += a == b;
        by_count[std::min(oov, 4)].second += 1;
      }
      joint += all;
    }
    auto p = states(pred), g = states(gold);
    const double ja = joint_accuracy(p, g, kSchema), sa = slot_accuracy(p, g, kSchema);
    CHECK(ja == static_cast<double>(joint) / n);
    CHECK(sa == static_cast<double>(cells) / (3.0 * n));
    CHECK(ja <= sa);
    double f1 = 0.0;
    if (tp > 0) {
      const double pr = static_cast<double>(tp) / np, rc = static_cast<double>(tp) / ng;
      f1 = 2 * pr * rc / (pr + rc);
    }
    CHECK(slot_f1(p, g, kSchema) == Approx(f1).margin(1e-12));

    auto bt = accuracy_by_value_type(p, g, kSchema, vocab);
    std::size_t total = 0;
    for (const auto& [t, b] : bt) {
      CHECK(b.correct == static_cast<std::size_t>(by_type[to_string(t)].first));
      CHECK(b.total == static_cast<std::size_t>(by_type[to_string(t)].second));
      total += b.total;
    }
    CHECK(total == ng);
    auto bc = accuracy_by_oov_count(p, g, kSchema, vocab);
    total = 0;
    for (const auto& [k, b] : bc) {
      CHECK(b.correct == static_cast<std::size_t>(by_count[k].first));
      CHECK(b.total == static_cast<std::size_t>(by_count[k].second));
      total += b.total;
    }
    CHECK(total == ng);

    if (trial % 10 == 0) {
      std::vector<std::size_t> perm(n);
      for (int i = 0; i < n; ++i) perm[i] = i;
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<BeliefState> pp, gp;
      for (auto i : perm) pp.push_back(p[i]), gp.push_back(g[i]);
      CHECK(evaluate_predictions(pp, gp, kSchema, vocab).to_json() ==
            evaluate_predictions(p, g, kSchema, vocab).to_json());
    }
  }
}

TEST_CASE("breakdowns: examples") {
  Vocabulary vocab({"food", "area", "price"}, {"thai", "north"});
  auto g = states({{"thai", "north", ""}});
  auto bt = accuracy_by_value_type(g, g, kSchema, vocab);
  CHECK(bt.size() == 1);
  CHECK(bt.count(ValueType::KSV));
  auto oov = states({{"x y z", "", ""}});
  auto bc = accuracy_by_oov_count(oov, oov, kSchema, vocab);
  REQUIRE(bc.size() == 1);
  CHECK(bc.begin()->first == 3);
  CHECK(oov_bucket_name(4) == "4+");
  CHECK(oov_bucket_name(2) == "2");
}

TEST_CASE("EvalReport: JSON round trip, proportions, text and CSV") {
  Vocabulary vocab({"food", "area", "price"}, {"thai", "north"});
  auto g = states({{"thai", "red lion", ""}, {"a b c d e", "north", "dontcare"}});
  auto p = states({{"thai", "red", ""}, {"a b c d e", "north", ""}});
  EvalReport r = evaluate_predictions(p, g, kSchema, vocab);
  CHECK(r.values == 5);
  CHECK(r.by_value_type.at(ValueType::KSV).total == 3);
  CHECK(r.by_value_type.at(ValueType::USV_M).total == 2);
  auto j = r.to_json();
  CHECK(j["by_value_type"]["USV-M"]["proportion"].get<double>() == Approx(0.4));
  EvalReport back = EvalReport::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(r.to_text().find("USV-M") != std::string::npos);
  CHECK(r.oov_count_csv().rfind("oov_words,accuracy,correct,count\n", 0) == 0);
  CHECK(r.oov_count_csv().find("\n4+,1,1,1\n") != std::string::npos);
}

TEST_CASE("sweep_report: sorting, single entry, JSON round trip, duplicates") {
  SweepTable one = sweep_report({{0.3, "seq_ptr_sum", 0.5}});
  CHECK(one.rows.size() == 1);
  SweepTable t = sweep_report({{0.7, "seq_ptr_baseline", 0.2},
                               {0.0, "seq_ptr_sum", 0.6},
                               {0.7, "seq_ptr_sum", 0.4},
                               {0.0, "seq_ptr_baseline", 0.55}});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0].first == 0.0);
  CHECK(t.rows[1].first == 0.7);
  CHECK(t.columns == std::vector<std::string>{"seq_ptr_baseline", "seq_ptr_sum"});
  CHECK(SweepTable::from_json(nlohmann::json::parse(t.to_json().dump())) == t);
  const std::string txt = t.to_text();
  CHECK(txt.find("70%") != std::string::npos);
  CHECK(txt.find("40.00") != std::string::npos);
  CHECK(t.to_csv().rfind("ratio,seq_ptr_baseline,seq_ptr_sum\n", 0) == 0);
  CHECK_THROWS_AS(sweep_report({{0.1, "a", 0.1}, {0.1, "a", 0.2}}), ConsistencyError);
}
