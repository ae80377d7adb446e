#pragma once

#include <algorithm>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "csg/corpus.hpp"
#include "csg/oov_lab.hpp"
#include "csg/vocab.hpp"

namespace csg {

namespace detail {

inline void check_aligned(const std::vector<BeliefState>& pred, const std::vector<BeliefState>& gold) {
  if (pred.size() != gold.size())
    throw ConsistencyError("prediction count " + std::to_string(pred.size()) +
                           " does not match gold count " + std::to_string(gold.size()));
}

}  // namespace detail

// Fraction of turns whose whole state matches, NONE slots included.
inline double joint_accuracy(const std::vector<BeliefState>& pred, const std::vector<BeliefState>& gold,
                             const std::vector<std::string>& schema) {
  detail::check_aligned(pred, gold);
  if (gold.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    bool all = true;
    for (const auto& s : schema)
      if (!(pred[i].get(s) == gold[i].get(s))) {
        all = false;
        break;
      }
    ok += all;
  }
  return static_cast<double>(ok) / static_cast<double>(gold.size());
}

inline double slot_accuracy(const std::vector<BeliefState>& pred, const std::vector<BeliefState>& gold,
                            const std::vector<std::string>& schema) {
  detail::check_aligned(pred, gold);
  if (gold.empty() || schema.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    for (const auto& s : schema) ok += pred[i].get(s) == gold[i].get(s);
  return static_cast<double>(ok) / static_cast<double>(gold.size() * schema.size());
}

// Micro-F1 over non-NONE (turn, slot, value) triples. DONTCARE counts as a
// value.
inline double slot_f1(const std::vector<BeliefState>& pred, const std::vector<BeliefState>& gold,
                      const std::vector<std::string>& schema) {
  detail::check_aligned(pred, gold);
  std::size_t tp = 0, n_pred = 0, n_gold = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (const auto& s : schema) {
      const auto p = pred[i].get(s), g = gold[i].get(s);
      n_pred += !p.is_none();
      n_gold += !g.is_none();
      tp += !p.is_none() && p == g;
    }
  }
  if (n_pred == 0 || n_gold == 0 || tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / n_pred;
  const double recall = static_cast<double>(tp) / n_gold;
  return 2.0 * precision * recall / (precision + recall);
}

struct BucketStat {
  std::size_t correct = 0;
  std::size_t total = 0;

  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
  bool operator==(const BucketStat&) const = default;
};

// Buckets cover every non-NONE gold value. DONTCARE has no words, so it
// lands in KSV and in the zero-OOV bucket.
inline std::map<ValueType, BucketStat> accuracy_by_value_type(const std::vector<BeliefState>& pred,
                                                              const std::vector<BeliefState>& gold,
                                                              const std::vector<std::string>& schema,
                                                              const Vocabulary& vocab) {
  detail::check_aligned(pred, gold);
  std::map<ValueType, BucketStat> out;
  for (std::size_t i = 0; i < gold.size(); ++i)
    for (const auto& s : schema) {
      const auto g = gold[i].get(s);
      if (g.is_none()) continue;
      auto& b = out[g.is_words() ? label_value_type(g.words, vocab) : ValueType::KSV];
      ++b.total;
      b.correct += pred[i].get(s) == g;
    }
  return out;
}

inline constexpr int kOovCountCap = 4;  // bucket 4 holds "4 or more"

inline std::map<int, BucketStat> accuracy_by_oov_count(const std::vector<BeliefState>& pred,
                                                       const std::vector<BeliefState>& gold,
                                                       const std::vector<std::string>& schema,
                                                       const Vocabulary& vocab) {
  detail::check_aligned(pred, gold);
  std::map<int, BucketStat> out;
  for (std::size_t i = 0; i < gold.size(); ++i)
    for (const auto& s : schema) {
      const auto g = gold[i].get(s);
      if (g.is_none()) continue;
      auto& b = out[g.is_words() ? std::min(count_oov_words(g.words, vocab), kOovCountCap) : 0];
      ++b.total;
      b.correct += pred[i].get(s) == g;
    }
  return out;
}

inline std::string oov_bucket_name(int k) {
  return k >= kOovCountCap ? std::to_string(kOovCountCap) + "+" : std::to_string(k);
}

struct EvalReport {
  double joint_accuracy = 0.0;
  double slot_accuracy = 0.0;
  double slot_f1 = 0.0;
  std::map<ValueType, BucketStat> by_value_type;
  std::map<int, BucketStat> by_oov_count;
  std::size_t turns = 0;
  std::size_t slots = 0;
  std::size_t values = 0;
  nlohmann::json config = nlohmann::json::object();

  double value_type_accuracy(ValueType t) const {
    auto it = by_value_type.find(t);
    return it == by_value_type.end() ? 0.0 : it->second.accuracy();
  }

  nlohmann::json to_json() const {
    nlohmann::json vt = nlohmann::json::object();
    for (const auto& [t, b] : by_value_type)
      vt[to_string(t)] = {{"accuracy", b.accuracy()},
                          {"correct", b.correct},
                          {"count", b.total},
                          {"proportion", values ? static_cast<double>(b.total) / values : 0.0}};
    nlohmann::json oc = nlohmann::json::object();
    for (const auto& [k, b] : by_oov_count)
      oc[oov_bucket_name(k)] = {{"accuracy", b.accuracy()}, {"correct", b.correct}, {"count", b.total}};
    return {{"joint_accuracy", joint_accuracy},
            {"slot_accuracy", slot_accuracy},
            {"slot_f1", slot_f1},
            {"by_value_type", vt},
            {"by_oov_count", oc},
            {"counts", {{"turns", turns}, {"slots", slots}, {"values", values}}},
            {"config", config}};
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    r.joint_accuracy = j.at("joint_accuracy").get<double>();
    r.slot_accuracy = j.at("slot_accuracy").get<double>();
    r.slot_f1 = j.at("slot_f1").get<double>();
    for (ValueType t : kAllValueTypes) {
      if (!j.at("by_value_type").contains(to_string(t))) continue;
      const auto& b = j.at("by_value_type").at(to_string(t));
      r.by_value_type[t] = {b.at("correct").get<std::size_t>(), b.at("count").get<std::size_t>()};
    }
    for (int k = 0; k <= kOovCountCap; ++k) {
      if (!j.at("by_oov_count").contains(oov_bucket_name(k))) continue;
      const auto& b = j.at("by_oov_count").at(oov_bucket_name(k));
      r.by_oov_count[k] = {b.at("correct").get<std::size_t>(), b.at("count").get<std::size_t>()};
    }
    r.turns = j.at("counts").at("turns").get<std::size_t>();
    r.slots = j.at("counts").at("slots").get<std::size_t>();
    r.values = j.at("counts").at("values").get<std::size_t>();
    r.config = j.value("config", nlohmann::json::object());
    return r;
  }

  std::string to_text() const {
    std::ostringstream o;
    auto pct = [](double v) { return format_fixed(100.0 * v, 2); };
    o << "Joint Acc   " << pct(joint_accuracy) << "\n";
    o << "Slot Acc    " << pct(slot_accuracy) << "\n";
    o << "Slot F1     " << pct(slot_f1) << "\n";
    o << "\n" << std::left << std::setw(12) << "value type" << std::right << std::setw(9) << "share"
      << std::setw(10) << "accuracy" << std::setw(8) << "count" << "\n";
    for (const auto& [t, b] : by_value_type)
      o << std::left << std::setw(12) << to_string(t) << std::right << std::setw(9)
        << pct(values ? static_cast<double>(b.total) / values : 0.0) + "%" << std::setw(10)
        << pct(b.accuracy()) << std::setw(8) << b.total << "\n";
    o << "\n" << std::left << std::setw(12) << "OOV words" << std::right << std::setw(10) << "accuracy"
      << std::setw(8) << "count" << "\n";
    for (const auto& [k, b] : by_oov_count)
      o << std::left << std::setw(12) << oov_bucket_name(k) << std::right << std::setw(10)
        << pct(b.accuracy()) << std::setw(8) << b.total << "\n";
    return o.str();
  }

  std::string oov_count_csv() const {
    std::ostringstream o;
    o << "oov_words,accuracy,correct,count\n";
    for (const auto& [k, b] : by_oov_count)
      o << oov_bucket_name(k) << "," << b.accuracy() << "," << b.correct << "," << b.total << "\n";
    return o.str();
  }
};

inline EvalReport evaluate_predictions(const std::vector<BeliefState>& pred,
                                       const std::vector<BeliefState>& gold,
                                       const std::vector<std::string>& schema, const Vocabulary& vocab) {
  EvalReport r;
  r.joint_accuracy = joint_accuracy(pred, gold, schema);
  r.slot_accuracy = slot_accuracy(pred, gold, schema);
  r.slot_f1 = slot_f1(pred, gold, schema);
  r.by_value_type = accuracy_by_value_type(pred, gold, schema, vocab);
  r.by_oov_count = accuracy_by_oov_count(pred, gold, schema, vocab);
  r.turns = gold.size();
  r.slots = schema.size();
  for (const auto& [t, b] : r.by_value_type) r.values += b.total;
  return r;
}

// ---------------------------------------------------------------------------
// OOV-ratio sweep tables

struct SweepCell {
  double ratio = 0.0;
  std::string label;  // e.g. "seq_ptr_sum"
  double joint_accuracy = 0.0;
};

struct SweepTable {
  std::vector<std::string> columns;
  // Ascending by ratio.
  std::vector<std::pair<double, std::map<std::string, double>>> rows;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["columns"] = columns;
    j["rows"] = nlohmann::json::array();
    for (const auto& [ratio, cells] : rows) j["rows"].push_back({{"ratio", ratio}, {"joint_accuracy", cells}});
    return j;
  }

  static SweepTable from_json(const nlohmann::json& j) {
    SweepTable t;
    t.columns = j.at("columns").get<std::vector<std::string>>();
    for (const auto& r : j.at("rows"))
      t.rows.emplace_back(r.at("ratio").get<double>(),
                          r.at("joint_accuracy").get<std::map<std::string, double>>());
    return t;
  }

  std::string to_text() const {
    std::ostringstream o;
    o << "ratio ";
    for (const auto& c : columns) o << " " << std::string(c.size() < 16 ? 16 - c.size() : 0, ' ') << c;
    o << "\n";
    for (const auto& [ratio, cells] : rows) {
      o << format_fixed(100.0 * ratio, 0) << "%" << std::string(5 - std::min<std::size_t>(4, format_fixed(100.0 * ratio, 0).size()), ' ');
      for (const auto& c : columns) {
        auto it = cells.find(c);
        std::string v = it == cells.end() ? "-" : format_fixed(100.0 * it->second, 2);
        o << " " << std::string(std::max<std::size_t>(c.size(), 16) - v.size(), ' ') << v;
      }
      o << "\n";
    }
    return o.str();
  }

  std::string to_csv() const {
    std::ostringstream o;
    o << "ratio";
    for (const auto& c : columns) o << "," << c;
    o << "\n";
    for (const auto& [ratio, cells] : rows) {
      o << ratio;
      for (const auto& c : columns) {
        o << ",";
        if (auto it = cells.find(c); it != cells.end()) o << it->second;
      }
      o << "\n";
    }
    return o.str();
  }

  bool operator==(const SweepTable&) const = default;
};

inline SweepTable sweep_report(const std::vector<SweepCell>& cells) {
  SweepTable t;
  std::set<std::string> cols;
  std::map<double, std::map<std::string, double>> by_ratio;
  for (const auto& c : cells) {
    cols.insert(c.label);
    auto& row = by_ratio[c.ratio];
    if (row.count(c.label))
      throw ConsistencyError("sweep: duplicate ratio " + std::to_string(c.ratio) + " for " + c.label);
    row[c.label] = c.joint_accuracy;
  }
  t.columns.assign(cols.begin(), cols.end());
  for (auto& [r, row] : by_ratio) t.rows.emplace_back(r, std::move(row));
  return t;
}

}  // namespace csg
