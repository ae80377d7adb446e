#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "csg/evaluation.hpp"
#include "csg/model.hpp"

namespace csg {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 32;
  int max_epochs = 50;
  double tf_ratio = 0.5;
  int patience = 6;
  double clip = 10.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (max_epochs < 1) throw ConfigError("epochs must be >= 1");
    if (tf_ratio < 0.0 || tf_ratio > 1.0) throw ConfigError("teacher forcing ratio must be in [0,1]");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(clip > 0.0)) throw ConfigError("clip norm must be positive");
  }

  nlohmann::json to_json() const {
    return {{"lr", lr},         {"batch_size", batch_size}, {"max_epochs", max_epochs},
            {"tf_ratio", tf_ratio}, {"patience", patience},   {"clip", clip},
            {"seed", seed}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.at("lr").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.tf_ratio = j.at("tf_ratio").get<double>();
    c.patience = j.at("patience").get<int>();
    c.clip = j.at("clip").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean per turn
  double dev_joint = 0.0;
  long forced_steps = 0;
  long total_steps = 0;
  bool improved = false;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},
            {"train_loss", train_loss},
            {"dev_joint_accuracy", dev_joint},
            {"forced_steps", forced_steps},
            {"tf_steps", total_steps},
            {"improved", improved}};
  }
};

struct TrainResult {
  std::vector<EpochLog> log;
  double best_dev = -1.0;
  int best_epoch = 0;
  bool stopped_early = false;
  long forced_steps = 0;
  long total_steps = 0;
  std::string rng_state;
};

// Early stopping bookkeeping, separate so the rule can be checked alone.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  // Returns true when the metric improved.
  bool update(double metric) {
    if (metric > best_) {
      best_ = metric;
      bad_ = 0;
      return true;
    }
    ++bad_;
    return false;
  }

  bool should_stop() const { return bad_ >= patience_; }
  double best() const { return best_; }

 private:
  int patience_;
  int bad_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

template <typename T>
std::vector<BeliefState> predict_all(DstModel<T>& model, const std::vector<TurnExample>& examples) {
  std::vector<BeliefState> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(model.predict(ex));
  return out;
}

template <typename T>
EvalReport evaluate(DstModel<T>& model, const std::vector<Dialogue>& dialogues) {
  auto examples = make_examples(dialogues, model.vocab());
  if (examples.empty()) throw ConfigError("evaluate: split has no turns");
  std::vector<BeliefState> gold;
  for (const auto& ex : examples) gold.push_back(ex.gold);
  EvalReport r = evaluate_predictions(predict_all(model, examples), gold, model.schema(), model.vocab());
  r.config = model.config().to_json();
  return r;
}

template <typename T>
double joint_on(DstModel<T>& model, const std::vector<TurnExample>& examples) {
  std::vector<BeliefState> gold;
  for (const auto& ex : examples) gold.push_back(ex.gold);
  return joint_accuracy(predict_all(model, examples), gold, model.schema());
}

// Mean per-turn loss over `examples` without updating parameters. Runs in
// training mode (dropout, teacher forcing) under its own seed.
template <typename T>
double mean_loss(DstModel<T>& model, const std::vector<TurnExample>& examples, double tf_ratio,
                 std::uint64_t seed) {
  Rng rng(seed);
  TeacherForcing tf(tf_ratio, &rng);
  double total = 0.0;
  for (const auto& ex : examples) {
    ad::Graph<T> g;
    total += static_cast<double>(g.scalar(model.turn_loss(g, ex, rng, tf, true)));
  }
  return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
}

// Adam over shuffled mini-batches with per-epoch dev evaluation. On return
// the model holds the parameters of the best dev epoch.
template <typename T>
TrainResult train(DstModel<T>& model, const Corpus& corpus, const TrainConfig& tc,
                  const std::function<void(const EpochLog&)>& on_epoch = {}) {
  tc.validate();
  auto train_ex = make_examples(corpus.train, model.vocab());
  auto dev_ex = make_examples(corpus.dev, model.vocab());
  if (train_ex.empty()) throw ConfigError("train: training split has no turns");

  auto params = model.parameters();
  nn::Adam<T> opt(nn::AdamConfig{tc.lr});
  Rng rng(tc.seed);
  TeacherForcing tf(tc.tf_ratio, &rng);
  EarlyStopping stopper(tc.patience);
  std::vector<ad::Mat<T>> best;

  TrainResult res;
  std::vector<std::size_t> order(train_ex.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    const long forced0 = tf.forced(), total0 = tf.total();
    double epoch_loss = 0.0;
    int batch_no = 0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch_size, ++batch_no) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(tc.batch_size));
      nn::zero_grads(params);
      double batch_loss = 0.0;
      for (std::size_t k = b; k < e; ++k) {
        ad::Graph<T> g;
        ad::Var loss = model.turn_loss(g, train_ex[order[k]], rng, tf, true);
        const double v = static_cast<double>(g.scalar(loss));
        if (!std::isfinite(v))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_no) + " (dialogue " + train_ex[order[k]].dialogue_id +
                             ", turn " + std::to_string(train_ex[order[k]].turn) + ")");
        g.backward(loss);
        batch_loss += v;
      }
      nn::scale_grads(params, static_cast<T>(1.0 / static_cast<double>(e - b)));
      const double norm = nn::clip_grad_norm(params, tc.clip);
      if (!std::isfinite(norm))
        throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no));
      opt.step(params);
      epoch_loss += batch_loss;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(train_ex.size());
    log.forced_steps = tf.forced() - forced0;
    log.total_steps = tf.total() - total0;
    // Without a dev split every epoch counts as an improvement.
    log.dev_joint = dev_ex.empty() ? 0.0 : joint_on(model, dev_ex);
    log.improved = dev_ex.empty() ? true : stopper.update(log.dev_joint);
    if (log.improved) {
      best.clear();
      for (auto* p : params) best.push_back(p->value);
      res.best_dev = log.dev_joint;
      res.best_epoch = epoch;
    }
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (!dev_ex.empty() && stopper.should_stop()) {
      res.stopped_early = epoch < tc.max_epochs;
      break;
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  res.forced_steps = tf.forced();
  res.total_steps = tf.total();
  std::ostringstream rs;
  rs << rng;
  res.rng_state = rs.str();
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: "CSGD", u32 version, then three u64-length-prefixed sections
// (config JSON, vocabulary JSON, tensors). The tensor section is a u32 count
// followed by, per tensor, u32 name length, name, u32 rows, u32 cols and
// rows*cols little-endian float32 values in row-major order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  ModelConfig model;
  TrainConfig train;
  std::vector<std::string> schema;
  double best_dev = 0.0;
  int best_epoch = 0;
  std::string rng_state;
};

namespace detail {

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw ArtifactError("checkpoint truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

inline std::string take_bytes(const std::string& in, std::size_t& pos, std::size_t n) {
  if (pos + n > in.size()) throw ArtifactError("checkpoint truncated");
  std::string s = in.substr(pos, n);
  pos += n;
  return s;
}

inline void put_section(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

inline std::string take_section(const std::string& in, std::size_t& pos) {
  auto n = take<std::uint64_t>(in, pos);
  return take_bytes(in, pos, static_cast<std::size_t>(n));
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(DstModel<T>& model, const CheckpointMeta& meta) {
  static_assert(sizeof(float) == 4);
  nlohmann::json cfg = {{"model", model.config().to_json()},
                        {"train", meta.train.to_json()},
                        {"schema", model.schema()},
                        {"best_dev", meta.best_dev},
                        {"best_epoch", meta.best_epoch},
                        {"rng_state", meta.rng_state}};
  std::string tensors;
  auto params = model.parameters();
  std::set<std::string> names;
  detail::put<std::uint32_t>(tensors, static_cast<std::uint32_t>(params.size()));
  for (auto* p : params) {
    if (!names.insert(p->name).second) throw ArtifactError("duplicate tensor name " + p->name);
    detail::put<std::uint32_t>(tensors, static_cast<std::uint32_t>(p->name.size()));
    tensors += p->name;
    detail::put<std::uint32_t>(tensors, static_cast<std::uint32_t>(p->value.rows()));
    detail::put<std::uint32_t>(tensors, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c)
        detail::put<float>(tensors, static_cast<float>(p->value(r, c)));
  }
  std::string out = "CSGD";
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put_section(out, cfg.dump());
  detail::put_section(out, model.vocab().to_json().dump());
  detail::put_section(out, tensors);
  return out;
}

template <typename T>
DstModel<T> deserialize_checkpoint(const std::string& bytes, CheckpointMeta* meta = nullptr) {
  std::size_t pos = 0;
  if (bytes.size() < 4 || bytes.compare(0, 4, "CSGD") != 0) throw ArtifactError("not a checkpoint (bad magic)");
  pos = 4;
  const auto version = detail::take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw ArtifactError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
  nlohmann::json cfg, vocab_json;
  try {
    cfg = nlohmann::json::parse(detail::take_section(bytes, pos));
    vocab_json = nlohmann::json::parse(detail::take_section(bytes, pos));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("checkpoint metadata unreadable: ") + e.what());
  }
  const std::string tensors = detail::take_section(bytes, pos);

  CheckpointMeta m;
  try {
    m.model = ModelConfig::from_json(cfg.at("model"));
    m.train = TrainConfig::from_json(cfg.at("train"));
    m.schema = cfg.at("schema").get<std::vector<std::string>>();
    m.best_dev = cfg.at("best_dev").get<double>();
    m.best_epoch = cfg.at("best_epoch").get<int>();
    m.rng_state = cfg.at("rng_state").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("checkpoint config incomplete: ") + e.what());
  }
  DstModel<T> model(m.model, Vocabulary::from_json(vocab_json), m.schema, 0);

  std::map<std::string, ad::Parameter<T>*> by_name;
  for (auto* p : model.parameters()) by_name[p->name] = p;
  std::size_t tp = 0;
  const auto count = detail::take<std::uint32_t>(tensors, tp);
  if (count != by_name.size())
    throw ArtifactError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                        std::to_string(by_name.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::take<std::uint32_t>(tensors, tp);
    const std::string name = detail::take_bytes(tensors, tp, len);
    const auto rows = detail::take<std::uint32_t>(tensors, tp);
    const auto cols = detail::take<std::uint32_t>(tensors, tp);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ArtifactError("unexpected tensor " + name);
    auto& v = it->second->value;
    if (v.rows() != static_cast<Eigen::Index>(rows) || v.cols() != static_cast<Eigen::Index>(cols))
      throw ArtifactError("tensor " + name + " has the wrong shape");
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      for (Eigen::Index c = 0; c < v.cols(); ++c) v(r, c) = static_cast<T>(detail::take<float>(tensors, tp));
  }
  if (meta) *meta = std::move(m);
  return model;
}

template <typename T>
void save_checkpoint(const std::string& path, DstModel<T>& model, const CheckpointMeta& meta) {
  write_file(path, serialize_checkpoint(model, meta));
}

template <typename T = float>
DstModel<T> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw ArtifactError(e.what());
  }
  return deserialize_checkpoint<T>(bytes, meta);
}

}  // namespace csg
