#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "csg/corpus.hpp"
#include "csg/evaluation.hpp"
#include "csg/oov_lab.hpp"
#include "csg/training.hpp"

namespace csg {

namespace fs = std::filesystem;

// Everything a run needs, validated up front so a bad flag never leaves
// partial output behind.
struct ExperimentConfig {
  std::optional<std::string> corpus_path;
  CorpusFormat format = CorpusFormat::MultiwozLike;
  bool toy = false;
  ToyConfig toy_cfg;
  std::vector<double> ratios{0.0};
  std::vector<ModelKind> models{ModelKind::SeqPtr};
  std::vector<Scheme> schemes{Scheme::Baseline};
  ModelConfig model;
  TrainConfig train;
  std::optional<double> subsample_fraction;
  std::string out = "out";
  std::uint64_t seed = 0;

  void validate_source() const {
    if (toy == corpus_path.has_value())
      throw ConfigError(toy ? "--toy and --corpus are mutually exclusive" : "one of --corpus or --toy is required");
    if (toy) validate(toy_cfg);
    if (corpus_path && !fs::is_regular_file(*corpus_path))
      throw ConfigError("corpus file '" + *corpus_path + "' does not exist");
  }

  void validate_ratios() const {
    if (ratios.empty()) throw ConfigError("at least one OOV ratio is required");
    std::set<double> seen;
    for (double r : ratios) {
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("OOV ratio " + std::to_string(r) + " is outside [0,1]");
      if (!seen.insert(r).second) throw ConfigError("OOV ratio " + std::to_string(r) + " given twice");
    }
    if (subsample_fraction && !(*subsample_fraction > 0.0 && *subsample_fraction <= 1.0))
      throw ConfigError("--subsample-fraction must be in (0,1]");
  }

  void validate_model() const {
    if (models.empty() || schemes.empty()) throw ConfigError("model and scheme lists must not be empty");
    for (ModelKind m : models)
      for (Scheme s : schemes) {
        ModelConfig c = model;
        c.model = m;
        c.scheme = s;
        c.validate();
      }
    train.validate();
  }
};

// Seeds of the stages derived from the single --seed value.
inline std::uint64_t oov_seed(std::uint64_t seed) { return seed + 1; }
inline std::uint64_t subsample_seed(std::uint64_t seed) { return seed + 2; }

inline void apply_thread_cap() {
  if (const char* v = std::getenv("CSG_NUM_THREADS")) {
    const int n = std::atoi(v);
    if (n < 1) throw ConfigError("CSG_NUM_THREADS must be a positive integer");
    Eigen::setNbThreads(n);
  }
}

inline Corpus load_source(const ExperimentConfig& cfg) {
  if (cfg.toy) return generate_toy_corpus(cfg.toy_cfg, cfg.seed);
  return load_corpus(*cfg.corpus_path, cfg.format);
}

// Writes `content` next to `path` first and renames it into place, so a
// reader never sees a half-written file.
inline void write_atomic(const fs::path& path, std::string_view content) {
  fs::path tmp = path;
  tmp += ".tmp";
  write_file(tmp.string(), content);
  fs::rename(tmp, path);
}

struct PreparedData {
  Corpus corpus;
  Vocabulary vocab;
  OovPlan plan;
};

// Masked corpus, plan, vocabulary and statistics for one OOV ratio.
inline PreparedData prepare_dataset(const Corpus& source, double ratio, std::uint64_t seed,
                                    std::optional<double> subsample, const fs::path& dir) {
  PreparedData p;
  p.plan = select_oov_words(source, ratio, oov_seed(seed));
  DropReport drops;
  p.corpus = drop_negative_samples(apply_oov_masking(source, p.plan), &drops);
  if (subsample) p.corpus = subsample_training(p.corpus, *subsample, subsample_seed(seed));
  p.vocab = build_vocab(p.corpus);
  const StatsTable stats = oov_stats(p.corpus, p.plan, p.vocab);

  fs::create_directories(dir);
  save_corpus(p.corpus, (dir / "corpus.json").string());
  write_file((dir / "oov_plan.json").string(), p.plan.to_json().dump(1) + "\n");
  write_file((dir / "vocab.json").string(), p.vocab.to_json().dump(1) + "\n");
  write_file((dir / "stats.json").string(), stats.to_json().dump(1) + "\n");
  write_file((dir / "stats.txt").string(), stats.to_text());
  nlohmann::json meta = {{"ratio", ratio},
                         {"seed", seed},
                         {"provenance", source.provenance},
                         {"turns_before_drop", drops.turns_before},
                         {"turns_after_drop", drops.turns_after}};
  if (subsample) meta["subsample_fraction"] = *subsample;
  // Written last: its presence marks a complete directory.
  write_atomic(dir / "prepare.json", meta.dump(1) + "\n");
  return p;
}

inline bool is_prepared(const fs::path& dir) { return fs::exists(dir / "prepare.json"); }

inline PreparedData load_prepared(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("prepared dataset directory '" + dir.string() + "' does not exist");
  if (!is_prepared(dir)) throw ConfigError("'" + dir.string() + "' is not a complete prepared dataset");
  PreparedData p;
  p.corpus = load_corpus((dir / "corpus.json").string(), CorpusFormat::MultiwozLike);
  try {
    p.vocab = Vocabulary::from_json(nlohmann::json::parse(read_file((dir / "vocab.json").string())));
    p.plan = OovPlan::from_json(nlohmann::json::parse(read_file((dir / "oov_plan.json").string())));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError("prepared dataset '" + dir.string() + "' is unreadable: " + e.what());
  }
  return p;
}

struct TrainOutcome {
  TrainResult result;
  fs::path checkpoint;
};

// Trains one model and writes checkpoint.bin and log.jsonl into `cell`.
inline TrainOutcome train_cell(const PreparedData& data, const ModelConfig& mc, const TrainConfig& tc,
                               const fs::path& cell, std::ostream* progress = nullptr) {
  fs::create_directories(cell);
  DstModel<float> model(mc, data.vocab, data.corpus.schema, tc.seed);
  std::string log;
  TrainResult res = train(model, data.corpus, tc, [&](const EpochLog& e) {
    log += e.to_json().dump() + "\n";
    if (progress)
      *progress << "epoch " << e.epoch << "  loss " << format_fixed(e.train_loss, 4) << "  dev joint "
                << format_fixed(100.0 * e.dev_joint, 2) << (e.improved ? "  *" : "") << std::endl;
  });
  write_file((cell / "log.jsonl").string(), log);
  CheckpointMeta meta;
  meta.train = tc;
  meta.best_dev = res.best_dev;
  meta.best_epoch = res.best_epoch;
  meta.rng_state = res.rng_state;
  TrainOutcome out{std::move(res), cell / "checkpoint.bin"};
  write_atomic(out.checkpoint, serialize_checkpoint(model, meta));
  return out;
}

// Evaluates a checkpoint on one split of a prepared dataset and writes
// report.json, report.txt and oov_count.csv into `dir`.
inline EvalReport eval_cell(const fs::path& checkpoint, const PreparedData& data, Split split,
                            const fs::path& dir) {
  CheckpointMeta meta;
  DstModel<float> model = load_checkpoint<float>(checkpoint.string(), &meta);
  if (!(model.vocab() == data.vocab))
    throw ArtifactError("checkpoint vocabulary does not match the prepared dataset");
  EvalReport r = evaluate(model, data.corpus.split(split));
  r.config["split"] = to_string(split);
  r.config["oov_ratio"] = data.plan.ratio;
  r.config["train"] = meta.train.to_json();
  fs::create_directories(dir);
  write_file((dir / "report.txt").string(), r.to_text());
  write_file((dir / "oov_count.csv").string(), r.oov_count_csv());
  // Written last: marks the cell as complete for sweeps.
  write_atomic(dir / "report.json", r.to_json().dump(1) + "\n");
  return r;
}

inline std::string ratio_dir_name(double ratio) { return format_fixed(ratio, 2); }

inline std::string cell_label(ModelKind m, Scheme s) { return std::string(to_string(m)) + "_" + to_string(s); }

struct SweepOutcome {
  SweepTable table;
  std::vector<std::string> trained;
  std::vector<std::string> skipped;
  std::vector<std::pair<std::string, std::string>> failures;  // cell, message
};

// prepare -> train -> eval for every ratio and model x scheme cell. Cells
// whose report.json exists are reused, so an interrupted sweep picks up
// where it stopped. `before_cell` runs ahead of each cell that will train.
inline SweepOutcome run_sweep(const ExperimentConfig& cfg,
                              const std::function<void(const std::string&)>& before_cell = {},
                              std::ostream* progress = nullptr) {
  const fs::path out(cfg.out);
  fs::create_directories(out);
  std::optional<Corpus> source;
  SweepOutcome res;
  std::vector<SweepCell> cells;
  nlohmann::json value_types = nlohmann::json::array();

  for (double ratio : cfg.ratios) {
    const fs::path rdir = out / ratio_dir_name(ratio);
    const fs::path ddir = rdir / "data";
    std::optional<PreparedData> data;
    for (ModelKind m : cfg.models) {
      for (Scheme s : cfg.schemes) {
        const std::string label = cell_label(m, s);
        const std::string cell_id = ratio_dir_name(ratio) + "/" + label;
        const fs::path cdir = rdir / label;
        try {
          EvalReport report;
          if (fs::exists(cdir / "report.json")) {
            report = EvalReport::from_json(nlohmann::json::parse(read_file((cdir / "report.json").string())));
            res.skipped.push_back(cell_id);
          } else {
            if (before_cell) before_cell(cell_id);
            if (!data) {
              if (is_prepared(ddir)) {
                data = load_prepared(ddir);
              } else {
                if (!source) source = load_source(cfg);
                data = prepare_dataset(*source, ratio, cfg.seed, cfg.subsample_fraction, ddir);
              }
            }
            if (progress) *progress << "[" << cell_id << "] training" << std::endl;
            ModelConfig mc = cfg.model;
            mc.model = m;
            mc.scheme = s;
            auto trained = train_cell(*data, mc, cfg.train, cdir, progress);
            report = eval_cell(trained.checkpoint, *data, Split::Test, cdir);
            res.trained.push_back(cell_id);
          }
          cells.push_back({ratio, label, report.joint_accuracy});
          nlohmann::json vt = {{"ratio", ratio}, {"cell", label}};
          for (ValueType t : kAllValueTypes) vt[to_string(t)] = report.value_type_accuracy(t);
          value_types.push_back(vt);
        } catch (const ConfigError&) {
          throw;
        } catch (const std::exception& e) {
          res.failures.emplace_back(cell_id, e.what());
          if (progress) *progress << "[" << cell_id << "] failed: " << e.what() << std::endl;
        }
      }
    }
  }

  res.table = sweep_report(cells);
  write_atomic(out / "sweep.json", res.table.to_json().dump(1) + "\n");
  write_atomic(out / "sweep.txt", res.table.to_text());
  write_atomic(out / "sweep.csv", res.table.to_csv());
  std::string vt_csv = "ratio,cell,KSV,USV-O,USV-M\n";
  for (const auto& r : value_types)
    vt_csv += std::to_string(r["ratio"].get<double>()) + "," + r["cell"].get<std::string>() + "," +
              std::to_string(r["KSV"].get<double>()) + "," + std::to_string(r["USV-O"].get<double>()) + "," +
              std::to_string(r["USV-M"].get<double>()) + "\n";
  write_atomic(out / "value_types.csv", vt_csv);
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& [c, msg] : res.failures) failures.push_back({{"cell", c}, {"error", msg}});
  write_atomic(out / "failures.json", failures.dump(1) + "\n");
  return res;
}

}  // namespace csg
