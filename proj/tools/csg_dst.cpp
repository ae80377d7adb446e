// csg_dst: prepare, train, eval and sweep entry points.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "csg/experiment.hpp"

namespace {

enum Exit { kOk = 0, kRuntime = 1, kConfig = 2, kArtifact = 3, kCellFailures = 4 };

struct Flags {
  std::string corpus;
  std::string format = "multiwoz_like";
  bool toy = false;
  int toy_dialogues = csg::ToyConfig{}.n_dialogues;
  int toy_slots = csg::ToyConfig{}.n_slots;
  std::vector<int> toy_value_len{csg::ToyConfig{}.value_len_range.first, csg::ToyConfig{}.value_len_range.second};
  int toy_vocab = csg::ToyConfig{}.vocab_size;
  double toy_multiword = csg::ToyConfig{}.multiword_value_fraction;
  int toy_turns = csg::ToyConfig{}.max_turns;

  double ratio = 0.0;
  std::vector<double> ratios;
  std::vector<std::string> models{"seq_ptr"};
  std::vector<std::string> schemes{"baseline"};
  std::uint64_t seed = 0;
  int epochs = csg::TrainConfig{}.max_epochs;
  int batch_size = csg::TrainConfig{}.batch_size;
  double tf_ratio = csg::TrainConfig{}.tf_ratio;
  int patience = csg::TrainConfig{}.patience;
  double lr = csg::TrainConfig{}.lr;
  int dim = csg::EncoderConfig{}.d_hid;
  double dropout = csg::EncoderConfig{}.dropout;
  double subsample = 0.0;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string split = "test";
  bool force_context = false;
};

void add_source(CLI::App* c, Flags& f) {
  c->add_option("--corpus", f.corpus, "Corpus JSON file");
  c->add_option("--format", f.format, "multiwoz_like | dstc2_like");
  c->add_flag("--toy", f.toy, "Use the synthetic toy corpus");
  c->add_option("--toy-dialogues", f.toy_dialogues);
  c->add_option("--toy-slots", f.toy_slots);
  c->add_option("--toy-value-len", f.toy_value_len, "MIN MAX words per value")->expected(2);
  c->add_option("--toy-vocab", f.toy_vocab, "Content word types");
  c->add_option("--toy-multiword", f.toy_multiword, "Fraction of multi-word values");
  c->add_option("--toy-turns", f.toy_turns, "Maximum turns per dialogue");
  c->add_option("--subsample-fraction", f.subsample, "Keep this fraction of training dialogues");
}

void add_train(CLI::App* c, Flags& f) {
  c->add_option("--epochs", f.epochs);
  c->add_option("--batch-size", f.batch_size);
  c->add_option("--tf-ratio", f.tf_ratio, "Teacher forcing probability per decoding step");
  c->add_option("--patience", f.patience, "Epochs without dev improvement before stopping");
  c->add_option("--lr", f.lr);
  c->add_option("--dim", f.dim, "Embedding and hidden width");
  c->add_option("--dropout", f.dropout);
  c->add_flag("--force-context", f.force_context,
              "Hybrid decoder: forced steps also take the gold word's context row");
}

csg::ExperimentConfig to_config(const Flags& f) {
  csg::ExperimentConfig c;
  if (!f.corpus.empty()) c.corpus_path = f.corpus;
  c.format = csg::parse_corpus_format(f.format);
  c.toy = f.toy;
  c.toy_cfg.n_dialogues = f.toy_dialogues;
  c.toy_cfg.n_slots = f.toy_slots;
  c.toy_cfg.value_len_range = {f.toy_value_len.at(0), f.toy_value_len.at(1)};
  c.toy_cfg.vocab_size = f.toy_vocab;
  c.toy_cfg.multiword_value_fraction = f.toy_multiword;
  c.toy_cfg.max_turns = f.toy_turns;
  c.ratios = f.ratios.empty() ? std::vector<double>{f.ratio} : f.ratios;
  c.models.clear();
  for (const auto& m : f.models) c.models.push_back(csg::parse_model(m));
  c.schemes.clear();
  for (const auto& s : f.schemes) c.schemes.push_back(csg::parse_scheme(s));
  c.model.encoder.d_emb = f.dim;
  c.model.encoder.d_hid = f.dim;
  c.model.encoder.dropout = f.dropout;
  c.model.force_context = f.force_context;
  c.train.lr = f.lr;
  c.train.batch_size = f.batch_size;
  c.train.max_epochs = f.epochs;
  c.train.tf_ratio = f.tf_ratio;
  c.train.patience = f.patience;
  c.train.seed = f.seed;
  if (f.subsample != 0.0) c.subsample_fraction = f.subsample;
  c.out = f.out;
  c.seed = f.seed;
  return c;
}

int cmd_prepare(const Flags& f) {
  auto cfg = to_config(f);
  cfg.validate_source();
  cfg.validate_ratios();
  if (cfg.ratios.size() != 1) throw csg::ConfigError("prepare takes a single --ratio");
  const csg::Corpus source = csg::load_source(cfg);
  auto p = csg::prepare_dataset(source, cfg.ratios[0], cfg.seed, cfg.subsample_fraction, cfg.out);
  std::cout << csg::read_file((csg::fs::path(cfg.out) / "stats.txt").string());
  std::cout << "vocabulary: " << p.vocab.size() << " entries, OOV words: " << p.plan.oov_words.size() << "\n";
  return kOk;
}

int cmd_train(const Flags& f) {
  auto cfg = to_config(f);
  if (cfg.models.size() != 1 || cfg.schemes.size() != 1)
    throw csg::ConfigError("train takes a single --model and --scheme");
  cfg.validate_model();
  if (f.data.empty()) throw csg::ConfigError("--data is required");
  auto data = csg::load_prepared(f.data);
  csg::ModelConfig mc = cfg.model;
  mc.model = cfg.models[0];
  mc.scheme = cfg.schemes[0];
  auto res = csg::train_cell(data, mc, cfg.train, cfg.out, &std::cout);
  std::cout << "best dev joint " << csg::format_fixed(100.0 * res.result.best_dev, 2) << " at epoch "
            << res.result.best_epoch << "; checkpoint " << res.checkpoint.string() << "\n";
  return kOk;
}

int cmd_eval(const Flags& f) {
  const csg::Split split = csg::parse_split(f.split);
  if (f.data.empty() || f.checkpoint.empty()) throw csg::ConfigError("--data and --checkpoint are required");
  if (!csg::fs::exists(f.checkpoint)) throw csg::ConfigError("checkpoint '" + f.checkpoint + "' does not exist");
  auto data = csg::load_prepared(f.data);
  const std::string out = f.out.empty() ? csg::fs::path(f.checkpoint).parent_path().string() : f.out;
  auto report = csg::eval_cell(f.checkpoint, data, split, out.empty() ? "." : out);
  std::cout << report.to_text();
  return kOk;
}

int cmd_sweep(const Flags& f) {
  auto cfg = to_config(f);
  cfg.validate_source();
  cfg.validate_ratios();
  cfg.validate_model();
  auto res = csg::run_sweep(cfg, {}, &std::cout);
  std::cout << res.table.to_text();
  std::cout << res.trained.size() << " cells trained, " << res.skipped.size() << " reused, "
            << res.failures.size() << " failed\n";
  return res.failures.empty() ? kOk : kCellFailures;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue state tracking with context-sensitive pointer decoders"};
  app.require_subcommand(1);
  Flags f;

  auto* prepare = app.add_subcommand("prepare", "Build a masked dataset for one OOV ratio");
  add_source(prepare, f);
  prepare->add_option("--ratio", f.ratio, "OOV ratio in [0,1]");
  prepare->add_option("--seed", f.seed);
  prepare->add_option("--out", f.out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one model on a prepared dataset");
  train->add_option("--data", f.data, "Prepared dataset directory")->required();
  train->add_option("--model", f.models, "span_ptr | seq_ptr | hybrid")->expected(1);
  train->add_option("--scheme", f.schemes, "baseline | enc | sum | cat")->expected(1);
  train->add_option("--seed", f.seed);
  add_train(train, f);
  train->add_option("--out", f.out, "Output directory for checkpoint.bin and log.jsonl")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--data", f.data, "Prepared dataset directory")->required();
  eval->add_option("--checkpoint", f.checkpoint)->required();
  eval->add_option("--split", f.split, "train | dev | test");
  eval->add_option("--out", f.out, "Report directory (defaults to the checkpoint's)");

  auto* sweep = app.add_subcommand("sweep", "prepare, train and eval over a ratio x model x scheme grid");
  add_source(sweep, f);
  sweep->add_option("--ratios", f.ratios, "OOV ratios")->delimiter(',');
  sweep->add_option("--ratio", f.ratio);
  sweep->add_option("--model", f.models, "Models (comma separated)")->delimiter(',');
  sweep->add_option("--scheme", f.schemes, "Schemes (comma separated)")->delimiter(',');
  sweep->add_option("--seed", f.seed);
  add_train(sweep, f);
  sweep->add_option("--out", f.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    csg::apply_thread_cap();
    if (*prepare) return cmd_prepare(f);
    if (*train) return cmd_train(f);
    if (*eval) return cmd_eval(f);
    return cmd_sweep(f);
  } catch (const csg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const csg::ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfig;
  } catch (const csg::ConsistencyError& e) {
    std::cerr << "consistency error: " << e.what() << "\n";
    return kConfig;
  } catch (const csg::ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return kArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
