#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "csg/corpus.hpp"
#include "csg/encoder.hpp"
#include "csg/extractive_decoder.hpp"
#include "csg/hybrid_decoder.hpp"
#include "csg/vocab.hpp"

namespace csg {

enum class ModelKind { SpanPtr, SeqPtr, Hybrid };

inline constexpr ModelKind kAllModels[] = {ModelKind::SpanPtr, ModelKind::SeqPtr, ModelKind::Hybrid};

inline const char* to_string(ModelKind m) {
  switch (m) {
    case ModelKind::SpanPtr: return "span_ptr";
    case ModelKind::SeqPtr: return "seq_ptr";
    case ModelKind::Hybrid: return "hybrid";
  }
  return "seq_ptr";
}

inline ModelKind parse_model(std::string_view s) {
  if (s == "span_ptr") return ModelKind::SpanPtr;
  if (s == "seq_ptr") return ModelKind::SeqPtr;
  if (s == "hybrid") return ModelKind::Hybrid;
  throw ConfigError("unknown model '" + std::string(s) + "' (expected span_ptr|seq_ptr|hybrid)");
}

struct ModelConfig {
  ModelKind model = ModelKind::SeqPtr;
  Scheme scheme = Scheme::Baseline;
  EncoderConfig encoder;
  int max_value_len = 10;
  bool force_context = false;
  double embedding_init = 0.1;

  void validate() const {
    if (encoder.d_emb < 1 || encoder.d_hid < 1) throw ConfigError("dimensions must be positive");
    if (encoder.dropout < 0.0 || encoder.dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    if (encoder.word_dropout < 0.0 || encoder.word_dropout >= 1.0)
      throw ConfigError("word dropout must be in [0,1)");
    if (max_value_len < 1) throw ConfigError("max_value_len must be >= 1");
    validate_scheme_dims(scheme, encoder.d_emb, encoder.d_hid);
  }

  nlohmann::json to_json() const {
    return {{"model", to_string(model)},
            {"scheme", to_string(scheme)},
            {"d_emb", encoder.d_emb},
            {"d_hid", encoder.d_hid},
            {"dropout", encoder.dropout},
            {"word_dropout", encoder.word_dropout},
            {"max_value_len", max_value_len},
            {"force_context", force_context},
            {"embedding_init", embedding_init}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.model = parse_model(j.at("model").get<std::string>());
    c.scheme = parse_scheme(j.at("scheme").get<std::string>());
    c.encoder.d_emb = j.at("d_emb").get<int>();
    c.encoder.d_hid = j.at("d_hid").get<int>();
    c.encoder.dropout = j.at("dropout").get<double>();
    c.encoder.word_dropout = j.at("word_dropout").get<double>();
    c.max_value_len = j.at("max_value_len").get<int>();
    c.force_context = j.value("force_context", false);
    c.embedding_init = j.value("embedding_init", 0.1);
    return c;
  }
};

// One supervised turn: flattened history plus gold state.
struct TurnExample {
  std::string dialogue_id;
  int turn = 0;
  std::vector<std::string> tokens;
  std::vector<int> ids;
  BeliefState gold;
  std::map<std::string, int> spans;

  // Start of the gold value of `slot` in the history: the recorded span when
  // it matches, otherwise the most recent contiguous occurrence.
  std::optional<int> gold_start(const std::string& slot) const {
    const SlotValue v = gold.get(slot);
    if (!v.is_words()) return std::nullopt;
    if (auto it = spans.find(slot); it != spans.end()) {
      const int s = it->second;
      if (s >= 0 && s + static_cast<int>(v.words.size()) <= static_cast<int>(tokens.size()) &&
          std::equal(v.words.begin(), v.words.end(), tokens.begin() + s))
        return s;
    }
    return find_last_span(tokens, v.words);
  }
};

inline TurnExample make_example(const Dialogue& d, int turn, const Vocabulary& vocab) {
  TurnExample ex;
  ex.dialogue_id = d.id;
  ex.turn = turn;
  ex.tokens = flatten_history(d, turn).tokens;
  ex.ids = vocab.encode(ex.tokens);
  ex.gold = d.turns[turn].gold_state;
  ex.spans = d.turns[turn].spans;
  return ex;
}

inline std::vector<TurnExample> make_examples(const std::vector<Dialogue>& dialogues,
                                              const Vocabulary& vocab) {
  std::vector<TurnExample> out;
  for (const auto& d : dialogues)
    for (int t = 0; t < static_cast<int>(d.turns.size()); ++t) out.push_back(make_example(d, t, vocab));
  return out;
}

// Per-slot decoding details kept for inspection.
template <typename T>
struct SlotTrace {
  std::string slot;
  GateClass gate = GateClass::None;
  ad::Vec<T> gate_probs;
  std::vector<int> positions;
  std::vector<ad::Vec<T>> p_history;
  std::vector<GenStep<T>> gen_steps;
};

template <typename T>
class DstModel {
 public:
  DstModel(const ModelConfig& cfg, Vocabulary vocab, std::vector<std::string> schema,
           std::uint64_t seed)
      : cfg_(cfg), vocab_(std::move(vocab)), schema_(std::move(schema)) {
    cfg_.validate();
    Rng rng(seed);
    emb_ = make_embedding_table<T>(vocab_.size(), cfg.encoder.d_emb, rng,
                                   static_cast<T>(cfg.embedding_init));
    encoder_ = BiGruEncoder<T>(cfg.encoder, rng);
    if (cfg.model == ModelKind::Hybrid) {
      hybrid_ = HybridDecoder<T>(HybridConfig{cfg.scheme, cfg.max_value_len, cfg.force_context},
                                 cfg.encoder.d_emb, cfg.encoder.d_hid, vocab_.size(), rng);
    } else {
      ExtractiveConfig ec{cfg.model == ModelKind::SpanPtr ? ExtractiveVariant::SpanPtr
                                                          : ExtractiveVariant::SeqPtr,
                          cfg.scheme, cfg.max_value_len};
      extractive_ = ExtractiveDecoder<T>(ec, cfg.encoder.d_emb, cfg.encoder.d_hid, rng);
    }
    for (const auto& s : schema_) vocab_.slot_index(s);
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<std::string>& schema() const { return schema_; }
  EmbeddingTable<T>& embedding() { return emb_; }
  BiGruEncoder<T>& encoder() { return encoder_; }
  ExtractiveDecoder<T>& extractive() { return *extractive_; }
  HybridDecoder<T>& hybrid() { return *hybrid_; }

  std::vector<ad::Parameter<T>*> parameters() {
    std::vector<ad::Parameter<T>*> out{&emb_};
    encoder_.collect(out);
    if (hybrid_) hybrid_->collect(out);
    if (extractive_) extractive_->collect(out);
    return out;
  }

  bool appends_sentinel() const { return cfg_.model == ModelKind::SeqPtr; }

  // Encoder input indices: history ids, word dropout in training, and the
  // sentinel for seq_ptr.
  std::vector<int> encoder_ids(const TurnExample& ex, bool training, Rng* rng) const {
    std::vector<int> ids = rng ? word_dropout(ex.ids, cfg_.encoder.word_dropout, *rng, training, vocab_)
                               : ex.ids;
    if (appends_sentinel()) ids.push_back(Vocabulary::kEos);
    return ids;
  }

  EncoderVars encode(ad::Graph<T>& g, const TurnExample& ex, bool training, Rng* rng) {
    auto in = encoder_ids(ex, training, rng);
    return encoder_.encode(g, g.lookup_rows(emb_, std::move(in)), training, rng);
  }

  // Summed per-slot loss of one turn (gate cross-entropy plus pointer or
  // generation negative log-likelihood).
  ad::Var turn_loss(ad::Graph<T>& g, const TurnExample& ex, Rng& rng, TeacherForcing& tf,
                    bool training = true) {
    EncoderVars enc = encode(g, ex, training, &rng);
    std::vector<ad::Var> terms;
    std::vector<int> ids = ex.ids;
    if (appends_sentinel()) ids.push_back(Vocabulary::kEos);
    const int sentinel = static_cast<int>(ids.size()) - 1;

    for (const auto& slot : schema_) {
      const SlotValue v = ex.gold.get(slot);
      const GateClass gold_gate = gate_class_of(v);
      const auto start = ex.gold_start(slot);
      const int slot_tok = vocab_.slot_index(slot);
      if (extractive_) {
        std::vector<int> gold;
        if (gold_gate == GateClass::Ptr && start)
          gold = gold_positions(extractive_->config().variant, *start,
                                static_cast<int>(v.words.size()), sentinel, cfg_.max_value_len);
        auto r = extractive_->decode_slot(g, enc, ids, emb_, slot_tok, &gold, &tf);
        terms.push_back(g.cross_entropy(r.gate_logits,
                                        kExtractiveGateOrder.index_of(gold_gate)));
        for (std::size_t t = 0; t < gold.size(); ++t)
          terms.push_back(g.cross_entropy(r.step_logits[t], gold[t]));
      } else {
        HybridTeacher teacher;
        if (gold_gate == GateClass::Ptr)
          teacher = make_hybrid_teacher(v.words, start, vocab_, ids, ex.tokens, cfg_.max_value_len);
        auto r = hybrid_->decode_value(g, enc, ex.tokens, ids, emb_, vocab_, slot_tok, &teacher, &tf);
        terms.push_back(g.cross_entropy(r.gate_logits, kHybridGateOrder.index_of(gold_gate)));
        for (auto q : r.gold_probs) terms.push_back(g.neg_log(q, static_cast<T>(1e-12)));
      }
    }
    return g.sum(terms);
  }

  BeliefState predict(const TurnExample& ex, std::vector<SlotTrace<T>>* trace = nullptr) {
    ad::Graph<T> g;
    EncoderVars enc = encode(g, ex, false, nullptr);
    std::vector<int> ids = ex.ids;
    if (appends_sentinel()) ids.push_back(Vocabulary::kEos);
    BeliefState state;
    for (const auto& slot : schema_) {
      const int slot_tok = vocab_.slot_index(slot);
      SlotTrace<T> st;
      st.slot = slot;
      std::vector<std::string> words;
      if (extractive_) {
        auto r = extractive_->decode_slot(g, enc, ids, emb_, slot_tok, nullptr, nullptr);
        st.gate = r.prediction.gate;
        st.gate_probs = r.gate_probs;
        st.positions = r.prediction.positions;
        st.p_history = std::move(r.p_history);
        words = recover_value(extractive_->config().variant, st.positions, ex.tokens);
      } else {
        auto r = hybrid_->decode_value(g, enc, ex.tokens, ids, emb_, vocab_, slot_tok, nullptr, nullptr);
        st.gate = r.gate;
        st.gate_probs = r.gate_probs;
        st.gen_steps = std::move(r.steps);
        words = std::move(r.words);
      }
      if (st.gate == GateClass::DontCare)
        state.set(slot, SlotValue::dontcare());
      else if (st.gate == GateClass::Ptr && !words.empty())
        state.set(slot, SlotValue::of(std::move(words)));
      if (trace) trace->push_back(std::move(st));
    }
    return state;
  }

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  std::vector<std::string> schema_;
  EmbeddingTable<T> emb_;
  BiGruEncoder<T> encoder_;
  std::optional<ExtractiveDecoder<T>> extractive_;
  std::optional<HybridDecoder<T>> hybrid_;
};

}  // namespace csg
