#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "csg/decoder_base.hpp"

namespace csg {

struct HybridConfig {
  Scheme scheme = Scheme::Baseline;
  int max_value_len = 10;
  // When set, a teacher-forced step also takes its contextual half from the
  // gold word's history position instead of the model's own attention argmax.
  bool force_context = false;
};

// Output distribution over vocabulary entries plus OOV history positions.
// Copy mass of a history position holding an in-vocabulary word is pooled
// onto that word's entry; positions whose token maps to UNK keep their own
// mass and decode to their surface form.
template <typename T>
struct FinalDistribution {
  ad::Vec<T> vocab;
  ad::Vec<T> position;

  T total() const { return vocab.sum() + position.sum(); }
};

template <typename T>
FinalDistribution<T> blend(const ad::Vec<T>& p_vocab, const ad::Vec<T>& p_history, T p_gen,
                           std::span<const int> history_ids) {
  if (static_cast<std::size_t>(p_history.size()) != history_ids.size())
    throw std::invalid_argument("blend: history distribution and ids differ in length");
  FinalDistribution<T> f;
  f.vocab = p_gen * p_vocab;
  f.position = ad::Vec<T>::Zero(p_history.size());
  const T copy = T(1) - p_gen;
  for (std::size_t i = 0; i < history_ids.size(); ++i) {
    if (history_ids[i] == Vocabulary::kUnk)
      f.position(i) = copy * p_history(i);
    else
      f.vocab(history_ids[i]) += copy * p_history(i);
  }
  return f;
}

struct Emission {
  bool from_vocab = true;
  int index = 0;
};

// Argmax over vocabulary entries then positions, lowest index on ties.
template <typename T>
Emission argmax_final(const FinalDistribution<T>& f) {
  Emission best{true, 0};
  T best_p = f.vocab(0);
  for (Eigen::Index i = 1; i < f.vocab.size(); ++i)
    if (f.vocab(i) > best_p) best = {true, static_cast<int>(i)}, best_p = f.vocab(i);
  for (Eigen::Index i = 0; i < f.position.size(); ++i)
    if (f.position(i) > best_p) best = {false, static_cast<int>(i)}, best_p = f.position(i);
  return best;
}

// Where the probability of a gold word lives in a FinalDistribution.
struct GoldCredit {
  // Vocabulary entry credited, or -1 for an OOV gold word.
  int vocab_index = -1;
  // History positions whose copy mass counts.
  std::vector<int> positions;
};

// In-vocabulary words are credited through their entry together with every
// history position holding them. An OOV word is credited only through
// positions: the aligned one when known, otherwise every OOV position with
// the same surface form. Generating the UNK entry never counts, since the
// literal UNK is never a correct value.
inline GoldCredit gold_credit(const std::string& word, int vocab_index, int aligned_position,
                              std::span<const int> ids, const std::vector<std::string>& surface) {
  GoldCredit c;
  if (vocab_index != Vocabulary::kUnk) {
    c.vocab_index = vocab_index;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == vocab_index) c.positions.push_back(static_cast<int>(i));
    return c;
  }
  if (aligned_position >= 0 && aligned_position < static_cast<int>(ids.size()) &&
      ids[aligned_position] == Vocabulary::kUnk) {
    c.positions.push_back(aligned_position);
    return c;
  }
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == Vocabulary::kUnk && surface[i] == word) c.positions.push_back(static_cast<int>(i));
  return c;
}

template <typename T>
T gold_mass(const FinalDistribution<T>& f, const GoldCredit& c) {
  if (c.vocab_index >= 0) return f.vocab(c.vocab_index);
  T m = 0;
  for (int i : c.positions) m += f.position(i);
  return m;
}

inline bool creditable(const GoldCredit& c) { return c.vocab_index >= 0 || !c.positions.empty(); }

template <typename T>
struct GenStep {
  ad::Vec<T> p_vocab;
  ad::Vec<T> p_history;
  T p_gen = 0;
  FinalDistribution<T> p_final;
  std::string emitted;
  Emission emission;
  int attention_pos = 0;
  // How this step's input was built (step 0 uses the slot embedding).
  bool forced = false;
  int input_word = -1;
  int input_ctx_pos = -1;
};

// Gold sequence for one slot: value words followed by EOS.
struct HybridTeacher {
  std::vector<int> word_indices;
  std::vector<int> aligned_positions;
  std::vector<GoldCredit> credits;
};

inline HybridTeacher make_hybrid_teacher(const std::vector<std::string>& value,
                                         std::optional<int> start, const Vocabulary& vocab,
                                         std::span<const int> ids,
                                         const std::vector<std::string>& surface,
                                         int max_value_len) {
  HybridTeacher t;
  const int n = std::min(static_cast<int>(value.size()), max_value_len);
  for (int k = 0; k < n; ++k) {
    int idx = vocab.index(value[k]);
    int aligned = start ? *start + k : -1;
    t.word_indices.push_back(idx);
    t.aligned_positions.push_back(aligned);
    t.credits.push_back(gold_credit(value[k], idx, aligned, ids, surface));
  }
  t.word_indices.push_back(Vocabulary::kEos);
  t.aligned_positions.push_back(-1);
  t.credits.push_back(GoldCredit{Vocabulary::kEos, {}});
  return t;
}

template <typename T>
class HybridDecoder : public SlotDecoderBase<T> {
  using Base = SlotDecoderBase<T>;

 public:
  struct Result {
    ad::Var gate_logits;
    ad::Vec<T> gate_probs;
    GateClass gate = GateClass::None;
    std::vector<GenStep<T>> steps;
    // Probability of the gold word per step (only with a teacher).
    std::vector<ad::Var> gold_probs;
    std::vector<std::string> words;
  };

  HybridDecoder() = default;
  HybridDecoder(const HybridConfig& cfg, int d_emb, int d_hid, int vocab_size, Rng& rng)
      : Base(cfg.scheme, d_emb, d_hid, kHybridGateOrder, rng),
        cfg_(cfg),
        out_("dec.out", vocab_size, d_hid, rng),
        gen_("dec.gen", 1, 2 * d_hid + input_width(cfg.scheme, d_emb, d_hid), rng) {
    if (cfg.max_value_len < 1) throw ConfigError("max_value_len must be >= 1");
  }

  const HybridConfig& config() const { return cfg_; }

  void collect(std::vector<ad::Parameter<T>*>& out) {
    Base::collect(out);
    out_.collect(out);
    gen_.collect(out);
  }

  Result decode_value(ad::Graph<T>& g, const EncoderVars& enc, const std::vector<std::string>& surface,
                      std::span<const int> ids, EmbeddingTable<T>& emb, const Vocabulary& vocab,
                      int slot_token, const HybridTeacher* gold, TeacherForcing* tf) {
    const int l = static_cast<int>(g.value(enc.ot).rows());
    if (static_cast<int>(ids.size()) != l || static_cast<int>(surface.size()) != l)
      throw ConfigError("decode_value: history does not match encoder rows");

    Result r;
    ad::Var input = this->first_input(g, emb, slot_token);
    ad::Var h = this->step(g, input, enc.s);
    r.gate_logits = this->gate_logits(g, h);
    r.gate_probs = ad::Graph<T>::softmax_of(g.value(r.gate_logits));
    r.gate = this->gate_argmax(r.gate_probs);

    const bool decode = gold ? !gold->word_indices.empty() : r.gate == GateClass::Ptr;
    if (!decode) return r;
    const int max_steps =
        gold ? static_cast<int>(gold->word_indices.size()) : cfg_.max_value_len + 1;

    bool forced = false;
    int in_word = -1, in_ctx = -1;
    for (int t = 0; t < max_steps; ++t) {
      if (t > 0) {
        const auto& prev = r.steps.back();
        forced = gold && tf && tf->flip();
        in_word = forced ? gold->word_indices[t - 1]
                         : (prev.emission.from_vocab ? prev.emission.index : Vocabulary::kUnk);
        in_ctx = prev.attention_pos;
        if (forced && cfg_.force_context && gold->aligned_positions[t - 1] >= 0)
          in_ctx = gold->aligned_positions[t - 1];
        input = this->next_input(g, emb, in_word, enc.ot, in_ctx);
        h = this->step(g, input, h);
      }
      ad::Var p_hist = g.softmax(g.matvec(enc.ot, h));
      ad::Var ctx = g.weighted_rows(p_hist, enc.ot);
      ad::Var p_vocab = g.softmax(out_(g, h));
      ad::Var p_gen = g.sigmoid(gen_(g, g.concat({h, ctx, input})));

      GenStep<T> s;
      s.p_vocab = g.value(p_vocab);
      s.p_history = g.value(p_hist);
      s.p_gen = g.scalar(p_gen);
      s.p_final = blend<T>(s.p_vocab, s.p_history, s.p_gen, ids);
      s.emission = argmax_final(s.p_final);
      s.emitted = s.emission.from_vocab ? vocab.word(s.emission.index) : surface[s.emission.index];
      s.attention_pos = select_position(s.p_history);
      s.forced = forced;
      s.input_word = in_word;
      s.input_ctx_pos = in_ctx;

      if (gold) {
        const auto& credit = gold->credits[t];
        if (creditable(credit)) {
          std::vector<ad::Var> parts;
          if (credit.vocab_index >= 0)
            parts.push_back(g.mul(p_gen, g.sum_entries(p_vocab, {credit.vocab_index})));
          if (!credit.positions.empty())
            parts.push_back(g.mul(g.one_minus(p_gen), g.sum_entries(p_hist, credit.positions)));
          r.gold_probs.push_back(parts.size() == 1 ? parts[0] : g.sum(parts));
        }
        r.steps.push_back(std::move(s));
        continue;
      }
      const bool eos = s.emission.from_vocab && s.emission.index == Vocabulary::kEos;
      if (!eos) r.words.push_back(s.emitted);
      r.steps.push_back(std::move(s));
      if (eos || static_cast<int>(r.words.size()) >= cfg_.max_value_len) break;
    }
    return r;
  }

  // Gate distribution over {PTR, DONTCARE, NONE}.
  ad::Vec<T> slot_gate(ad::Graph<T>& g, const EncoderVars& enc, EmbeddingTable<T>& emb,
                       int slot_token) {
    ad::Var h = this->step(g, this->first_input(g, emb, slot_token), enc.s);
    return ad::Graph<T>::softmax_of(g.value(this->gate_logits(g, h)));
  }

 private:
  HybridConfig cfg_;
  nn::LinearParams<T> out_;
  nn::LinearParams<T> gen_;
};

template <typename T>
struct HybridSlotTarget {
  ad::Vec<T> gate_probs;
  GateClass gold_gate = GateClass::None;
  std::vector<FinalDistribution<T>> finals;
  std::vector<GoldCredit> credits;
};

// Gate cross-entropy plus the negative log of each gold word's final
// probability (EOS included), summed over slots and averaged over turns.
template <typename T>
double hybrid_loss(const std::vector<std::vector<HybridSlotTarget<T>>>& batch,
                   const GateOrder& order = kHybridGateOrder) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& turn : batch) {
    for (const auto& s : turn) {
      total -= std::log(static_cast<double>(s.gate_probs(order.index_of(s.gold_gate))));
      if (s.gold_gate != GateClass::Ptr) continue;
      const auto n = std::min(s.finals.size(), s.credits.size());
      for (std::size_t t = 0; t < n; ++t) {
        if (!creditable(s.credits[t])) continue;
        total -= std::log(static_cast<double>(gold_mass(s.finals[t], s.credits[t])));
      }
    }
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace csg
