#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csg/decoder_base.hpp"

namespace csg {

enum class ExtractiveVariant { SpanPtr, SeqPtr };

struct ExtractiveConfig {
  ExtractiveVariant variant = ExtractiveVariant::SeqPtr;
  Scheme scheme = Scheme::Baseline;
  int max_value_len = 10;
};

struct SlotPrediction {
  std::string slot;
  GateClass gate = GateClass::None;
  // History positions; [start, end] for span_ptr.
  std::vector<int> positions;
  std::vector<std::string> value;
};

// Words at the emitted positions. Span predictions cover start..end.
inline std::vector<std::string> recover_value(ExtractiveVariant variant,
                                              std::span<const int> positions,
                                              const std::vector<std::string>& history) {
  std::vector<std::string> out;
  if (positions.empty()) return out;
  if (variant == ExtractiveVariant::SpanPtr) {
    for (int i = positions[0]; i <= positions[1]; ++i) out.push_back(history.at(i));
  } else {
    for (int p : positions) out.push_back(history.at(p));
  }
  return out;
}

// Gold pointer targets for a value starting at `start`: [start, end] for
// span_ptr; each word position followed by the sentinel for seq_ptr.
inline std::vector<int> gold_positions(ExtractiveVariant variant, int start, int length,
                                       int sentinel, int max_value_len) {
  if (variant == ExtractiveVariant::SpanPtr) return {start, start + length - 1};
  std::vector<int> out;
  for (int k = 0; k < std::min(length, max_value_len); ++k) out.push_back(start + k);
  out.push_back(sentinel);
  return out;
}

template <typename T>
class ExtractiveDecoder : public SlotDecoderBase<T> {
  using Base = SlotDecoderBase<T>;

 public:
  struct Result {
    ad::Var gate_logits;
    ad::Vec<T> gate_probs;
    // Attention logits and distributions, one per decoding step.
    std::vector<ad::Var> step_logits;
    std::vector<ad::Vec<T>> p_history;
    SlotPrediction prediction;
  };

  ExtractiveDecoder() = default;
  ExtractiveDecoder(const ExtractiveConfig& cfg, int d_emb, int d_hid, Rng& rng)
      : Base(cfg.scheme, d_emb, d_hid, kExtractiveGateOrder, rng), cfg_(cfg) {
    if (cfg.max_value_len < 1) throw ConfigError("max_value_len must be >= 1");
  }

  const ExtractiveConfig& config() const { return cfg_; }

  // `ids` are the encoder input indices (for seq_ptr the trailing sentinel
  // included), aligned with the rows of enc.ot. With `gold` set, decoding
  // runs exactly gold->size() steps and each step's input comes from the
  // gold position when the teacher-forcing coin says so. Without it, the
  // gate decides whether to decode and decoding stops at the sentinel or
  // after max_value_len positions.
  Result decode_slot(ad::Graph<T>& g, const EncoderVars& enc, std::span<const int> ids,
                     EmbeddingTable<T>& emb, int slot_token, const std::vector<int>* gold,
                     TeacherForcing* tf) {
    const int l = static_cast<int>(g.value(enc.ot).rows());
    if (static_cast<int>(ids.size()) != l)
      throw ConfigError("decode_slot: history indices do not match encoder rows");
    const bool seq = cfg_.variant == ExtractiveVariant::SeqPtr;
    const int sentinel = seq ? l - 1 : -1;

    Result r;
    ad::Var h = this->step(g, this->first_input(g, emb, slot_token), enc.s);
    r.gate_logits = this->gate_logits(g, h);
    r.gate_probs = ad::Graph<T>::softmax_of(g.value(r.gate_logits));
    r.prediction.gate = this->gate_argmax(r.gate_probs);

    const bool decode = gold ? !gold->empty() : r.prediction.gate == GateClass::Ptr;
    if (!decode) return r;
    const int max_steps = gold ? static_cast<int>(gold->size())
                               : (seq ? cfg_.max_value_len + 1 : 2);
    int start = 0;
    int last = 0;
    bool stopped = false;
    for (int t = 0; t < max_steps; ++t) {
      if (t > 0) {
        int in_pos = seq ? last : start;
        if (gold && tf && tf->flip()) in_pos = (*gold)[t - 1];
        h = this->step(g, this->next_input(g, emb, ids[in_pos], enc.ot, in_pos), h);
      }
      ad::Var logits = g.matvec(enc.ot, h);
      r.step_logits.push_back(logits);
      ad::Vec<T> p = ad::Graph<T>::softmax_of(g.value(logits));
      int pos;
      if (seq) {
        pos = select_position(p);
        if (pos == sentinel) stopped = true;
        if (!stopped) r.prediction.positions.push_back(pos);
        r.p_history.push_back(std::move(p));
        if (!gold && (stopped || static_cast<int>(r.prediction.positions.size()) >= cfg_.max_value_len))
          break;
      } else {
        pos = select_position(p, t == 0 ? 0 : start);
        if (t == 0) start = pos;
        r.prediction.positions.push_back(pos);
        r.p_history.push_back(std::move(p));
      }
      last = pos;
    }
    return r;
  }

  // Gate distribution over {NONE, DONTCARE, PTR}.
  ad::Vec<T> slot_gate(ad::Graph<T>& g, const EncoderVars& enc, EmbeddingTable<T>& emb,
                       int slot_token) {
    ad::Var h = this->step(g, this->first_input(g, emb, slot_token), enc.s);
    return ad::Graph<T>::softmax_of(g.value(this->gate_logits(g, h)));
  }

 private:
  ExtractiveConfig cfg_;
};

// Supervision for one slot of one turn, in plain values.
template <typename T>
struct ExtractiveSlotTarget {
  ad::Vec<T> gate_probs;
  GateClass gold_gate = GateClass::None;
  std::vector<ad::Vec<T>> p_history;
  // Empty when the gold value could not be located in the history.
  std::vector<int> gold_positions;
};

// Sum over slots of gate cross-entropy plus per-step position cross-entropy,
// averaged over the turns of the batch.
template <typename T>
double extraction_loss(const std::vector<std::vector<ExtractiveSlotTarget<T>>>& batch,
                       const GateOrder& order = kExtractiveGateOrder) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& turn : batch) {
    for (const auto& s : turn) {
      total -= std::log(static_cast<double>(s.gate_probs(order.index_of(s.gold_gate))));
      if (s.gold_gate != GateClass::Ptr) continue;
      const auto n = std::min(s.p_history.size(), s.gold_positions.size());
      for (std::size_t t = 0; t < n; ++t)
        total -= std::log(static_cast<double>(s.p_history[t](s.gold_positions[t])));
    }
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace csg
