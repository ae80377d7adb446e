#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "csg/autograd.hpp"
#include "csg/csg_core.hpp"
#include "csg/encoder.hpp"
#include "csg/nn.hpp"
#include "csg/vocab.hpp"

namespace csg {

enum class GateClass { None, DontCare, Ptr };

inline const char* to_string(GateClass c) {
  switch (c) {
    case GateClass::None: return "none";
    case GateClass::DontCare: return "dontcare";
    case GateClass::Ptr: return "ptr";
  }
  return "none";
}

inline GateClass gate_class_of(const SlotValue& v) {
  switch (v.kind) {
    case SlotValue::Kind::None: return GateClass::None;
    case SlotValue::Kind::DontCare: return GateClass::DontCare;
    case SlotValue::Kind::Words: return GateClass::Ptr;
  }
  return GateClass::None;
}

// Order of the gate's output units.
struct GateOrder {
  std::array<GateClass, 3> classes;

  int index_of(GateClass c) const {
    for (int i = 0; i < 3; ++i)
      if (classes[i] == c) return i;
    return 0;
  }
};

inline constexpr GateOrder kExtractiveGateOrder{{GateClass::None, GateClass::DontCare, GateClass::Ptr}};
inline constexpr GateOrder kHybridGateOrder{{GateClass::Ptr, GateClass::DontCare, GateClass::None}};

// Per-step teacher forcing coin with counters for instrumentation.
class TeacherForcing {
 public:
  TeacherForcing(double ratio, Rng* rng) : ratio_(ratio), rng_(rng) {}

  bool flip() {
    ++total_;
    if (rng_ && ratio_ > 0.0 && bernoulli(*rng_, ratio_)) {
      ++forced_;
      return true;
    }
    return false;
  }

  long forced() const { return forced_; }
  long total() const { return total_; }

 private:
  double ratio_;
  Rng* rng_;
  long forced_ = 0;
  long total_ = 0;
};

// GRU decoder cell and slot gate shared by every decoder family. The decoder
// starts from the encoder's final state with the slot embedding as input;
// later inputs are built by the configured scheme.
template <typename T>
class SlotDecoderBase {
 public:
  SlotDecoderBase() = default;
  SlotDecoderBase(Scheme scheme, int d_emb, int d_hid, GateOrder order, Rng& rng)
      : scheme_(scheme),
        d_emb_(d_emb),
        d_hid_(d_hid),
        order_(order),
        cell_("dec.gru", input_width(scheme, d_emb, d_hid), d_hid, rng),
        gate_("dec.gate", 3, d_hid, rng) {
    validate_scheme_dims(scheme, d_emb, d_hid);
  }

  Scheme scheme() const { return scheme_; }
  const GateOrder& gate_order() const { return order_; }

  void collect(std::vector<ad::Parameter<T>*>& out) {
    cell_.collect(out);
    gate_.collect(out);
  }

 protected:
  ad::Var first_input(ad::Graph<T>& g, EmbeddingTable<T>& emb, int slot_token) {
    ad::Var w = g.lookup(emb, slot_token);
    if (scheme_ == Scheme::Cat) return g.concat(w, g.constant(ad::Mat<T>::Zero(d_hid_, 1)));
    return w;
  }

  ad::Var next_input(ad::Graph<T>& g, EmbeddingTable<T>& emb, int word_index, ad::Var ot,
                     int ctx_pos) {
    ad::Var w = g.lookup(emb, word_index);
    if (scheme_ == Scheme::Baseline) return w;
    return combine_input(g, scheme_, w, g.row(ot, ctx_pos));
  }

  ad::Var step(ad::Graph<T>& g, ad::Var input, ad::Var h) { return cell_.step(g, input, h); }

  ad::Var gate_logits(ad::Graph<T>& g, ad::Var o0) { return gate_(g, o0); }

  GateClass gate_argmax(const ad::Vec<T>& probs) const {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (probs(i) > probs(best)) best = i;
    return order_.classes[best];
  }

  Scheme scheme_ = Scheme::Baseline;
  int d_emb_ = 0;
  int d_hid_ = 0;
  GateOrder order_ = kExtractiveGateOrder;
  nn::GruParams<T> cell_;
  nn::LinearParams<T> gate_;
};

}  // namespace csg
