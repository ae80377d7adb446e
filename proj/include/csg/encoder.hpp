#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "csg/autograd.hpp"
#include "csg/common.hpp"
#include "csg/nn.hpp"
#include "csg/vocab.hpp"

namespace csg {

struct EncoderConfig {
  int d_emb = 400;
  int d_hid = 400;
  double dropout = 0.2;
  double word_dropout = 0.1;
};

// Plain-value encoder result: one contextual row per input position and the
// merged final state.
template <typename T>
struct EncoderOutput {
  ad::Mat<T> ot;
  ad::Vec<T> s;

  int length() const { return static_cast<int>(ot.rows()); }
};

// The same quantities as tape handles.
struct EncoderVars {
  ad::Var ot;
  ad::Var s;
};

// In training mode every non-special index is replaced by UNK with
// probability `rate`; identity otherwise.
inline std::vector<int> word_dropout(std::span<const int> tokens, double rate, Rng& rng,
                                     bool training, const Vocabulary& vocab) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("word dropout rate must be in [0,1)");
  std::vector<int> out(tokens.begin(), tokens.end());
  if (!training || rate == 0.0) return out;
  for (int& t : out)
    if (!vocab.is_special(t) && bernoulli(rng, rate)) t = Vocabulary::kUnk;
  return out;
}

// Single-layer bidirectional GRU. The two directions are summed, so every
// output row and the final state are d_hid wide.
template <typename T>
class BiGruEncoder {
 public:
  BiGruEncoder() = default;
  BiGruEncoder(const EncoderConfig& cfg, Rng& rng)
      : cfg_(cfg), fwd_("enc.fwd", cfg.d_emb, cfg.d_hid, rng), bwd_("enc.bwd", cfg.d_emb, cfg.d_hid, rng) {}

  const EncoderConfig& config() const { return cfg_; }

  void collect(std::vector<ad::Parameter<T>*>& out) {
    fwd_.collect(out);
    bwd_.collect(out);
  }

  // `embedded` is an (l x d_emb) node. Dropout draws from `rng` only in
  // training mode.
  EncoderVars encode(ad::Graph<T>& g, ad::Var embedded, bool training, Rng* rng) {
    const auto& x0 = g.value(embedded);
    const int l = static_cast<int>(x0.rows());
    if (l == 0) throw std::invalid_argument("encoder input must have at least one position");
    if (x0.cols() != cfg_.d_emb) throw ConfigError("encoder input width does not match d_emb");
    if (!x0.allFinite()) throw NumericError("non-finite encoder input");

    ad::Var x = embedded;
    if (training && cfg_.dropout > 0.0 && rng) {
      ad::Mat<T> mask(x0.rows(), x0.cols());
      const T keep = static_cast<T>(1.0 / (1.0 - cfg_.dropout));
      for (Eigen::Index i = 0; i < mask.size(); ++i)
        mask.data()[i] = bernoulli(*rng, cfg_.dropout) ? T(0) : keep;
      x = g.cmul_const(x, std::move(mask));
    }

    ad::Var af = g.affine_rows(x, fwd_.wx, fwd_.bx);
    ad::Var ab = g.affine_rows(x, bwd_.wx, bwd_.bx);
    const int d = cfg_.d_hid;
    std::vector<ad::Var> f(l), b(l);
    ad::Var h = g.constant(ad::Mat<T>::Zero(d, 1));
    for (int i = 0; i < l; ++i) {
      h = g.gru_step(g.row(af, i), h, fwd_.wh, fwd_.bh);
      f[i] = h;
    }
    h = g.constant(ad::Mat<T>::Zero(d, 1));
    for (int i = l - 1; i >= 0; --i) {
      h = g.gru_step(g.row(ab, i), h, bwd_.wh, bwd_.bh);
      b[i] = h;
    }
    ad::Var ot = g.add(g.stack_rows(f), g.stack_rows(b));
    ad::Var s = g.add(f[l - 1], b[0]);
    return {ot, s};
  }

  EncoderOutput<T> encode(const ad::Mat<T>& embeddings, bool training, Rng& rng) {
    ad::Graph<T> g;
    auto vars = encode(g, g.constant(embeddings), training, &rng);
    return {g.value(vars.ot), g.value(vars.s)};
  }

 private:
  EncoderConfig cfg_;
  nn::GruParams<T> fwd_, bwd_;
};

}  // namespace csg
