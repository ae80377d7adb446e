#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "csg/autograd.hpp"
#include "csg/common.hpp"

namespace csg::nn {

using ad::Mat;
using ad::Parameter;
using ad::Vec;

template <typename T>
void init_uniform(Parameter<T>& p, Rng& rng, double range) {
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j)
      p.value(i, j) = static_cast<T>((2.0 * uniform_real(rng) - 1.0) * range);
}

// Weights of one gated recurrent unit, gate order reset/update/candidate.
template <typename T>
struct GruParams {
  Parameter<T> wx, bx, wh, bh;

  GruParams() = default;
  GruParams(const std::string& prefix, int d_in, int d_hid, Rng& rng)
      : wx(prefix + ".wx", 3 * d_hid, d_in),
        bx(prefix + ".bx", 3 * d_hid, 1),
        wh(prefix + ".wh", 3 * d_hid, d_hid),
        bh(prefix + ".bh", 3 * d_hid, 1) {
    const double k = 1.0 / std::sqrt(static_cast<double>(d_hid));
    for (auto* p : {&wx, &bx, &wh, &bh}) init_uniform(*p, rng, k);
  }

  int hidden() const { return static_cast<int>(wh.value.cols()); }
  int input() const { return static_cast<int>(wx.value.cols()); }

  void collect(std::vector<Parameter<T>*>& out) { out.insert(out.end(), {&wx, &bx, &wh, &bh}); }

  ad::Var step(ad::Graph<T>& g, ad::Var x, ad::Var h) {
    return g.gru_step(g.linear(wx, bx, x), h, wh, bh);
  }
};

template <typename T>
struct LinearParams {
  Parameter<T> w, b;

  LinearParams() = default;
  LinearParams(const std::string& prefix, int d_out, int d_in, Rng& rng)
      : w(prefix + ".w", d_out, d_in), b(prefix + ".b", d_out, 1) {
    const double k = 1.0 / std::sqrt(static_cast<double>(d_in));
    init_uniform(w, rng, k);
    init_uniform(b, rng, k);
  }

  void collect(std::vector<Parameter<T>*>& out) { out.insert(out.end(), {&w, &b}); }

  ad::Var operator()(ad::Graph<T>& g, ad::Var x) { return g.linear(w, b, x); }
};

template <typename T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

template <typename T>
void scale_grads(const std::vector<Parameter<T>*>& params, T c) {
  for (auto* p : params) p->grad *= c;
}

template <typename T>
double grad_norm(const std::vector<Parameter<T>*>& params) {
  double s = 0.0;
  for (auto* p : params) s += static_cast<double>(p->grad.squaredNorm());
  return std::sqrt(s);
}

// Rescales all gradients so their global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
  double n = grad_norm(params);
  if (n > max_norm && n > 0.0) scale_grads(params, static_cast<T>(max_norm / n));
  return n;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Parameter<T>*>& params) {
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, t_));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, t_));
    const T lr = static_cast<T>(cfg_.lr), eps = static_cast<T>(cfg_.eps);
    for (auto* p : params) {
      for (int r : p->frozen_rows) p->grad.row(r).setZero();
      p->m = b1 * p->m + (T(1) - b1) * p->grad;
      p->v = b2 * p->v + (T(1) - b2) * p->grad.cwiseProduct(p->grad);
      p->value.array() -= lr * (p->m.array() / c1) / ((p->v.array() / c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace csg::nn
