#pragma once

// Minimal reverse-mode differentiation over dense Eigen matrices. A Graph is
// a tape: every op appends a node holding its value and a closure that
// pushes the node's gradient to its inputs. Parameters live outside the tape
// and accumulate gradients across graphs, which is how a minibatch is formed.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace csg::ad {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  // Adam moments.
  Mat<T> m;
  Mat<T> v;
  // Rows whose gradient is always discarded (the PAD embedding row).
  std::vector<int> frozen_rows;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)),
        value(Mat<T>::Zero(rows, cols)),
        grad(Mat<T>::Zero(rows, cols)),
        m(Mat<T>::Zero(rows, cols)),
        v(Mat<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Graph {
 public:
  using M = Mat<T>;
  using V = Vec<T>;

  Graph() { nodes_.reserve(512); }

  const M& value(Var v) const { return nodes_[v.id].value; }
  T scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  // Accumulates d(root)/d(parameter) into every parameter touched by the tape.
  void backward(Var root) {
    grad(root).setOnes();
    for (int i = root.id; i >= 0; --i) {
      auto& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward();
    }
  }

  Var constant(M value) { return push(std::move(value), nullptr); }

  // One embedding row as a column vector.
  Var lookup(Parameter<T>& table, int index) {
    Var out = push(table.value.row(index).transpose(), nullptr);
    set_backward(out, [this, out, &table, index] {
      table.grad.row(index) += grad(out).transpose();
    });
    return out;
  }

  // Rows of an embedding table stacked into an (n x d) matrix.
  Var lookup_rows(Parameter<T>& table, std::vector<int> indices) {
    M val(static_cast<Eigen::Index>(indices.size()), table.value.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) val.row(i) = table.value.row(indices[i]);
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, &table, idx = std::move(indices)] {
      const M& g = grad(out);
      for (std::size_t i = 0; i < idx.size(); ++i) table.grad.row(idx[i]) += g.row(i);
    });
    return out;
  }

  // Parameter used directly as a matrix value.
  Var param(Parameter<T>& p) {
    Var out = push(p.value, nullptr);
    set_backward(out, [this, out, &p] { p.grad += grad(out); });
    return out;
  }

  // X (n x in) * W^T + b^T with W (out x in) and b (out x 1): the same affine
  // map as `linear`, applied to every row of X.
  Var affine_rows(Var x, Parameter<T>& w, Parameter<T>& b) {
    M val = value(x) * w.value.transpose();
    val.rowwise() += b.value.col(0).transpose();
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, x, &w, &b] {
      const M& g = grad(out);
      grad(x).noalias() += g * w.value;
      w.grad.noalias() += g.transpose() * value(x);
      b.grad.col(0) += g.colwise().sum().transpose();
    });
    return out;
  }

  // W (out x in) * x (in x 1) + b (out x 1).
  Var linear(Parameter<T>& w, Parameter<T>& b, Var x) {
    M val = w.value * value(x) + b.value;
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, x, &w, &b] {
      const M& g = grad(out);
      grad(x).noalias() += w.value.transpose() * g;
      w.grad.noalias() += g * value(x).transpose();
      b.grad += g;
    });
    return out;
  }

  // Row i of a matrix as a column vector.
  Var row(Var m, int i) {
    Var out = push(value(m).row(i).transpose(), nullptr);
    set_backward(out, [this, out, m, i] { grad(m).row(i) += grad(out).transpose(); });
    return out;
  }

  // Column vectors stacked as the rows of a matrix.
  Var stack_rows(const std::vector<Var>& rows) {
    const auto d = value(rows.front()).rows();
    M val(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) val.row(i) = value(rows[i]).transpose();
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, rows] {
      const M& g = grad(out);
      for (std::size_t i = 0; i < rows.size(); ++i) grad(rows[i]) += g.row(i).transpose();
    });
    return out;
  }

  // Gated recurrent unit step. `a` holds the input projection W_x x + b_x
  // (3d x 1, gate order reset/update/candidate), `h` the previous state.
  Var gru_step(Var a, Var h, Parameter<T>& wh, Parameter<T>& bh) {
    const auto d = value(h).rows();
    const M& av = value(a);
    const M& hv = value(h);
    M hh = wh.value * hv + bh.value;
    M r = sigmoid_of(av.topRows(d) + hh.topRows(d));
    M z = sigmoid_of(av.middleRows(d, d) + hh.middleRows(d, d));
    M hn = hh.bottomRows(d);
    M n = (av.bottomRows(d) + r.cwiseProduct(hn)).array().tanh().matrix();
    M val = (M::Ones(d, 1) - z).cwiseProduct(n) + z.cwiseProduct(hv);
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, a, h, &wh, &bh, r = std::move(r), z = std::move(z),
                       n = std::move(n), hn = std::move(hn), d] {
      const M g = grad(out);
      const M& hv = value(h);
      M dn = g.cwiseProduct(M::Ones(d, 1) - z);
      M dz = g.cwiseProduct(hv - n);
      M dpre_n = dn.cwiseProduct(M::Ones(d, 1) - n.cwiseProduct(n));
      M dr = dpre_n.cwiseProduct(hn);
      M dpre_z = dz.cwiseProduct(z.cwiseProduct(M::Ones(d, 1) - z));
      M dpre_r = dr.cwiseProduct(r.cwiseProduct(M::Ones(d, 1) - r));
      M dhh(3 * d, 1);
      dhh << dpre_r, dpre_z, dpre_n.cwiseProduct(r);
      M& ga = grad(a);
      ga.topRows(d) += dpre_r;
      ga.middleRows(d, d) += dpre_z;
      ga.bottomRows(d) += dpre_n;
      wh.grad.noalias() += dhh * hv.transpose();
      bh.grad += dhh;
      M& gh = grad(h);
      gh += g.cwiseProduct(z);
      gh.noalias() += wh.value.transpose() * dhh;
    });
    return out;
  }

  Var add(Var x, Var y) {
    Var out = push(value(x) + value(y), nullptr);
    set_backward(out, [this, out, x, y] {
      grad(x) += grad(out);
      grad(y) += grad(out);
    });
    return out;
  }

  // Vertical concatenation of column vectors.
  Var concat(Var x, Var y) {
    const auto nx = value(x).rows();
    M val(nx + value(y).rows(), 1);
    val << value(x), value(y);
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, x, y, nx] {
      const M& g = grad(out);
      grad(x) += g.topRows(nx);
      grad(y) += g.bottomRows(g.rows() - nx);
    });
    return out;
  }

  Var concat(const std::vector<Var>& parts) {
    Var acc = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) acc = concat(acc, parts[i]);
    return acc;
  }

  Var cmul_const(Var x, M mask) {
    Var out = push(value(x).cwiseProduct(mask), nullptr);
    set_backward(out, [this, out, x, mask = std::move(mask)] {
      grad(x) += grad(out).cwiseProduct(mask);
    });
    return out;
  }

  Var scale(Var x, T c) {
    Var out = push(value(x) * c, nullptr);
    set_backward(out, [this, out, x, c] { grad(x) += grad(out) * c; });
    return out;
  }

  // M (n x d) * v (d x 1) -> (n x 1).
  Var matvec(Var m, Var v) {
    Var out = push(value(m) * value(v), nullptr);
    set_backward(out, [this, out, m, v] {
      const M& g = grad(out);
      grad(m).noalias() += g * value(v).transpose();
      grad(v).noalias() += value(m).transpose() * g;
    });
    return out;
  }

  // M^T (d x n) * p (n x 1): probability-weighted sum of rows.
  Var weighted_rows(Var p, Var m) {
    Var out = push(value(m).transpose() * value(p), nullptr);
    set_backward(out, [this, out, p, m] {
      const M& g = grad(out);
      grad(p).noalias() += value(m) * g;
      grad(m).noalias() += value(p) * g.transpose();
    });
    return out;
  }

  // Softmax of a column vector, max-subtracted.
  Var softmax(Var x) {
    Var out = push(softmax_of(value(x)), nullptr);
    set_backward(out, [this, out, x] {
      const M& p = value(out);
      const M& g = grad(out);
      T dot = (g.cwiseProduct(p)).sum();
      grad(x) += p.cwiseProduct(g - M::Constant(p.rows(), 1, dot));
    });
    return out;
  }

  Var sigmoid(Var x) {
    Var out = push(sigmoid_of(value(x)), nullptr);
    set_backward(out, [this, out, x] {
      const M& s = value(out);
      grad(x) += grad(out).cwiseProduct(s.cwiseProduct(M::Ones(s.rows(), s.cols()) - s));
    });
    return out;
  }

  // -log softmax(logits)[target], as a 1x1 node.
  Var cross_entropy(Var logits, int target) {
    const M& z = value(logits);
    T mx = z.maxCoeff();
    T lse = mx + std::log((z.array() - mx).exp().sum());
    M val(1, 1);
    val(0, 0) = lse - z(target, 0);
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, logits, target] {
      M p = softmax_of(value(logits));
      p(target, 0) -= T(1);
      grad(logits) += p * grad(out)(0, 0);
    });
    return out;
  }

  // Sum of selected entries of a column vector, as a 1x1 node.
  Var sum_entries(Var x, std::vector<int> indices) {
    M val = M::Zero(1, 1);
    for (int i : indices) val(0, 0) += value(x)(i, 0);
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, x, idx = std::move(indices)] {
      T g = grad(out)(0, 0);
      M& gx = grad(x);
      for (int i : idx) gx(i, 0) += g;
    });
    return out;
  }

  Var mul(Var a, Var b) {  // scalar * scalar
    M val(1, 1);
    val(0, 0) = scalar(a) * scalar(b);
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, a, b] {
      T g = grad(out)(0, 0);
      grad(a)(0, 0) += g * scalar(b);
      grad(b)(0, 0) += g * scalar(a);
    });
    return out;
  }

  Var one_minus(Var a) {
    M val(1, 1);
    val(0, 0) = T(1) - scalar(a);
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, a] { grad(a)(0, 0) -= grad(out)(0, 0); });
    return out;
  }

  // -log(x + eps) of a 1x1 node.
  Var neg_log(Var a, T eps) {
    M val(1, 1);
    val(0, 0) = -std::log(scalar(a) + eps);
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, a, eps] {
      grad(a)(0, 0) -= grad(out)(0, 0) / (scalar(a) + eps);
    });
    return out;
  }

  Var sum(const std::vector<Var>& xs) {
    M val = M::Zero(value(xs.front()).rows(), value(xs.front()).cols());
    for (Var x : xs) val += value(x);
    Var out = push(std::move(val), nullptr);
    set_backward(out, [this, out, xs] {
      for (Var x : xs) grad(x) += grad(out);
    });
    return out;
  }

  static M softmax_of(const M& x) {
    M e = (x.array() - x.maxCoeff()).exp().matrix();
    return e / e.sum();
  }

  static M sigmoid_of(const M& x) {
    return x.unaryExpr([](T v) {
      // Split by sign so exp never overflows.
      if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
      T e = std::exp(v);
      return e / (T(1) + e);
    });
  }

 private:
  struct Node {
    M value;
    M grad;
    std::function<void()> backward;
  };

  Var push(M value, std::function<void()> bw) {
    nodes_.push_back({std::move(value), M(), std::move(bw)});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  template <typename F>
  void set_backward(Var v, F&& f) {
    nodes_[v.id].backward = std::forward<F>(f);
  }

  M& grad(Var v) {
    auto& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = M::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::vector<Node> nodes_;
};

}  // namespace csg::ad
