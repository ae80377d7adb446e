#pragma once

// History attention, pointer position selection, and the rules that build
// the next decoder input from the selected word's embedding and its encoder
// contextual row.

#include <span>
#include <string>
#include <string_view>

#include "csg/autograd.hpp"
#include "csg/common.hpp"

namespace csg {

enum class Scheme { Baseline, Enc, Sum, Cat };

inline constexpr Scheme kAllSchemes[] = {Scheme::Baseline, Scheme::Enc, Scheme::Sum, Scheme::Cat};

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::Baseline: return "baseline";
    case Scheme::Enc: return "enc";
    case Scheme::Sum: return "sum";
    case Scheme::Cat: return "cat";
  }
  return "baseline";
}

inline Scheme parse_scheme(std::string_view s) {
  if (s == "baseline") return Scheme::Baseline;
  if (s == "enc") return Scheme::Enc;
  if (s == "sum") return Scheme::Sum;
  if (s == "cat") return Scheme::Cat;
  throw ConfigError("unknown scheme '" + std::string(s) + "' (expected baseline|enc|sum|cat)");
}

// Width of the decoder input under a scheme. The first decoder input is the
// slot embedding, so Enc also needs d_emb == d_hid.
inline int input_width(Scheme s, int d_emb, int d_hid) {
  switch (s) {
    case Scheme::Baseline: return d_emb;
    case Scheme::Enc: return d_hid;
    case Scheme::Sum: return d_emb;
    case Scheme::Cat: return d_emb + d_hid;
  }
  return d_emb;
}

inline void validate_scheme_dims(Scheme s, int d_emb, int d_hid) {
  if ((s == Scheme::Sum || s == Scheme::Enc) && d_emb != d_hid)
    throw ConfigError(std::string("scheme '") + to_string(s) + "' requires d_emb == d_hid (got " +
                      std::to_string(d_emb) + " vs " + std::to_string(d_hid) + ")");
}

// softmax(OT * o_dec) with max subtraction.
template <typename T>
ad::Vec<T> history_attention(const ad::Mat<T>& ot, const ad::Vec<T>& o_dec) {
  if (ot.rows() == 0) throw std::invalid_argument("history_attention: empty history");
  if (ot.cols() != o_dec.rows())
    throw std::invalid_argument("history_attention: OT width does not match decoder output");
  ad::Vec<T> logits = ot * o_dec;
  ad::Vec<T> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

// Argmax over positions >= min_position, lowest index on ties.
template <typename T>
int select_position(std::span<const T> p, int min_position = 0) {
  if (p.empty()) throw std::invalid_argument("select_position: empty distribution");
  if (min_position < 0 || min_position >= static_cast<int>(p.size()))
    throw std::out_of_range("select_position: min_position out of range");
  int best = min_position;
  for (int i = min_position + 1; i < static_cast<int>(p.size()); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

template <typename T>
int select_position(const ad::Vec<T>& p, int min_position = 0) {
  return select_position(std::span<const T>(p.data(), static_cast<std::size_t>(p.size())),
                         min_position);
}

template <typename T>
ad::Vec<T> gather_context(const ad::Mat<T>& ot, int pos) {
  if (pos < 0 || pos >= ot.rows())
    throw std::out_of_range("gather_context: position " + std::to_string(pos) +
                            " outside history of length " + std::to_string(ot.rows()));
  return ot.row(pos).transpose();
}

template <typename T>
ad::Vec<T> combine_input(Scheme scheme, const ad::Vec<T>& w, const ad::Vec<T>& ctx) {
  switch (scheme) {
    case Scheme::Baseline: return w;
    case Scheme::Enc: return ctx;
    case Scheme::Sum:
      if (w.size() != ctx.size())
        throw ConfigError("sum scheme needs equal embedding and context widths");
      return w + ctx;
    case Scheme::Cat: {
      ad::Vec<T> out(w.size() + ctx.size());
      out << w, ctx;
      return out;
    }
  }
  return w;
}

// Tape version used inside the decoders.
template <typename T>
ad::Var combine_input(ad::Graph<T>& g, Scheme scheme, ad::Var w, ad::Var ctx) {
  switch (scheme) {
    case Scheme::Baseline: return w;
    case Scheme::Enc: return ctx;
    case Scheme::Sum:
      if (g.value(w).rows() != g.value(ctx).rows())
        throw ConfigError("sum scheme needs equal embedding and context widths");
      return g.add(w, ctx);
    case Scheme::Cat: return g.concat(w, ctx);
  }
  return w;
}

}  // namespace csg
