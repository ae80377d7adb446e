#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "csg/corpus.hpp"
#include "csg/autograd.hpp"

namespace csg::testing {

// Central differences against backprop for every entry of every parameter.
// Returns the worst per-tensor relative error ||num - bp|| / (||num|| + ||bp||).
struct GradReport {
  double worst = 0.0;
  std::string worst_name;
  int tensors = 0;
};

inline GradReport check_gradients(std::vector<ad::Parameter<double>*> params,
                                  const std::function<ad::Var(ad::Graph<double>&)>& build,
                                  double eps = 1e-6) {
  auto loss_value = [&] {
    ad::Graph<double> g;
    return g.scalar(build(g));
  };
  for (auto* p : params) p->zero_grad();
  {
    ad::Graph<double> g;
    g.backward(build(g));
  }
  GradReport rep;
  for (auto* p : params) {
    ad::Mat<double> num(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double x0 = x;
      x = x0 + eps;
      const double up = loss_value();
      x = x0 - eps;
      const double down = loss_value();
      x = x0;
      num.data()[i] = (up - down) / (2 * eps);
    }
    const double denom = num.norm() + p->grad.norm();
    const double rel = denom < 1e-12 ? 0.0 : (num - p->grad).norm() / denom;
    ++rep.tensors;
    if (rel >= rep.worst) {
      rep.worst = rel;
      rep.worst_name = p->name;
    }
  }
  return rep;
}

inline Utterance utt(Speaker s, const std::string& text) {
  Utterance u;
  u.speaker = s;
  u.tokens = tokenize(text);
  return u;
}

inline DialogueTurn turn(int index, const std::string& system, const std::string& user,
                         std::vector<std::pair<std::string, std::string>> state) {
  DialogueTurn t;
  t.turn_index = index;
  if (!system.empty()) t.system = utt(Speaker::System, system);
  t.user = utt(Speaker::User, user);
  for (auto& [slot, v] : state) t.gold_state.set(slot, SlotValue::parse(v));
  return t;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
#ifdef CSG_TEST_TMP
  std::filesystem::path p = std::filesystem::path(CSG_TEST_TMP) / name;
#else
  std::filesystem::path p = std::filesystem::temp_directory_path() / ("csg_" + name);
#endif
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace csg::testing
