#pragma once

#include "kcmc/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace kcmc {

/// An observable policy pi(t|x) over a finite action set {0, ..., num_actions-1}.
class Policy {
 public:
  using Evaluator = std::function<double(int action, const Vector& x)>;

  Policy(int num_actions, Evaluator eval, std::string description)
      : num_actions_(num_actions), eval_(std::move(eval)), description_(std::move(description)) {
    if (num_actions_ < 1) throw Error("policy needs at least one action");
  }

  double operator()(int action, const Vector& x) const { return eval_(action, x); }

  int num_actions() const { return num_actions_; }
  const std::string& description() const { return description_; }

  /// pi(T_i|X_i) for every row of a dataset-like pair.
  Vector taken_probabilities(const std::vector<int>& actions, const Matrix& covariates) const {
    Vector out(static_cast<Index>(actions.size()));
    for (std::size_t i = 0; i < actions.size(); ++i) {
      out[static_cast<Index>(i)] = eval_(actions[i], covariates.row(static_cast<Index>(i)).transpose());
    }
    return out;
  }

 private:
  int num_actions_;
  Evaluator eval_;
  std::string description_;
};

inline double sigmoid(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

namespace policies {

/// pi(1|x) = sigmoid(coef^T x) for binary actions.
inline Policy logistic(Vector coef, std::string description = "logistic") {
  return Policy(
      2,
      [coef = std::move(coef)](int t, const Vector& x) {
        const double p1 = sigmoid(coef.dot(x));
        return t == 1 ? p1 : 1.0 - p1;
      },
      std::move(description));
}

inline Vector nominal_coefficients() {
  Vector b(5);
  b << 0.0, 0.75, -0.5, 0.0, -1.0;
  return b;
}

/// The evaluated policy of the synthetic benchmark: pi(t=1|x) = e(x).
inline Policy nominal() { return logistic(nominal_coefficients(), "nominal"); }

inline Policy always(int action, int num_actions = 2) {
  return Policy(
      num_actions, [action](int t, const Vector&) { return t == action ? 1.0 : 0.0; },
      "always" + std::to_string(action));
}

inline Policy uniform(int num_actions = 2) {
  return Policy(
      num_actions, [num_actions](int, const Vector&) { return 1.0 / num_actions; }, "uniform");
}

/// Resolves a preset name: nominal | always0 | always1 | uniform.
inline Policy by_name(const std::string& name) {
  if (name == "nominal") return nominal();
  if (name == "uniform") return uniform();
  if (name.rfind("always", 0) == 0 && name.size() > 6) return always(std::stoi(name.substr(6)));
  throw Error("unknown policy preset '" + name + "'");
}

}  // namespace policies

/// Euclidean projection onto the probability simplex (sort-based).
inline Vector project_to_simplex(const Vector& v) {
  const Index k = v.size();
  if (k == 0) throw Error("cannot project an empty vector onto the simplex");
  std::vector<double> u(v.data(), v.data() + k);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (Index j = 0; j < k; ++j) {
    cumsum += u[static_cast<std::size_t>(j)];
    const double candidate = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - candidate > 0) theta = candidate;
  }
  return (v.array() - theta).max(0.0).matrix();
}

/// pi_beta(t|x) = sum_k beta_k pi_k(t|x) with beta on the simplex.
class MixturePolicy {
 public:
  MixturePolicy(std::vector<Policy> components, Vector beta)
      : components_(std::move(components)), beta_(std::move(beta)) {
    if (components_.empty()) throw Error("mixture needs at least one component");
    if (beta_.size() != static_cast<Index>(components_.size()))
      throw Error("mixture weight count does not match component count");
    if ((beta_.array() < -1e-12).any() || std::abs(beta_.sum() - 1.0) > 1e-9)
      throw Error("mixture weights must lie on the simplex");
    for (const auto& c : components_)
      if (c.num_actions() != components_.front().num_actions())
        throw Error("mixture components disagree on the action count");
  }

  const std::vector<Policy>& components() const { return components_; }
  const Vector& beta() const { return beta_; }

  Policy as_policy() const {
    auto comps = std::make_shared<const std::vector<Policy>>(components_);
    Vector beta = beta_;
    std::string desc = "mixture(";
    for (std::size_t k = 0; k < components_.size(); ++k) {
      if (k) desc += ",";
      desc += components_[k].description();
    }
    desc += ")";
    return Policy(
        components_.front().num_actions(),
        [comps, beta](int t, const Vector& x) {
          double p = 0.0;
          for (std::size_t k = 0; k < comps->size(); ++k) p += beta[static_cast<Index>(k)] * (*comps)[k](t, x);
          return p;
        },
        desc);
  }

 private:
  std::vector<Policy> components_;
  Vector beta_;
};

}  // namespace kcmc
