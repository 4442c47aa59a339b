#pragma once

// Uncertainty budgets on the odds-normalized weight w~ = p_obs(t|x) * w:
// Tan's box model and the f-divergence family. Extended reals are IEEE
// infinities; functions never return NaN inside their documented domains.

#include "kcmc/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

namespace kcmc {

enum class FKind { kl, reverse_kl, jensen_shannon, squared_hellinger, pearson_chi2, neyman_chi2, total_variation };

inline constexpr std::array<FKind, 7> kAllFKinds{FKind::kl,           FKind::reverse_kl,  FKind::jensen_shannon,
                                                 FKind::squared_hellinger, FKind::pearson_chi2, FKind::neyman_chi2,
                                                 FKind::total_variation};

inline const char* to_string(FKind k) {
  switch (k) {
    case FKind::kl: return "kl";
    case FKind::reverse_kl: return "reverse_kl";
    case FKind::jensen_shannon: return "jensen_shannon";
    case FKind::squared_hellinger: return "squared_hellinger";
    case FKind::pearson_chi2: return "pearson_chi2";
    case FKind::neyman_chi2: return "neyman_chi2";
    case FKind::total_variation: return "total_variation";
  }
  return "?";
}

inline FKind parse_fkind(std::string_view s) {
  if (s == "kl") return FKind::kl;
  if (s == "reverse_kl" || s == "rkl") return FKind::reverse_kl;
  if (s == "jensen_shannon" || s == "js") return FKind::jensen_shannon;
  if (s == "squared_hellinger" || s == "hellinger") return FKind::squared_hellinger;
  if (s == "pearson_chi2" || s == "pearson") return FKind::pearson_chi2;
  if (s == "neyman_chi2" || s == "neyman") return FKind::neyman_chi2;
  if (s == "total_variation" || s == "tv") return FKind::total_variation;
  throw Error("unknown f-divergence kind '" + std::string(s) + "'");
}

namespace detail {
inline double xlogx(double u) { return u == 0.0 ? 0.0 : u * std::log(u); }
}  // namespace detail

/// f(u) for u >= 0; +inf outside the domain. Jensen-Shannon carries the 1/2 factor.
inline double f_value(FKind kind, double u) {
  if (u < 0.0 || std::isnan(u)) return kInf;
  switch (kind) {
    case FKind::kl: return detail::xlogx(u);
    case FKind::reverse_kl: return u == 0.0 ? kInf : -std::log(u);
    case FKind::jensen_shannon:
      return 0.5 * (detail::xlogx(u) - (u + 1.0) * std::log((u + 1.0) / 2.0));
    case FKind::squared_hellinger: {
      const double s = std::sqrt(u) - 1.0;
      return s * s;
    }
    case FKind::pearson_chi2: return (u - 1.0) * (u - 1.0);
    case FKind::neyman_chi2: return u == 0.0 ? kInf : 1.0 / u - 1.0;
    case FKind::total_variation: return 0.5 * std::abs(u - 1.0);
  }
  return kInf;
}

/// The classical Fenchel conjugate f*(v) of the catalog entry.
inline double f_conjugate(FKind kind, double v) {
  switch (kind) {
    case FKind::kl: return std::exp(v - 1.0);
    case FKind::reverse_kl: return v < 0.0 ? -1.0 - std::log(-v) : kInf;
    case FKind::jensen_shannon:
      return v < 0.5 * std::numbers::ln2 ? -0.5 * std::log(2.0 - std::exp(2.0 * v)) : kInf;
    case FKind::squared_hellinger: return v < 1.0 ? v / (1.0 - v) : kInf;
    case FKind::pearson_chi2: return 0.25 * v * v + v;
    case FKind::neyman_chi2: return v <= 0.0 ? 1.0 - 2.0 * std::sqrt(-v) : kInf;
    case FKind::total_variation: return (v >= -0.5 && v <= 0.5) ? v : kInf;
  }
  return kInf;
}

/// Value and first two derivatives of a conjugate at one point.
struct ConjugatePoint {
  double value;
  double slope;      // selected element of the subdifferential (right derivative)
  double curvature;  // second derivative where it exists, else 0
};

/// f*_up(v) = inf_{v' >= v} f*(v'): the conjugate of f + I_[0,inf).
class ConjugateEvaluator {
 public:
  explicit ConjugateEvaluator(FKind kind) : kind_(kind) {
    switch (kind) {
      case FKind::pearson_chi2:
        flat_point_ = -2.0;
        flat_value_ = -1.0;
        break;
      case FKind::total_variation:
        flat_point_ = -0.5;
        flat_value_ = -0.5;
        break;
      case FKind::jensen_shannon: flat_value_ = -0.5 * std::numbers::ln2; break;
      case FKind::squared_hellinger: flat_value_ = -1.0; break;
      case FKind::kl: flat_value_ = 0.0; break;
      case FKind::reverse_kl:
      case FKind::neyman_chi2: flat_value_ = -kInf; break;
    }
    switch (kind) {
      case FKind::kl:
      case FKind::pearson_chi2: domain_upper_ = kInf; break;
      case FKind::reverse_kl:
      case FKind::neyman_chi2: domain_upper_ = 0.0; break;
      case FKind::jensen_shannon: domain_upper_ = 0.5 * std::numbers::ln2; break;
      case FKind::squared_hellinger: domain_upper_ = 1.0; break;
      case FKind::total_variation: domain_upper_ = 0.5; break;
    }
  }

  FKind kind() const { return kind_; }
  /// sup dom f*; whether the endpoint itself is in the domain is kind-specific.
  double domain_upper() const { return domain_upper_; }
  bool domain_closed() const { return kind_ == FKind::neyman_chi2 || kind_ == FKind::total_variation; }
  /// Argmin of f* (-inf when f* is strictly increasing) and inf f*.
  double flat_point() const { return flat_point_; }
  double flat_value() const { return flat_value_; }

  bool in_domain(double v) const { return domain_closed() ? v <= domain_upper_ : v < domain_upper_; }

  double value(double v) const {
    if (!in_domain(v)) return kInf;
    return v <= flat_point_ ? flat_value_ : f_conjugate(kind_, v);
  }

  /// Right derivative: 0 on the flat region, the classical derivative elsewhere.
  double subgradient(double v) const { return eval(v).slope; }

  ConjugatePoint eval(double v) const {
    if (!in_domain(v)) return {kInf, kInf, 0.0};
    switch (kind_) {
      case FKind::kl: {
        const double e = std::exp(v - 1.0);
        return {e, e, e};
      }
      case FKind::reverse_kl: return {-1.0 - std::log(-v), -1.0 / v, 1.0 / (v * v)};
      case FKind::jensen_shannon: {
        const double e = std::exp(2.0 * v);
        const double d = 2.0 - e;
        return {-0.5 * std::log(d), e / d, 4.0 * e / (d * d)};
      }
      case FKind::squared_hellinger: {
        const double d = 1.0 - v;
        return {v / d, 1.0 / (d * d), 2.0 / (d * d * d)};
      }
      case FKind::pearson_chi2:
        if (v < flat_point_) return {flat_value_, 0.0, 0.0};
        return {0.25 * v * v + v, 1.0 + 0.5 * v, 0.5};
      case FKind::neyman_chi2:
        if (v == 0.0) return {1.0, kInf, 0.0};
        return {1.0 - 2.0 * std::sqrt(-v), 1.0 / std::sqrt(-v), 0.5 / std::pow(-v, 1.5)};
      case FKind::total_variation:
        if (v < flat_point_) return {flat_value_, 0.0, 0.0};
        if (v == domain_upper_) return {v, kInf, 0.0};
        return {v, 1.0, 0.0};
    }
    return {kInf, kInf, 0.0};
  }

  /// Softplus-smoothed kink for total variation (temperature mu > 0); other
  /// kinds are returned unchanged.
  ConjugatePoint eval_smoothed(double v, double mu) const {
    if (kind_ != FKind::total_variation || mu <= 0.0) return eval(v);
    if (!in_domain(v)) return {kInf, kInf, 0.0};
    const double z = (v - flat_point_) / mu;
    const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    return {flat_value_ + mu * sp, s, s * (1.0 - s) / mu};
  }

 private:
  FKind kind_;
  double flat_point_ = -kInf;
  double flat_value_ = 0.0;
  double domain_upper_ = kInf;
};

inline ConjugateEvaluator monotone_conjugate(FKind kind) { return ConjugateEvaluator(kind); }

// ---------------------------------------------------------------------------
// Tan's marginal sensitivity model

struct TanBounds {
  double a_pi;
  double b_pi;
  double a_wtilde;
  double b_wtilde;
};

inline TanBounds tan_bounds(double gamma_odds, double p) {
  if (!(gamma_odds >= 1.0)) throw Error("odds-ratio bound Gamma must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw Error("propensity must lie in (0,1)");
  if (gamma_odds == 1.0) return {p, p, 1.0, 1.0};
  const double odds = 1.0 / p - 1.0;
  TanBounds b{};
  b.a_pi = 1.0 / (1.0 + gamma_odds * odds);
  b.b_pi = 1.0 / (1.0 + odds / gamma_odds);
  b.a_wtilde = std::min(p / b.b_pi, 1.0);
  b.b_wtilde = std::max(p / b.a_pi, 1.0);
  return b;
}

/// Quantile level (1 - a)/(b - a) at which the box-model worst case switches weights.
inline double box_quantile_level(double a, double b) {
  if (b - a <= 0.0) return 0.5;
  return (1.0 - a) / (b - a);
}

/// 1/(1+Gamma): the quantile level of Tan's model, independent of the propensity.
inline double tan_quantile_level(double gamma_odds) { return 1.0 / (1.0 + gamma_odds); }

struct BoxModel {
  double gamma_odds = 1.0;
};

/// Per-sample weight bounds [a_i, b_i] on w~ for propensities p_i.
struct WeightBounds {
  Vector lower;
  Vector upper;
};

inline WeightBounds box_weight_bounds(const BoxModel& model, const Vector& propensities) {
  WeightBounds wb{Vector(propensities.size()), Vector(propensities.size())};
  for (Index i = 0; i < propensities.size(); ++i) {
    const auto tb = tan_bounds(model.gamma_odds, std::clamp(propensities[i], 1e-12, 1.0 - 1e-12));
    wb.lower[i] = tb.a_wtilde;
    wb.upper[i] = tb.b_wtilde;
  }
  return wb;
}

struct FDivergenceModel {
  FKind kind = FKind::kl;
  double budget = 0.0;
};

/// Box, f-divergence, or both (intersection of the feasible sets).
struct SensitivityModel {
  std::optional<BoxModel> box;
  std::optional<FDivergenceModel> fdiv;

  static SensitivityModel tan(double gamma) { return {BoxModel{gamma}, std::nullopt}; }
  static SensitivityModel divergence(FKind kind, double budget) {
    return {std::nullopt, FDivergenceModel{kind, budget}};
  }

  void validate() const {
    if (!box && !fdiv) throw Error("sensitivity model needs a box or an f-divergence component");
    if (box && !(box->gamma_odds >= 1.0)) throw Error("odds-ratio bound Gamma must be >= 1");
    if (fdiv && !(fdiv->budget >= 0.0)) throw Error("f-divergence budget must be >= 0");
  }

  std::string description() const {
    std::ostringstream s;
    s.precision(17);
    if (box) s << "box:GAMMA=" << box->gamma_odds;
    if (box && fdiv) s << "+";
    if (fdiv) s << "f:KIND=" << to_string(fdiv->kind) << ",GAMMA_BUDGET=" << fdiv->budget;
    return s.str();
  }

  /// The scalar sensitivity parameter (Gamma for box models, the budget otherwise).
  double parameter() const { return box ? box->gamma_odds : fdiv->budget; }
};

namespace detail {
inline double parse_real(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw Error("");
    return v;
  } catch (...) {
    throw Error("cannot parse " + what + " value '" + s + "'");
  }
}
}  // namespace detail

/// Grammar: `box:GAMMA=1.5`, `f:KIND=kl,GAMMA_BUDGET=0.01`, or both joined by '+'.
inline SensitivityModel parse_sensitivity_model(const std::string& text) {
  SensitivityModel m;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto plus = text.find('+', start);
    const std::string part = text.substr(start, plus == std::string::npos ? std::string::npos : plus - start);
    const auto colon = part.find(':');
    if (colon == std::string::npos) throw Error("model spec '" + part + "' lacks a ':'");
    const std::string head = part.substr(0, colon);
    std::string kind;
    std::optional<double> gamma, budget;
    std::istringstream args(part.substr(colon + 1));
    std::string kv;
    while (std::getline(args, kv, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error("model argument '" + kv + "' lacks '='");
      const std::string key = kv.substr(0, eq);
      const std::string val = kv.substr(eq + 1);
      if (key == "GAMMA") gamma = detail::parse_real(val, key);
      else if (key == "GAMMA_BUDGET") budget = detail::parse_real(val, key);
      else if (key == "KIND") kind = val;
      else throw Error("unknown model argument '" + key + "'");
    }
    if (head == "box") {
      if (!gamma) throw Error("box model requires GAMMA");
      m.box = BoxModel{*gamma};
    } else if (head == "f") {
      if (kind.empty() || !budget) throw Error("f model requires KIND and GAMMA_BUDGET");
      m.fdiv = FDivergenceModel{parse_fkind(kind), *budget};
    } else {
      throw Error("unknown model family '" + head + "'");
    }
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  m.validate();
  return m;
}

/// Empirical budget usage (1/n) sum_i f(w~_i); +inf propagates.
inline double budget_value(const FDivergenceModel& model, const Vector& wtilde) {
  double s = 0.0;
  for (Index i = 0; i < wtilde.size(); ++i) {
    const double f = f_value(model.kind, wtilde[i]);
    if (std::isinf(f)) return kInf;
    s += f;
  }
  return s / static_cast<double>(wtilde.size());
}

}  // namespace kcmc
