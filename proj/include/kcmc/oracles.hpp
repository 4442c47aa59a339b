#pragma once

// Brute-force reference computations, independent of the dual engine. They
// only scale to toy sizes and back the selfcheck command and the test suite.

#include "kcmc/divergence.hpp"
#include "kcmc/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <vector>

namespace kcmc::oracle {

/// sup over u in [0, u_max] on a grid of step h of u v - f(u).
inline double conjugate_on_grid(FKind kind, double v, double u_max = 50.0, double h = 1e-3) {
  double best = -kInf;
  const auto steps = static_cast<long>(std::llround(u_max / h));
  for (long k = 0; k <= steps; ++k) {
    const double u = static_cast<double>(k) * h;
    const double f = f_value(kind, u);
    if (std::isfinite(f)) best = std::max(best, u * v - f);
  }
  return best;
}

/// Chi-squared CDF by composite Simpson on s in [0, sqrt(x)] after u = s^2.
inline double chi2_cdf_simpson(int dof, double x, double h = 1e-4) {
  if (x <= 0.0) return 0.0;
  const double k = static_cast<double>(dof);
  const double norm = std::pow(2.0, k / 2.0) * std::tgamma(k / 2.0);
  auto g = [&](double s) { return 2.0 * std::pow(s, k - 1.0) * std::exp(-0.5 * s * s) / norm; };
  const double top = std::sqrt(x);
  long m = static_cast<long>(std::ceil(top / h));
  if (m % 2) ++m;
  const double step = top / static_cast<double>(m);
  double acc = g(0.0) + g(top);
  for (long i = 1; i < m; ++i) acc += (i % 2 ? 4.0 : 2.0) * g(static_cast<double>(i) * step);
  return acc * step / 3.0;
}

/// argmax of a unimodal function on [lo, hi].
inline double golden_section_max(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-12) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol * (1.0 + std::abs(a) + std::abs(b))) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

/// min (1/n) sum w_i r_i s.t. (1/n) Psi^T (w - 1) = 0, lo <= w <= hi, by
/// enumerating every basic solution (D free coordinates, the rest at bounds).
inline double box_lp_vertex(const Matrix& psi, const Vector& r, const Vector& lo, const Vector& hi) {
  const Index n = r.size();
  const Index D = psi.cols();
  double best = kInf;
  std::vector<Index> basis(static_cast<std::size_t>(D));
  std::function<void(Index, Index)> choose = [&](Index start, Index depth) {
    if (depth == D) {
      std::vector<char> is_basic(static_cast<std::size_t>(n), 0);
      for (Index b : basis) is_basic[static_cast<std::size_t>(b)] = 1;
      std::vector<Index> nonbasic;
      for (Index i = 0; i < n; ++i)
        if (!is_basic[static_cast<std::size_t>(i)]) nonbasic.push_back(i);
      const auto m = static_cast<long>(nonbasic.size());
      Matrix B(D, D);
      for (Index j = 0; j < D; ++j) B.col(j) = psi.row(basis[static_cast<std::size_t>(j)]).transpose();
      Eigen::FullPivLU<Matrix> lu(B);
      if (D > 0 && lu.rank() < D) return;
      for (long mask = 0; mask < (1L << m); ++mask) {
        Vector w(n);
        for (long k = 0; k < m; ++k) {
          const Index i = nonbasic[static_cast<std::size_t>(k)];
          w[i] = (mask >> k) & 1L ? hi[i] : lo[i];
        }
        if (D > 0) {
          // psi_B^T w_B = sum_i psi_i - sum_{nonbasic} psi_i w_i
          Vector rhs = psi.colwise().sum().transpose();
          for (long k = 0; k < m; ++k) {
            const Index i = nonbasic[static_cast<std::size_t>(k)];
            rhs -= psi.row(i).transpose() * w[i];
          }
          const Vector wb = lu.solve(rhs);
          bool ok = true;
          for (Index j = 0; j < D; ++j) {
            const Index i = basis[static_cast<std::size_t>(j)];
            if (wb[j] < lo[i] - 1e-12 || wb[j] > hi[i] + 1e-12) ok = false;
            w[i] = wb[j];
          }
          if (!ok) continue;
        }
        best = std::min(best, w.dot(r) / static_cast<double>(n));
      }
      return;
    }
    for (Index i = start; i < n; ++i) {
      basis[static_cast<std::size_t>(depth)] = i;
      choose(i + 1, depth + 1);
    }
  };
  choose(0, 0);
  return best;
}

/// A smooth convex inequality g(w) <= 0 for the barrier oracle.
struct ConvexConstraint {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  std::function<Matrix(const Vector&)> hessian;
};

/// min c^T w s.t. A w = b, g_j(w) <= 0, by a log-barrier path with Newton
/// steps in the null space of A (w = w0 + Z y). Starts from a strictly
/// feasible w0 with A w0 = b.
inline double barrier_minimize(const Vector& c, const Matrix& A, const Vector& b,
                               const std::vector<ConvexConstraint>& cons, Vector w, double t_final = 1e11) {
  const Index n = w.size();
  const Index m = A.rows();
  if (m > 0 && (A * w - b).norm() > 1e-10 * (1.0 + b.norm())) throw Error("barrier start violates the equalities");
  Matrix Z = Matrix::Identity(n, n);
  if (m > 0) {
    Eigen::HouseholderQR<Matrix> qr(A.transpose());
    Z = (qr.householderQ() * Matrix::Identity(n, n)).rightCols(n - m);
  }
  auto phi = [&](const Vector& x, double t) {
    double s = t * c.dot(x);
    for (const auto& g : cons) {
      const double gv = g.value(x);
      if (!(gv < 0.0)) return kInf;
      s -= std::log(-gv);
    }
    return s;
  };
  for (double t = 1.0; t <= t_final; t *= 4.0) {
    for (int it = 0; it < 200; ++it) {
      Vector grad = t * c;
      Matrix H = Matrix::Zero(n, n);
      for (const auto& g : cons) {
        const double gv = g.value(w);
        const Vector gg = g.gradient(w);
        grad -= gg / gv;
        H += gg * gg.transpose() / (gv * gv) - g.hessian(w) / gv;
      }
      const Vector gz = Z.transpose() * grad;
      const Matrix hz = Z.transpose() * H * Z;
      const Vector dy = -hz.ldlt().solve(gz);
      const double dec = -gz.dot(dy);
      if (!(dec / 2.0 >= 1e-14)) break;
      const Vector dw = Z * dy;
      double step = 1.0;
      const double f0 = phi(w, t);
      while (step > 1e-16) {
        const double f1 = phi(w + step * dw, t);
        if (std::isfinite(f1) && f1 <= f0 + 0.25 * step * grad.dot(dw)) break;
        step *= 0.5;
      }
      if (step <= 1e-16) break;
      w += step * dw;
    }
  }
  return c.dot(w);
}

/// Central finite-difference gradient.
inline Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  for (Index j = 0; j < x.size(); ++j) {
    Vector xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    g[j] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

/// Symmetric eigenvalues by cyclic Jacobi rotations (ascending).
inline Vector jacobi_eigenvalues(Matrix a, int sweeps = 100) {
  const Index n = a.rows();
  for (int s = 0; s < sweeps; ++s) {
    double off = 0.0;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (Index p = 0; p < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = cs * akp - sn * akq;
          a(k, q) = sn * akp + cs * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = cs * apk - sn * aqk;
          a(q, k) = sn * apk + cs * aqk;
        }
      }
    }
  }
  Vector ev = a.diagonal();
  std::sort(ev.data(), ev.data() + n);
  return ev;
}

}  // namespace kcmc::oracle
