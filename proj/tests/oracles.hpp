// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations used only by the tests. They avoid the library
// code paths they check: plain loops, Gauss-Jordan elimination, cyclic Jacobi
// on the real embedding, greedy grid water-filling and finite differences.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <queue>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using cd = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;
using Eigen::Index;

inline constexpr double kPi = std::numbers::pi;

// ---------------------------------------------------------------------------
// Random draws

struct Rng {
  std::mt19937_64 eng;
  explicit Rng(std::uint64_t seed) : eng(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng); }
  double gauss() { return std::normal_distribution<double>(0.0, 1.0)(eng); }
  cd cgauss() { return {gauss(), gauss()}; }

  CVec cvec(Index n) {
    CVec v(n);
    for (auto& x : v) x = cgauss();
    return v;
  }
  CVec unit(Index n) {
    CVec v = cvec(n);
    return v / v.norm();
  }
  CMat cmat(Index r, Index c) {
    CMat m(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = cgauss();
    return m;
  }
  CMat hermitian(Index n) {
    const CMat a = cmat(n, n);
    return 0.5 * (a + a.adjoint());
  }
  /// A A^H + shift I.
  CMat hpd(Index n, double shift = 0.5) {
    const CMat a = cmat(n, n);
    return a * a.adjoint() / static_cast<double>(n) + shift * CMat::Identity(n, n);
  }
  /// Rank-deficient PSD of the given rank.
  CMat psd_rank(Index n, Index rank) {
    const CMat a = cmat(n, rank);
    return a * a.adjoint();
  }
};

// ---------------------------------------------------------------------------
// Dense linear algebra

/// Unitary DFT from the exponential formula.
inline CMat dft(Index n) {
  CMat w(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index k = 0; k < n; ++k)
      w(j, k) = std::exp(cd(0.0, -2.0 * kPi * static_cast<double>(j) * static_cast<double>(k) / static_cast<double>(n))) /
                std::sqrt(static_cast<double>(n));
  return w;
}

/// Gauss-Jordan inverse with partial pivoting.
inline CMat inverse(CMat a) {
  const Index n = a.rows();
  CMat inv = CMat::Identity(n, n);
  for (Index c = 0; c < n; ++c) {
    Index piv = c;
    for (Index r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (std::abs(a(piv, c)) == 0.0) throw std::runtime_error("oracle::inverse: singular");
    a.row(c).swap(a.row(piv));
    inv.row(c).swap(inv.row(piv));
    const cd d = a(c, c);
    a.row(c) /= d;
    inv.row(c) /= d;
    for (Index r = 0; r < n; ++r) {
      if (r == c) continue;
      const cd f = a(r, c);
      if (f == cd(0.0, 0.0)) continue;
      a.row(r) -= f * a.row(c);
      inv.row(r) -= f * inv.row(c);
    }
  }
  return inv;
}

/// log2 |det A| by LU with partial pivoting.
inline double log2_abs_det(CMat a) {
  const Index n = a.rows();
  double acc = 0.0;
  for (Index c = 0; c < n; ++c) {
    Index piv = c;
    for (Index r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    a.row(c).swap(a.row(piv));
    const cd d = a(c, c);
    if (std::abs(d) == 0.0) throw std::runtime_error("oracle::log2_abs_det: singular");
    acc += std::log2(std::abs(d));
    for (Index r = c + 1; r < n; ++r) a.row(r) -= (a(r, c) / d) * a.row(c);
  }
  return acc;
}

/// Cyclic Jacobi eigen-decomposition of a real symmetric matrix.
inline void jacobi(RMat a, RVec& values, RMat& vectors) {
  const Index n = a.rows();
  vectors = RMat::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30 * std::max(1.0, a.squaredNorm())) break;
    for (Index p = 0; p < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Index k = 0; k < n; ++k) {
          const double vkp = vectors(k, p);
          const double vkq = vectors(k, q);
          vectors(k, p) = c * vkp - s * vkq;
          vectors(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  values = a.diagonal();
}

inline RMat real_embedding(const CMat& a) {
  const Index n = a.rows();
  RMat r(2 * n, 2 * n);
  r << a.real(), -a.imag(), a.imag(), a.real();
  return r;
}

/// Eigenvalues of a Hermitian matrix, descending (each embedding eigenvalue
/// appears twice; one copy of each pair is kept).
inline std::vector<double> eigenvalues(const CMat& a) {
  RVec vals;
  RMat vecs;
  jacobi(real_embedding(a), vals, vecs);
  std::vector<double> v(vals.data(), vals.data() + vals.size());
  std::sort(v.begin(), v.end(), std::greater<>());
  std::vector<double> out;
  for (std::size_t k = 0; k < v.size(); k += 2) out.push_back(v[k]);
  return out;
}

/// Eigenvector of the largest eigenvalue of a Hermitian matrix (unit norm).
inline CVec top_eigenvector(const CMat& a) {
  RVec vals;
  RMat vecs;
  jacobi(real_embedding(a), vals, vecs);
  Index best = 0;
  vals.maxCoeff(&best);
  const Index n = a.rows();
  CVec v(n);
  for (Index i = 0; i < n; ++i) v[i] = cd(vecs(i, best), vecs(n + i, best));
  return v / v.norm();
}

/// Dense circulant from first column v, taps beyond `size` wrap around.
inline CMat circulant(const CVec& v, Index size) {
  CMat c = CMat::Zero(size, size);
  for (Index i = 0; i < size; ++i)
    for (Index j = 0; j < size; ++j)
      for (Index t = 0; t < v.size(); ++t)
        if ((j + t) % size == i) c(i, j) += v[t];
  return c;
}

/// NP x N upsampler.
inline RMat upsampler(Index n, Index p) {
  RMat u = RMat::Zero(n * p, n);
  for (Index k = 0; k < n; ++k) u(k * p, k) = 1.0;
  return u;
}

// ---------------------------------------------------------------------------
// Water-filling by greedy allocation of budget quanta

/// Spends `budget` in quanta of `step`; each quantum goes to the channel with
/// the largest increase of sum log(1 + a s). Returns the objective reached.
inline double water_fill_greedy(const std::vector<double>& a, const std::vector<double>& b, double budget,
                                double step, std::vector<double>* alloc_out = nullptr) {
  const std::size_t n = a.size();
  std::vector<double> s(n, 0.0);
  auto gain = [&](std::size_t k) { return std::log1p(a[k] * (s[k] + step / b[k])) - std::log1p(a[k] * s[k]); };
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item> heap;
  for (std::size_t k = 0; k < n; ++k) heap.push({gain(k), k});
  const auto quanta = static_cast<long long>(std::floor(budget / step + 1e-9));
  for (long long q = 0; q < quanta; ++q) {
    const std::size_t k = heap.top().second;
    heap.pop();
    s[k] += step / b[k];
    heap.push({gain(k), k});
  }
  double obj = 0.0;
  for (std::size_t k = 0; k < n; ++k) obj += std::log1p(a[k] * s[k]);
  if (alloc_out != nullptr) *alloc_out = s;
  return obj;
}

// ---------------------------------------------------------------------------
// Finite differences in real coordinates

using ScalarFn = std::function<double(const CVec&)>;

inline double fd_first(const ScalarFn& fn, const CVec& x, const CVec& v, double h) {
  return (fn(x + h * v) - fn(x - h * v)) / (2.0 * h);
}

inline double fd_second(const ScalarFn& fn, const CVec& x, const CVec& v, double h) {
  return (fn(x + h * v) - 2.0 * fn(x) + fn(x - h * v)) / (h * h);
}

// ---------------------------------------------------------------------------
// Scalar minimization

/// Golden-section minimum of a unimodal function on [lo, hi].
inline std::pair<double, double> golden_min(const std::function<double(double)>& fn, double lo, double hi, int iters) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - g * (hi - lo);
  double d = lo + g * (hi - lo);
  double fc = fn(c);
  double fd = fn(d);
  for (int i = 0; i < iters; ++i) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - g * (hi - lo);
      fc = fn(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + g * (hi - lo);
      fd = fn(d);
    }
  }
  return fc < fd ? std::pair{c, fc} : std::pair{d, fd};
}

/// Optimal value of the lifted single-stopband problem
///   max tr([[H, eta], [eta^H, 0]] X)  s.t. tr(R X11) = target, tr(X11) = 1,
///   X_dd = 1, tr(E X11) <= budget, X >= 0
/// computed from its dual: with S11 = y1 R + y2 I + z E - H > 0 the corner
/// multiplier is eta^H S11^{-1} eta, leaving a convex function of (y1, y2, z)
/// that is minimized by nested golden-section searches.
inline double lifted_qcqp_dual(const CMat& h, const CVec& eta, const CMat& r, double target, const CMat& e,
                               double budget, double y1_range, double z_max) {
  auto inner = [&](double y1, double z) {
    const CMat base = y1 * r + z * e - h;
    const double lam0 = -eigenvalues(base).back();  // y2 must exceed -lambda_min(base)
    auto phi = [&](double y2) {
      CMat s = base;
      s.diagonal().array() += y2;
      const Eigen::LDLT<CMat> f(s);
      const double quad = eta.dot(f.solve(eta)).real();
      return y1 * target + y2 + z * budget + quad;
    };
    const double span = 10.0 * (1.0 + std::abs(lam0) + eta.squaredNorm());
    return golden_min(phi, lam0 + 1e-12, lam0 + span, 90).second;
  };
  auto over_y1 = [&](double z) { return golden_min([&](double y1) { return inner(y1, z); }, -y1_range, y1_range, 60).second; };
  return golden_min(over_y1, 0.0, z_max, 50).second;
}

}  // namespace oracle
