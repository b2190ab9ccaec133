// SPDX-License-Identifier: Apache-2.0
//
// Dense complex linear-algebra kernels shared by the CP-FBMA model,
// receiver and optimizers.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace cpfbma {

using cd = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Raised when a numerical precondition fails at run time (non-PSD input,
/// singular update, rank-deficient pencil). Callers map it to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Largest absolute entry.
inline double max_abs(const ComplexMatrix& a) {
  return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
}

inline double hermitian_defect(const ComplexMatrix& a) {
  return max_abs(a - a.adjoint());
}

/// Unitary n-point DFT: [W]_{j,k} = exp(-2*pi*i*j*k/n) / sqrt(n).
inline ComplexMatrix dft_matrix(Index n) {
  if (n < 1) throw std::invalid_argument("dft_matrix: n must be >= 1");
  ComplexMatrix w(n, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (Index j = 0; j < n; ++j) {
    for (Index k = 0; k < n; ++k) {
      // reduce the exponent modulo n first so large n keeps full phase accuracy
      const auto r = static_cast<double>((j * k) % n);
      w(j, k) = std::polar(scale, -kTwoPi * r / static_cast<double>(n));
    }
  }
  return w;
}

struct HermitianEvd {
  RealVector values;      // descending
  ComplexMatrix vectors;  // column k pairs with values[k]
};

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
inline HermitianEvd hermitian_evd(const ComplexMatrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("hermitian_evd: matrix must be square");
  const double tol = 1e-10 * std::max(1.0, max_abs(a));
  if (hermitian_defect(a) > tol) {
    throw std::invalid_argument("hermitian_evd: input is not Hermitian (defect " +
                                std::to_string(hermitian_defect(a)) + ")");
  }
  const ComplexMatrix sym = 0.5 * (a + a.adjoint());
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericalError("hermitian_evd: eigensolver failed");
  const Index n = a.rows();
  HermitianEvd out{RealVector(n), ComplexMatrix(n, n)};
  for (Index k = 0; k < n; ++k) {
    out.values[k] = es.eigenvalues()[n - 1 - k];
    out.vectors.col(k) = es.eigenvectors().col(n - 1 - k);
  }
  return out;
}

/// Inverse square root of a Hermitian PSD matrix.
///
/// Eigenvalues below `ridge` get `ridge` added before inversion. With ridge = 0,
/// numerically-zero eigenvalues are mapped to zero (inverse on the range of A).
inline ComplexMatrix inv_sqrt_psd(const ComplexMatrix& a, double ridge = 0.0) {
  if (ridge < 0.0) throw std::invalid_argument("inv_sqrt_psd: ridge must be >= 0");
  const HermitianEvd evd = hermitian_evd(a);
  const Index n = a.rows();
  if (n == 0) return a;
  const double scale = std::max(std::abs(evd.values[0]), std::abs(evd.values[n - 1]));
  if (evd.values[n - 1] < -1e-8 * scale) {
    throw NumericalError("inv_sqrt_psd: matrix is not PSD (min eigenvalue " +
                         std::to_string(evd.values[n - 1]) + ")");
  }
  const double zero_tol = 1e-14 * scale;
  RealVector d(n);
  for (Index k = 0; k < n; ++k) {
    double lam = std::max(evd.values[k], 0.0);
    if (lam < ridge) lam += ridge;
    d[k] = lam > zero_tol ? 1.0 / std::sqrt(lam) : 0.0;
  }
  return evd.vectors * d.asDiagonal() * evd.vectors.adjoint();
}

/// log2 det of a Hermitian positive-definite matrix via Cholesky.
inline double log2_det_hpd(const ComplexMatrix& a) {
  Eigen::LLT<ComplexMatrix> llt(0.5 * (a + a.adjoint()));
  if (llt.info() != Eigen::Success) throw NumericalError("log2_det_hpd: matrix is not positive definite");
  double acc = 0.0;
  const ComplexMatrix& l = llt.matrixLLT();
  for (Index k = 0; k < a.rows(); ++k) acc += std::log2(l(k, k).real());
  return 2.0 * acc;
}

/// Factors of the generalized SVD  M = V_M diag(sig_M) X^H,  N = V_N diag(sig_N) X^H.
struct GsvdFactors {
  ComplexMatrix left_m;  // NP x NP unitary (empty when not requested)
  ComplexMatrix left_n;  // NP x NP unitary (empty when not requested)
  RealVector sig_m;      // length N
  RealVector sig_n;      // length N
  ComplexMatrix common;  // X, N x N invertible
  int deficient = 0;     // directions where both inputs vanish
  bool regularized = false;
};

struct GsvdOptions {
  double ridge_rel = 1e-12;      // ridge on N^H N, relative to its trace
  bool allow_deficient = false;  // report instead of throwing on a rank-deficient pencil
  bool compute_left = true;      // build the NP x NP left factors
  double tie_tol = 1e-9;         // relative gap under which generalized values are tied
};

namespace detail {

/// Extends `cols` (orthonormal columns, possibly fewer than rows) to a unitary
/// matrix. Columns listed in `fill` are replaced by orthonormal complement vectors.
inline ComplexMatrix complete_unitary(ComplexMatrix cols, const std::vector<Index>& fill) {
  const Index rows = cols.rows();
  ComplexMatrix out = ComplexMatrix::Zero(rows, rows);
  std::vector<bool> is_fill(static_cast<std::size_t>(cols.cols()), false);
  for (Index k : fill) is_fill[static_cast<std::size_t>(k)] = true;
  std::vector<Index> kept;
  for (Index k = 0; k < cols.cols(); ++k)
    if (!is_fill[static_cast<std::size_t>(k)]) kept.push_back(k);

  ComplexMatrix basis(rows, static_cast<Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j) basis.col(static_cast<Index>(j)) = cols.col(kept[j]);
  // Complement of span(basis) from a full QR.
  ComplexMatrix complement;
  if (basis.cols() > 0) {
    Eigen::HouseholderQR<ComplexMatrix> qr(basis);
    ComplexMatrix q = qr.householderQ() * ComplexMatrix::Identity(rows, rows);
    complement = q.rightCols(rows - basis.cols());
  } else {
    complement = ComplexMatrix::Identity(rows, rows);
  }
  Index next = 0;
  for (Index k = 0; k < cols.cols(); ++k) {
    out.col(k) = is_fill[static_cast<std::size_t>(k)] ? complement.col(next++) : cols.col(k);
  }
  for (Index k = cols.cols(); k < rows; ++k) out.col(k) = complement.col(next++);
  return out;
}

}  // namespace detail

/// Generalized SVD of a tall pair (M, N) sharing column count, computed from
/// the Gram pencil (M^H M, N^H N). The second Gram gets a ridge of
/// `ridge_rel * trace` before its Cholesky factor L is taken, the Hermitian
/// eigenproblem of L^{-1} M^H M L^{-H} is solved, and X = L Z.
///
/// Within clusters of tied generalized values the eigenvectors are rotated so
/// that X^H X is diagonal on the cluster. When the pencil is simultaneously
/// diagonalized by a unitary (the CP-FBMA covariance case) the resulting X has
/// orthogonal columns.
inline GsvdFactors gsvd(const ComplexMatrix& m, const ComplexMatrix& n, GsvdOptions opts = {}) {
  if (m.cols() != n.cols()) throw std::invalid_argument("gsvd: column counts differ");
  if (m.rows() < m.cols() || n.rows() < n.cols())
    throw std::invalid_argument("gsvd: inputs must have at least as many rows as columns");
  const Index cols = m.cols();
  const ComplexMatrix gram_m = m.adjoint() * m;
  ComplexMatrix gram_n = n.adjoint() * n;
  const double trace_n = gram_n.trace().real();
  const double trace_m = gram_m.trace().real();
  const double ridge = opts.ridge_rel * std::max(trace_n, 1e-300);

  GsvdFactors out;
  // Rank test on the stacked Gram: directions where both M and N vanish.
  {
    const HermitianEvd stacked = hermitian_evd(gram_m / std::max(trace_m, 1e-300) +
                                               gram_n / std::max(trace_n, 1e-300));
    const double top = std::max(stacked.values[0], 1e-300);
    for (Index k = 0; k < cols; ++k)
      if (stacked.values[k] < 1e-11 * top) ++out.deficient;
    if (out.deficient > 0 && !opts.allow_deficient) {
      std::ostringstream os;
      os << "gsvd: stacked pencil is rank deficient (" << out.deficient << " of " << cols
         << " directions vanish after regularization)";
      throw NumericalError(os.str());
    }
  }
  gram_n.diagonal().array() += ridge;
  out.regularized = out.deficient > 0;

  Eigen::LLT<ComplexMatrix> llt(0.5 * (gram_n + gram_n.adjoint()));
  if (llt.info() != Eigen::Success) throw NumericalError("gsvd: Cholesky of regularized N^H N failed");
  const ComplexMatrix l = llt.matrixL();
  // K = L^{-1} gram_m L^{-H}
  ComplexMatrix k = l.triangularView<Eigen::Lower>().solve(gram_m);
  k = l.triangularView<Eigen::Lower>().solve(k.adjoint()).adjoint();
  k = 0.5 * (k + k.adjoint());
  HermitianEvd evd = hermitian_evd(k);

  ComplexMatrix x = l * evd.vectors;
  // Orthogonalize X inside clusters of tied generalized values.
  const double scale = std::max(std::abs(evd.values[0]), 1e-300);
  Index start = 0;
  while (start < cols) {
    Index stop = start + 1;
    while (stop < cols && std::abs(evd.values[stop] - evd.values[start]) <= opts.tie_tol * scale) ++stop;
    const Index len = stop - start;
    if (len > 1) {
      const ComplexMatrix block = x.middleCols(start, len).adjoint() * x.middleCols(start, len);
      Eigen::SelfAdjointEigenSolver<ComplexMatrix> rot(0.5 * (block + block.adjoint()));
      x.middleCols(start, len) = x.middleCols(start, len) * rot.eigenvectors();
    }
    start = stop;
  }
  out.common = x;

  // Columns of M X^{-H} and N X^{-H} are mutually orthogonal; their norms are the
  // generalized singular values.
  const ComplexMatrix x_inv_h = x.adjoint().fullPivLu().inverse();
  const ComplexMatrix mx = m * x_inv_h;
  const ComplexMatrix nx = n * x_inv_h;
  out.sig_m = mx.colwise().norm().transpose();
  out.sig_n = nx.colwise().norm().transpose();

  if (opts.compute_left) {
    auto left = [&](const ComplexMatrix& prod, const RealVector& sig, double ref) {
      ComplexMatrix cols_n = ComplexMatrix::Zero(prod.rows(), cols);
      std::vector<Index> fill;
      for (Index c = 0; c < cols; ++c) {
        if (sig[c] > 1e-13 * std::max(ref, 1e-300)) {
          cols_n.col(c) = prod.col(c) / sig[c];
        } else {
          fill.push_back(c);
        }
      }
      return detail::complete_unitary(cols_n, fill);
    };
    out.left_m = left(mx, out.sig_m, out.sig_m.maxCoeff());
    out.left_n = left(nx, out.sig_n, out.sig_n.maxCoeff());
  }
  return out;
}

struct WaterFillResult {
  std::vector<double> alloc;
  double level = 0.0;  // 1/mu, the inverse of the common water level
  int iterations = 0;
};

/// Maximizes sum_k log(1 + a_k s_k) subject to sum_k b_k s_k = budget, s >= 0.
///
/// Bisection on the water level L (s_k = max(0, L/b_k - 1/a_k)) followed by an
/// exact solve of the budget equation on the identified active set.
inline WaterFillResult water_fill(std::span<const double> gains, std::span<const double> weights,
                                  double budget, int max_iter = 200, double tol = 1e-10) {
  if (gains.size() != weights.size()) throw std::invalid_argument("water_fill: size mismatch");
  if (gains.empty()) throw std::invalid_argument("water_fill: no channels");
  if (!(budget > 0.0)) throw std::invalid_argument("water_fill: budget must be positive");
  for (std::size_t k = 0; k < gains.size(); ++k) {
    if (!(gains[k] > 0.0) || !(weights[k] > 0.0))
      throw std::invalid_argument("water_fill: gains and weights must be positive");
  }
  const std::size_t n = gains.size();
  // floor_k = b_k / a_k: a channel is active iff L > floor_k
  std::vector<double> floor(n);
  for (std::size_t k = 0; k < n; ++k) floor[k] = weights[k] / gains[k];
  auto spent = [&](double level) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += std::max(0.0, level - floor[k]);
    return acc;
  };
  double lo = *std::min_element(floor.begin(), floor.end());
  double hi = *std::max_element(floor.begin(), floor.end()) + budget;
  WaterFillResult res;
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    const double mid = 0.5 * (lo + hi);
    const double s = spent(mid);
    if (std::abs(s - budget) <= tol * budget) {
      lo = hi = mid;
      break;
    }
    (s > budget ? hi : lo) = mid;
  }
  double level = 0.5 * (lo + hi);
  // Exact level on the active set.
  for (int pass = 0; pass < 4; ++pass) {
    double sum_floor = 0.0;
    int active = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (level > floor[k]) {
        sum_floor += floor[k];
        ++active;
      }
    }
    if (active == 0) break;
    const double exact = (budget + sum_floor) / active;
    bool same = true;
    for (std::size_t k = 0; k < n; ++k)
      if ((exact > floor[k]) != (level > floor[k])) same = false;
    level = exact;
    if (same) break;
  }
  res.level = level;
  res.alloc.resize(n);
  for (std::size_t k = 0; k < n; ++k) res.alloc[k] = std::max(0.0, level - floor[k]) / weights[k];
  return res;
}

/// (A + sign * b b^H)^{-1} from A^{-1} by the Woodbury identity.
inline ComplexMatrix woodbury_update(const ComplexMatrix& a_inv, const ComplexVector& b, int sign) {
  if (sign != 1 && sign != -1) throw std::invalid_argument("woodbury_update: sign must be +1 or -1");
  if (a_inv.rows() != b.size()) throw std::invalid_argument("woodbury_update: dimension mismatch");
  const ComplexVector ab = a_inv * b;
  const double denom = 1.0 + sign * b.dot(ab).real();
  if (b.squaredNorm() == 0.0) return a_inv;
  if (std::abs(denom) < 1e-12) throw NumericalError("woodbury_update: near-singular rank-one update");
  ComplexMatrix out = a_inv - (static_cast<double>(sign) / denom) * (ab * ab.adjoint());
  return 0.5 * (out + out.adjoint());
}

/// In-place variant on a preallocated block; same arithmetic as woodbury_update.
template <typename Derived>
void woodbury_update_inplace(Eigen::MatrixBase<Derived>& a_inv, const ComplexVector& b, int sign) {
  if (b.squaredNorm() == 0.0) return;
  const ComplexVector ab = a_inv * b;
  const double denom = 1.0 + sign * b.dot(ab).real();
  if (std::abs(denom) < 1e-12) throw NumericalError("woodbury_update: near-singular rank-one update");
  a_inv.noalias() -= (static_cast<double>(sign) / denom) * (ab * ab.adjoint());
}

struct Eigenpair {
  double value = 0.0;
  ComplexVector vector;
};

/// Largest eigenvalue of a Hermitian PSD matrix with a unit eigenvector.
inline Eigenpair leading_eigpair(const ComplexMatrix& a) {
  if (a.rows() == 0) throw std::invalid_argument("leading_eigpair: empty matrix");
  const HermitianEvd evd = hermitian_evd(a);
  Eigenpair out{evd.values[0], evd.vectors.col(0)};
  out.vector.normalize();
  return out;
}

}  // namespace cpfbma
