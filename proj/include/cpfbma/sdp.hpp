// SPDX-License-Identifier: Apache-2.0
//
// Dense complex SDP solver:
//
//   maximize tr(A0 X)  s.t.  tr(A_i X) = b_i,  tr(C_j X) <= d_j,  X >= 0
//
// X is Hermitian. The problem is mapped to a real symmetric one through
// [[Re, -Im], [Im, Re]] and the inequalities receive nonnegative slacks on
// the diagonal of the same block. The real problem is solved by an
// infeasible-start primal-dual interior-point method (HKM direction,
// Mehrotra predictor-corrector).

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpfbma/numerics.hpp"

namespace cpfbma {

struct SdpConstraint {
  ComplexMatrix a;
  double b = 0.0;
};

struct SdpProblem {
  ComplexMatrix objective;                   // A0, d x d Hermitian
  std::vector<SdpConstraint> equalities;     // tr(A X) = b
  std::vector<SdpConstraint> inequalities;   // tr(C X) <= d
  double tolerance = 1e-7;
  int max_iter = 100;

  Index dim() const { return objective.rows(); }
};

enum class SdpStatus { optimal, max_iter, infeasible };

inline const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::optimal: return "optimal";
    case SdpStatus::max_iter: return "max_iter";
    case SdpStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

struct SdpTraceRow {
  int iter = 0;
  double gap = 0.0;         // relative complementarity gap
  double primal_res = 0.0;  // relative primal infeasibility
  double dual_res = 0.0;    // relative dual infeasibility
};

struct SdpSolution {
  ComplexMatrix x;
  double objective = 0.0;       // tr(A0 X)
  double dual_objective = 0.0;  // upper bound from the dual iterate
  double gap = 0.0;             // final relative gap
  double primal_res = 0.0;
  double dual_res = 0.0;
  SdpStatus status = SdpStatus::max_iter;
  int iterations = 0;
  std::vector<SdpTraceRow> trace;
};

namespace detail {

inline RealMatrix real_embed(const ComplexMatrix& a) {
  const Index d = a.rows();
  RealMatrix r(2 * d, 2 * d);
  r.topLeftCorner(d, d) = a.real();
  r.topRightCorner(d, d) = -a.imag();
  r.bottomLeftCorner(d, d) = a.imag();
  r.bottomRightCorner(d, d) = a.real();
  return r;
}

inline ComplexMatrix real_unembed(const RealMatrix& y, Index d) {
  ComplexMatrix x(d, d);
  const RealMatrix re = 0.5 * (y.topLeftCorner(d, d) + y.bottomRightCorner(d, d));
  const RealMatrix im = 0.5 * (y.bottomLeftCorner(d, d) - y.topRightCorner(d, d));
  x.real() = re;
  x.imag() = im;
  return 0.5 * (x + x.adjoint());
}

inline double inner(const RealMatrix& a, const RealMatrix& b) { return a.cwiseProduct(b).sum(); }

/// Largest alpha in (0, 1] keeping x + alpha dx positive semidefinite, scaled by tau.
inline double max_step(const RealMatrix& x, const RealMatrix& dx, double tau) {
  const Eigen::LLT<RealMatrix> llt(x);
  if (llt.info() != Eigen::Success) return 0.0;
  const RealMatrix l = llt.matrixL();
  RealMatrix m = l.triangularView<Eigen::Lower>().solve(dx);
  m = l.triangularView<Eigen::Lower>().solve(m.transpose()).transpose();
  m = 0.5 * (m + m.transpose());
  const Eigen::SelfAdjointEigenSolver<RealMatrix> es(m, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin >= 0.0) return 1.0;
  return std::min(1.0, tau * (-1.0 / lmin));
}

inline RealMatrix sym(const RealMatrix& a) { return 0.5 * (a + a.transpose()); }

}  // namespace detail

inline SdpSolution solve_sdp(const SdpProblem& p) {
  const Index d = p.dim();
  if (d < 1 || p.objective.cols() != d) throw std::invalid_argument("solve_sdp: objective must be square, d >= 1");
  auto check_herm = [d](const ComplexMatrix& a, const char* what) {
    if (a.rows() != d || a.cols() != d) throw std::invalid_argument(std::string("solve_sdp: ") + what + " has wrong size");
    if (hermitian_defect(a) > 1e-12 * std::max(1.0, max_abs(a)))
      throw std::invalid_argument(std::string("solve_sdp: ") + what + " is not Hermitian");
  };
  check_herm(p.objective, "objective");
  for (const auto& c : p.equalities) check_herm(c.a, "equality matrix");
  for (const auto& c : p.inequalities) check_herm(c.a, "inequality matrix");
  if (p.equalities.empty()) throw std::invalid_argument("solve_sdp: at least one equality is required");

  const Index k = static_cast<Index>(p.inequalities.size());
  const Index n = 2 * d + k;

  // Real standard form: min <C, Y> s.t. <A_i, Y> = b_i, Y >= 0, each row
  // normalized. Equalities that are linear combinations of earlier ones are
  // dropped (or reported infeasible when their right-hand sides disagree).
  std::vector<RealMatrix> a;
  std::vector<double> bv;
  std::vector<RealMatrix> basis;      // orthonormalized kept equalities
  std::vector<RealVector> basis_coef; // basis[j] = sum_i coef[i] a[i]
  bool inconsistent = false;
  for (const auto& c : p.equalities) {
    RealMatrix mat = RealMatrix::Zero(n, n);
    mat.topLeftCorner(2 * d, 2 * d) = detail::real_embed(c.a);
    const double nrm = mat.norm();
    double rhs = 2.0 * c.b;
    if (nrm == 0.0) {
      if (std::abs(rhs) > 0.0) inconsistent = true;
      continue;
    }
    mat /= nrm;
    rhs /= nrm;
    RealMatrix resid = mat;
    RealVector coef = RealVector::Zero(static_cast<Index>(a.size()) + 1);
    coef[static_cast<Index>(a.size())] = 1.0;
    for (std::size_t j = 0; j < basis.size(); ++j) {
      const double proj = detail::inner(basis[j], mat);
      resid -= proj * basis[j];
      coef.head(basis_coef[j].size()) -= proj * basis_coef[j];
    }
    const double rn = resid.norm();
    if (rn < 1e-9) {
      // resid ~ 0 gives a linear relation sum_i coef_i a_i = 0 that b must obey
      double implied = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) implied += coef[static_cast<Index>(i)] * bv[i];
      implied += rhs;
      if (std::abs(implied) > 1e-8 * (1.0 + std::abs(rhs))) inconsistent = true;
      continue;
    }
    basis.push_back(resid / rn);
    basis_coef.push_back(coef / rn);
    a.push_back(std::move(mat));
    bv.push_back(rhs);
  }
  for (Index j = 0; j < k; ++j) {
    const auto& c = p.inequalities[static_cast<std::size_t>(j)];
    RealMatrix mat = RealMatrix::Zero(n, n);
    mat.topLeftCorner(2 * d, 2 * d) = detail::real_embed(c.a);
    mat(2 * d + j, 2 * d + j) = 1.0;
    const double nrm = mat.norm();
    a.push_back(mat / nrm);
    bv.push_back(2.0 * c.b / nrm);
  }
  const auto m = static_cast<Index>(a.size());
  RealVector b = Eigen::Map<const RealVector>(bv.data(), m);
  if (inconsistent || a.empty()) {
    SdpSolution bad;
    bad.status = SdpStatus::infeasible;
    bad.x = ComplexMatrix::Zero(d, d);
    return bad;
  }
  RealMatrix cmat = RealMatrix::Zero(n, n);
  cmat.topLeftCorner(2 * d, 2 * d) = -detail::real_embed(p.objective);
  const double cscale = std::max(cmat.norm(), 1e-300);
  const bool c_zero = cmat.norm() == 0.0;
  if (!c_zero) cmat /= cscale;

  const double bnorm = b.norm();
  const double cnorm = cmat.norm();
  double anorm_max = 0.0;
  for (const auto& ai : a) anorm_max = std::max(anorm_max, ai.norm());
  const double sqn = std::sqrt(static_cast<double>(n));
  double xi = std::max(10.0, sqn);
  for (Index i = 0; i < m; ++i) xi = std::max(xi, sqn * (1.0 + std::abs(b[i])) / (1.0 + a[static_cast<std::size_t>(i)].norm()));
  const double eta = std::max({10.0, sqn, cnorm, anorm_max});

  RealMatrix x = xi * RealMatrix::Identity(n, n);
  RealMatrix z = eta * RealMatrix::Identity(n, n);
  RealVector y = RealVector::Zero(m);

  SdpSolution sol;
  auto a_op = [&](const RealMatrix& mat) {
    RealVector r(m);
    for (Index i = 0; i < m; ++i) r[i] = detail::inner(a[static_cast<std::size_t>(i)], mat);
    return r;
  };
  auto at_op = [&](const RealVector& v) {
    RealMatrix r = RealMatrix::Zero(n, n);
    for (Index i = 0; i < m; ++i) r += v[i] * a[static_cast<std::size_t>(i)];
    return r;
  };

  double best_score = std::numeric_limits<double>::infinity();
  RealMatrix best_x = x;
  RealVector best_y = y;
  double best_gap = 0.0;
  double best_pres = 0.0;
  double best_dres = 0.0;

  const double tol = p.tolerance;
  sol.status = SdpStatus::max_iter;
  for (int it = 0; it <= p.max_iter; ++it) {
    const RealVector rp = b - a_op(x);
    const RealMatrix rd = cmat - z - at_op(y);
    const double pobj = detail::inner(cmat, x);
    const double dobj = b.dot(y);
    const double xz = detail::inner(x, z);
    const double mu = xz / static_cast<double>(n);
    const double pres = rp.norm() / (1.0 + bnorm);
    const double dres = rd.norm() / (1.0 + cnorm);
    // gap measured on the unscaled objective
    const double gap = std::abs(xz) * cscale / (1.0 + cscale * (std::abs(pobj) + std::abs(dobj)));
    sol.trace.push_back({it, gap, pres, dres});
    const double score = std::max({gap, pres, dres});
    if (score < best_score) {
      best_score = score;
      best_x = x;
      best_y = y;
      best_gap = gap;
      best_pres = pres;
      best_dres = dres;
    }
    sol.iterations = it;
    if (gap < tol && pres < tol && dres < tol) {
      sol.status = SdpStatus::optimal;
      break;
    }
    // Farkas certificate for primal infeasibility: A^T y <= 0 with b^T y > 0.
    const double ynorm = y.norm();
    if (ynorm > 1e6 * (1.0 + cnorm) && dobj > 0.0) {
      const RealVector yh = y / ynorm;
      const Eigen::SelfAdjointEigenSolver<RealMatrix> es(detail::sym(at_op(yh)), Eigen::EigenvaluesOnly);
      if (es.eigenvalues().maxCoeff() <= 1e-6 && b.dot(yh) > 1e-8) {
        sol.status = SdpStatus::infeasible;
        break;
      }
    }
    if (it == p.max_iter) break;

    const Eigen::LLT<RealMatrix> zllt(z);
    if (zllt.info() != Eigen::Success) break;
    const RealMatrix zinv = detail::sym(zllt.solve(RealMatrix::Identity(n, n)));
    std::vector<RealMatrix> xaz(static_cast<std::size_t>(m));
    for (Index j = 0; j < m; ++j) xaz[static_cast<std::size_t>(j)] = x * a[static_cast<std::size_t>(j)] * zinv;
    RealMatrix schur(m, m);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < m; ++j) schur(i, j) = detail::inner(a[static_cast<std::size_t>(i)], xaz[static_cast<std::size_t>(j)].transpose());
    schur = detail::sym(schur);
    const Eigen::LDLT<RealMatrix> sfac(schur);
    if (sfac.info() != Eigen::Success) break;

    RealVector a_zinv(m);
    for (Index i = 0; i < m; ++i) a_zinv[i] = detail::inner(a[static_cast<std::size_t>(i)], zinv);
    const RealMatrix x_rd_zinv = x * rd * zinv;
    const RealVector a_xrdz = [&] {
      RealVector r(m);
      for (Index i = 0; i < m; ++i) r[i] = detail::inner(a[static_cast<std::size_t>(i)], x_rd_zinv.transpose());
      return r;
    }();

    auto direction = [&](double sigma_mu, const RealMatrix* corr, RealMatrix& dx, RealVector& dy, RealMatrix& dz) {
      RealVector rhs = b - sigma_mu * a_zinv + a_xrdz;
      RealMatrix corr_term;
      if (corr != nullptr) {
        corr_term = (*corr) * zinv;
        for (Index i = 0; i < m; ++i) rhs[i] += detail::inner(a[static_cast<std::size_t>(i)], corr_term.transpose());
      }
      dy = sfac.solve(rhs);
      dz = rd - at_op(dy);
      RealMatrix dxh = sigma_mu * zinv - x - x * dz * zinv;
      if (corr != nullptr) dxh -= corr_term;
      dx = detail::sym(dxh);
    };

    RealMatrix dx;
    RealMatrix dz;
    RealVector dy;
    direction(0.0, nullptr, dx, dy, dz);
    const double ap_aff = detail::max_step(x, dx, 1.0);
    const double ad_aff = detail::max_step(z, dz, 1.0);
    const double mu_aff = detail::inner(x + ap_aff * dx, z + ad_aff * dz) / static_cast<double>(n);
    const double sigma = std::clamp(std::pow(mu_aff / std::max(mu, 1e-300), 3.0), 0.0, 1.0);
    const RealMatrix corr = dx * dz;
    direction(sigma * mu, &corr, dx, dy, dz);

    const double tau = 0.98;
    const double ap = detail::max_step(x, dx, tau);
    const double ad = detail::max_step(z, dz, tau);
    x = detail::sym(x + ap * dx);
    y += ad * dy;
    z = detail::sym(z + ad * dz);
  }

  if (sol.status != SdpStatus::infeasible) {
    if (sol.status != SdpStatus::optimal) {
      x = best_x;
      y = best_y;
    }
  }
  const RealMatrix yblk = x.topLeftCorner(2 * d, 2 * d);
  sol.x = detail::real_unembed(yblk, d);
  sol.objective = c_zero ? 0.0 : (-detail::inner(cmat, x) * cscale / 2.0);
  sol.dual_objective = c_zero ? 0.0 : (-b.dot(y) * cscale / 2.0);
  const auto& last = sol.trace.back();
  if (sol.status == SdpStatus::optimal) {
    sol.gap = last.gap;
    sol.primal_res = last.primal_res;
    sol.dual_res = last.dual_res;
  } else {
    sol.gap = best_gap;
    sol.primal_res = best_pres;
    sol.dual_res = best_dres;
  }
  return sol;
}

struct Rank1 {
  ComplexVector vector;  // first `keep` entries of sqrt(lambda1) v1
  double leak = 0.0;     // 1 - lambda1 / tr(X)
  double lambda1 = 0.0;
};

/// Best rank-one factor of a PSD matrix. The global phase is fixed by making
/// entry `phase_ref` real positive (largest-magnitude entry when negative).
inline Rank1 rank1_extract(const ComplexMatrix& x, Index keep, Index phase_ref = -1) {
  if (keep < 1 || keep > x.rows()) throw std::invalid_argument("rank1_extract: keep out of range");
  const ComplexMatrix xs = 0.5 * (x + x.adjoint());
  const double tr = xs.trace().real();
  if (!(tr > 0.0) || max_abs(xs) == 0.0) throw std::invalid_argument("rank1_extract: zero matrix");
  const Eigenpair top = leading_eigpair(xs);
  ComplexVector v = top.vector;
  Index ref = phase_ref;
  if (ref < 0 || ref >= v.size() || std::abs(v[ref]) < 1e-14) v.cwiseAbs().maxCoeff(&ref);
  v *= std::polar(1.0, -std::arg(v[ref]));
  Rank1 r;
  r.lambda1 = std::max(top.value, 0.0);
  r.vector = std::sqrt(r.lambda1) * v.head(keep);
  r.leak = 1.0 - r.lambda1 / tr;
  return r;
}

}  // namespace cpfbma
