// SPDX-License-Identifier: Apache-2.0
//
// Full-band waveform optimization with identity covariances: block-coordinate
// sweeps over users, each solving a unit-sphere problem by Riemannian
// gradient ascent with Armijo backtracking.
//
// Gradients are Wirtinger derivatives d/d(conj f). A real-coordinate
// directional derivative of the objective along v is 2 Re(v^H grad).

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "cpfbma/model.hpp"

namespace cpfbma {

struct OptimizerParams {
  double inner_eps = 1.0;        // stop when ||grad||^2 <= eps
  double rho0 = 0.01;            // initial step of each backtracking search
  double backtrack_shrink = 0.5;
  double armijo_c = 1e-4;
  int max_inner = 500;
  int max_outer = 50;
  double outer_tol = 1e-4;       // relative sum-rate change
  bool use_woodbury = true;      // false rebuilds the interference per user

  void validate() const {
    if (!(inner_eps > 0.0)) throw std::invalid_argument("OptimizerParams: inner_eps must be > 0");
    if (!(rho0 > 0.0)) throw std::invalid_argument("OptimizerParams: rho0 must be > 0");
    if (!(backtrack_shrink > 0.0 && backtrack_shrink < 1.0))
      throw std::invalid_argument("OptimizerParams: backtrack_shrink must be in (0, 1)");
    if (!(armijo_c > 0.0 && armijo_c < 1.0)) throw std::invalid_argument("OptimizerParams: armijo_c must be in (0, 1)");
    if (max_inner < 0 || max_outer < 1) throw std::invalid_argument("OptimizerParams: iteration caps");
    if (!(outer_tol >= 0.0)) throw std::invalid_argument("OptimizerParams: outer_tol must be >= 0");
  }
};

/// One row per completed outer sweep.
struct SweepRecord {
  int sweep = 0;
  double sum_rate = 0.0;
  std::vector<double> user_rates;  // chain-rule split, sums to sum_rate
  int inner_iters = 0;             // total over users in this sweep
  double grad_norm = 0.0;          // largest final ||grad|| over users
  double wall_seconds = 0.0;
  // joint optimization diagnostics (zero for the waveform-only path)
  double stopband_viol_max = 0.0;
  double sdp_gap = 0.0;
  double rank1_leak = 0.0;
  int accepted = 0;                // filter candidates accepted in this sweep
};

struct RateTrajectory {
  double initial_rate = 0.0;
  std::vector<SweepRecord> sweeps;
  bool converged = false;

  double final_rate() const { return sweeps.empty() ? initial_rate : sweeps.back().sum_rate; }
};

/// sum_n log2(1 + f^H B_n f).
inline double rbar(const ComplexVector& f, const std::vector<ComplexMatrix>& b) { return user_objective(f, b); }

/// (1/ln 2) sum_n B_n f / (1 + f^H B_n f).
inline ComplexVector euclidean_grad(const ComplexVector& f, const std::vector<ComplexMatrix>& b) {
  ComplexVector g = ComplexVector::Zero(f.size());
  for (const auto& bn : b) {
    const ComplexVector bf = bn * f;
    g += bf / (1.0 + f.dot(bf).real());
  }
  return g / std::numbers::ln2;
}

/// Projection onto the tangent space {z : Re(z^H f) = 0} of the unit sphere.
inline ComplexVector riemannian_grad(const ComplexVector& f, const ComplexVector& g) {
  return g - g.dot(f).real() * f;
}

inline ComplexVector retract(const ComplexVector& f, double step, const ComplexVector& dir) {
  ComplexVector v = f + step * dir;
  const double nrm = v.norm();
  if (!(nrm > 0.0) || !std::isfinite(nrm)) throw NumericalError("retract: degenerate point");
  return v / nrm;
}

struct InnerResult {
  ComplexVector f;
  double objective = 0.0;
  double grad_norm_sq = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // objective after each accepted step, starting with f0
};

/// Maximizes sum_n log2(1 + f^H B_n f) over the unit sphere.
inline InnerResult solve_p1_1(const ComplexVector& f0, const std::vector<ComplexMatrix>& b, const OptimizerParams& prm) {
  prm.validate();
  if (std::abs(f0.norm() - 1.0) > 1e-8) throw std::invalid_argument("solve_p1_1: f0 must have unit norm");
  InnerResult r;
  r.f = f0 / f0.norm();
  r.objective = rbar(r.f, b);
  r.trace.push_back(r.objective);
  for (int it = 0; it < prm.max_inner; ++it) {
    const ComplexVector grad = riemannian_grad(r.f, euclidean_grad(r.f, b));
    r.grad_norm_sq = grad.squaredNorm();
    if (r.grad_norm_sq <= prm.inner_eps) return r;
    double rho = prm.rho0;
    bool moved = false;
    while (rho >= 1e-16) {
      const ComplexVector cand = retract(r.f, rho, grad);
      const double val = rbar(cand, b);
      if (val >= r.objective + prm.armijo_c * rho * r.grad_norm_sq) {
        r.f = cand;
        r.objective = val;
        moved = true;
        break;
      }
      rho *= prm.backtrack_shrink;
    }
    if (!moved) return r;
    ++r.iterations;
    r.trace.push_back(r.objective);
  }
  r.grad_norm_sq = riemannian_grad(r.f, euclidean_grad(r.f, b)).squaredNorm();
  return r;
}

struct P1Result {
  FilterBank filters;
  RateTrajectory trajectory;
};

namespace detail {

/// Moves the interference state from "excluding `from`" to "excluding `to`":
/// adds user `from` with its current filter and removes user `to`.
inline void chain_interference(const LinkModel& lm, InterferenceState& st, const FilterBank& fb, int from, int to) {
  const ComplexMatrix add = lm.user_vectors(from, fb.coeffs[static_cast<std::size_t>(from)]);
  const ComplexMatrix sub = lm.user_vectors(to, fb.coeffs[static_cast<std::size_t>(to)]);
  for (int n = 0; n < st.block_len; ++n) {
    st.rank_one_update(n, add.col(n), +1);
    st.rank_one_update(n, sub.col(n), -1);
  }
  st.excluded = to;
  st.refresh_inv_sqrt();
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Block-coordinate waveform optimization with C_m = P P_m I.
inline P1Result optimize_p1(const SystemConfig& cfg, const ChannelSet& ch, const OptimizerParams& prm,
                            FilterBank init) {
  prm.validate();
  if (init.size() != static_cast<std::size_t>(cfg.num_users))
    throw std::invalid_argument("optimize_p1: init must hold num_users filters");
  for (auto& f : init.coeffs) {
    if (f.size() != cfg.filter_len) throw std::invalid_argument("optimize_p1: filter length differs from N_f");
    if (f.norm() == 0.0) throw std::invalid_argument("optimize_p1: zero initial filter");
    f.normalize();
  }
  LinkModel lm(cfg, ch);
  P1Result res;
  res.filters = std::move(init);
  FilterBank& fb = res.filters;
  const double pref = cfg.rate_prefactor();
  res.trajectory.initial_rate = pref * lm.log_det_fast(fb);
  double prev = res.trajectory.initial_rate;
  const int users = cfg.num_users;
  for (int sweep = 1; sweep <= prm.max_outer; ++sweep) {
    const auto t0 = std::chrono::steady_clock::now();
    SweepRecord rec;
    rec.sweep = sweep;
    InterferenceState st = lm.build_interference(fb, 0);
    for (int m = 0; m < users; ++m) {
      if (!prm.use_woodbury && m > 0) st = lm.build_interference(fb, m);
      const ReducedUserChannel red = lm.reduce_user_channel(st, m);
      const InnerResult in = solve_p1_1(fb.coeffs[static_cast<std::size_t>(m)], red.b, prm);
      fb.coeffs[static_cast<std::size_t>(m)] = in.f;
      rec.inner_iters += in.iterations;
      rec.grad_norm = std::max(rec.grad_norm, std::sqrt(in.grad_norm_sq));
      if (prm.use_woodbury && m + 1 < users) detail::chain_interference(lm, st, fb, m, m + 1);
    }
    rec.user_rates = lm.per_user_log_det(fb);
    rec.sum_rate = 0.0;
    for (double& r : rec.user_rates) {
      r *= pref;
      rec.sum_rate += r;
    }
    rec.wall_seconds = detail::seconds_since(t0);
    res.trajectory.sweeps.push_back(rec);
    const double rel = std::abs(rec.sum_rate - prev) / std::max(std::abs(prev), 1e-300);
    prev = rec.sum_rate;
    if (rel < prm.outer_tol) {
      res.trajectory.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace cpfbma
