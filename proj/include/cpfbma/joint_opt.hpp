// SPDX-License-Identifier: Apache-2.0
//
// Joint waveform and covariance optimization under stopband energy caps.
// Per user and sweep: an SDR filter step on a second-order model of the user
// rate, then a water-filling covariance step on the generalized modes of the
// (whitened channel, power) pair.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpfbma/manifold_opt.hpp"
#include "cpfbma/model.hpp"
#include "cpfbma/sdp.hpp"

namespace cpfbma {

// ---------------------------------------------------------------------------
// Stopbands

struct Stopband {
  std::vector<int> bins;  // DFT bins of the NP-point spectrum
  double budget = 0.0;    // cap on f^H E f
};

struct StopbandSpec {
  std::vector<std::vector<Stopband>> users;

  bool empty() const {
    for (const auto& u : users)
      if (!u.empty()) return false;
    return true;
  }

  /// Throws ConfigError on out-of-range or repeated bins and nonpositive budgets.
  void validate(int num_users, int np) const {
    if (!users.empty() && users.size() != static_cast<std::size_t>(num_users))
      throw ConfigError("invalid stopbands: expected one entry per user");
    for (const auto& u : users) {
      for (const auto& sb : u) {
        if (!(sb.budget > 0.0) || !std::isfinite(sb.budget)) throw ConfigError("invalid stopbands: budget must be > 0");
        std::set<int> seen;
        for (int k : sb.bins) {
          if (k < 0 || k >= np) throw ConfigError("invalid stopbands: bin " + std::to_string(k) + " out of range");
          if (!seen.insert(k).second) throw ConfigError("invalid stopbands: repeated bin " + std::to_string(k));
        }
      }
    }
  }
};

/// {"users": [[{"bins": [..] | {"start": a, "end": b}, "budget": e}, ...], ...]}
/// Ranges are half-open.
inline StopbandSpec stopbands_from_json(const nlohmann::json& j) {
  StopbandSpec spec;
  try {
    const auto& users = j.is_object() ? j.at("users") : j;
    if (!users.is_array()) throw ConfigError("invalid stopbands: 'users' must be an array");
    for (const auto& u : users) {
      std::vector<Stopband> bands;
      for (const auto& b : u) {
        Stopband sb;
        sb.budget = b.at("budget").get<double>();
        const auto& bins = b.at("bins");
        if (bins.is_array()) {
          sb.bins = bins.get<std::vector<int>>();
        } else {
          const int start = bins.at("start").get<int>();
          const int end = bins.at("end").get<int>();
          if (end < start) throw ConfigError("invalid stopbands: range end < start");
          for (int k = start; k < end; ++k) sb.bins.push_back(k);
        }
        bands.push_back(std::move(sb));
      }
      spec.users.push_back(std::move(bands));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid stopbands: ") + e.what());
  }
  return spec;
}

inline nlohmann::json to_json(const StopbandSpec& spec) {
  nlohmann::json users = nlohmann::json::array();
  for (const auto& u : spec.users) {
    nlohmann::json bands = nlohmann::json::array();
    for (const auto& sb : u) bands.push_back({{"bins", sb.bins}, {"budget", sb.budget}});
    users.push_back(bands);
  }
  return {{"users", users}};
}

/// Shipped sample: two stopbands per user, bins [NP/4, 3NP/8) and
/// [5NP/8, 3NP/4), budgets alternating between two pairs of order 3e-4.
inline StopbandSpec stopband_preset(const SystemConfig& cfg) {
  const int np = cfg.np();
  auto range = [](int a, int b) {
    std::vector<int> v;
    for (int k = a; k < b; ++k) v.push_back(k);
    return v;
  };
  StopbandSpec spec;
  for (int m = 0; m < cfg.num_users; ++m) {
    const bool first = m % 2 == 0;
    spec.users.push_back({{range(np / 4, 3 * np / 8), first ? 3.23e-4 : 3.53e-4},
                          {range(5 * np / 8, 3 * np / 4), first ? 2.24e-4 : 3.52e-4}});
  }
  return spec;
}

/// E = sum_{k in bins} w_k w_k^H, w_k[t] = exp(2 pi i k t / NP) / sqrt(NP), so
/// f^H E f = sum_k |F_k|^2 / NP.
inline ComplexMatrix stopband_matrix(const std::vector<int>& bins, int block_len, int upsample, int filter_len) {
  const int np = block_len * upsample;
  ComplexMatrix w(filter_len, static_cast<Index>(bins.size()));
  for (std::size_t c = 0; c < bins.size(); ++c) {
    const int k = bins[c];
    if (k < 0 || k >= np) throw std::invalid_argument("stopband_matrix: bin out of range");
    for (int t = 0; t < filter_len; ++t) {
      const auto r = static_cast<double>((static_cast<long long>(k) * t) % np);
      w(t, static_cast<Index>(c)) = std::polar(1.0 / std::sqrt(static_cast<double>(np)), kTwoPi * r / np);
    }
  }
  ComplexMatrix e = w * w.adjoint();
  return 0.5 * (e + e.adjoint());
}

inline double stopband_energy(const ComplexVector& f, const ComplexMatrix& e) {
  return std::max(0.0, f.dot(e * f).real());
}

/// Stopband matrices and budgets of one user.
struct UserStopbands {
  std::vector<ComplexMatrix> e;
  std::vector<double> budget;

  /// Largest f^H E f - budget (negative when every cap holds with margin).
  double worst_violation(const ComplexVector& f) const {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < e.size(); ++i) worst = std::max(worst, stopband_energy(f, e[i]) - budget[i]);
    return e.empty() ? 0.0 : worst;
  }
};

inline UserStopbands build_user_stopbands(const StopbandSpec& spec, int m, const SystemConfig& cfg) {
  UserStopbands us;
  if (spec.users.empty()) return us;
  for (const auto& sb : spec.users[static_cast<std::size_t>(m)]) {
    us.e.push_back(stopband_matrix(sb.bins, cfg.block_len, cfg.upsample, cfg.filter_len));
    us.budget.push_back(sb.budget);
  }
  return us;
}

// ---------------------------------------------------------------------------
// Quadratic pieces

struct PowerQuadratic {
  ComplexMatrix r;      // N0 f^H R f = tr(F U C U^T F^H) / (NP)
  double target = 0.0;  // P_m / N0
};

inline PowerQuadratic build_power_quadratic(const ComplexMatrix& c, double user_power, const SystemConfig& cfg) {
  const int np = cfg.np();
  const RealVector d = covariance_dft_diagonal(c);
  ComplexMatrix w(cfg.filter_len, np);
  for (int k = 0; k < np; ++k) {
    const double s = std::sqrt(std::max(d[k % cfg.block_len], 0.0) / (cfg.upsample * cfg.noise_power * np));
    for (int t = 0; t < cfg.filter_len; ++t) {
      const auto r = static_cast<double>((static_cast<long long>(k) * t) % np);
      w(t, k) = std::polar(s, kTwoPi * r / np);
    }
  }
  PowerQuadratic pq;
  pq.r = w * w.adjoint();
  pq.r = 0.5 * (pq.r + pq.r.adjoint());
  pq.target = user_power / cfg.noise_power;
  return pq;
}

/// (1/ln 2) sum_n [(1 + f^H B f) B - B f f^H B] / (1 + f^H B f)^2.
inline ComplexMatrix hessian(const ComplexVector& f, const std::vector<ComplexMatrix>& b) {
  const Index nf = f.size();
  ComplexMatrix h = ComplexMatrix::Zero(nf, nf);
  for (const auto& bn : b) {
    const ComplexVector bf = bn * f;
    const double s = 1.0 + f.dot(bf).real();
    h += (s * bn - bf * bf.adjoint()) / (s * s);
  }
  h /= std::numbers::ln2;
  return 0.5 * (h + h.adjoint());
}

/// Model f^H H f + eta^H f + f^H eta around a base point, eta = grad - H f0.
struct TaylorModel {
  ComplexMatrix hessian;
  ComplexVector eta;
  ComplexVector base;
};

inline TaylorModel build_taylor_model(const ComplexVector& f0, const std::vector<ComplexMatrix>& b) {
  TaylorModel t;
  t.base = f0;
  t.hessian = hessian(f0, b);
  t.eta = euclidean_grad(f0, b) - t.hessian * f0;
  return t;
}

/// Lifted problem over [f; t][f; t]^H: objective [[H, eta], [eta^H, 0]], one
/// inequality per stopband, equalities for power, unit energy and the corner.
inline SdpProblem assemble_qcqp(const TaylorModel& tm, const PowerQuadratic& power, const UserStopbands& sb) {
  const Index nf = tm.hessian.rows();
  const Index d = nf + 1;
  auto lift = [&](const ComplexMatrix& a) {
    ComplexMatrix out = ComplexMatrix::Zero(d, d);
    out.topLeftCorner(nf, nf) = a;
    return out;
  };
  SdpProblem p;
  p.objective = lift(tm.hessian);
  p.objective.topRightCorner(nf, 1) = tm.eta;
  p.objective.bottomLeftCorner(1, nf) = tm.eta.adjoint();
  for (std::size_t i = 0; i < sb.e.size(); ++i) p.inequalities.push_back({lift(sb.e[i]), sb.budget[i]});
  p.equalities.push_back({lift(power.r), power.target});
  p.equalities.push_back({lift(ComplexMatrix::Identity(nf, nf)), 1.0});
  ComplexMatrix corner = ComplexMatrix::Zero(d, d);
  corner(nf, nf) = 1.0;
  p.equalities.push_back({corner, 1.0});
  return p;
}

// ---------------------------------------------------------------------------
// Filter step

struct JointParams {
  OptimizerParams outer;           // max_outer, outer_tol are used
  bool optimize_covariance = true; // false gives the waveform-only variant
  double sdp_tolerance = 1e-7;
  int sdp_max_iter = 100;
  int damping_levels = 10;         // candidate blends tau = 1, 1/2, ..., 2^-levels
  double feasibility_slack = 1e-8;
};

struct FilterStepResult {
  ComplexVector f;
  bool accepted = false;
  double objective = 0.0;       // sum_n log2(1 + alpha f^H B f) of the returned filter
  double power_scale = 1.0;     // alpha: covariance rescale that restores exact power
  double sdp_gap = 0.0;
  double rank1_leak = 0.0;
  SdpStatus sdp_status = SdpStatus::max_iter;
};

/// Objective of a candidate filter when the user covariance is rescaled to
/// meet the power constraint exactly: B scales with the covariance.
inline double power_normalized_objective(const ComplexVector& f, const std::vector<ComplexMatrix>& b,
                                         const PowerQuadratic& power, double* alpha_out = nullptr) {
  const double pw = f.dot(power.r * f).real();
  const double alpha = pw > 0.0 ? power.target / pw : 0.0;
  if (alpha_out != nullptr) *alpha_out = alpha;
  double acc = 0.0;
  for (const auto& bn : b) acc += std::log2(1.0 + alpha * std::max(0.0, f.dot(bn * f).real()));
  return acc;
}

/// SDR step with safeguard: the rank-one candidate (renormalized) is blended
/// toward f_prev until it neither lowers the user objective nor breaks a
/// stopband cap. Returns f_prev when no blend qualifies.
inline FilterStepResult filter_step(const ComplexVector& f_prev, const std::vector<ComplexMatrix>& b,
                                    const PowerQuadratic& power, const UserStopbands& sb, const JointParams& prm) {
  FilterStepResult res;
  res.f = f_prev;
  res.objective = power_normalized_objective(f_prev, b, power, &res.power_scale);
  const Index nf = f_prev.size();
  SdpProblem prob = assemble_qcqp(build_taylor_model(f_prev, b), power, sb);
  prob.tolerance = prm.sdp_tolerance;
  prob.max_iter = prm.sdp_max_iter;
  const SdpSolution sol = solve_sdp(prob);
  res.sdp_status = sol.status;
  res.sdp_gap = sol.gap;
  if (sol.status == SdpStatus::infeasible) return res;
  Rank1 r1;
  try {
    r1 = rank1_extract(sol.x, nf + 1, nf);
  } catch (const std::invalid_argument&) {
    return res;
  }
  res.rank1_leak = r1.leak;
  ComplexVector cand = r1.vector.head(nf);
  if (!(cand.norm() > 0.0)) return res;
  cand.normalize();
  double best = res.objective;
  double tau = 1.0;
  for (int lvl = 0; lvl <= prm.damping_levels; ++lvl, tau *= 0.5) {
    ComplexVector f = f_prev + tau * (cand - f_prev);
    const double nrm = f.norm();
    if (!(nrm > 0.0)) continue;
    f /= nrm;
    if (sb.worst_violation(f) > prm.feasibility_slack) continue;
    double alpha = 1.0;
    const double val = power_normalized_objective(f, b, power, &alpha);
    if (val > best) {
      best = val;
      res.f = f;
      res.objective = val;
      res.power_scale = alpha;
      res.accepted = true;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Covariance step

struct CovarianceStepResult {
  ComplexMatrix c;
  RealVector mode_powers;  // d_n, the DFT-domain powers
  double objective = 0.0;  // sum_n log2(1 + a_n d_n)
  bool regularized = false;
};

namespace detail {

/// Per subband frequency n: a_n = ||Phi_n^{-1/2} (H F)_n||^2 / (P N0) and
/// b_n = ||F_n||^2 / P, so the user objective is sum_n log2(1 + a_n d_n) and the
/// power constraint reads sum_n b_n d_n = NP P_m.
inline void covariance_gains(const LinkModel& lm, const InterferenceState& st, int m, const ComplexVector& f,
                             RealVector& a, RealVector& bw) {
  const auto& cfg = lm.config();
  const ComplexVector spec = filter_dft(f, cfg.block_len, cfg.upsample);
  const auto& h = lm.channel_spectrum(m);
  a.resize(cfg.block_len);
  bw.resize(cfg.block_len);
  ComplexVector v(cfg.upsample);
  for (int n = 0; n < cfg.block_len; ++n) {
    double fe = 0.0;
    for (int i = 0; i < cfg.upsample; ++i) {
      const int k = i * cfg.block_len + n;
      v[i] = h[k] * spec[k];
      fe += std::norm(spec[k]);
    }
    a[n] = (st.phi_inv_sqrt[static_cast<std::size_t>(n)] * v).squaredNorm() / (cfg.upsample * cfg.noise_power);
    bw[n] = fe / cfg.upsample;
  }
}

}  // namespace detail

/// Water-filling covariance for user m given its filter and the interference
/// of the others. The pencil of the whitened channel map and the power map is
/// diagonalized by the N-point DFT, so C = W^H diag(d) W.
inline CovarianceStepResult covariance_step(const LinkModel& lm, const InterferenceState& st, int m,
                                            const ComplexVector& f) {
  const auto& cfg = lm.config();
  if (!(f.norm() > 0.0)) throw std::invalid_argument("covariance_step: zero filter");
  RealVector a;
  RealVector bw;
  detail::covariance_gains(lm, st, m, f, a, bw);
  const double budget = static_cast<double>(cfg.np()) * cfg.user_power[static_cast<std::size_t>(m)];
  const double scale = std::max(bw.maxCoeff(), 1e-300);
  std::vector<double> gains;
  std::vector<double> weights;
  std::vector<int> idx;
  CovarianceStepResult res;
  for (int n = 0; n < cfg.block_len; ++n) {
    if (bw[n] > 1e-12 * scale && a[n] > 0.0) {
      gains.push_back(a[n]);
      weights.push_back(bw[n]);
      idx.push_back(n);
    } else {
      res.regularized = true;
    }
  }
  if (idx.empty()) throw NumericalError("covariance_step: filter has no usable spectrum");
  const WaterFillResult wf = water_fill(gains, weights, budget);
  res.mode_powers = RealVector::Zero(cfg.block_len);
  for (std::size_t j = 0; j < idx.size(); ++j) res.mode_powers[idx[j]] = wf.alloc[j];
  for (int n = 0; n < cfg.block_len; ++n) res.objective += std::log2(1.0 + a[n] * res.mode_powers[n]);
  const ComplexMatrix w = dft_matrix(cfg.block_len);
  res.c = w.adjoint() * res.mode_powers.cast<cd>().asDiagonal() * w;
  res.c = 0.5 * (res.c + res.c.adjoint());
  return res;
}

/// Same step through the explicit generalized SVD of
/// M = (1/sqrt(N0)) Phi^{-1/2} Lambda_H Lambda_F W U and N = Lambda_F W U,
/// with C = X^{-H} S X^{-1}. Dense, used to cross-check covariance_step.
inline CovarianceStepResult covariance_step_gsvd(const LinkModel& lm, const InterferenceState& st, int m,
                                                 const ComplexVector& f) {
  const auto& cfg = lm.config();
  const int np = cfg.np();
  const ComplexVector spec = filter_dft(f, cfg.block_len, cfg.upsample);
  const ComplexMatrix wu = dft_matrix(np) * upsampler(cfg.block_len, cfg.upsample).cast<cd>();
  const ComplexMatrix nmat = spec.asDiagonal() * wu;
  const ComplexMatrix phi_is = st.dense(st.phi_inv_sqrt);
  const ComplexMatrix mmat =
      phi_is * (lm.channel_spectrum(m).cwiseProduct(spec)).asDiagonal() * wu / std::sqrt(cfg.noise_power);
  GsvdOptions opt;
  opt.compute_left = false;
  opt.allow_deficient = true;
  const GsvdFactors g = gsvd(mmat, nmat, opt);
  const double budget = static_cast<double>(np) * cfg.user_power[static_cast<std::size_t>(m)];
  std::vector<double> gains;
  std::vector<double> weights;
  std::vector<Index> idx;
  const double wscale = std::max(g.sig_n.cwiseAbs2().maxCoeff(), 1e-300);
  for (Index k = 0; k < g.sig_m.size(); ++k) {
    const double ak = g.sig_m[k] * g.sig_m[k];
    const double bk = g.sig_n[k] * g.sig_n[k];
    if (bk > 1e-12 * wscale && ak > 0.0) {
      gains.push_back(ak);
      weights.push_back(bk);
      idx.push_back(k);
    }
  }
  if (idx.empty()) throw NumericalError("covariance_step_gsvd: no usable generalized modes");
  const WaterFillResult wf = water_fill(gains, weights, budget);
  RealVector s = RealVector::Zero(g.sig_m.size());
  for (std::size_t j = 0; j < idx.size(); ++j) s[idx[j]] = wf.alloc[j];
  const ComplexMatrix xinv = g.common.inverse();
  CovarianceStepResult res;
  res.c = xinv.adjoint() * s.cast<cd>().asDiagonal() * xinv;
  res.c = 0.5 * (res.c + res.c.adjoint());
  res.mode_powers = covariance_dft_diagonal(res.c);
  res.regularized = g.regularized || g.deficient;
  for (Index k = 0; k < s.size(); ++k) res.objective += std::log2(1.0 + g.sig_m[k] * g.sig_m[k] * s[k]);
  return res;
}

// ---------------------------------------------------------------------------
// Baseline stopband filter bank

/// Weighted least-squares fit of the legacy bandpass response with its
/// stopband bins forced to zero; the stopband weight grows until every cap
/// holds. Falls back to the minimum eigenvector of sum_i E_i / e_i.
inline FilterBank stopband_baseline(const SystemConfig& cfg, const StopbandSpec& spec) {
  const int np = cfg.np();
  const FilterBank legacy = legacy_filterbank(cfg);
  if (spec.empty()) return legacy;
  ComplexMatrix dft(np, cfg.filter_len);  // row k: exp(-2 pi i k t / NP)
  for (int k = 0; k < np; ++k)
    for (int t = 0; t < cfg.filter_len; ++t)
      dft(k, t) = std::polar(1.0, -kTwoPi * static_cast<double>((static_cast<long long>(k) * t) % np) / np);
  FilterBank out;
  for (int m = 0; m < cfg.num_users; ++m) {
    const UserStopbands us = build_user_stopbands(spec, m, cfg);
    std::vector<char> stop(static_cast<std::size_t>(np), 0);
    for (const auto& sb : spec.users[static_cast<std::size_t>(m)])
      for (int k : sb.bins) stop[static_cast<std::size_t>(k)] = 1;
    ComplexVector desired = dft * legacy.coeffs[static_cast<std::size_t>(m)];
    for (int k = 0; k < np; ++k)
      if (stop[static_cast<std::size_t>(k)]) desired[k] = 0.0;
    ComplexVector chosen;
    for (double weight = 1.0; weight <= 1e12; weight *= 10.0) {
      RealVector w(np);
      for (int k = 0; k < np; ++k) w[k] = stop[static_cast<std::size_t>(k)] ? weight : 1.0;
      const ComplexMatrix lhs = dft.adjoint() * w.cast<cd>().asDiagonal() * dft;
      const ComplexVector rhs = dft.adjoint() * w.cast<cd>().asDiagonal() * desired;
      ComplexVector f = lhs.ldlt().solve(rhs);
      if (!(f.norm() > 0.0)) continue;
      f.normalize();
      if (us.worst_violation(f) <= 0.0) {
        chosen = f;
        break;
      }
    }
    if (chosen.size() == 0) {
      ComplexMatrix acc = ComplexMatrix::Zero(cfg.filter_len, cfg.filter_len);
      for (std::size_t i = 0; i < us.e.size(); ++i) acc += us.e[i] / us.budget[i];
      const HermitianEvd evd = hermitian_evd(0.5 * (acc + acc.adjoint()));
      chosen = evd.vectors.col(evd.vectors.cols() - 1);
      if (us.worst_violation(chosen) > 0.0)
        throw NumericalError("stopband_baseline: budgets unattainable for user " + std::to_string(m));
    }
    out.coeffs.push_back(chosen);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Outer loop

struct P2Result {
  FilterBank filters;
  CovarianceSet covariances;
  RateTrajectory trajectory;
};

inline P2Result optimize_p2(const SystemConfig& cfg, const ChannelSet& ch, const StopbandSpec& stopbands,
                            const JointParams& prm, FilterBank init) {
  prm.outer.validate();
  stopbands.validate(cfg.num_users, cfg.np());
  if (init.size() != static_cast<std::size_t>(cfg.num_users))
    throw std::invalid_argument("optimize_p2: init must hold num_users filters");
  std::vector<UserStopbands> sb;
  for (int m = 0; m < cfg.num_users; ++m) {
    auto& f = init.coeffs[static_cast<std::size_t>(m)];
    if (f.size() != cfg.filter_len || !(f.norm() > 0.0)) throw std::invalid_argument("optimize_p2: bad initial filter");
    f.normalize();
    sb.push_back(build_user_stopbands(stopbands, m, cfg));
    if (sb.back().worst_violation(f) > prm.feasibility_slack)
      throw std::invalid_argument("optimize_p2: initial filter violates its stopband budgets");
  }
  LinkModel lm(cfg, ch);
  P2Result res;
  res.filters = std::move(init);
  res.covariances = identity_covariances(cfg);
  lm.set_covariances(res.covariances);
  FilterBank& fb = res.filters;
  const double pref = cfg.rate_prefactor();
  res.trajectory.initial_rate = pref * lm.log_det_fast(fb);
  double prev = res.trajectory.initial_rate;
  for (int sweep = 1; sweep <= prm.outer.max_outer; ++sweep) {
    const auto t0 = std::chrono::steady_clock::now();
    SweepRecord rec;
    rec.sweep = sweep;
    for (int m = 0; m < cfg.num_users; ++m) {
      const auto sm = static_cast<std::size_t>(m);
      const InterferenceState st = lm.build_interference(fb, m);
      const ReducedUserChannel red = lm.reduce_user_channel(st, m);
      const PowerQuadratic pq = build_power_quadratic(res.covariances.cov[sm], cfg.user_power[sm], cfg);
      const FilterStepResult fs = filter_step(fb.coeffs[sm], red.b, pq, sb[sm], prm);
      rec.sdp_gap = std::max(rec.sdp_gap, fs.sdp_gap);
      rec.rank1_leak = std::max(rec.rank1_leak, fs.rank1_leak);
      if (fs.accepted) {
        ++rec.accepted;
        fb.coeffs[sm] = fs.f;
        res.covariances.cov[sm] *= fs.power_scale;
        lm.set_covariance(m, res.covariances.cov[sm]);
      }
      if (prm.optimize_covariance) {
        const CovarianceStepResult cs = covariance_step(lm, st, m, fb.coeffs[sm]);
        res.covariances.cov[sm] = cs.c;
        lm.set_covariance(m, cs.c);
      }
      rec.stopband_viol_max = std::max(rec.stopband_viol_max, std::max(0.0, sb[sm].worst_violation(fb.coeffs[sm])));
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
    if (rel < prm.outer.outer_tol) {
      res.trajectory.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace cpfbma
