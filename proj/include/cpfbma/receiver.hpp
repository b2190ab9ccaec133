// SPDX-License-Identifier: Apache-2.0
//
// Frequency-domain LMMSE multi-user detection, Gray QAM, the circular and the
// physical (CP + linear convolution) transmit paths, and a BER harness.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

#include "cpfbma/model.hpp"

namespace cpfbma {

/// T_m = Lambda_H Lambda_F W_NP U W_N^H for every user. T_m is sparse: column
/// n has its P nonzeros at rows i*N + n, value H[k] F[k] / sqrt(P).
struct EffectiveChannel {
  int num_users = 0;
  int block_len = 0;
  int upsample = 0;
  /// taps[m](i, n) = [T_m]_{i*N + n, n}
  std::vector<ComplexMatrix> taps;

  int np() const { return block_len * upsample; }

  ComplexMatrix user_matrix(int m) const {
    ComplexMatrix t = ComplexMatrix::Zero(np(), block_len);
    const auto& g = taps[static_cast<std::size_t>(m)];
    for (int n = 0; n < block_len; ++n)
      for (int i = 0; i < upsample; ++i) t(i * block_len + n, n) = g(i, n);
    return t;
  }

  /// [T_1, ..., T_M], NP x MN.
  ComplexMatrix stacked() const {
    ComplexMatrix t(np(), static_cast<Index>(num_users) * block_len);
    for (int m = 0; m < num_users; ++m) t.middleCols(static_cast<Index>(m) * block_len, block_len) = user_matrix(m);
    return t;
  }

  /// Multiplies column n of T_m by amp[m][n] (e.g. square roots of DFT-domain powers).
  void scale_columns(const std::vector<RealVector>& amp) {
    for (int m = 0; m < num_users; ++m)
      for (int n = 0; n < block_len; ++n) taps[static_cast<std::size_t>(m)].col(n) *= amp[static_cast<std::size_t>(m)][n];
  }
};

inline EffectiveChannel build_effective_channel(const ChannelSet& ch, const FilterBank& fb, const SystemConfig& cfg) {
  EffectiveChannel eff;
  eff.num_users = cfg.num_users;
  eff.block_len = cfg.block_len;
  eff.upsample = cfg.upsample;
  const int np = cfg.np();
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.upsample));
  for (int m = 0; m < cfg.num_users; ++m) {
    const auto sm = static_cast<std::size_t>(m);
    const ComplexVector hf = circulant_spectrum(ch.taps[sm], np).cwiseProduct(filter_dft(fb.coeffs[sm], cfg.block_len, cfg.upsample));
    ComplexMatrix g(cfg.upsample, cfg.block_len);
    for (int n = 0; n < cfg.block_len; ++n)
      for (int i = 0; i < cfg.upsample; ++i) g(i, n) = hf[i * cfg.block_len + n] * scale;
    eff.taps.push_back(std::move(g));
  }
  return eff;
}

struct DetectionResult {
  ComplexVector estimates;  // MN soft estimates, user-major, time-domain symbols
  ComplexVector hard;       // nearest constellation points (empty unless a QAM order was given)
  std::vector<double> mse;  // per-user mean squared error
};

/// Gray QAM with I bits first. Per axis, the first bit is the sign (0 -> positive)
/// and the remaining bits Gray-code the magnitude index j of the level 2j+1.
/// Unit average symbol energy.
class Qam {
 public:
  explicit Qam(int order) : order_(order) {
    if (order != 4 && order != 16 && order != 64) throw std::invalid_argument("Qam: order must be 4, 16 or 64");
    bits_ = static_cast<int>(std::lround(std::log2(order)));
    half_ = bits_ / 2;
    levels_ = 1 << (half_ - 1);
    norm_ = std::sqrt(2.0 * (4.0 * levels_ * levels_ - 1.0) / 3.0);
  }

  int order() const { return order_; }
  int bits_per_symbol() const { return bits_; }

  ComplexVector map(std::span<const std::uint8_t> bits) const {
    if (bits.size() % static_cast<std::size_t>(bits_) != 0)
      throw std::invalid_argument("qam_map: bit count not divisible by log2(K)");
    ComplexVector out(static_cast<Index>(bits.size() / static_cast<std::size_t>(bits_)));
    for (Index s = 0; s < out.size(); ++s) {
      const auto* b = bits.data() + s * bits_;
      out[s] = cd{axis_level(b), axis_level(b + half_)} / norm_;
    }
    return out;
  }

  std::vector<std::uint8_t> demap(const ComplexVector& symbols) const {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(symbols.size() * bits_));
    for (Index s = 0; s < symbols.size(); ++s) {
      auto* b = out.data() + s * bits_;
      axis_bits(symbols[s].real() * norm_, b);
      axis_bits(symbols[s].imag() * norm_, b + half_);
    }
    return out;
  }

  ComplexVector slice(const ComplexVector& symbols) const { return map(demap(symbols)); }

 private:
  double axis_level(const std::uint8_t* b) const {
    int gray = 0;
    for (int k = 1; k < half_; ++k) gray = (gray << 1) | (b[k] & 1);
    int j = 0;
    for (int g = gray; g != 0; g >>= 1) j ^= g;
    const double mag = 2.0 * j + 1.0;
    return (b[0] & 1) ? -mag : mag;
  }

  void axis_bits(double v, std::uint8_t* b) const {
    b[0] = v < 0.0 ? 1 : 0;
    int j = static_cast<int>(std::floor(std::abs(v) / 2.0));
    j = std::clamp(j, 0, levels_ - 1);
    const int gray = j ^ (j >> 1);
    for (int k = 1; k < half_; ++k) b[k] = static_cast<std::uint8_t>((gray >> (half_ - 1 - k)) & 1);
  }

  int order_;
  int bits_;
  int half_;
  int levels_;
  double norm_;
};

inline ComplexVector qam_map(std::span<const std::uint8_t> bits, int order) { return Qam(order).map(bits); }
inline std::vector<std::uint8_t> qam_demap(const ComplexVector& symbols, int order) { return Qam(order).demap(symbols); }

namespace detail {

/// Time-domain symbols from frequency-domain estimates, per user block.
inline ComplexVector symbols_from_freq(const ComplexVector& u, int users, int block_len) {
  const ComplexMatrix w = dft_matrix(block_len);
  ComplexVector x(u.size());
  for (int m = 0; m < users; ++m) {
    const Index off = static_cast<Index>(m) * block_len;
    x.segment(off, block_len) = w.adjoint() * u.segment(off, block_len);
  }
  return x;
}

inline void finish(DetectionResult& r, int qam_order) {
  if (qam_order > 0) r.hard = Qam(qam_order).slice(r.estimates);
}

}  // namespace detail

/// Dense LMMSE: x = W^H T^H (T T^H + N0 I)^{-1} Y.
inline DetectionResult lmmse_detect(const ComplexVector& y, const EffectiveChannel& eff, double noise_power,
                                    int qam_order = 0) {
  if (!(noise_power > 0.0)) throw std::invalid_argument("lmmse_detect: N0 must be > 0");
  const ComplexMatrix t = eff.stacked();
  ComplexMatrix a = t * t.adjoint();
  a.diagonal().array() += noise_power;
  const Eigen::LLT<ComplexMatrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError("lmmse_detect: regularized Gram not positive definite");
  const ComplexVector u = t.adjoint() * llt.solve(y);
  const ComplexMatrix ainv_t = llt.solve(t);
  DetectionResult r;
  r.estimates = detail::symbols_from_freq(u, eff.num_users, eff.block_len);
  for (int m = 0; m < eff.num_users; ++m) {
    double acc = 0.0;
    for (int n = 0; n < eff.block_len; ++n) {
      const Index c = static_cast<Index>(m) * eff.block_len + n;
      acc += 1.0 - t.col(c).dot(ainv_t.col(c)).real();
    }
    r.mse.push_back(acc / eff.block_len);
  }
  detail::finish(r, qam_order);
  return r;
}

/// Literal regularized-Gram form: x = W^H (T^H T + N0 I_MN)^{-1} T^H Y.
inline DetectionResult lmmse_detect_gram(const ComplexVector& y, const EffectiveChannel& eff, double noise_power,
                                         int qam_order = 0) {
  if (!(noise_power > 0.0)) throw std::invalid_argument("lmmse_detect_gram: N0 must be > 0");
  const ComplexMatrix t = eff.stacked();
  ComplexMatrix g = t.adjoint() * t;
  g.diagonal().array() += noise_power;
  const Eigen::LLT<ComplexMatrix> llt(g);
  if (llt.info() != Eigen::Success) throw NumericalError("lmmse_detect_gram: Gram not positive definite");
  const ComplexVector u = llt.solve(t.adjoint() * y);
  // error covariance N0 (T^H T + N0 I)^{-1}
  const ComplexMatrix err = noise_power * llt.solve(ComplexMatrix::Identity(g.rows(), g.cols()));
  DetectionResult r;
  r.estimates = detail::symbols_from_freq(u, eff.num_users, eff.block_len);
  for (int m = 0; m < eff.num_users; ++m)
    r.mse.push_back(err.diagonal().segment(static_cast<Index>(m) * eff.block_len, eff.block_len).real().sum() /
                    eff.block_len);
  detail::finish(r, qam_order);
  return r;
}

/// Interleaved fast LMMSE: N independent P x P inversions.
inline DetectionResult lmmse_detect_fast(const ComplexVector& y, const EffectiveChannel& eff, double noise_power,
                                         int qam_order = 0) {
  if (!(noise_power > 0.0)) throw std::invalid_argument("lmmse_detect_fast: N0 must be > 0");
  const int n_sym = eff.block_len;
  const int p = eff.upsample;
  ComplexVector u(static_cast<Index>(eff.num_users) * n_sym);
  std::vector<double> mse(static_cast<std::size_t>(eff.num_users), 0.0);
  ComplexMatrix tn(p, eff.num_users);
  ComplexVector yn(p);
  for (int n = 0; n < n_sym; ++n) {
    for (int m = 0; m < eff.num_users; ++m) tn.col(m) = eff.taps[static_cast<std::size_t>(m)].col(n);
    for (int i = 0; i < p; ++i) yn[i] = y[i * n_sym + n];
    ComplexMatrix a = tn * tn.adjoint();
    a.diagonal().array() += noise_power;
    const Eigen::LLT<ComplexMatrix> llt(a);
    if (llt.info() != Eigen::Success) throw NumericalError("lmmse_detect_fast: block inversion failed");
    const ComplexVector z = llt.solve(yn);
    const ComplexMatrix ainv_t = llt.solve(tn);
    for (int m = 0; m < eff.num_users; ++m) {
      u[static_cast<Index>(m) * n_sym + n] = tn.col(m).dot(z);
      mse[static_cast<std::size_t>(m)] += 1.0 - tn.col(m).dot(ainv_t.col(m)).real();
    }
  }
  DetectionResult r;
  r.estimates = detail::symbols_from_freq(u, eff.num_users, n_sym);
  for (double& v : mse) v /= n_sym;
  r.mse = std::move(mse);
  detail::finish(r, qam_order);
  return r;
}

/// Applies T W_(M) to the stacked time-domain symbols (frequency-domain received vector).
inline ComplexVector apply_effective_channel(const EffectiveChannel& eff, const ComplexVector& x) {
  const ComplexMatrix w = dft_matrix(eff.block_len);
  ComplexVector y = ComplexVector::Zero(eff.np());
  for (int m = 0; m < eff.num_users; ++m) {
    const ComplexVector u = w * x.segment(static_cast<Index>(m) * eff.block_len, eff.block_len);
    const auto& g = eff.taps[static_cast<std::size_t>(m)];
    for (int n = 0; n < eff.block_len; ++n)
      for (int i = 0; i < eff.upsample; ++i) y[i * eff.block_len + n] += g(i, n) * u[n];
  }
  return y;
}

// ---------------------------------------------------------------------------
// Transmit paths (noiseless, time domain, NP samples per block)

/// Circular model: sum_m H_m F_m U x_m.
inline ComplexVector transmit_circular(const SystemConfig& cfg, const ChannelSet& ch, const FilterBank& fb,
                                       const std::vector<ComplexVector>& symbols) {
  const int np = cfg.np();
  ComplexVector y = ComplexVector::Zero(np);
  for (int m = 0; m < cfg.num_users; ++m) {
    const auto sm = static_cast<std::size_t>(m);
    ComplexVector up = ComplexVector::Zero(np);
    for (int n = 0; n < cfg.block_len; ++n) up[n * cfg.upsample] = symbols[sm][n];
    ComplexVector shaped = ComplexVector::Zero(np);
    for (int t = 0; t < np; ++t)
      for (Index k = 0; k < fb.coeffs[sm].size(); ++k) shaped[(t + k) % np] += fb.coeffs[sm][k] * up[t];
    for (int t = 0; t < np; ++t)
      for (Index k = 0; k < ch.taps[sm].size(); ++k) y[(t + k) % np] += ch.taps[sm][k] * shaped[t];
  }
  return y;
}

/// Physical path: CP of `cp_len` symbols, upsampling, linear convolution with
/// f_m then h_m, superposition, and removal of the first cp_len*P samples.
inline ComplexVector transmit_physical(const SystemConfig& cfg, const ChannelSet& ch, const FilterBank& fb,
                                       const std::vector<ComplexVector>& symbols, int cp_len) {
  const int n_sym = cfg.block_len;
  const int p = cfg.upsample;
  if (cp_len < 0) throw std::invalid_argument("transmit_physical: cp_len must be >= 0");
  const int len = (n_sym + cp_len) * p;
  ComplexVector rx = ComplexVector::Zero(len + cfg.filter_len + cfg.channel_len);
  for (int m = 0; m < cfg.num_users; ++m) {
    const auto sm = static_cast<std::size_t>(m);
    ComplexVector up = ComplexVector::Zero(len);
    for (int s = 0; s < n_sym + cp_len; ++s) up[s * p] = symbols[sm][((s - cp_len) % n_sym + n_sym) % n_sym];
    const auto& f = fb.coeffs[sm];
    const auto& h = ch.taps[sm];
    ComplexVector shaped = ComplexVector::Zero(len + f.size() - 1);
    for (int t = 0; t < len; ++t)
      for (Index k = 0; k < f.size(); ++k) shaped[t + k] += f[k] * up[t];
    for (Index t = 0; t < shaped.size(); ++t)
      for (Index k = 0; k < h.size(); ++k) rx[t + k] += h[k] * shaped[t];
  }
  return rx.segment(static_cast<Index>(cp_len) * p, static_cast<Index>(n_sym) * p);
}

// ---------------------------------------------------------------------------
// BER

struct BerPoint {
  double snr_db = 0.0;
  double ber = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int trials = 0;
  std::uint64_t bits = 0;
  std::uint64_t errors = 0;
};

/// 95% Wilson score interval for k successes out of n.
inline std::pair<double, double> wilson_interval(std::uint64_t k, std::uint64_t n, double z = 1.959963984540054) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(k) / nn;
  const double den = 1.0 + z * z / nn;
  const double center = (ph + z * z / (2.0 * nn)) / den;
  const double half = z * std::sqrt(ph * (1.0 - ph) / nn + z * z / (4.0 * nn * nn)) / den;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

/// Monte-Carlo BER of the one-shot LMMSE receiver. Each SNR point sets unit
/// user powers and N0 = 10^(-snr/10); the covariances (circulant) shape the
/// transmitted symbols as x = C^{1/2} s with s unit-energy QAM.
inline std::vector<BerPoint> ber_monte_carlo(SystemConfig cfg, const ChannelSet& ch, const FilterBank& fb,
                                             const CovarianceSet& covs, const std::vector<double>& snr_grid_db,
                                             int trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("ber_monte_carlo: trials must be >= 1");
  const Qam qam(cfg.qam_order);
  const int n_sym = cfg.block_len;
  const ComplexMatrix w = dft_matrix(n_sym);
  std::vector<RealVector> amp;
  for (const auto& c : covs.cov) {
    if (covariance_circulant_defect(c) > 1e-8)
      throw std::invalid_argument("ber_monte_carlo: covariance is not diagonal in the DFT basis");
    amp.push_back(covariance_dft_diagonal(c).cwiseMax(0.0).cwiseSqrt());
  }
  EffectiveChannel eff = build_effective_channel(ch, fb, cfg);
  eff.scale_columns(amp);
  std::vector<BerPoint> out;
  const auto bits_per_block = static_cast<std::size_t>(cfg.num_users * n_sym * qam.bits_per_symbol());
  for (std::size_t s = 0; s < snr_grid_db.size(); ++s) {
    cfg.set_snr_db(snr_grid_db[s]);
    std::mt19937_64 rng(seed + 0x9E3779B97F4A7C15ULL * (s + 1));
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> gauss(0.0, std::sqrt(cfg.noise_power / 2.0));
    BerPoint pt;
    pt.snr_db = snr_grid_db[s];
    pt.trials = trials;
    std::vector<std::uint8_t> bits(bits_per_block);
    for (int tr = 0; tr < trials; ++tr) {
      for (auto& b : bits) b = coin(rng) ? 1 : 0;
      const ComplexVector x = qam.map(bits);
      ComplexVector y = apply_effective_channel(eff, x);
      // frequency-domain noise of a unitary transform of white noise is white
      for (auto& v : y) v += cd{gauss(rng), gauss(rng)};
      const DetectionResult det = lmmse_detect_fast(y, eff, cfg.noise_power);
      const auto rx = qam.demap(det.estimates);
      for (std::size_t k = 0; k < bits.size(); ++k) pt.errors += rx[k] != bits[k] ? 1 : 0;
      pt.bits += bits.size();
    }
    pt.ber = static_cast<double>(pt.errors) / static_cast<double>(pt.bits);
    std::tie(pt.ci_low, pt.ci_high) = wilson_interval(pt.errors, pt.bits);
    out.push_back(pt);
  }
  return out;
}

}  // namespace cpfbma
