// SPDX-License-Identifier: Apache-2.0
//
// CP-FBMA system model: channels, filters and covariances, the structured
// matrices of the circular signal model, and the interference state used by
// the per-user optimizers.
//
// Index conventions. Frequency bins k = 0..NP-1 are grouped as k = i*N + n with
// n = 0..N-1 (subband symbol frequency) and i = 0..P-1 (spectral image). The
// interleaving permutation collects the P bins {i*N + n} of one n into a
// contiguous P x P block; every Gram matrix of the model is block diagonal in
// that order.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpfbma/config.hpp"
#include "cpfbma/numerics.hpp"

namespace cpfbma {

struct ChannelSet {
  std::vector<ComplexVector> taps;  // h_m, length L_h
};

struct FilterBank {
  std::vector<ComplexVector> coeffs;  // f_m, length N_f, unit energy
  std::size_t size() const { return coeffs.size(); }
};

struct CovarianceSet {
  std::vector<ComplexMatrix> cov;  // C_m, N x N Hermitian PSD
};

// ---------------------------------------------------------------------------
// Structured operators

/// NP x N upsampler with ones at (nP, n).
inline RealMatrix upsampler(int block_len, int upsample) {
  if (block_len < 1 || upsample < 1) throw std::invalid_argument("upsampler: N, P must be >= 1");
  RealMatrix u = RealMatrix::Zero(block_len * upsample, block_len);
  for (int n = 0; n < block_len; ++n) u(n * upsample, n) = 1.0;
  return u;
}

/// Interleaving permutation: perm[w1*P + w2] = w1 + w2*N.
/// Row w of the interleaving matrix has its single one in column perm[w].
inline std::vector<int> omega_permutation(int block_len, int upsample) {
  if (block_len < 1 || upsample < 1) throw std::invalid_argument("omega_permutation: N, P must be >= 1");
  std::vector<int> perm(static_cast<std::size_t>(block_len * upsample));
  for (int w1 = 0; w1 < block_len; ++w1)
    for (int w2 = 0; w2 < upsample; ++w2) perm[static_cast<std::size_t>(w1 * upsample + w2)] = w1 + w2 * block_len;
  return perm;
}

inline RealMatrix omega_matrix(int block_len, int upsample) {
  const auto perm = omega_permutation(block_len, upsample);
  const int size = block_len * upsample;
  RealMatrix om = RealMatrix::Zero(size, size);
  for (int w = 0; w < size; ++w) om(w, perm[static_cast<std::size_t>(w)]) = 1.0;
  return om;
}

/// Largest entry of Omega*A*Omega^T outside its N diagonal P x P blocks.
inline double off_block_mass(const ComplexMatrix& a, int block_len, int upsample) {
  double worst = 0.0;
  const int np = block_len * upsample;
  for (int r = 0; r < np; ++r) {
    for (int c = 0; c < np; ++c) {
      if (r % block_len != c % block_len) worst = std::max(worst, std::abs(a(r, c)));
    }
  }
  return worst;
}

/// Unnormalized `size`-point DFT of v (taps beyond `size` alias): the
/// eigenvalues of the circulant matrix whose first column is v.
inline ComplexVector circulant_spectrum(const ComplexVector& v, int size) {
  ComplexVector out = ComplexVector::Zero(size);
  for (int k = 0; k < size; ++k) {
    cd acc{0.0, 0.0};
    for (Index t = 0; t < v.size(); ++t) {
      const auto r = static_cast<double>((static_cast<long long>(k) * t) % size);
      acc += v[t] * std::polar(1.0, -kTwoPi * r / size);
    }
    out[k] = acc;
  }
  return out;
}

/// Dense circulant with first column v, zero padded or aliased to `size`.
inline ComplexMatrix circulant_matrix(const ComplexVector& v, int size) {
  ComplexMatrix c = ComplexMatrix::Zero(size, size);
  for (int col = 0; col < size; ++col)
    for (Index t = 0; t < v.size(); ++t) c((col + t) % size, col) += v[t];
  return c;
}

/// NP-point spectrum of a filter, sqrt(NP) W_NP [I; 0] f.
inline ComplexVector filter_dft(const ComplexVector& f, int block_len, int upsample) {
  if (f.size() > block_len * upsample) throw std::invalid_argument("filter_dft: N_f > NP");
  return circulant_spectrum(f, block_len * upsample);
}

/// d_n = [W_N C W_N^H]_{n,n}, the DFT-domain powers of a covariance.
inline RealVector covariance_dft_diagonal(const ComplexMatrix& c) {
  const ComplexMatrix w = dft_matrix(c.rows());
  const ComplexMatrix d = w * c * w.adjoint();
  return d.diagonal().real();
}

/// Largest off-diagonal entry of W_N C W_N^H relative to its trace.
inline double covariance_circulant_defect(const ComplexMatrix& c) {
  const ComplexMatrix w = dft_matrix(c.rows());
  ComplexMatrix d = w * c * w.adjoint();
  const double tr = std::max(std::abs(d.trace()), 1e-300);
  d.diagonal().setZero();
  return max_abs(d) / tr;
}

/// Amplitudes of the q-vectors: sqrt(d_n / (P N0)), one per subband symbol
/// frequency n. The P nonzero entries of q_{m,n} (at i*N + n) share this value.
inline RealVector q_amplitudes(const ComplexMatrix& c, int upsample, double noise_power) {
  const RealVector d = covariance_dft_diagonal(c);
  RealVector q(d.size());
  for (Index n = 0; n < d.size(); ++n) {
    if (d[n] < -1e-10 * std::max(1.0, std::abs(d.sum())))
      throw NumericalError("build_q_vectors: covariance has negative DFT-domain power (not PSD)");
    q[n] = std::sqrt(std::max(d[n], 0.0) / (upsample * noise_power));
  }
  return q;
}

/// Dense q_{m,n} vectors of length NP, nonzero only at indices i*N + n.
inline std::vector<RealVector> build_q_vectors(const ComplexMatrix& c, int upsample, double noise_power) {
  const RealVector amp = q_amplitudes(c, upsample, noise_power);
  const auto n_sym = static_cast<int>(c.rows());
  std::vector<RealVector> q(static_cast<std::size_t>(n_sym), RealVector::Zero(n_sym * upsample));
  for (int n = 0; n < n_sym; ++n)
    for (int i = 0; i < upsample; ++i) q[static_cast<std::size_t>(n)][i * n_sym + n] = amp[n];
  return q;
}

/// Dense G_{m,n} = sqrt(NP) diag(H) diag(q_n) W_NP [I; 0]  (NP x N_f).
inline ComplexMatrix build_G(const ComplexVector& h, const RealVector& q_n, int block_len, int upsample,
                             int filter_len) {
  const int np = block_len * upsample;
  if (q_n.size() != np) throw std::invalid_argument("build_G: q vector must have length NP");
  const ComplexVector hs = circulant_spectrum(h, np);
  ComplexMatrix g = ComplexMatrix::Zero(np, filter_len);
  for (int k = 0; k < np; ++k) {
    if (q_n[k] == 0.0) continue;
    for (int t = 0; t < filter_len; ++t) {
      const auto r = static_cast<double>((static_cast<long long>(k) * t) % np);
      g(k, t) = hs[k] * q_n[k] * std::polar(1.0, -kTwoPi * r / np);
    }
  }
  return g;
}

/// tr(F U C U^T F^H) / (NP): transmit power of the SFB output.
///
/// Evaluated in the time domain: column n of F U is f circularly shifted by nP,
/// so the Gram (F U)^H (F U) is the circular autocorrelation of f at lags that
/// are multiples of P.
inline double check_power(const ComplexVector& f, const ComplexMatrix& c, const SystemConfig& cfg) {
  const int n_sym = cfg.block_len;
  const int p = cfg.upsample;
  const int np = n_sym * p;
  if (c.rows() != n_sym || c.cols() != n_sym) throw std::invalid_argument("check_power: covariance must be N x N");
  ComplexVector fp = ComplexVector::Zero(np);
  fp.head(f.size()) = f;
  // acf[l] = sum_t conj(f[t]) f[t + l P]  (circular)
  std::vector<cd> acf(static_cast<std::size_t>(n_sym));
  for (int l = 0; l < n_sym; ++l) {
    cd acc{0.0, 0.0};
    for (int t = 0; t < np; ++t) acc += std::conj(fp[t]) * fp[(t + l * p) % np];
    acf[static_cast<std::size_t>(l)] = acc;
  }
  // tr(F U C U^T F^H) = sum_{a,b} C_{a,b} col_b^H col_a, col_b^H col_a = acf[(b - a) mod N]
  cd tr{0.0, 0.0};
  for (int a = 0; a < n_sym; ++a)
    for (int b = 0; b < n_sym; ++b) tr += c(a, b) * acf[static_cast<std::size_t>(((b - a) % n_sym + n_sym) % n_sym)];
  return tr.real() / np;
}

// ---------------------------------------------------------------------------
// Generators

/// L_h-tap complex Gaussian channels with equal tap powers, each normalized to
/// unit total power. Deterministic per seed.
inline ChannelSet generate_channels(const SystemConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5 / cfg.channel_len));
  ChannelSet out;
  out.taps.reserve(static_cast<std::size_t>(cfg.num_users));
  for (int m = 0; m < cfg.num_users; ++m) {
    ComplexVector h(cfg.channel_len);
    for (int t = 0; t < cfg.channel_len; ++t) {
      const double re = gauss(rng);
      const double im = gauss(rng);
      h[t] = cd{re, im};
    }
    if (h.norm() == 0.0) h[0] = 1.0;
    h.normalize();
    out.taps.push_back(std::move(h));
  }
  return out;
}

/// Non-optimized wide-band baseline: for user m a Hamming-windowed truncated
/// Dirichlet kernel covering NP/M bins around bin m*NP/M, linear phase, unit energy.
inline FilterBank legacy_filterbank(const SystemConfig& cfg) {
  if (cfg.filter_len < cfg.num_users) throw std::invalid_argument("legacy_filterbank: N_f must be >= M");
  const int np = cfg.np();
  const double bins = static_cast<double>(np) / cfg.num_users;
  const double center_t = 0.5 * (cfg.filter_len - 1);
  FilterBank fb;
  for (int m = 0; m < cfg.num_users; ++m) {
    const double center_bin = m * bins;
    ComplexVector f(cfg.filter_len);
    for (int t = 0; t < cfg.filter_len; ++t) {
      const double x = t - center_t;
      const double s = std::sin(std::numbers::pi * x / np);
      const double dirichlet = std::abs(s) < 1e-15 ? bins : std::sin(std::numbers::pi * bins * x / np) / s;
      const double window =
          cfg.filter_len == 1 ? 1.0 : 0.54 - 0.46 * std::cos(kTwoPi * t / (cfg.filter_len - 1));
      f[t] = window * dirichlet * std::polar(1.0, kTwoPi * center_bin * x / np);
    }
    f.normalize();
    fb.coeffs.push_back(std::move(f));
  }
  return fb;
}

/// Seeded random unit-energy filters.
inline FilterBank random_filterbank(const SystemConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  FilterBank fb;
  for (int m = 0; m < cfg.num_users; ++m) {
    ComplexVector f(cfg.filter_len);
    for (auto& v : f) v = cd{gauss(rng), gauss(rng)};
    f.normalize();
    fb.coeffs.push_back(std::move(f));
  }
  return fb;
}

/// C_m = P P_m I_N, which meets the power constraint for any unit-energy filter.
inline CovarianceSet identity_covariances(const SystemConfig& cfg) {
  CovarianceSet cs;
  for (int m = 0; m < cfg.num_users; ++m)
    cs.cov.push_back(ComplexMatrix::Identity(cfg.block_len, cfg.block_len) *
                     (cfg.upsample * cfg.user_power[static_cast<std::size_t>(m)]));
  return cs;
}

// ---------------------------------------------------------------------------
// Interference state

/// Phi_m = I + sum_{i != m} sum_n G_{i,n} f_i f_i^H G_{i,n}^H, held as its N
/// interleaved P x P diagonal blocks together with their inverse and inverse
/// square root.
struct InterferenceState {
  int block_len = 0;
  int upsample = 0;
  int excluded = -1;
  std::vector<ComplexMatrix> phi;
  std::vector<ComplexMatrix> phi_inv;
  std::vector<ComplexMatrix> phi_inv_sqrt;

  /// Scatters interleaved blocks back into the natural NP x NP layout.
  ComplexMatrix dense(const std::vector<ComplexMatrix>& blocks) const {
    const int np = block_len * upsample;
    ComplexMatrix out = ComplexMatrix::Zero(np, np);
    for (int n = 0; n < block_len; ++n)
      for (int i = 0; i < upsample; ++i)
        for (int j = 0; j < upsample; ++j) out(i * block_len + n, j * block_len + n) = blocks[static_cast<std::size_t>(n)](i, j);
    return out;
  }

  /// Rank-one change of block n: phi += sign g g^H, inverse by Woodbury.
  void rank_one_update(int n, const ComplexVector& g, int sign) {
    auto& blk = phi[static_cast<std::size_t>(n)];
    blk += static_cast<double>(sign) * (g * g.adjoint());
    auto& inv = phi_inv[static_cast<std::size_t>(n)];
    woodbury_update_inplace(inv, g, sign);
  }

  /// Recomputes the inverse square roots from the current inverse blocks.
  void refresh_inv_sqrt() {
    phi_inv_sqrt.resize(phi_inv.size());
    for (std::size_t n = 0; n < phi_inv.size(); ++n) {
      const ComplexMatrix sym = 0.5 * (phi_inv[n] + phi_inv[n].adjoint());
      const HermitianEvd evd = hermitian_evd(sym);
      RealVector d(evd.values.size());
      for (Index k = 0; k < d.size(); ++k) {
        if (evd.values[k] <= 0.0) throw NumericalError("interference block inverse lost positive definiteness");
        d[k] = std::sqrt(evd.values[k]);
      }
      phi_inv_sqrt[n] = evd.vectors * d.asDiagonal() * evd.vectors.adjoint();
    }
  }
};

/// Per (m, n): whitened compressed channel G~ (P x N_f) and B = G~^H G~.
struct ReducedUserChannel {
  std::vector<ComplexMatrix> g_tilde;
  std::vector<ComplexMatrix> b;
};

/// Frequency-domain view of one channel realization: channel spectra, the
/// per-user q amplitudes (from the covariances), and the DFT rows that map a
/// filter onto the P bins of each subband frequency.
class LinkModel {
 public:
  LinkModel(const SystemConfig& cfg, const ChannelSet& channels) : cfg_(cfg) {
    cfg_.validate();
    if (channels.taps.size() != static_cast<std::size_t>(cfg.num_users))
      throw std::invalid_argument("LinkModel: channel count differs from num_users");
    const int np = cfg_.np();
    for (const auto& h : channels.taps) {
      spectra_.push_back(circulant_spectrum(h, np));
    }
    rows_.reserve(static_cast<std::size_t>(cfg_.block_len));
    for (int n = 0; n < cfg_.block_len; ++n) {
      ComplexMatrix d(cfg_.upsample, cfg_.filter_len);
      for (int i = 0; i < cfg_.upsample; ++i) {
        const long long k = static_cast<long long>(i) * cfg_.block_len + n;
        for (int t = 0; t < cfg_.filter_len; ++t) {
          const auto r = static_cast<double>((k * t) % np);
          d(i, t) = std::polar(1.0, -kTwoPi * r / np);
        }
      }
      rows_.push_back(std::move(d));
    }
    set_covariances(identity_covariances(cfg_));
  }

  const SystemConfig& config() const { return cfg_; }
  int users() const { return cfg_.num_users; }
  const ComplexVector& channel_spectrum(int m) const { return spectra_[static_cast<std::size_t>(m)]; }
  const RealVector& q_amp(int m) const { return q_[static_cast<std::size_t>(m)]; }
  /// e^{-2 pi i (iN+n) t / NP} for i = 0..P-1, t = 0..N_f-1.
  const ComplexMatrix& dft_rows(int n) const { return rows_[static_cast<std::size_t>(n)]; }

  void set_covariance(int m, const ComplexMatrix& c) {
    q_[static_cast<std::size_t>(m)] = q_amplitudes(c, cfg_.upsample, cfg_.noise_power);
  }
  void set_covariances(const CovarianceSet& cs) {
    q_.assign(static_cast<std::size_t>(cfg_.num_users), RealVector());
    for (int m = 0; m < cfg_.num_users; ++m) set_covariance(m, cs.cov[static_cast<std::size_t>(m)]);
  }

  /// Raw compressed G_{m,n}: the P nonzero rows of G_{m,n}.
  ComplexMatrix compressed_g(int m, int n) const {
    ComplexMatrix g = rows_[static_cast<std::size_t>(n)];
    const double q = q_[static_cast<std::size_t>(m)][n];
    for (int i = 0; i < cfg_.upsample; ++i) g.row(i) *= spectra_[static_cast<std::size_t>(m)][i * cfg_.block_len + n] * q;
    return g;
  }

  /// Column n holds g_{m,n} = G~raw_{m,n} f (P entries), for n = 0..N-1.
  ComplexMatrix user_vectors(int m, const ComplexVector& f) const {
    const ComplexVector spec = filter_dft(f, cfg_.block_len, cfg_.upsample);
    ComplexMatrix g(cfg_.upsample, cfg_.block_len);
    const auto& h = spectra_[static_cast<std::size_t>(m)];
    const auto& q = q_[static_cast<std::size_t>(m)];
    for (int n = 0; n < cfg_.block_len; ++n)
      for (int i = 0; i < cfg_.upsample; ++i) {
        const int k = i * cfg_.block_len + n;
        g(i, n) = h[k] * q[n] * spec[k];
      }
    return g;
  }

  /// Builds Phi for user `exclude` directly (exclude = -1 keeps every user).
  InterferenceState build_interference(const FilterBank& filters, int exclude) const {
    InterferenceState st;
    st.block_len = cfg_.block_len;
    st.upsample = cfg_.upsample;
    st.excluded = exclude;
    st.phi.assign(static_cast<std::size_t>(cfg_.block_len), ComplexMatrix::Identity(cfg_.upsample, cfg_.upsample));
    for (int m = 0; m < cfg_.num_users; ++m) {
      if (m == exclude) continue;
      const ComplexMatrix g = user_vectors(m, filters.coeffs[static_cast<std::size_t>(m)]);
      for (int n = 0; n < cfg_.block_len; ++n) st.phi[static_cast<std::size_t>(n)] += g.col(n) * g.col(n).adjoint();
    }
    st.phi_inv.resize(st.phi.size());
    st.phi_inv_sqrt.resize(st.phi.size());
    for (std::size_t n = 0; n < st.phi.size(); ++n) {
      const HermitianEvd evd = hermitian_evd(0.5 * (st.phi[n] + st.phi[n].adjoint()));
      const Index p = evd.values.size();
      if (evd.values[p - 1] < 1e-12) throw NumericalError("build_interference: singular interference block");
      const RealVector inv = evd.values.cwiseInverse();
      const RealVector inv_sqrt = evd.values.cwiseSqrt().cwiseInverse();
      st.phi_inv[n] = evd.vectors * inv.asDiagonal() * evd.vectors.adjoint();
      st.phi_inv_sqrt[n] = evd.vectors * inv_sqrt.asDiagonal() * evd.vectors.adjoint();
    }
    return st;
  }

  /// Whitened per-frequency channels of user m against the given interference.
  ReducedUserChannel reduce_user_channel(const InterferenceState& st, int m) const {
    ReducedUserChannel r;
    r.g_tilde.reserve(static_cast<std::size_t>(cfg_.block_len));
    r.b.reserve(static_cast<std::size_t>(cfg_.block_len));
    for (int n = 0; n < cfg_.block_len; ++n) {
      ComplexMatrix gt = st.phi_inv_sqrt[static_cast<std::size_t>(n)] * compressed_g(m, n);
      ComplexMatrix b = gt.adjoint() * gt;
      b = 0.5 * (b + b.adjoint());
      r.g_tilde.push_back(std::move(gt));
      r.b.push_back(std::move(b));
    }
    return r;
  }

  /// log2 det(I + sum_m sum_n g g^H) over the interleaved blocks (no prefactor).
  double log_det_fast(const FilterBank& filters) const {
    std::vector<ComplexMatrix> blocks(static_cast<std::size_t>(cfg_.block_len),
                                      ComplexMatrix::Identity(cfg_.upsample, cfg_.upsample));
    for (int m = 0; m < cfg_.num_users; ++m) {
      const ComplexMatrix g = user_vectors(m, filters.coeffs[static_cast<std::size_t>(m)]);
      for (int n = 0; n < cfg_.block_len; ++n) blocks[static_cast<std::size_t>(n)] += g.col(n) * g.col(n).adjoint();
    }
    double acc = 0.0;
    for (const auto& b : blocks) acc += log2_det_hpd(b);
    return acc;
  }

  /// Chain-rule split of log_det_fast: user m gets
  /// log2 det(I + S_1 + ... + S_m) - log2 det(I + S_1 + ... + S_{m-1}).
  std::vector<double> per_user_log_det(const FilterBank& filters) const {
    std::vector<ComplexMatrix> blocks(static_cast<std::size_t>(cfg_.block_len),
                                      ComplexMatrix::Identity(cfg_.upsample, cfg_.upsample));
    std::vector<double> out;
    double prev = 0.0;
    for (int m = 0; m < cfg_.num_users; ++m) {
      const ComplexMatrix g = user_vectors(m, filters.coeffs[static_cast<std::size_t>(m)]);
      double acc = 0.0;
      for (int n = 0; n < cfg_.block_len; ++n) {
        blocks[static_cast<std::size_t>(n)] += g.col(n) * g.col(n).adjoint();
        acc += log2_det_hpd(blocks[static_cast<std::size_t>(n)]);
      }
      out.push_back(acc - prev);
      prev = acc;
    }
    return out;
  }

  /// log2 det Phi over the blocks.
  static double log_det_blocks(const std::vector<ComplexMatrix>& blocks) {
    double acc = 0.0;
    for (const auto& b : blocks) acc += log2_det_hpd(b);
    return acc;
  }

 private:
  SystemConfig cfg_;
  std::vector<ComplexVector> spectra_;
  std::vector<ComplexMatrix> rows_;
  std::vector<RealVector> q_;
};

/// sum_n log2(1 + f^H B_n f).
inline double user_objective(const ComplexVector& f, const std::vector<ComplexMatrix>& b) {
  double acc = 0.0;
  for (const auto& bn : b) acc += std::log2(1.0 + std::max(0.0, f.dot(bn * f).real()));
  return acc;
}

// ---------------------------------------------------------------------------
// Sum-rate evaluators. All return bits/s/Hz including 1/((N + L_g) P).

namespace detail {

inline void check_rate_inputs(const SystemConfig& cfg, const ChannelSet& ch, const FilterBank& fb,
                              const CovarianceSet& cs) {
  const auto m = static_cast<std::size_t>(cfg.num_users);
  if (ch.taps.size() != m || fb.coeffs.size() != m || cs.cov.size() != m)
    throw std::invalid_argument("sum rate: per-user inputs must have num_users entries");
}

}  // namespace detail

/// Time-domain dense evaluation: log2|I + (1/N0) sum H F U C U^T F^H H^H|.
inline double sum_rate_time(const SystemConfig& cfg, const ChannelSet& ch, const FilterBank& fb,
                            const CovarianceSet& cs) {
  detail::check_rate_inputs(cfg, ch, fb, cs);
  const int np = cfg.np();
  const ComplexMatrix u = upsampler(cfg.block_len, cfg.upsample).cast<cd>();
  ComplexMatrix acc = ComplexMatrix::Identity(np, np);
  for (int m = 0; m < cfg.num_users; ++m) {
    const auto sm = static_cast<std::size_t>(m);
    const ComplexMatrix a = circulant_matrix(ch.taps[sm], np) * circulant_matrix(fb.coeffs[sm], np) * u;
    acc += (a * cs.cov[sm] * a.adjoint()) / cfg.noise_power;
  }
  return cfg.rate_prefactor() * log2_det_hpd(acc);
}

/// Frequency-domain dense form with Q_m = (1/N0) W U C U^T W^H.
inline double sum_rate_freq(const SystemConfig& cfg, const ChannelSet& ch, const FilterBank& fb,
                            const CovarianceSet& cs) {
  detail::check_rate_inputs(cfg, ch, fb, cs);
  const int np = cfg.np();
  const ComplexMatrix w = dft_matrix(np);
  const ComplexMatrix wu = w * upsampler(cfg.block_len, cfg.upsample).cast<cd>();
  ComplexMatrix acc = ComplexMatrix::Identity(np, np);
  for (int m = 0; m < cfg.num_users; ++m) {
    const auto sm = static_cast<std::size_t>(m);
    const ComplexMatrix q = wu * cs.cov[sm] * wu.adjoint() / cfg.noise_power;
    const ComplexVector d = circulant_spectrum(ch.taps[sm], np).cwiseProduct(filter_dft(fb.coeffs[sm], cfg.block_len, cfg.upsample));
    acc += d.asDiagonal() * q * d.conjugate().asDiagonal();
  }
  return cfg.rate_prefactor() * log2_det_hpd(acc);
}

/// Dense G-form: log2|I + sum_m sum_n G_{m,n} f f^H G_{m,n}^H|.
inline double sum_rate_gform(const SystemConfig& cfg, const ChannelSet& ch, const FilterBank& fb,
                             const CovarianceSet& cs) {
  detail::check_rate_inputs(cfg, ch, fb, cs);
  const int np = cfg.np();
  ComplexMatrix acc = ComplexMatrix::Identity(np, np);
  for (int m = 0; m < cfg.num_users; ++m) {
    const auto sm = static_cast<std::size_t>(m);
    const auto q = build_q_vectors(cs.cov[sm], cfg.upsample, cfg.noise_power);
    for (int n = 0; n < cfg.block_len; ++n) {
      const ComplexVector v =
          build_G(ch.taps[sm], q[static_cast<std::size_t>(n)], cfg.block_len, cfg.upsample, cfg.filter_len) * fb.coeffs[sm];
      acc += v * v.adjoint();
    }
  }
  return cfg.rate_prefactor() * log2_det_hpd(acc);
}

/// Interleaved-block evaluation, O(N P^3) per determinant. Requires every
/// covariance to be diagonal in the N-point DFT basis (circulant), which holds
/// for P P_m I and for covariances produced by the GSVD/water-filling step.
inline double sum_rate_fast(const SystemConfig& cfg, const ChannelSet& ch, const FilterBank& fb,
                            const CovarianceSet& cs) {
  detail::check_rate_inputs(cfg, ch, fb, cs);
  for (const auto& c : cs.cov) {
    if (covariance_circulant_defect(c) > 1e-8)
      throw std::invalid_argument("sum_rate_fast: covariance is not diagonal in the DFT basis");
  }
  LinkModel lm(cfg, ch);
  lm.set_covariances(cs);
  return cfg.rate_prefactor() * lm.log_det_fast(fb);
}

/// Per-user assembly: log2|Phi_m| + sum_n log2(1 + f_m^H B_{m,n} f_m).
inline double sum_rate_bform(const SystemConfig& cfg, const ChannelSet& ch, const FilterBank& fb,
                             const CovarianceSet& cs, int user) {
  detail::check_rate_inputs(cfg, ch, fb, cs);
  LinkModel lm(cfg, ch);
  lm.set_covariances(cs);
  const InterferenceState st = lm.build_interference(fb, user);
  const ReducedUserChannel r = lm.reduce_user_channel(st, user);
  return cfg.rate_prefactor() *
         (LinkModel::log_det_blocks(st.phi) + user_objective(fb.coeffs[static_cast<std::size_t>(user)], r.b));
}

}  // namespace cpfbma
