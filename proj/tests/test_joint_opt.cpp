// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "cpfbma/joint_opt.hpp"
#include "oracles.hpp"

using namespace cpfbma;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

SystemConfig small_config(int m, int n, int p, int nf, int lh, double snr_db = 10.0) {
  SystemConfig c;
  c.num_users = m;
  c.block_len = n;
  c.upsample = p;
  c.filter_len = nf;
  c.channel_len = lh;
  c.set_snr_db(snr_db);
  c.validate();
  return c;
}

std::vector<int> all_bins(int np) {
  std::vector<int> v;
  for (int k = 0; k < np; ++k) v.push_back(k);
  return v;
}

/// Hermitian circulant covariance with the given DFT-domain powers.
ComplexMatrix circulant_from_powers(const RealVector& d) {
  const ComplexMatrix w = oracle::dft(d.size());
  const ComplexMatrix c = w.adjoint() * d.cast<cd>().asDiagonal() * w;
  return 0.5 * (c + c.adjoint());
}

}  // namespace

TEST_CASE("stopband matrices", "[joint]") {
  oracle::Rng rng(61);
  const int n = 4;
  const int p = 2;
  const int nf = 6;
  const int np = n * p;
  CHECK(max_abs(stopband_matrix(all_bins(np), n, p, nf) - ComplexMatrix::Identity(nf, nf)) < 1e-14);
  CHECK(max_abs(stopband_matrix({}, n, p, nf)) == 0.0);

  const ComplexMatrix w = oracle::dft(np);
  for (int k = 0; k < np; ++k) {
    const ComplexMatrix e = stopband_matrix({k}, n, p, nf);
    CHECK(oracle::eigenvalues(e)[1] < 1e-12);
    for (int trial = 0; trial < 5; ++trial) {
      const ComplexVector f = rng.cvec(nf);
      ComplexVector fp = ComplexVector::Zero(np);
      fp.head(nf) = f;
      // unitary DFT coefficient squared equals |F_k|^2 / NP
      CHECK_THAT(stopband_energy(f, e), WithinAbs(std::norm((w * fp)[k]), 1e-12));
    }
  }
  CHECK_THROWS_AS(stopband_matrix({np}, n, p, nf), std::invalid_argument);
}

TEST_CASE("stopband specification", "[joint]") {
  const SystemConfig cfg = preset_config("desk");
  const StopbandSpec preset = stopband_preset(cfg);
  REQUIRE(preset.users.size() == static_cast<std::size_t>(cfg.num_users));
  const int np = cfg.np();
  CHECK(preset.users[0][0].bins.front() == np / 4);
  CHECK(preset.users[0][0].bins.back() == 3 * np / 8 - 1);
  CHECK(preset.users[0][1].bins.front() == 5 * np / 8);
  CHECK(preset.users[0][0].budget == 3.23e-4);
  CHECK(preset.users[1][1].budget == 3.52e-4);
  CHECK_NOTHROW(preset.validate(cfg.num_users, np));

  const StopbandSpec back = stopbands_from_json(to_json(preset));
  REQUIRE(back.users.size() == preset.users.size());
  for (std::size_t m = 0; m < back.users.size(); ++m)
    for (std::size_t i = 0; i < back.users[m].size(); ++i) {
      CHECK(back.users[m][i].bins == preset.users[m][i].bins);
      CHECK(back.users[m][i].budget == preset.users[m][i].budget);
    }

  const auto range = stopbands_from_json(nlohmann::json::parse(R"({"users": [[{"bins": {"start": 2, "end": 5}, "budget": 1}]]})"));
  CHECK(range.users[0][0].bins == std::vector<int>{2, 3, 4});

  auto bad = [&](const char* text) {
    CHECK_THROWS_AS(stopbands_from_json(nlohmann::json::parse(text)).validate(1, 16), ConfigError);
  };
  bad(R"({"users": [[{"bins": [1, 1], "budget": 1}]]})");
  bad(R"({"users": [[{"bins": [16], "budget": 1}]]})");
  bad(R"({"users": [[{"bins": [1], "budget": 0}]]})");
  bad(R"({"users": [[{"bins": [1]}]]})");
  bad(R"({"users": [[{"bins": {"start": 5, "end": 2}, "budget": 1}]]})");
  bad(R"({"users": 3})");
  CHECK_THROWS_AS(preset.validate(cfg.num_users + 1, np), ConfigError);
}

TEST_CASE("power quadratic", "[joint]") {
  oracle::Rng rng(62);
  const SystemConfig cfg = small_config(2, 5, 2, 6, 2, 7.0);
  const int n = cfg.block_len;

  const PowerQuadratic id = build_power_quadratic(ComplexMatrix::Identity(n, n) * (cfg.upsample * 1.3), 1.3, cfg);
  CHECK(max_abs(id.r - (1.3 / cfg.noise_power) * ComplexMatrix::Identity(6, 6)) < 1e-12);
  CHECK_THAT(id.target, WithinAbs(1.3 / cfg.noise_power, 1e-12));
  CHECK(max_abs(build_power_quadratic(ComplexMatrix::Zero(n, n), 1.0, cfg).r) == 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    RealVector d(n);
    for (int i = 0; i < n; ++i) d[i] = rng.uniform(0.0, 3.0);
    const ComplexMatrix c = circulant_from_powers(d);
    const PowerQuadratic pq = build_power_quadratic(c, 1.0, cfg);
    const ComplexVector f = rng.cvec(6);
    CHECK_THAT(cfg.noise_power * f.dot(pq.r * f).real(), WithinRel(check_power(f, c, cfg), 1e-10));
  }
}

TEST_CASE("Hessian of the user objective", "[joint]") {
  oracle::Rng rng(63);
  const ComplexVector f = rng.unit(4);
  CHECK(max_abs(hessian(f, {ComplexMatrix::Zero(4, 4)})) == 0.0);
  const ComplexMatrix expect =
      (2.0 * ComplexMatrix::Identity(4, 4) - f * f.adjoint()) / (4.0 * std::numbers::ln2);
  CHECK(max_abs(hessian(f, {ComplexMatrix::Identity(4, 4)}) - expect) < 1e-14);

  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ComplexMatrix> b;
    for (int k = 0; k < 3; ++k) b.push_back(rng.psd_rank(5, 2));
    const ComplexVector x = rng.cvec(5);
    const ComplexVector v = rng.cvec(5);
    const oracle::ScalarFn fn = [&](const oracle::CVec& z) { return user_objective(z, b); };
    // the v and i v directions cancel the non-Hermitian part of the second derivative
    const double fd = 0.5 * (oracle::fd_second(fn, x, v, 1e-4) + oracle::fd_second(fn, x, cd(0.0, 1.0) * v, 1e-4));
    const ComplexMatrix h = hessian(x, b);
    CHECK_THAT(2.0 * v.dot(h * v).real(), WithinRel(fd, 1e-4));
  }

  const TaylorModel tm = build_taylor_model(f, {ComplexMatrix::Identity(4, 4)});
  CHECK((tm.eta - (euclidean_grad(f, {ComplexMatrix::Identity(4, 4)}) - tm.hessian * f)).norm() < 1e-15);
}

TEST_CASE("lifted QCQP layout", "[joint]") {
  oracle::Rng rng(64);
  const SystemConfig cfg = small_config(2, 4, 2, 4, 2);
  const ComplexVector f = rng.unit(4);
  const TaylorModel tm = build_taylor_model(f, {rng.psd_rank(4, 2)});
  const PowerQuadratic pq = build_power_quadratic(ComplexMatrix::Identity(4, 4) * 2.0, 1.0, cfg);
  UserStopbands sb;
  sb.e.push_back(stopband_matrix({0, 1}, 4, 2, 4));
  sb.budget.push_back(0.1);
  sb.e.push_back(stopband_matrix({5}, 4, 2, 4));
  sb.budget.push_back(0.2);
  const SdpProblem p = assemble_qcqp(tm, pq, sb);
  CHECK(p.dim() == 5);
  CHECK(p.equalities.size() == 3);
  CHECK(p.inequalities.size() == 2);
  // at the lifted base point the objective is the second-order model value
  ComplexVector lifted(5);
  lifted << f, cd(1.0, 0.0);
  const double val = lifted.dot(p.objective * lifted).real();
  CHECK_THAT(val, WithinAbs(f.dot(tm.hessian * f).real() + 2.0 * f.dot(tm.eta).real(), 1e-12));
}

TEST_CASE("filter step safeguards", "[joint]") {
  oracle::Rng rng(65);
  const SystemConfig cfg = small_config(4, 8, 4, 8, 3, 10.0);
  const LinkModel lm(cfg, generate_channels(cfg, 3));
  const FilterBank fb = legacy_filterbank(cfg);
  const int m = 2;
  const ReducedUserChannel red = lm.reduce_user_channel(lm.build_interference(fb, m), m);
  const ComplexMatrix c = ComplexMatrix::Identity(cfg.block_len, cfg.block_len) * cfg.upsample;
  const PowerQuadratic pq = build_power_quadratic(c, 1.0, cfg);
  JointParams prm;
  const ComplexVector& f0 = fb.coeffs[m];
  const double base = power_normalized_objective(f0, red.b, pq);

  SECTION("loose budgets improve the objective") {
    UserStopbands sb;
    sb.e.push_back(stopband_matrix({0, 1, 2}, cfg.block_len, cfg.upsample, cfg.filter_len));
    sb.budget.push_back(10.0);
    const FilterStepResult r = filter_step(f0, red.b, pq, sb, prm);
    CHECK(r.objective >= base);
    CHECK(r.accepted);
    CHECK_THAT(r.f.norm(), WithinAbs(1.0, 1e-12));
    CHECK_THAT(r.objective, WithinAbs(power_normalized_objective(r.f, red.b, pq), 1e-12));
  }

  SECTION("budgets equal to the current energies keep the filter feasible") {
    const StopbandSpec spec = stopband_preset(cfg);
    UserStopbands sb = build_user_stopbands(spec, m, cfg);
    for (std::size_t i = 0; i < sb.e.size(); ++i) sb.budget[i] = stopband_energy(f0, sb.e[i]);
    const FilterStepResult r = filter_step(f0, red.b, pq, sb, prm);
    CHECK(sb.worst_violation(r.f) <= prm.feasibility_slack);
    CHECK(r.objective >= base);
  }

  SECTION("an all-bin unit cap duplicates the energy constraint") {
    UserStopbands none;
    UserStopbands dup;
    dup.e.push_back(stopband_matrix(all_bins(cfg.np()), cfg.block_len, cfg.upsample, cfg.filter_len));
    dup.budget.push_back(1.0);
    const TaylorModel tm = build_taylor_model(f0, red.b);
    SdpProblem pa = assemble_qcqp(tm, pq, none);
    SdpProblem pb = assemble_qcqp(tm, pq, dup);
    pa.tolerance = 1e-9;
    pb.tolerance = 1e-9;
    const SdpSolution sa = solve_sdp(pa);
    const SdpSolution sb = solve_sdp(pb);
    CHECK(sa.status == SdpStatus::optimal);
    CHECK(sb.status == SdpStatus::optimal);
    CHECK_THAT(sb.objective, WithinAbs(sa.objective, 1e-6 * std::max(1.0, std::abs(sa.objective))));
    // the damping safeguard amplifies solver round-off, so the accepted objectives agree more loosely
    const FilterStepResult a = filter_step(f0, red.b, pq, none, prm);
    const FilterStepResult b = filter_step(f0, red.b, pq, dup, prm);
    CHECK_THAT(b.objective, WithinRel(a.objective, 1e-4));
  }

  SECTION("unattainable caps keep the previous filter") {
    UserStopbands sb;
    sb.e.push_back(stopband_matrix(all_bins(cfg.np()), cfg.block_len, cfg.upsample, cfg.filter_len));
    sb.budget.push_back(1e-30);
    const FilterStepResult r = filter_step(f0, red.b, pq, sb, prm);
    CHECK_FALSE(r.accepted);
    CHECK((r.f - f0).norm() == 0.0);
  }
}

TEST_CASE("covariance step", "[joint]") {
  oracle::Rng rng(66);

  SECTION("flat gains give a scaled identity") {
    const SystemConfig cfg = small_config(1, 6, 1, 1, 1, 10.0);
    ChannelSet ch;
    ch.taps.push_back(ComplexVector::Ones(1));
    const LinkModel lm(cfg, ch);
    FilterBank fb;
    fb.coeffs.push_back(ComplexVector::Ones(1));
    const CovarianceStepResult r = covariance_step(lm, lm.build_interference(fb, 0), 0, fb.coeffs[0]);
    CHECK(max_abs(r.c - ComplexMatrix::Identity(6, 6) * cfg.user_power[0]) < 1e-12);
  }

  for (int trial = 0; trial < 10; ++trial) {
    const SystemConfig cfg = small_config(3, 6, 2, 6, 3, rng.uniform(0.0, 20.0));
    const ChannelSet ch = generate_channels(cfg, static_cast<std::uint64_t>(trial + 10));
    FilterBank fb = random_filterbank(cfg, static_cast<std::uint64_t>(trial + 20));
    LinkModel lm(cfg, ch);
    const int m = trial % 3;
    const InterferenceState st = lm.build_interference(fb, m);
    const CovarianceStepResult r = covariance_step(lm, st, m, fb.coeffs[static_cast<std::size_t>(m)]);
    const auto sm = static_cast<std::size_t>(m);

    // power restored exactly and C stays circulant PSD
    CHECK_THAT(check_power(fb.coeffs[sm], r.c, cfg), WithinRel(cfg.user_power[sm], 1e-10));
    CHECK(covariance_circulant_defect(r.c) < 1e-12);
    CHECK(r.mode_powers.minCoeff() >= 0.0);

    // dense generalized-SVD route
    const CovarianceStepResult g = covariance_step_gsvd(lm, st, m, fb.coeffs[sm]);
    CHECK_THAT(g.objective, WithinAbs(r.objective, 1e-8 * std::max(1.0, r.objective)));

    // no random feasible circulant covariance beats the water-filling answer
    CovarianceSet cs = identity_covariances(cfg);
    cs.cov[sm] = r.c;
    const double best = sum_rate_time(cfg, ch, fb, cs);
    for (int k = 0; k < 50; ++k) {
      RealVector d(cfg.block_len);
      for (int i = 0; i < d.size(); ++i) d[i] = rng.uniform(0.0, 1.0);
      ComplexMatrix c = circulant_from_powers(d);
      c *= cfg.user_power[sm] / check_power(fb.coeffs[sm], c, cfg);
      cs.cov[sm] = c;
      CHECK(sum_rate_time(cfg, ch, fb, cs) <= best + 1e-12);
    }
  }
}

TEST_CASE("generalized-mode covariances are block diagonal after interleaving", "[joint]") {
  oracle::Rng rng(67);
  for (int trial = 0; trial < 10; ++trial) {
    const SystemConfig cfg = small_config(3, 5, 3, 6, 3, 10.0);
    const int np = cfg.np();
    const ChannelSet ch = generate_channels(cfg, static_cast<std::uint64_t>(trial + 30));
    const FilterBank fb = random_filterbank(cfg, static_cast<std::uint64_t>(trial + 40));
    const LinkModel lm(cfg, ch);
    const int m = trial % 3;
    const InterferenceState st = lm.build_interference(fb, m);
    const ComplexVector spec = filter_dft(fb.coeffs[static_cast<std::size_t>(m)], cfg.block_len, cfg.upsample);
    const ComplexMatrix wu = oracle::dft(np) * oracle::upsampler(cfg.block_len, cfg.upsample).cast<cd>();
    const ComplexMatrix mm = st.dense(st.phi_inv_sqrt) *
                             lm.channel_spectrum(m).cwiseProduct(spec).asDiagonal() * wu /
                             std::sqrt(cfg.noise_power);
    const ComplexMatrix nn = spec.asDiagonal() * wu;
    GsvdOptions opt;
    opt.allow_deficient = true;
    const GsvdFactors g = gsvd(mm, nn, opt);
    RealVector s(g.sig_m.size());
    for (int i = 0; i < s.size(); ++i) s[i] = rng.uniform(0.0, 2.0);
    const ComplexMatrix xinv = g.common.inverse();
    const ComplexMatrix c = xinv.adjoint() * s.cast<cd>().asDiagonal() * xinv;
    const ComplexMatrix big = wu * c * wu.adjoint();
    CHECK(off_block_mass(big, cfg.block_len, cfg.upsample) < 1e-10 * std::max(1.0, max_abs(big)));
  }
}

TEST_CASE("stopband-aware baseline", "[joint]") {
  const SystemConfig cfg = preset_config("desk");
  const StopbandSpec spec = stopband_preset(cfg);
  const FilterBank fb = stopband_baseline(cfg, spec);
  for (int m = 0; m < cfg.num_users; ++m) {
    const UserStopbands us = build_user_stopbands(spec, m, cfg);
    CHECK(us.worst_violation(fb.coeffs[static_cast<std::size_t>(m)]) <= 0.0);
    CHECK_THAT(fb.coeffs[static_cast<std::size_t>(m)].norm(), WithinAbs(1.0, 1e-12));
  }
  const FilterBank legacy = stopband_baseline(cfg, StopbandSpec{});
  CHECK((legacy.coeffs[0] - legacy_filterbank(cfg).coeffs[0]).norm() == 0.0);

  StopbandSpec impossible;
  for (int m = 0; m < cfg.num_users; ++m) impossible.users.push_back({{all_bins(cfg.np()), 1e-30}});
  CHECK_THROWS_AS(stopband_baseline(cfg, impossible), NumericalError);
}

TEST_CASE("joint optimization outer loop", "[joint]") {
  SECTION("feasible, unit energy and monotone with the preset stopbands") {
    SystemConfig cfg = preset_config("desk");
    cfg.set_snr_db(15.0);
    const StopbandSpec spec = stopband_preset(cfg);
    const ChannelSet ch = generate_channels(cfg, 4);
    JointParams prm;
    prm.outer.max_outer = 4;
    const P2Result r = optimize_p2(cfg, ch, spec, prm, stopband_baseline(cfg, spec));
    double prev = r.trajectory.initial_rate;
    for (const auto& s : r.trajectory.sweeps) {
      CHECK(s.sum_rate >= prev - 1e-9);
      prev = s.sum_rate;
    }
    for (int m = 0; m < cfg.num_users; ++m) {
      const auto sm = static_cast<std::size_t>(m);
      CHECK_THAT(r.filters.coeffs[sm].norm(), WithinAbs(1.0, 1e-12));
      CHECK(build_user_stopbands(spec, m, cfg).worst_violation(r.filters.coeffs[sm]) <= 1e-8);
      CHECK_THAT(check_power(r.filters.coeffs[sm], r.covariances.cov[sm], cfg), WithinRel(cfg.user_power[sm], 1e-8));
    }
    CHECK_THAT(r.trajectory.final_rate(),
               WithinRel(sum_rate_time(cfg, ch, r.filters, r.covariances), 1e-9));
    CHECK(r.trajectory.final_rate() > r.trajectory.initial_rate);
  }

  SECTION("without stopbands and covariance updates it tracks the waveform-only optimizer") {
    const SystemConfig cfg = small_config(4, 8, 4, 8, 3, 10.0);
    const ChannelSet ch = generate_channels(cfg, 5);
    JointParams prm;
    prm.optimize_covariance = false;
    prm.outer.max_outer = 20;
    const P2Result a = optimize_p2(cfg, ch, StopbandSpec{}, prm, legacy_filterbank(cfg));
    const P1Result b = optimize_p1(cfg, ch, prm.outer, legacy_filterbank(cfg));
    CHECK_THAT(a.trajectory.final_rate(), WithinRel(b.trajectory.final_rate(), 0.05));
  }

  SECTION("infeasible start is rejected") {
    const SystemConfig cfg = preset_config("desk");
    JointParams prm;
    CHECK_THROWS_AS(optimize_p2(cfg, generate_channels(cfg, 1), stopband_preset(cfg), prm, legacy_filterbank(cfg)),
                    std::invalid_argument);
  }
}
