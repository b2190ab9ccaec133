// SPDX-License-Identifier: Apache-2.0
//
// Batch experiment runner: scenario cells (seed x SNR x variant) run on a
// small worker pool, results are merged by cell index and written as CSV
// tables plus a JSON manifest.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cpfbma/config.hpp"
#include "cpfbma/joint_opt.hpp"
#include "cpfbma/manifold_opt.hpp"
#include "cpfbma/model.hpp"
#include "cpfbma/receiver.hpp"

#ifndef CPFBMA_VERSION
#define CPFBMA_VERSION "unknown"
#endif

namespace cpfbma {

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"convergence",           "rate_vs_snr", "filter_length_sweep",
                                              "upsample_sweep",        "joint_vs_waveform_only",
                                              "ber_curve",             "equivalence_audit"};
  return names;
}

struct Scenario {
  std::string name;
  SystemConfig config;
  std::vector<std::uint64_t> seeds{1};
  std::vector<double> snr_grid_db;          // empty: scenario default
  std::optional<StopbandSpec> stopbands;    // empty: shipped preset
  std::filesystem::path output_dir{"out"};
  int threads = 1;
  OptimizerParams params;
  int ber_trials = 20;

  void validate() const {
    if (std::find(scenario_names().begin(), scenario_names().end(), name) == scenario_names().end())
      throw ConfigError("unknown scenario '" + name + "'");
    config.validate();
    if (seeds.empty()) throw ConfigError("invalid scenario: seeds must be non-empty");
    if (!std::is_sorted(snr_grid_db.begin(), snr_grid_db.end()))
      throw ConfigError("invalid scenario: snr grid must be sorted ascending");
    if (threads < 1) throw ConfigError("invalid scenario: threads must be >= 1");
    if (ber_trials < 1) throw ConfigError("invalid scenario: ber trials must be >= 1");
  }
};

struct OutputFile {
  std::string path;
  std::size_t rows = 0;
};

struct RunManifest {
  std::string version = CPFBMA_VERSION;
  std::string scenario;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::vector<double> snr_grid_db;
  std::vector<OutputFile> outputs;
  std::vector<std::string> failed_cells;
  std::vector<std::pair<std::string, double>> wall_seconds;  // per cell
  double total_seconds = 0.0;
  bool audit_passed = true;

  bool ok() const { return failed_cells.empty() && audit_passed; }

  nlohmann::json to_json() const {
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& o : outputs) outs.push_back({{"path", o.path}, {"rows", o.rows}});
    nlohmann::json walls = nlohmann::json::object();
    for (const auto& [cell, s] : wall_seconds) walls[cell] = s;
    return {{"version", version},         {"scenario", scenario},     {"config", config},
            {"seeds", seeds},             {"snr_grid_db", snr_grid_db}, {"outputs", outs},
            {"failed_cells", failed_cells}, {"audit_passed", audit_passed},
            {"wall_seconds", walls},      {"total_seconds", total_seconds}};
  }
};

// ---------------------------------------------------------------------------
// CSV helpers

inline std::string fmt_num(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw std::logic_error("CsvTable: row width differs from header");
    rows_.push_back(std::move(row));
  }
  std::size_t rows() const { return rows_.size(); }

  void write(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    auto line = [&os](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
      os << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// |F[k]| in dB relative to the spectral peak, one entry per bin of the NP-point DFT.
inline std::vector<double> waveform_spectrum_db(const ComplexVector& f, int block_len, int upsample) {
  const ComplexVector spec = filter_dft(f, block_len, upsample);
  const double peak = spec.cwiseAbs().maxCoeff();
  if (!(peak > 0.0)) throw std::invalid_argument("emit_waveform_spectrum: zero filter");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(spec.size()));
  for (Index k = 0; k < spec.size(); ++k) {
    const double mag = std::abs(spec[k]) / peak;
    out.push_back(mag > 0.0 ? 20.0 * std::log10(mag) : -400.0);
  }
  return out;
}

/// NP rows of (bin, magnitude_db), peak at 0 dB.
inline CsvTable emit_waveform_spectrum(const ComplexVector& f, int block_len, int upsample) {
  const auto db = waveform_spectrum_db(f, block_len, upsample);
  CsvTable t({"bin", "magnitude_db"});
  for (std::size_t k = 0; k < db.size(); ++k) t.add({std::to_string(k), fmt_num(db[k])});
  return t;
}

// ---------------------------------------------------------------------------
// Worker pool

/// Runs fn(i) for i in [0, count) on `threads` workers. Returns the error text
/// of each failed cell (empty string when it succeeded).
inline std::vector<std::string> run_cells(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::string> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (errors[i].empty()) errors[i] = "error";
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return errors;
}

// ---------------------------------------------------------------------------
// Scenarios

namespace detail {

inline std::vector<double> default_grid(const std::string& name) {
  if (name == "rate_vs_snr") return {0, 5, 10, 15, 20, 25, 30};
  if (name == "filter_length_sweep") return {10, 15};
  if (name == "upsample_sweep") return {15};
  if (name == "joint_vs_waveform_only") return {5, 15, 25};
  if (name == "ber_curve") return {0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
  return {};
}

inline double snr_of(const SystemConfig& c) {
  return 10.0 * std::log10(c.user_power.front() / c.noise_power);
}

struct RatePair {
  double legacy = 0.0;
  double optimized = 0.0;
};

inline RatePair legacy_vs_optimized(const SystemConfig& cfg, std::uint64_t seed, const OptimizerParams& prm) {
  const ChannelSet ch = generate_channels(cfg, seed);
  const FilterBank legacy = legacy_filterbank(cfg);
  const P1Result r = optimize_p1(cfg, ch, prm, legacy);
  return {sum_rate_fast(cfg, ch, legacy, identity_covariances(cfg)), r.trajectory.final_rate()};
}

inline std::string seed_str(std::uint64_t s) { return std::to_string(s); }

}  // namespace detail

/// Executes one scenario and writes its tables and manifest.json under
/// s.output_dir. Cell failures are recorded in the manifest, not thrown.
inline RunManifest run_scenario(const Scenario& s) {
  s.validate();
  const auto t_start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(s.output_dir);
  RunManifest man;
  man.scenario = s.name;
  man.config = to_json(s.config);
  man.seeds = s.seeds;
  man.snr_grid_db = s.snr_grid_db.empty() ? detail::default_grid(s.name) : s.snr_grid_db;
  const auto& grid = man.snr_grid_db;
  const SystemConfig base = s.config;
  const int users = base.num_users;

  std::vector<std::string> cell_names;
  std::vector<double> cell_walls;
  auto run = [&](std::size_t count, const std::function<std::string(std::size_t)>& name,
                 const std::function<void(std::size_t)>& fn) {
    cell_names.assign(count, "");
    cell_walls.assign(count, 0.0);
    for (std::size_t i = 0; i < count; ++i) cell_names[i] = name(i);
    const auto errs = run_cells(count, s.threads, [&](std::size_t i) {
      const auto t0 = std::chrono::steady_clock::now();
      fn(i);
      cell_walls[i] = detail::seconds_since(t0);
    });
    for (std::size_t i = 0; i < count; ++i) {
      man.wall_seconds.emplace_back(cell_names[i], cell_walls[i]);
      if (!errs[i].empty()) man.failed_cells.push_back(cell_names[i] + ": " + errs[i]);
    }
    return errs;
  };
  auto save = [&](const CsvTable& t, const std::string& file) {
    t.write(s.output_dir / file);
    man.outputs.push_back({file, t.rows()});
  };

  if (s.name == "convergence") {
    const std::size_t n = s.seeds.size();
    std::vector<P1Result> res(n);
    std::vector<FilterBank> legacy(n);
    run(n, [&](std::size_t i) { return "seed=" + detail::seed_str(s.seeds[i]); },
        [&](std::size_t i) {
          const ChannelSet ch = generate_channels(base, s.seeds[i]);
          legacy[i] = legacy_filterbank(base);
          res[i] = optimize_p1(base, ch, s.params, legacy[i]);
        });
    std::vector<std::string> hdr{"seed", "outer_iter", "sum_rate"};
    for (int m = 1; m <= users; ++m) hdr.push_back("per_user_rate_" + std::to_string(m));
    hdr.insert(hdr.end(), {"inner_iters", "grad_norm"});
    CsvTable traj(hdr);
    CsvTable init({"seed", "initial_rate", "final_rate", "sweeps", "converged"});
    for (std::size_t i = 0; i < n; ++i) {
      if (res[i].filters.size() == 0) continue;
      const auto& t = res[i].trajectory;
      for (const auto& r : t.sweeps) {
        std::vector<std::string> row{detail::seed_str(s.seeds[i]), std::to_string(r.sweep), fmt_num(r.sum_rate)};
        for (double u : r.user_rates) row.push_back(fmt_num(u));
        row.push_back(std::to_string(r.inner_iters));
        row.push_back(fmt_num(r.grad_norm));
        traj.add(std::move(row));
      }
      init.add({detail::seed_str(s.seeds[i]), fmt_num(t.initial_rate), fmt_num(t.final_rate()),
                std::to_string(t.sweeps.size()), t.converged ? "1" : "0"});
    }
    save(traj, "convergence.csv");
    save(init, "convergence_summary.csv");
    if (!res.empty() && res[0].filters.size() > 0) {
      CsvTable wf({"bin", "legacy_user_1", "legacy_user_2", "optimized_user_1", "optimized_user_2"});
      const int u1 = 0;
      const int u2 = std::min(1, users - 1);
      const auto l1 = waveform_spectrum_db(legacy[0].coeffs[static_cast<std::size_t>(u1)], base.block_len, base.upsample);
      const auto l2 = waveform_spectrum_db(legacy[0].coeffs[static_cast<std::size_t>(u2)], base.block_len, base.upsample);
      const auto o1 = waveform_spectrum_db(res[0].filters.coeffs[static_cast<std::size_t>(u1)], base.block_len, base.upsample);
      const auto o2 = waveform_spectrum_db(res[0].filters.coeffs[static_cast<std::size_t>(u2)], base.block_len, base.upsample);
      for (std::size_t k = 0; k < l1.size(); ++k)
        wf.add({std::to_string(k), fmt_num(l1[k]), fmt_num(l2[k]), fmt_num(o1[k]), fmt_num(o2[k])});
      save(wf, "waveforms.csv");
    }
  } else if (s.name == "rate_vs_snr") {
    const std::size_t ns = s.seeds.size();
    const std::size_t count = ns * grid.size();
    std::vector<detail::RatePair> out(count);
    run(count,
        [&](std::size_t i) { return "seed=" + detail::seed_str(s.seeds[i / grid.size()]) + ",snr=" + fmt_num(grid[i % grid.size()]); },
        [&](std::size_t i) {
          SystemConfig c = base;
          c.set_snr_db(grid[i % grid.size()]);
          out[i] = detail::legacy_vs_optimized(c, s.seeds[i / grid.size()], s.params);
        });
    CsvTable t({"seed", "snr_db", "legacy", "optimized"});
    for (std::size_t i = 0; i < count; ++i)
      t.add({detail::seed_str(s.seeds[i / grid.size()]), fmt_num(grid[i % grid.size()]), fmt_num(out[i].legacy),
             fmt_num(out[i].optimized)});
    save(t, "rate_vs_snr.csv");
  } else if (s.name == "filter_length_sweep" || s.name == "upsample_sweep") {
    const bool by_len = s.name == "filter_length_sweep";
    std::vector<int> values;
    if (by_len) {
      for (int nf : {16, 32, 48})
        if (nf % base.upsample == 0 && nf <= base.np()) values.push_back(nf);
    } else {
      for (int div : {1, 2, 4})
        if (users % div == 0 && base.filter_len % (users / div) == 0) values.push_back(users / div);
    }
    if (values.empty()) throw ConfigError("invalid scenario: no valid sweep values for this config");
    const std::size_t nv = values.size();
    const std::size_t ng = grid.size();
    const std::size_t count = s.seeds.size() * ng * nv;
    std::vector<detail::RatePair> out(count);
    auto idx = [&](std::size_t i) { return std::tuple{i / (ng * nv), (i / nv) % ng, i % nv}; };
    run(count,
        [&](std::size_t i) {
          const auto [si, gi, vi] = idx(i);
          return "seed=" + detail::seed_str(s.seeds[si]) + ",snr=" + fmt_num(grid[gi]) + (by_len ? ",filter_len=" : ",upsample=") +
                 std::to_string(values[vi]);
        },
        [&](std::size_t i) {
          const auto [si, gi, vi] = idx(i);
          SystemConfig c = base;
          if (by_len) c.filter_len = values[vi];
          else c.upsample = values[vi];
          c.set_snr_db(grid[gi]);
          c.validate();
          out[i] = detail::legacy_vs_optimized(c, s.seeds[si], s.params);
        });
    CsvTable t({"seed", "snr_db", by_len ? "filter_len" : "upsample", "legacy", "optimized"});
    for (std::size_t i = 0; i < count; ++i) {
      const auto [si, gi, vi] = idx(i);
      t.add({detail::seed_str(s.seeds[si]), fmt_num(grid[gi]), std::to_string(values[vi]), fmt_num(out[i].legacy),
             fmt_num(out[i].optimized)});
    }
    save(t, s.name + ".csv");
  } else if (s.name == "joint_vs_waveform_only") {
    const StopbandSpec spec = s.stopbands ? *s.stopbands : stopband_preset(base);
    spec.validate(users, base.np());
    const std::size_t ng = grid.size();
    const std::size_t count = s.seeds.size() * ng;
    struct Row {
      double baseline = 0, waveform = 0, joint = 0, viol = 0;
      RateTrajectory waveform_traj, joint_traj;
    };
    std::vector<Row> out(count);
    run(count,
        [&](std::size_t i) { return "seed=" + detail::seed_str(s.seeds[i / ng]) + ",snr=" + fmt_num(grid[i % ng]); },
        [&](std::size_t i) {
          SystemConfig c = base;
          c.set_snr_db(grid[i % ng]);
          const ChannelSet ch = generate_channels(c, s.seeds[i / ng]);
          const FilterBank init = stopband_baseline(c, spec);
          JointParams jp;
          jp.outer = s.params;
          jp.optimize_covariance = false;
          const P2Result w = optimize_p2(c, ch, spec, jp, init);
          jp.optimize_covariance = true;
          const P2Result j = optimize_p2(c, ch, spec, jp, init);
          double viol = 0.0;
          for (int m = 0; m < users; ++m) {
            const UserStopbands us = build_user_stopbands(spec, m, c);
            viol = std::max({viol, us.worst_violation(w.filters.coeffs[static_cast<std::size_t>(m)]),
                             us.worst_violation(j.filters.coeffs[static_cast<std::size_t>(m)])});
          }
          out[i] = {sum_rate_fast(c, ch, init, identity_covariances(c)), w.trajectory.final_rate(),
                    j.trajectory.final_rate(), viol, w.trajectory, j.trajectory};
        });
    CsvTable t({"seed", "snr_db", "baseline", "waveform_only", "joint", "stopband_viol_max"});
    for (std::size_t i = 0; i < count; ++i)
      t.add({detail::seed_str(s.seeds[i / ng]), fmt_num(grid[i % ng]), fmt_num(out[i].baseline),
             fmt_num(out[i].waveform), fmt_num(out[i].joint), fmt_num(out[i].viol)});
    save(t, "joint_vs_waveform_only.csv");
    std::vector<std::string> hdr{"seed", "snr_db", "method", "outer_iter", "sum_rate"};
    for (int m = 1; m <= users; ++m) hdr.push_back("per_user_rate_" + std::to_string(m));
    hdr.insert(hdr.end(), {"inner_iters", "grad_norm", "stopband_viol_max", "sdp_gap", "rank1_leak"});
    CsvTable traj(hdr);
    for (std::size_t i = 0; i < count; ++i) {
      for (const auto* tr : {&out[i].waveform_traj, &out[i].joint_traj}) {
        const char* method = tr == &out[i].joint_traj ? "joint" : "waveform_only";
        for (const auto& r : tr->sweeps) {
          std::vector<std::string> row{detail::seed_str(s.seeds[i / ng]), fmt_num(grid[i % ng]), method,
                                       std::to_string(r.sweep), fmt_num(r.sum_rate)};
          for (double u : r.user_rates) row.push_back(fmt_num(u));
          row.insert(row.end(), {std::to_string(r.inner_iters), fmt_num(r.grad_norm), fmt_num(r.stopband_viol_max),
                                 fmt_num(r.sdp_gap), fmt_num(r.rank1_leak)});
          traj.add(std::move(row));
        }
      }
    }
    save(traj, "joint_trajectory.csv");
  } else if (s.name == "ber_curve") {
    const std::size_t count = s.seeds.size() * 2;
    std::vector<std::vector<BerPoint>> out(count);
    const char* methods[] = {"legacy", "optimized"};
    run(count, [&](std::size_t i) { return "seed=" + detail::seed_str(s.seeds[i / 2]) + ",method=" + methods[i % 2]; },
        [&](std::size_t i) {
          const ChannelSet ch = generate_channels(base, s.seeds[i / 2]);
          FilterBank fb = legacy_filterbank(base);
          if (i % 2 == 1) fb = optimize_p1(base, ch, s.params, fb).filters;
          out[i] = ber_monte_carlo(base, ch, fb, identity_covariances(base), grid, s.ber_trials, s.seeds[i / 2]);
        });
    CsvTable t({"seed", "method", "snr_db", "ber", "ci_low", "ci_high", "trials"});
    for (std::size_t i = 0; i < count; ++i)
      for (const auto& p : out[i])
        t.add({detail::seed_str(s.seeds[i / 2]), methods[i % 2], fmt_num(p.snr_db), fmt_num(p.ber), fmt_num(p.ci_low),
               fmt_num(p.ci_high), std::to_string(p.trials)});
    save(t, "ber_curve.csv");
  } else if (s.name == "equivalence_audit") {
    constexpr int kPerSeed = 50;
    const std::size_t count = s.seeds.size() * kPerSeed;
    struct Row {
      int m = 0, n = 0, p = 0, nf = 0, lh = 0;
      double time = 0, freq = 0, gform = 0, fast = 0, bform = 0, err = 0;
    };
    std::vector<Row> out(count);
    run(count, [&](std::size_t i) { return "seed=" + detail::seed_str(s.seeds[i / kPerSeed]) + ",instance=" + std::to_string(i % kPerSeed); },
        [&](std::size_t i) {
          std::mt19937_64 rng(s.seeds[i / kPerSeed] * 1000003ULL + i % kPerSeed);
          auto pick = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
          SystemConfig c;
          c.num_users = pick(1, 4);
          c.upsample = pick(1, std::min(4, c.num_users));
          c.block_len = pick(1, 8);
          c.filter_len = c.upsample * pick(1, std::max(1, std::min(3, c.block_len)));
          c.channel_len = pick(1, 4);
          c.set_snr_db(std::uniform_real_distribution<double>(0.0, 20.0)(rng));
          c.validate();
          const ChannelSet ch = generate_channels(c, rng());
          const FilterBank fb = random_filterbank(c, rng());
          const CovarianceSet cs = identity_covariances(c);
          Row r{c.num_users, c.block_len, c.upsample, c.filter_len, c.channel_len};
          r.time = sum_rate_time(c, ch, fb, cs);
          r.freq = sum_rate_freq(c, ch, fb, cs);
          r.gform = sum_rate_gform(c, ch, fb, cs);
          r.fast = sum_rate_fast(c, ch, fb, cs);
          r.bform = sum_rate_bform(c, ch, fb, cs, c.num_users - 1);
          for (double v : {r.freq, r.gform, r.fast, r.bform})
            r.err = std::max(r.err, std::abs(v - r.time) / std::max(std::abs(r.time), 1e-300));
          out[i] = r;
        });
    CsvTable t({"seed", "instance", "num_users", "block_len", "upsample", "filter_len", "channel_len", "time_form",
                "freq_form", "g_form", "fast_form", "b_form", "max_rel_err", "pass"});
    for (std::size_t i = 0; i < count; ++i) {
      const auto& r = out[i];
      const bool pass = r.err < 1e-8 && r.m > 0;
      if (!pass) man.audit_passed = false;
      t.add({detail::seed_str(s.seeds[i / kPerSeed]), std::to_string(i % kPerSeed), std::to_string(r.m),
             std::to_string(r.n), std::to_string(r.p), std::to_string(r.nf), std::to_string(r.lh), fmt_num(r.time),
             fmt_num(r.freq), fmt_num(r.gform), fmt_num(r.fast), fmt_num(r.bform), fmt_num(r.err), pass ? "1" : "0"});
    }
    save(t, "equivalence_audit.csv");
  }

  man.total_seconds = detail::seconds_since(t_start);
  std::ofstream ms(s.output_dir / "manifest.json");
  ms << man.to_json().dump(2) << '\n';
  return man;
}

}  // namespace cpfbma
