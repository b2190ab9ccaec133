// SPDX-License-Identifier: Apache-2.0
//
// Batch experiment runner. Exit codes: 0 success, 2 configuration error,
// 3 numerical failure (including failed cells or a failed audit).

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpfbma/scenario.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw cpfbma::ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw cpfbma::ConfigError(path + ": " + e.what());
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::istringstream ts(tok);
    T v{};
    if (!(ts >> v) || !ts.eof()) throw cpfbma::ConfigError(std::string("invalid ") + what + ": '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Filter bank multiple access waveform experiments"};
  app.set_version_flag("--version", std::string(CPFBMA_VERSION));

  std::string config_path;
  std::string preset = "desk";
  std::string scenario;
  std::string seeds_text = "1";
  std::string out_dir = "out";
  std::string snr_text;
  std::string stopbands_path;
  int threads = 1;
  int max_outer = 50;
  double inner_eps = 1.0;
  int ber_trials = 20;

  app.add_option("--config", config_path, "System config JSON (overrides --preset)")->check(CLI::ExistingFile);
  app.add_option("--preset", preset, "Built-in config")->check(CLI::IsMember({"paper", "desk"}));
  app.add_option("--scenario", scenario, "Scenario name")->required()->check(CLI::IsMember(cpfbma::scenario_names()));
  app.add_option("--seeds", seeds_text, "Comma-separated seeds");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--snr-grid", snr_text, "Comma-separated SNR points in dB (ascending)");
  app.add_option("--stopbands", stopbands_path, "Stopband JSON for the joint scenario")->check(CLI::ExistingFile);
  app.add_option("--max-outer", max_outer, "Outer sweep cap")->check(CLI::PositiveNumber);
  app.add_option("--inner-eps", inner_eps, "Inner stop threshold on the squared gradient norm")->check(CLI::PositiveNumber);
  app.add_option("--ber-trials", ber_trials, "Monte-Carlo blocks per SNR point")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    cpfbma::Scenario s;
    s.name = scenario;
    s.config = config_path.empty() ? cpfbma::preset_config(preset) : cpfbma::config_from_json(read_json(config_path));
    s.seeds = parse_list<std::uint64_t>(seeds_text, "seed list");
    s.snr_grid_db = parse_list<double>(snr_text, "snr grid");
    if (!stopbands_path.empty()) s.stopbands = cpfbma::stopbands_from_json(read_json(stopbands_path));
    s.output_dir = out_dir;
    s.threads = threads;
    s.params.max_outer = max_outer;
    s.params.inner_eps = inner_eps;
    s.ber_trials = ber_trials;

    const cpfbma::RunManifest man = cpfbma::run_scenario(s);
    for (const auto& o : man.outputs) std::cout << (s.output_dir / o.path).string() << " (" << o.rows << " rows)\n";
    std::cout << (s.output_dir / "manifest.json").string() << "\n";
    for (const auto& f : man.failed_cells) std::cerr << "failed cell " << f << "\n";
    if (!man.audit_passed) std::cerr << "equivalence audit failed\n";
    return man.ok() ? 0 : kExitNumerical;
  } catch (const cpfbma::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cpfbma::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}
