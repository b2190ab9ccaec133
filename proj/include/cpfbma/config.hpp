// SPDX-License-Identifier: Apache-2.0
//
// System configuration for the CP-FBMA uplink and its JSON form.

#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cpfbma {

/// Invalid user-supplied configuration. Callers map it to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// ⌈(N_f + L_h - 1) / P⌉: the shortest CP, in symbols, that covers filter plus channel.
inline int cp_length(int filter_len, int channel_len, int upsample) {
  if (filter_len < 1 || channel_len < 1 || upsample < 1)
    throw std::invalid_argument("cp_length: all arguments must be >= 1");
  return (filter_len + channel_len - 1 + upsample - 1) / upsample;
}

/// N log2(K) / (N + L_g) in bits/s/Hz.
inline double spectral_efficiency(int block_len, int cp_len, int qam_order) {
  if (block_len < 1 || cp_len < 0 || qam_order < 2)
    throw std::invalid_argument("spectral_efficiency: invalid arguments");
  return block_len * std::log2(static_cast<double>(qam_order)) / (block_len + cp_len);
}

struct SystemConfig {
  int num_users = 8;    // M
  int block_len = 48;   // N, symbols per subband block
  int upsample = 8;     // P
  int filter_len = 32;  // N_f
  int channel_len = 10; // L_h
  double noise_power = 0.1;                // N0 (linear)
  std::vector<double> user_power{std::vector<double>(8, 1.0)};  // P_m (linear)
  int qam_order = 16;   // K
  std::uint64_t seed = 1;

  int np() const { return block_len * upsample; }
  int cp_len() const { return cp_length(filter_len, channel_len, upsample); }
  /// 1/((N + L_g) P), the factor turning log2 det into bits/s/Hz.
  double rate_prefactor() const { return 1.0 / (static_cast<double>(block_len + cp_len()) * upsample); }

  /// Sets every user to unit power and N0 so that P_m / N0 equals `snr_db`.
  void set_snr_db(double snr_db) {
    user_power.assign(static_cast<std::size_t>(num_users), 1.0);
    noise_power = std::pow(10.0, -snr_db / 10.0);
  }

  /// Throws ConfigError naming the first violated invariant.
  void validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
    if (num_users < 1) fail("num_users >= 1");
    if (block_len < 1) fail("block_len >= 1");
    if (upsample < 1) fail("upsample >= 1");
    if (upsample > num_users) fail("upsample <= num_users (P <= M)");
    if (filter_len < 1) fail("filter_len >= 1");
    if (channel_len < 1) fail("channel_len >= 1");
    if (filter_len % upsample != 0) fail("filter_len is a multiple of upsample (N_f = 0 mod P)");
    if (filter_len > np()) fail("filter_len <= block_len * upsample");
    if (!(noise_power > 0.0) || !std::isfinite(noise_power)) fail("noise_power > 0");
    if (user_power.size() != static_cast<std::size_t>(num_users)) fail("user_power has num_users entries");
    for (double p : user_power)
      if (!(p > 0.0) || !std::isfinite(p)) fail("user_power entries > 0");
    if (qam_order != 4 && qam_order != 16 && qam_order != 64) fail("qam_order in {4, 16, 64}");
    if (cp_len() * upsample < filter_len + channel_len - 1) fail("cp covers filter and channel");
  }
};

inline nlohmann::json to_json(const SystemConfig& c) {
  return nlohmann::json{{"num_users", c.num_users},       {"block_len", c.block_len},
                        {"upsample", c.upsample},         {"filter_len", c.filter_len},
                        {"channel_len", c.channel_len},   {"noise_power", c.noise_power},
                        {"user_power", c.user_power},     {"qam_order", c.qam_order},
                        {"seed", c.seed}};
}

/// Parses the flat JSON object. Unknown keys are rejected; missing keys keep
/// their defaults. `user_power` may be a scalar (broadcast) or an array of M values.
inline SystemConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"num_users",   "block_len",   "upsample",
                                           "filter_len",  "channel_len", "noise_power",
                                           "user_power",  "qam_order",   "seed"};
  if (!j.is_object()) throw ConfigError("invalid config: top level must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("invalid config: unknown key '" + key + "'");
  }
  SystemConfig c;
  try {
    if (j.contains("num_users")) c.num_users = j.at("num_users").get<int>();
    if (j.contains("block_len")) c.block_len = j.at("block_len").get<int>();
    if (j.contains("upsample")) c.upsample = j.at("upsample").get<int>();
    if (j.contains("filter_len")) c.filter_len = j.at("filter_len").get<int>();
    if (j.contains("channel_len")) c.channel_len = j.at("channel_len").get<int>();
    if (j.contains("noise_power")) c.noise_power = j.at("noise_power").get<double>();
    if (j.contains("qam_order")) c.qam_order = j.at("qam_order").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("user_power")) {
      const auto& p = j.at("user_power");
      if (p.is_number()) {
        c.user_power.assign(static_cast<std::size_t>(c.num_users), p.get<double>());
      } else {
        c.user_power = p.get<std::vector<double>>();
      }
    } else {
      c.user_power.assign(static_cast<std::size_t>(c.num_users), 1.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Shipped presets: "paper" is the full experiment scale, "desk" a reduced one.
inline SystemConfig preset_config(const std::string& name) {
  SystemConfig c;
  if (name == "paper") {
    c.num_users = 8;
    c.block_len = 48;
    c.upsample = 8;
    c.filter_len = 32;
    c.channel_len = 10;
  } else if (name == "desk") {
    c.num_users = 4;
    c.block_len = 16;
    c.upsample = 4;
    c.filter_len = 16;
    c.channel_len = 4;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected paper|desk)");
  }
  c.qam_order = 16;
  c.seed = 1;
  c.set_snr_db(10.0);
  c.validate();
  return c;
}

}  // namespace cpfbma
