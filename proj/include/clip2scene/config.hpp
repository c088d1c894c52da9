#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "clip2scene/error.hpp"
#include "clip2scene/eval.hpp"
#include "clip2scene/synth.hpp"
#include "clip2scene/trainer.hpp"

namespace clip2scene {

/// Everything a run can be configured with. Defaults follow the reference
/// setup: tau 0.5, lambda 1, 3 sweeps, 20 epochs, switching after epoch 10.
struct Settings {
  SceneConfig scene;
  int scene_count = 16;  // scenes generated by `gen` / used for training
  int holdout_count = 4; // held-out evaluation scenes
  std::uint64_t holdout_seed_offset = 1000;
  TrainConfig train;
  ProbeConfig probe;

  void set_seed(std::uint64_t seed) {
    scene.seed = seed;
    train.seed = seed;
    probe.seed = seed;
  }
};

namespace detail {

inline std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string &key, const std::string &v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (...) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

inline long long to_int(const std::string &key, const std::string &v) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used == v.size()) return n;
  } catch (...) {
  }
  throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
}

inline bool to_bool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

} // namespace detail

/// Flat `key = value` text; '#' starts a comment. Later keys win.
inline std::map<std::string, std::string> parse_key_values(const std::string &text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": missing '='");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out[key] = value;
  }
  return out;
}

inline void apply_settings(Settings &s, const std::map<std::string, std::string> &kv) {
  using detail::to_bool;
  using detail::to_double;
  using detail::to_int;
  using Setter = std::function<void(const std::string &, const std::string &)>;
  auto dbl = [](double &field) -> Setter {
    return [&field](const std::string &k, const std::string &v) { field = to_double(k, v); };
  };
  auto integer = [](int &field) -> Setter {
    return [&field](const std::string &k, const std::string &v) {
      field = static_cast<int>(to_int(k, v));
    };
  };
  auto u64 = [](std::uint64_t &field) -> Setter {
    return [&field](const std::string &k, const std::string &v) {
      const long long n = to_int(k, v);
      if (n < 0) throw ConfigError("config key '" + k + "' must be >= 0");
      field = static_cast<std::uint64_t>(n);
    };
  };
  auto flag = [](bool &field) -> Setter {
    return [&field](const std::string &k, const std::string &v) { field = to_bool(k, v); };
  };

  const std::map<std::string, Setter> setters = {
      {"scene.seed", u64(s.scene.seed)},
      {"scene.classes", integer(s.scene.num_classes)},
      {"scene.feature_dim", integer(s.scene.feature_dim)},
      {"scene.width", integer(s.scene.width)},
      {"scene.height", integer(s.scene.height)},
      {"scene.sweeps", integer(s.scene.sweeps)},
      {"scene.window", dbl(s.scene.window_seconds)},
      {"scene.ego_translation", dbl(s.scene.ego_translation)},
      {"scene.ego_yaw", dbl(s.scene.ego_yaw)},
      {"scene.feature_noise", dbl(s.scene.feature_noise_sigma)},
      {"scene.label_noise_rate", dbl(s.scene.label_noise_rate)},
      {"scene.calib_rot_error", dbl(s.scene.calib_rot_error)},
      {"scene.calib_trans_error", dbl(s.scene.calib_trans_error)},
      {"scene.bank_seed", u64(s.scene.bank_seed)},
      {"scene.prompts", integer(s.scene.prompt_count)},
      {"scene.prompt_noise", dbl(s.scene.prompt_noise_sigma)},
      {"scene.points_per_class", integer(s.scene.points_per_class)},
      {"scene.boxes_per_class", integer(s.scene.boxes_per_class)},
      {"scene.range", dbl(s.scene.scene_range)},
      {"scene.count", integer(s.scene_count)},
      {"scene.holdout", integer(s.holdout_count)},
      {"loss.tau", dbl(s.train.loss.tau)},
      {"loss.lambda", dbl(s.train.loss.lambda)},
      {"loss.include_positives", flag(s.train.loss.include_positives_in_denominator)},
      {"loss.stop_gradient", flag(s.train.loss.stop_gradient_through_fusion)},
      {"train.epochs", integer(s.train.epochs)},
      {"train.switch_epoch", integer(s.train.switching.switch_epoch)},
      {"train.switch_prob", dbl(s.train.switching.switch_prob)},
      {"train.switch_per_entry", flag(s.train.switching.per_entry)},
      {"train.w_s", dbl(s.train.w_s)},
      {"train.w_t", dbl(s.train.w_t)},
      {"train.seed", u64(s.train.seed)},
      {"train.lr", dbl(s.train.lr)},
      {"train.momentum", dbl(s.train.momentum)},
      {"train.rotation_range", dbl(s.train.augment.rotation_range)},
      {"train.flip_x", flag(s.train.augment.flip_x)},
      {"train.flip_y", flag(s.train.augment.flip_y)},
      {"train.flip_z", flag(s.train.augment.flip_z)},
      {"train.cell_size", dbl(s.train.cell_size)},
      {"train.scr_all_sweeps", flag(s.train.scr_all_sweeps)},
      {"train.max_pairs",
       [&s](const std::string &k, const std::string &v) {
         const long long n = to_int(k, v);
         if (n < 0) throw ConfigError("train.max_pairs must be >= 0");
         s.train.max_pairs = static_cast<std::size_t>(n);
       }},
      {"model.hidden", integer(s.train.hidden)},
      {"probe.fraction", dbl(s.probe.fraction)},
      {"probe.epochs", integer(s.probe.epochs)},
      {"probe.lr", dbl(s.probe.lr)},
      {"probe.momentum", dbl(s.probe.momentum)},
      {"probe.seed", u64(s.probe.seed)},
      {"eval.miou_convention",
       [&s](const std::string &k, const std::string &v) {
         if (v == "present")
           s.probe.convention = MeanConvention::GroundTruthPresent;
         else if (v == "union")
           s.probe.convention = MeanConvention::UnionNonEmpty;
         else
           throw ConfigError("config key '" + k + "': expected 'present' or 'union'");
       }},
  };
  for (const auto &[key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, value);
  }
}

inline Settings load_settings(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  Settings s;
  apply_settings(s, parse_key_values(buf.str()));
  return s;
}

} // namespace clip2scene
