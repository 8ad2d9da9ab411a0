// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/config.hpp"

#include <fstream>
#include <regex>
#include <sstream>

namespace nbsep {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& key) {
  static const std::regex re("(model|train|data|stft)\\.[a-z0-9_]+");
  return std::regex_match(key, re);
}

// Wraps a conversion so a malformed value names its key.
template <typename F>
auto convert(const char* what, F&& f) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("config: invalid ") + what + " value: " + e.what());
  }
}

}  // namespace

ConfigMap parse_config(const std::string& text, const std::string& origin) {
  ConfigMap out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw UsageError(where + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (!valid_key(key)) throw UsageError(where + ": malformed key '" + key + "'");
    if (out.count(key)) throw UsageError(where + ": duplicate key '" + key + "'");
    out[key] = value;
  }
  return out;
}

ConfigMap read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  ConfigMap cfg = parse_config(ss.str(), path);
  check_known_keys(cfg, path);
  return cfg;
}

void apply_override(ConfigMap& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw UsageError("--set expects key=value, got '" + assignment + "'");
  }
  const std::string key = trim(assignment.substr(0, eq));
  ConfigMap one{{key, trim(assignment.substr(eq + 1))}};
  check_known_keys(one, "--set");
  config[key] = one[key];
}

ConfigMap default_config() {
  ConfigMap c;
  for (const auto& kv : ModelConfig::small().to_map()) c.insert(kv);
  for (const auto& kv : TrainConfig{}.to_map()) c.insert(kv);
  DatasetConfig d;
  d.sample_rate = 16000.0;
  d.channels = ModelConfig::small().channels;
  d.count = 20000;
  for (const auto& kv : d.to_map()) c.insert(kv);
  c["stft.window_length"] = "auto";
  return c;
}

void check_known_keys(const ConfigMap& config, const std::string& origin) {
  static const ConfigMap known = default_config();
  for (const auto& [k, v] : config) {
    if (!known.count(k)) throw UsageError(origin + ": unknown configuration key '" + k + "'");
  }
}

std::string format_config(const ConfigMap& config) {
  std::string out;
  for (const auto& [k, v] : config) out += k + " = " + v + "\n";
  return out;
}

ModelConfig model_config(const ConfigMap& config) {
  return convert("model", [&] {
    ModelConfig m = ModelConfig::from_map(config);
    m.validate();
    return m;
  });
}

TrainConfig train_config(const ConfigMap& config) {
  return convert("train", [&] {
    TrainConfig t = TrainConfig::from_map(config);
    t.validate();
    return t;
  });
}

DatasetConfig dataset_config(const ConfigMap& config) {
  return convert("data", [&] {
    DatasetConfig d = DatasetConfig::from_map(config);
    d.validate();
    return d;
  });
}

StftConfig stft_config(const ConfigMap& config) {
  return convert("stft", [&] {
    const auto it = config.find("stft.window_length");
    const double rate = std::stod(config.at("data.sample_rate"));
    if (it == config.end() || it->second == "auto") return StftConfig::for_sample_rate(rate);
    StftConfig s;
    s.window_length = std::stoul(it->second);
    if (s.window_length < 4 || s.window_length % 2) {
      throw UsageError("config: stft.window_length must be even and at least 4");
    }
    return s;
  });
}

}  // namespace nbsep
