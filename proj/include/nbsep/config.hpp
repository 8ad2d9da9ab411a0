// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Flat key=value configuration.
//
// Grammar, one entry per line (UTF-8):
//   line    := blank | comment | entry
//   comment := optional spaces, '#', anything
//   entry   := key '=' value
//   key     := section '.' name, both [a-z0-9_]+; section is model, train,
//              data or stft
// Spaces around key and value are trimmed; the value runs to the end of the
// line (a '#' inside a value is kept). A key given twice in one file is an
// error. Precedence: defaults < file < --set overrides.
#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "nbsep/network.hpp"
#include "nbsep/simulator.hpp"
#include "nbsep/stft.hpp"
#include "nbsep/trainer.hpp"

namespace nbsep {

using ConfigMap = std::map<std::string, std::string>;

/// Bad command line or configuration (exit code 1).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

ConfigMap parse_config(const std::string& text, const std::string& origin);
ConfigMap read_config_file(const std::string& path);

/// Applies "key=value"; the key must be known.
void apply_override(ConfigMap& config, const std::string& assignment);

/// Every key with its default. Model, optimizer and STFT defaults are the
/// full-scale values (small model, 8 channels, 16 kHz, 32 ms window,
/// lr 1e-3 decaying by 0.99 per epoch, clipping at 5, 2 utterances per batch,
/// 100 epochs).
ConfigMap default_config();

/// Rejects keys that default_config() does not know.
void check_known_keys(const ConfigMap& config, const std::string& origin);

/// "key = value" lines in key order.
std::string format_config(const ConfigMap& config);

ModelConfig model_config(const ConfigMap& config);
TrainConfig train_config(const ConfigMap& config);
DatasetConfig dataset_config(const ConfigMap& config);
/// stft.window_length, where "auto" picks 32 ms at data.sample_rate.
StftConfig stft_config(const ConfigMap& config);

}  // namespace nbsep
