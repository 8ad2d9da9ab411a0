// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// The `nbsep` command line. Exit codes: 0 success, 1 usage error, 2 data
// error, 3 numeric failure.
#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace nbsep {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Training diverged or a gradient check failed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs one command. `args` excludes the program name. Results go to `out`;
/// the effective configuration, progress and errors go to `log`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& log);

/// Writes a row-major matrix as a binary PPM heatmap. Values are mapped
/// linearly from [0, max_value] onto a fixed colormap; larger ones saturate.
void write_heatmap(const std::string& path, const std::vector<double>& values,
                   std::size_t rows, std::size_t cols, double max_value);

}  // namespace nbsep
