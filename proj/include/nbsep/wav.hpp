// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <string>

#include "nbsep/audio.hpp"

namespace nbsep {

/// Writes RIFF/WAVE with 32-bit IEEE float samples (format tag 3),
/// channels interleaved. Values are stored as float; the round trip is exact
/// for data that is already float-representable.
void write_wav(const std::string& path, const Waveform& wave);

/// Reads 16-bit PCM or 32-bit float RIFF/WAVE (WAVE_FORMAT_EXTENSIBLE with
/// those subformats is accepted too). Anything else raises DataError.
Waveform read_wav(const std::string& path);

}  // namespace nbsep
