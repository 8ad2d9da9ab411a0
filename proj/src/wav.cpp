// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/wav.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace nbsep {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

void put_u16(std::vector<char>& b, std::uint16_t v) {
  b.push_back(char(v & 0xFF));
  b.push_back(char(v >> 8));
}

void put_u32(std::vector<char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<char>& b, const char* tag) { b.insert(b.end(), tag, tag + 4); }

std::uint16_t get_u16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

}  // namespace

void write_wav(const std::string& path, const Waveform& wave) {
  if (wave.channels == 0 || wave.channels > 0xFFFF) {
    throw DataError("wav: cannot write " + std::to_string(wave.channels) +
                    " channels to " + path);
  }
  const std::uint32_t data_bytes = std::uint32_t(wave.data.size() * 4);
  const std::uint32_t rate = std::uint32_t(wave.sample_rate);
  std::vector<char> b;
  b.reserve(44 + data_bytes);
  put_tag(b, "RIFF");
  put_u32(b, 36 + data_bytes);
  put_tag(b, "WAVE");
  put_tag(b, "fmt ");
  put_u32(b, 16);
  put_u16(b, kFormatFloat);
  put_u16(b, std::uint16_t(wave.channels));
  put_u32(b, rate);
  put_u32(b, rate * std::uint32_t(wave.channels) * 4);
  put_u16(b, std::uint16_t(wave.channels * 4));
  put_u16(b, 32);
  put_tag(b, "data");
  put_u32(b, data_bytes);
  for (double v : wave.data) {
    const float f = float(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(b, bits);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("wav: cannot open " + path + " for writing");
  os.write(b.data(), std::streamsize(b.size()));
  if (!os) throw DataError("wav: write failed for " + path);
}

Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("wav: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) -> DataError {
    return DataError("wav: " + path + ": " + why);
  };
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const std::size_t size = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > buf.size()) throw fail("truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw fail("fmt chunk too short");
      format = get_u16(buf.data() + body);
      channels = get_u16(buf.data() + body + 2);
      rate = get_u32(buf.data() + body + 4);
      bits = get_u16(buf.data() + body + 14);
      if (format == kFormatExtensible) {
        if (size < 40) throw fail("extensible fmt chunk too short");
        format = get_u16(buf.data() + body + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = buf.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1);
  }
  if (channels == 0 || rate == 0) throw fail("missing or invalid fmt chunk");
  if (!data) throw fail("missing data chunk");
  const bool is_float = format == kFormatFloat && bits == 32;
  const bool is_i16 = format == kFormatPcm && bits == 16;
  if (!is_float && !is_i16) {
    throw fail("unsupported sample format (tag " + std::to_string(format) + ", " +
               std::to_string(bits) + " bits); expected 16-bit PCM or 32-bit float");
  }
  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);
  Waveform w(double(rate), channels, frames);
  for (std::size_t i = 0; i < frames * channels; ++i) {
    const unsigned char* p = data + i * width;
    if (is_float) {
      const std::uint32_t u = get_u32(p);
      float f;
      std::memcpy(&f, &u, 4);
      w.data[i] = f;
    } else {
      w.data[i] = double(std::int16_t(get_u16(p))) / 32768.0;
    }
  }
  return w;
}

}  // namespace nbsep
