// Copyright (c) 2026 The redimnet-cpp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "redimnet/common.hpp"

namespace redimnet {

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] |
                                    (static_cast<std::uint16_t>(p[1]) << 8));
}
inline void append_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}
inline void append_u16le(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

}  // namespace detail

// Reads a RIFF/WAVE file. Accepts PCM 16-bit signed little-endian or IEEE
// 32-bit float, mono, 16 kHz; anything else is rejected explicitly rather
// than silently resampled or downmixed.
inline Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open WAV file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) -> void {
    throw InputError(path + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t chunk_len = detail::read_u32le(hdr + 4);
    const unsigned char* body = hdr + 8;
    if (pos + 8 + chunk_len > bytes.size()) fail("truncated chunk");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) fail("fmt chunk too short");
      format = detail::read_u16le(body);
      channels = detail::read_u16le(body + 2);
      rate = detail::read_u32le(body + 4);
      bits = detail::read_u16le(body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  if (!have_fmt || data == nullptr) fail("missing fmt or data chunk");
  if (channels != 1)
    fail("expected mono audio, got " + std::to_string(channels) + " channels");
  if (rate != 16000)
    fail("expected 16000 Hz sample rate, got " + std::to_string(rate) + " Hz");

  Waveform wave;
  wave.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const std::size_t n = data_len / 2;
    wave.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::int16_t v = static_cast<std::int16_t>(
          detail::read_u16le(data + 2 * i));
      wave.samples[i] = static_cast<float>(v) / 32768.0f;
    }
  } else if (format == 3 && bits == 32) {
    const std::size_t n = data_len / 4;
    wave.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t u = detail::read_u32le(data + 4 * i);
      float f;
      std::memcpy(&f, &u, 4);
      wave.samples[i] = f;
    }
  } else {
    fail("unsupported encoding (format " + std::to_string(format) + ", " +
         std::to_string(bits) + " bits); need PCM s16le or IEEE f32");
  }
  return wave;
}

// Writes mono WAV; bits must be 16 (PCM s16le) or 32 (IEEE f32).
inline void write_wav(const std::string& path, const Waveform& wave,
                      int bits = 16) {
  if (bits != 16 && bits != 32)
    throw UsageError("write_wav: bits must be 16 or 32");
  const std::uint32_t n = static_cast<std::uint32_t>(wave.samples.size());
  const std::uint32_t bytes_per = bits == 16 ? 2 : 4;
  const std::uint32_t data_len = n * bytes_per;
  std::vector<unsigned char> out;
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::append_u32le(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  detail::append_u32le(out, 16);
  detail::append_u16le(out, bits == 16 ? 1 : 3);  // PCM or IEEE float
  detail::append_u16le(out, 1);                   // mono
  detail::append_u32le(out, static_cast<std::uint32_t>(wave.sample_rate));
  detail::append_u32le(out,
                       static_cast<std::uint32_t>(wave.sample_rate) * bytes_per);
  detail::append_u16le(out, static_cast<std::uint16_t>(bytes_per));
  detail::append_u16le(out, static_cast<std::uint16_t>(bits));
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::append_u32le(out, data_len);
  for (float v : wave.samples) {
    if (bits == 16) {
      float scaled = v * 32768.0f;
      scaled = std::min(32767.0f, std::max(-32768.0f, scaled));
      const std::int16_t q =
          static_cast<std::int16_t>(std::lround(scaled));
      detail::append_u16le(out, static_cast<std::uint16_t>(q));
    } else {
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      detail::append_u32le(out, u);
    }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(out.data()),
           static_cast<std::streamsize>(out.size()));
  if (!os) throw InputError("short write: " + path);
}

}  // namespace redimnet
