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

#include <cmath>
#include <complex>
#include <vector>

#include "redimnet/tensor.hpp"
#include "redimnet/wav.hpp"

namespace redimnet {

// Mel filter-bank log-energy features: 25 ms frames, 15 ms hop, 512-point
// FFT, 72 mel bands over 20-7600 Hz, per-utterance mean normalization.
struct FeatureConfig {
  int n_mels = 72;
  int frame_len = 400;  // 25 ms at 16 kHz
  int hop = 240;        // 15 ms at 16 kHz
  int n_fft = 512;
  double fmin = 20.0;
  double fmax = 7600.0;
  double log_floor = 1e-10;
  bool mean_normalize = true;
};

inline void validate(const FeatureConfig& cfg, int sample_rate) {
  if (sample_rate != 16000)
    throw InputError("expected 16000 Hz sample rate, got " +
                     std::to_string(sample_rate) + " Hz");
  if (!(cfg.fmin < cfg.fmax) || cfg.fmax > sample_rate / 2.0)
    throw ConfigError("mel band edges must satisfy fmin < fmax <= sr/2");
  if (cfg.n_fft < cfg.frame_len)
    throw ConfigError("n_fft must be >= frame_len");
  if (cfg.n_mels < 1) throw ConfigError("n_mels must be >= 1");
  if (cfg.frame_len < 1 || cfg.hop < 1)
    throw ConfigError("frame_len and hop must be positive");
  if ((cfg.n_fft & (cfg.n_fft - 1)) != 0)
    throw ConfigError("n_fft must be a power of two");
  if (cfg.log_floor <= 0.0) throw ConfigError("log floor must be > 0");
}

// Number of frames for an input of length L (no centering, snip edges).
inline std::int64_t num_frames(std::int64_t length, const FeatureConfig& cfg) {
  if (length < cfg.frame_len)
    throw InputError("waveform too short: " + std::to_string(length) +
                     " samples, need at least " + std::to_string(cfg.frame_len));
  return (length - cfg.frame_len) / cfg.hop + 1;
}

inline double hz_to_mel(double f) {
  return 2595.0 * std::log10(1.0 + f / 700.0);
}
inline double mel_to_hz(double m) {
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

namespace detail {

// Periodic Hann window of length n.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

// In-place iterative radix-2 Cooley-Tukey; a.size() must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace detail

// Power spectrogram, shape (n_fft/2+1, T). Frames are taken from sample 0
// with no centering, windowed, zero-padded to n_fft, and squared.
template <typename T>
Tensor<T> stft_power(const Waveform& wave, const FeatureConfig& cfg) {
  validate(cfg, wave.sample_rate);
  const std::int64_t frames =
      num_frames(static_cast<std::int64_t>(wave.samples.size()), cfg);
  const std::int64_t bins = cfg.n_fft / 2 + 1;
  Tensor<T> out = Tensor<T>::zeros({bins, frames});
  auto od = out.data();
  const auto window = detail::hann_window(cfg.frame_len);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.n_fft));
  for (std::int64_t t = 0; t < frames; ++t) {
    const float* src = wave.samples.data() + t * cfg.hop;
    for (int i = 0; i < cfg.frame_len; ++i)
      buf[static_cast<std::size_t>(i)] = {
          static_cast<double>(src[i]) * window[static_cast<std::size_t>(i)],
          0.0};
    for (int i = cfg.frame_len; i < cfg.n_fft; ++i)
      buf[static_cast<std::size_t>(i)] = {0.0, 0.0};
    detail::fft_radix2(buf);
    for (std::int64_t k = 0; k < bins; ++k)
      od[k * frames + t] = static_cast<T>(std::norm(buf[static_cast<std::size_t>(k)]));
  }
  return out;
}

// Triangular mel filter bank, shape (n_mels, n_fft/2+1). Band centers are
// equally spaced on the mel axis between mel(fmin) and mel(fmax); weights
// are unnormalized triangles evaluated at the FFT bin frequencies.
template <typename T>
Tensor<T> mel_matrix(const FeatureConfig& cfg, int sample_rate = 16000) {
  validate(cfg, sample_rate);
  const std::int64_t bins = cfg.n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] = mel_to_hz(
        mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));
  Tensor<T> out = Tensor<T>::zeros({cfg.n_mels, bins});
  auto od = out.data();
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double fl = edges[static_cast<std::size_t>(m)];
    const double fc = edges[static_cast<std::size_t>(m) + 1];
    const double fr = edges[static_cast<std::size_t>(m) + 2];
    bool nonempty = false;
    for (std::int64_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / cfg.n_fft;
      const double w =
          std::min((f - fl) / (fc - fl), (fr - f) / (fr - fc));
      if (w > 0.0) {
        od[m * bins + k] = static_cast<T>(w);
        nonempty = true;
      }
    }
    if (!nonempty)
      throw ConfigError("mel filter " + std::to_string(m) +
                        " has empty support; reduce n_mels or widen the band");
  }
  return out;
}

// Mean-normalized mel filter-bank log energies, shape (n_mels, T).
template <typename T>
Tensor<T> extract_features(const Waveform& wave, const FeatureConfig& cfg) {
  NoGradGuard ng;
  Tensor<T> power = stft_power<T>(wave, cfg);
  Tensor<T> mel = mel_matrix<T>(cfg, wave.sample_rate);
  Tensor<T> energies = matmul(reshape(mel, {1, cfg.n_mels, power.dim(0)}),
                              reshape(power, {1, power.dim(0), power.dim(1)}));
  Tensor<T> feats = reshape(energies, {cfg.n_mels, power.dim(1)});
  auto d = feats.data();
  const T floor = static_cast<T>(cfg.log_floor);
  for (auto& v : d) v = std::log(v > floor ? v : floor);
  if (cfg.mean_normalize) {
    const std::int64_t frames = feats.dim(1);
    for (std::int64_t m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;  // double accumulator keeps constant rows exactly flat
      for (std::int64_t t = 0; t < frames; ++t) acc += d[m * frames + t];
      const T mu = static_cast<T>(acc / static_cast<double>(frames));
      for (std::int64_t t = 0; t < frames; ++t) d[m * frames + t] -= mu;
    }
  }
  assert_finite(feats, "extract_features");
  return feats;
}

}  // namespace redimnet
