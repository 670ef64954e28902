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
#include <cstdint>
#include <string>
#include <vector>

#include "redimnet/common.hpp"
#include "redimnet/rng.hpp"
#include "redimnet/wav.hpp"

namespace redimnet {

// ---------------------------------------------------------------------------
// Speed perturbation
// ---------------------------------------------------------------------------

struct SpeedPerturbed {
  Waveform wave;
  std::int64_t label_offset;  // add to the speaker label
};

// Two-fold speed augmentation: resample by factor (linear interpolation),
// treating the result as a new speaker. Factor 0.9 slows the clip down
// (longer, pitch down) and maps speaker s to s + n_speakers; factor 1.1
// speeds it up and maps to s + 2*n_speakers, tripling the label space.
inline SpeedPerturbed speed_perturb(const Waveform& in, double factor,
                                    std::int64_t n_speakers) {
  if (factor != 0.9 && factor != 1.1)
    throw ConfigError("speed_perturb: factor must be 0.9 or 1.1, got " +
                      std::to_string(factor));
  if (n_speakers < 1)
    throw ConfigError("speed_perturb: n_speakers must be >= 1");
  if (in.samples.empty())
    throw InputError("speed_perturb: empty waveform");
  const std::int64_t len = static_cast<std::int64_t>(in.samples.size());
  const std::int64_t out_len =
      static_cast<std::int64_t>(std::llround(static_cast<double>(len) / factor));
  SpeedPerturbed out;
  out.wave.sample_rate = in.sample_rate;
  out.wave.samples.resize(static_cast<std::size_t>(out_len));
  for (std::int64_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * factor;
    std::int64_t j = static_cast<std::int64_t>(pos);
    if (j >= len - 1) {
      out.wave.samples[static_cast<std::size_t>(i)] = in.samples.back();
      continue;
    }
    const float frac = static_cast<float>(pos - static_cast<double>(j));
    const float a = in.samples[static_cast<std::size_t>(j)];
    const float b = in.samples[static_cast<std::size_t>(j + 1)];
    out.wave.samples[static_cast<std::size_t>(i)] = a + frac * (b - a);
  }
  out.label_offset = factor == 0.9 ? n_speakers : 2 * n_speakers;
  return out;
}

// ---------------------------------------------------------------------------
// Additive noise / reverberation primitives
// ---------------------------------------------------------------------------

namespace detail {

inline double mean_power(const std::vector<float>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * static_cast<double>(v);
  return acc / static_cast<double>(x.size());
}

}  // namespace detail

// Adds `noise` to `signal` in place, tiled cyclically from `noise_offset`,
// scaled so that signal power / added-noise power over the overlap (the
// whole signal, since the noise is tiled) equals the target SNR.
inline void mix_at_snr(std::vector<float>& signal,
                       const std::vector<float>& noise, double snr_db,
                       std::int64_t noise_offset = 0) {
  if (noise.empty()) throw ConfigError("mix_at_snr: empty noise source");
  if (signal.empty()) return;
  const std::int64_t nlen = static_cast<std::int64_t>(noise.size());
  std::int64_t off = noise_offset % nlen;
  if (off < 0) off += nlen;

  const double ps = detail::mean_power(signal);
  double pn = 0.0;
  {
    std::int64_t j = off;
    for (std::size_t i = 0; i < signal.size(); ++i) {
      const double v = noise[static_cast<std::size_t>(j)];
      pn += v * v;
      if (++j == nlen) j = 0;
    }
    pn /= static_cast<double>(signal.size());
  }
  if (pn <= 0.0)
    throw NumericError("mix_at_snr: noise source has zero power");
  const double scale =
      ps > 0.0 ? std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0))) : 0.0;
  std::int64_t j = off;
  for (std::size_t i = 0; i < signal.size(); ++i) {
    signal[i] += static_cast<float>(scale * noise[static_cast<std::size_t>(j)]);
    if (++j == nlen) j = 0;
  }
}

// Convolves `signal` with the impulse response normalized to unit peak,
// truncates to the original length, and rescales so output energy equals
// input energy. A unit impulse at lag 0 is the exact identity.
inline void apply_reverb(std::vector<float>& signal,
                         const std::vector<float>& rir) {
  if (rir.empty()) throw ConfigError("apply_reverb: empty impulse response");
  if (signal.empty()) return;
  float peak = 0.0f;
  for (float v : rir) peak = std::max(peak, std::abs(v));
  if (peak <= 0.0f)
    throw NumericError("apply_reverb: impulse response is all zeros");

  const std::int64_t slen = static_cast<std::int64_t>(signal.size());
  const std::int64_t klen = static_cast<std::int64_t>(rir.size());
  std::vector<float> out(static_cast<std::size_t>(slen), 0.0f);
  for (std::int64_t i = 0; i < slen; ++i) {
    double acc = 0.0;
    const std::int64_t kmax = std::min<std::int64_t>(klen, i + 1);
    for (std::int64_t k = 0; k < kmax; ++k)
      acc += static_cast<double>(signal[static_cast<std::size_t>(i - k)]) *
             (static_cast<double>(rir[static_cast<std::size_t>(k)]) / peak);
    out[static_cast<std::size_t>(i)] = static_cast<float>(acc);
  }
  const double es = detail::mean_power(signal);
  const double eo = detail::mean_power(out);
  const float gain = eo > 0.0 ? static_cast<float>(std::sqrt(es / eo)) : 1.0f;
  for (std::size_t i = 0; i < out.size(); ++i)
    signal[i] = out[i] * gain;
}

// ---------------------------------------------------------------------------
// The composite augmentor
// ---------------------------------------------------------------------------

enum class AugmentKind { Noise, Music, Babble, Reverb };

inline std::string to_string(AugmentKind k) {
  switch (k) {
    case AugmentKind::Noise: return "noise";
    case AugmentKind::Music: return "music";
    case AugmentKind::Babble: return "babble";
    case AugmentKind::Reverb: return "reverb";
  }
  return "?";
}

// Waveform pools the augmentor draws from. Any kind with probability > 0
// must have a nonempty pool.
struct AugmentSources {
  std::vector<std::vector<float>> noise;
  std::vector<std::vector<float>> music;
  std::vector<std::vector<float>> babble;
  std::vector<std::vector<float>> rirs;
};

// Probabilities and SNR ranges follow the common recipe: noise 0-15 dB,
// music 5-15 dB, babble 13-20 dB, each with probability 0.2; reverb with
// probability 0.2. All config-exposed.
struct AugmentConfig {
  double p_noise = 0.2, snr_noise_lo = 0.0, snr_noise_hi = 15.0;
  double p_music = 0.2, snr_music_lo = 5.0, snr_music_hi = 15.0;
  double p_babble = 0.2, snr_babble_lo = 13.0, snr_babble_hi = 20.0;
  double p_reverb = 0.2;
};

class Augmentor {
 public:
  // A no-op augmentor: all probabilities zero, no pools required.
  Augmentor() {
    cfg_.p_noise = cfg_.p_music = cfg_.p_babble = cfg_.p_reverb = 0.0;
  }

  Augmentor(AugmentSources sources, const AugmentConfig& cfg)
      : src_(std::move(sources)), cfg_(cfg) {
    check_pool(cfg_.p_noise, src_.noise, AugmentKind::Noise);
    check_pool(cfg_.p_music, src_.music, AugmentKind::Music);
    check_pool(cfg_.p_babble, src_.babble, AugmentKind::Babble);
    check_pool(cfg_.p_reverb, src_.rirs, AugmentKind::Reverb);
  }

  // Applies each augmentation independently with its probability, in the
  // fixed order noise, music, babble, reverb. Deterministic given the rng
  // stream: every branch draws the same number of variates whether or not
  // it fires, so one sample's coin flips never shift another's.
  void apply(std::vector<float>& samples, Rng& rng) const {
    maybe_mix(samples, src_.noise, cfg_.p_noise, cfg_.snr_noise_lo,
              cfg_.snr_noise_hi, rng);
    maybe_mix(samples, src_.music, cfg_.p_music, cfg_.snr_music_lo,
              cfg_.snr_music_hi, rng);
    maybe_mix(samples, src_.babble, cfg_.p_babble, cfg_.snr_babble_lo,
              cfg_.snr_babble_hi, rng);
    const bool fire = rng.bernoulli(cfg_.p_reverb);
    const double pick = rng.uniform();
    if (fire && !src_.rirs.empty()) {
      const auto idx = static_cast<std::size_t>(
          pick * static_cast<double>(src_.rirs.size()));
      apply_reverb(samples, src_.rirs[std::min(idx, src_.rirs.size() - 1)]);
    }
  }

 private:
  static void check_pool(double p, const std::vector<std::vector<float>>& pool,
                         AugmentKind kind) {
    if (p < 0.0 || p > 1.0)
      throw ConfigError("Augmentor: probability for " + to_string(kind) +
                        " must be in [0,1]");
    if (p > 0.0 && pool.empty())
      throw ConfigError("Augmentor: " + to_string(kind) +
                        " enabled but its source pool is empty");
  }

  static void maybe_mix(std::vector<float>& samples,
                        const std::vector<std::vector<float>>& pool, double p,
                        double snr_lo, double snr_hi, Rng& rng) {
    const bool fire = rng.bernoulli(p);
    const double pick = rng.uniform();
    const double snr = rng.uniform(snr_lo, snr_hi);
    const double off = rng.uniform();
    if (!fire || pool.empty()) return;
    const auto idx =
        static_cast<std::size_t>(pick * static_cast<double>(pool.size()));
    const auto& noise = pool[std::min(idx, pool.size() - 1)];
    mix_at_snr(samples, noise, snr,
               static_cast<std::int64_t>(
                   off * static_cast<double>(noise.size())));
  }

  AugmentSources src_;
  AugmentConfig cfg_;
};

}  // namespace redimnet
