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
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "redimnet/common.hpp"
#include "redimnet/rng.hpp"
#include "redimnet/wav.hpp"

namespace redimnet {

// Synthetic desk-scale speaker corpus. Each speaker owns a generative
// signature — fundamental frequency, harmonic amplitude profile with a
// spectral tilt, and a formant-like resonance bump — and each utterance
// perturbs it with fresh harmonic phases, a small f0 wobble, and white
// noise 20 dB below the harmonic power.
struct ToyParams {
  std::int64_t n_speakers = 20;
  std::int64_t utts_per_speaker = 10;
  double seconds = 3.0;
  int sample_rate = 16000;
  // The last `held_out_per_speaker` utterances of every speaker are flagged
  // for evaluation and excluded from training.
  std::int64_t held_out_per_speaker = 2;
};

struct ToyUtterance {
  std::string id;
  std::int64_t speaker;
  bool held_out;
  Waveform wave;
};

struct ToyCorpus {
  std::int64_t n_speakers = 0;
  std::vector<ToyUtterance> utts;

  std::vector<std::size_t> train_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < utts.size(); ++i)
      if (!utts[i].held_out) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> heldout_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < utts.size(); ++i)
      if (utts[i].held_out) out.push_back(i);
    return out;
  }
};

inline void validate(const ToyParams& p) {
  if (p.n_speakers < 2)
    throw ConfigError("toy corpus: need at least 2 speakers");
  if (p.utts_per_speaker < 1)
    throw ConfigError("toy corpus: need at least 1 utterance per speaker");
  if (p.held_out_per_speaker < 0 ||
      p.held_out_per_speaker >= p.utts_per_speaker)
    throw ConfigError(
        "toy corpus: held-out count must be in [0, utts per speaker)");
  if (p.seconds <= 0.0) throw ConfigError("toy corpus: seconds must be > 0");
  if (p.sample_rate < 8000)
    throw ConfigError("toy corpus: sample rate must be >= 8000");
}

// Deterministic per (seed, speaker, utterance): every stream is derived by
// splitting, never by drawing order, so corpora are bit-identical across
// runs and independent of generation order.
inline ToyCorpus make_toy_corpus(const ToyParams& p, std::uint64_t seed) {
  validate(p);
  const std::int64_t len =
      static_cast<std::int64_t>(std::llround(p.seconds * p.sample_rate));
  const Rng base(seed);

  ToyCorpus corpus;
  corpus.n_speakers = p.n_speakers;
  corpus.utts.reserve(
      static_cast<std::size_t>(p.n_speakers * p.utts_per_speaker));

  for (std::int64_t s = 0; s < p.n_speakers; ++s) {
    Rng spk = base.split(static_cast<std::uint64_t>(s) + 1);

    // Speaker signature.
    const double f0 = spk.uniform(90.0, 260.0);
    const double tilt = spk.uniform(0.6, 1.4);
    const double formant_hz = spk.uniform(400.0, 3200.0);
    const double formant_bw = spk.uniform(200.0, 600.0);
    const double formant_gain = spk.uniform(1.0, 3.0);
    const int n_harm = static_cast<int>(
        std::min(20.0, 0.45 * p.sample_rate / f0));
    std::vector<double> amps(static_cast<std::size_t>(n_harm));
    for (int k = 1; k <= n_harm; ++k) {
      const double fk = k * f0;
      const double res = (fk - formant_hz) / formant_bw;
      amps[static_cast<std::size_t>(k - 1)] =
          std::pow(1.0 / k, tilt) * (1.0 + formant_gain / (1.0 + res * res));
    }

    for (std::int64_t u = 0; u < p.utts_per_speaker; ++u) {
      Rng urng = spk.split(static_cast<std::uint64_t>(u) + 1);
      const double wobble = 1.0 + 0.01 * urng.uniform(-1.0, 1.0);

      // Harmonic oscillators advanced by complex rotation: cheaper than a
      // sin() per sample per harmonic and exactly reproducible.
      std::vector<std::complex<double>> state(amps.size()), rot(amps.size());
      for (std::size_t k = 0; k < amps.size(); ++k) {
        const double w = 2.0 * 3.14159265358979323846 *
                         (static_cast<double>(k + 1) * f0 * wobble) /
                         p.sample_rate;
        const double phase = urng.uniform(0.0, 2.0 * 3.14159265358979323846);
        state[k] = std::polar(amps[k], phase);
        rot[k] = std::polar(1.0, w);
      }

      std::vector<float> samples(static_cast<std::size_t>(len));
      double power = 0.0;
      for (std::int64_t t = 0; t < len; ++t) {
        double v = 0.0;
        for (std::size_t k = 0; k < state.size(); ++k) {
          v += state[k].imag();
          state[k] *= rot[k];
        }
        samples[static_cast<std::size_t>(t)] = static_cast<float>(v);
        power += v * v;
      }
      power /= static_cast<double>(len);

      // -20 dB white noise relative to the harmonic power.
      const double sigma = std::sqrt(power * 0.01);
      for (auto& v : samples)
        v += static_cast<float>(sigma * urng.normal());

      // Normalize to a fixed peak so every utterance is well scaled.
      float peak = 0.0f;
      for (float v : samples) peak = std::max(peak, std::abs(v));
      if (peak > 0.0f) {
        const float g = 0.7f / peak;
        for (auto& v : samples) v *= g;
      }

      ToyUtterance utt;
      char buf[48];
      std::snprintf(buf, sizeof(buf), "spk%03lld_utt%03lld",
                    static_cast<long long>(s), static_cast<long long>(u));
      utt.id = buf;
      utt.speaker = s;
      utt.held_out = u >= p.utts_per_speaker - p.held_out_per_speaker;
      utt.wave.sample_rate = p.sample_rate;
      utt.wave.samples = std::move(samples);
      corpus.utts.push_back(std::move(utt));
    }
  }
  return corpus;
}

}  // namespace redimnet
