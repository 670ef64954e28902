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
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "redimnet/augment.hpp"
#include "redimnet/features.hpp"
#include "redimnet/loss.hpp"
#include "redimnet/model.hpp"
#include "redimnet/optim.hpp"
#include "redimnet/toydata.hpp"

namespace redimnet {

// Two-stage recipe: "pretrain" uses 2-second random crops with the
// exponential-warmup margin schedule and (optionally) speed perturbation;
// "lm" finetunes on 6-second crops at a constant 0.5 margin with speed
// perturbation off.
struct TrainConfig {
  TrainStage stage = TrainStage::Pretrain;
  double crop_seconds = 2.0;  // 6.0 is the lm-stage convention
  int epochs = 18;
  int batch_size = 16;
  double lr_max = 1e-1;
  double lr_min = 1e-5;
  int warmup_epochs = 6;
  double momentum = 0.9;
  double weight_decay = 2e-5;
  bool speed_perturb = false;  // pretrain only; lm always runs without it
  bool aug_noise = false;
  bool aug_music = false;
  bool aug_babble = false;
  bool aug_reverb = false;
  std::uint64_t seed = 17;
};

inline double default_crop_seconds(TrainStage stage) {
  return stage == TrainStage::Lm ? 6.0 : 2.0;
}

inline void validate(const TrainConfig& cfg) {
  if (cfg.crop_seconds <= 0.0)
    throw ConfigError("train: crop seconds must be > 0");
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (cfg.warmup_epochs < 0 || cfg.warmup_epochs >= cfg.epochs)
    throw ConfigError("train: need 0 <= warmup epochs < epochs, got " +
                      std::to_string(cfg.warmup_epochs) + " vs " +
                      std::to_string(cfg.epochs));
  if (cfg.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (cfg.lr_min <= 0.0 || cfg.lr_max < cfg.lr_min)
    throw ConfigError("train: need 0 < lr_min <= lr_max");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
    throw ConfigError("train: momentum must be in [0,1)");
  if (cfg.weight_decay < 0.0)
    throw ConfigError("train: weight decay must be >= 0");
}

// Whether the run needs speed perturbation: only in the pretrain stage.
inline bool speed_perturb_active(const TrainConfig& cfg) {
  return cfg.speed_perturb && cfg.stage == TrainStage::Pretrain;
}

// Class count the loss head must carry for this corpus + config.
inline std::int64_t required_classes(std::int64_t n_speakers,
                                     const TrainConfig& cfg) {
  return n_speakers * (speed_perturb_active(cfg) ? 3 : 1);
}

// One metrics record per optimizer step, serialized as JSON lines.
struct TrainRecord {
  int epoch;
  int step;  // global step index
  double loss;
  double lr;
  double margin;
};

inline std::string to_json_line(const TrainRecord& r) {
  char buf[192];
  std::snprintf(buf, sizeof(buf),
                "{\"epoch\":%d,\"step\":%d,\"loss\":%.9g,\"lr\":%.9g,"
                "\"margin\":%.9g}",
                r.epoch, r.step, r.loss, r.lr, r.margin);
  return buf;
}

struct TrainResult {
  std::vector<TrainRecord> records;
  // Mean loss of the first and last epoch, for quick trend checks.
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
};

namespace detail {

// Random crop of `n` samples, tiling cyclically when the utterance is
// shorter than the crop window.
inline std::vector<float> random_crop(const std::vector<float>& samples,
                                      std::int64_t n, Rng& rng) {
  const std::int64_t len = static_cast<std::int64_t>(samples.size());
  std::vector<float> out(static_cast<std::size_t>(n));
  if (len >= n) {
    const std::int64_t start = rng.uniform_int(len - n + 1);
    std::copy(samples.begin() + start, samples.begin() + start + n,
              out.begin());
  } else {
    const std::int64_t start = rng.uniform_int(len);
    for (std::int64_t i = 0; i < n; ++i)
      out[static_cast<std::size_t>(i)] =
          samples[static_cast<std::size_t>((start + i) % len)];
  }
  return out;
}

}  // namespace detail

// Runs the training loop: per epoch, shuffle the training utterances, and
// per batch crop -> (speed perturb) -> augment -> features -> forward ->
// loss -> backward -> step. Metrics are recorded per step and optionally
// streamed to `metrics_out` as JSON lines; `on_epoch_end` fires after each
// epoch (periodic checkpointing hangs off it).
//
// Deterministic given cfg.seed: all randomness comes from split streams of
// the run seed, and every kernel is bit-stable.
template <typename T>
TrainResult train(Model<T>& model, LossHead<T>& head, const ToyCorpus& corpus,
                  const TrainConfig& cfg,
                  const Augmentor& augmentor = Augmentor(),
                  std::ostream* metrics_out = nullptr,
                  const std::function<void(int)>& on_epoch_end = nullptr) {
  validate(cfg);
  const auto train_idx = corpus.train_indices();
  if (train_idx.empty()) throw ConfigError("train: corpus has no training utterances");
  const std::int64_t classes_needed = required_classes(corpus.n_speakers, cfg);
  if (head.n_classes() != classes_needed)
    throw ConfigError("train: loss head has " +
                      std::to_string(head.n_classes()) + " classes but the " +
                      "corpus needs " + std::to_string(classes_needed) +
                      (speed_perturb_active(cfg)
                           ? " (3x speakers with speed perturbation)"
                           : ""));
  if (head.emb_dim() != model.config().embedding_dim)
    throw ConfigError("train: loss head dim " + std::to_string(head.emb_dim()) +
                      " != model embedding dim " +
                      std::to_string(model.config().embedding_dim));

  FeatureConfig feat_cfg;
  feat_cfg.n_mels = static_cast<int>(model.config().f);

  const int sr = corpus.utts.empty() ? 16000 : corpus.utts[0].wave.sample_rate;
  validate(feat_cfg, sr);
  const std::int64_t crop_len =
      static_cast<std::int64_t>(std::llround(cfg.crop_seconds * sr));
  const std::int64_t frames = num_frames(crop_len, feat_cfg);

  // Independent streams per purpose so adding draws to one never shifts
  // the others.
  const Rng base(cfg.seed);
  Rng order_rng = base.split(1);
  Rng crop_rng = base.split(2);
  Rng aug_rng = base.split(3);

  ParamList<T> params = model.named_params();
  head.collect("loss", params);
  SgdNesterov<T> opt(params, cfg.momentum, cfg.weight_decay);

  const bool with_sp = speed_perturb_active(cfg);
  const std::int64_t n_train = static_cast<std::int64_t>(train_idx.size());
  const std::int64_t steps_per_epoch =
      (n_train + cfg.batch_size - 1) / cfg.batch_size;

  TrainResult result;
  int global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    for (std::int64_t i = n_train - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(order_rng.uniform_int(i + 1))]);

    const double margin = margin_schedule(epoch, cfg.stage);
    double epoch_loss = 0.0;

    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      const std::int64_t lo = b * cfg.batch_size;
      const std::int64_t hi = std::min<std::int64_t>(lo + cfg.batch_size,
                                                     n_train);
      const std::int64_t n = hi - lo;

      Tensor<T> x = Tensor<T>::zeros({n, feat_cfg.n_mels, frames});
      std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) {
        const auto& utt = corpus.utts[order[static_cast<std::size_t>(lo + i)]];
        std::int64_t label = utt.speaker;

        Waveform wave = utt.wave;
        if (with_sp) {
          // Uniform over {as-is, 0.9, 1.1}; drawn even when perturbation is
          // inactive this sample so the crop stream stays aligned.
          const std::int64_t variant = aug_rng.uniform_int(3);
          if (variant == 1 || variant == 2) {
            auto sp = speed_perturb(wave, variant == 1 ? 0.9 : 1.1,
                                    corpus.n_speakers);
            wave = std::move(sp.wave);
            label += sp.label_offset;
          }
        }

        std::vector<float> crop =
            detail::random_crop(wave.samples, crop_len, crop_rng);
        augmentor.apply(crop, aug_rng);

        Waveform cw{std::move(crop), sr};
        Tensor<T> feats = extract_features<T>(cw, feat_cfg);
        std::copy(feats.data().begin(), feats.data().end(),
                  x.data().begin() + i * feat_cfg.n_mels * frames);
        labels[static_cast<std::size_t>(i)] = label;
      }

      Tensor<T> emb = model.forward(x, /*training=*/true);
      Tensor<T> loss = head.forward(emb, labels, margin);
      const double loss_val = static_cast<double>(loss.item());
      const double lr =
          lr_schedule(epoch + static_cast<double>(b) /
                                  static_cast<double>(steps_per_epoch),
                      cfg.lr_min, cfg.lr_max, cfg.warmup_epochs, cfg.epochs);
      if (!std::isfinite(loss_val)) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "train: non-finite loss at epoch %d batch %lld (lr=%.6g)",
                      epoch, static_cast<long long>(b), lr);
        throw NumericError(buf);
      }

      opt.zero_grad();
      loss.backward();
      opt.step(lr);

      TrainRecord rec{epoch, global_step++, loss_val, lr, margin};
      result.records.push_back(rec);
      if (metrics_out) (*metrics_out) << to_json_line(rec) << "\n";
      epoch_loss += loss_val;
    }

    epoch_loss /= static_cast<double>(steps_per_epoch);
    if (epoch == 0) result.first_epoch_loss = epoch_loss;
    result.last_epoch_loss = epoch_loss;
    if (on_epoch_end) on_epoch_end(epoch);
  }
  return result;
}

}  // namespace redimnet
