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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "redimnet/checkpoint.hpp"
#include "redimnet/config.hpp"
#include "redimnet/metrics.hpp"
#include "redimnet/trainer.hpp"
#include "redimnet/wav.hpp"

namespace redimnet {

// Verb implementations behind the `redimnet` binary. Each returns the
// process exit code; the main() wrapper maps exceptions to codes
// (0 success, 1 runtime failure, 2 usage/config error).

struct CommonOpts {
  std::uint64_t seed = 17;
  std::string precision = "f32";  // f32 | f64
  int threads = 1;
};

inline void apply_common(const CommonOpts& opts) {
  if (opts.precision != "f32" && opts.precision != "f64")
    throw UsageError("--precision must be f32 or f64, got " + opts.precision);
  if (opts.threads < 1) throw UsageError("--threads must be >= 1");
  set_num_threads(opts.threads);
}

// ---------------------------------------------------------------------------
// Shared text-file plumbing
// ---------------------------------------------------------------------------

struct TrialLine {
  int label;  // 1 target, 0 nontarget
  std::string enroll;
  std::string test;
};

inline std::vector<TrialLine> read_trials(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open trial list: " + path);
  std::vector<TrialLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream is(line);
    TrialLine t;
    if (!(is >> t.label >> t.enroll >> t.test))
      throw InputError(path + ":" + std::to_string(lineno) +
                       ": expected '<0|1> <enroll_id> <test_id>'");
    if (t.label != 0 && t.label != 1)
      throw InputError(path + ":" + std::to_string(lineno) +
                       ": label must be 0 or 1");
    out.push_back(std::move(t));
  }
  if (out.empty()) throw InputError(path + ": no trials");
  return out;
}

struct ScoreLine {
  std::string enroll;
  std::string test;
  double score;
};

inline std::vector<ScoreLine> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open score file: " + path);
  std::vector<ScoreLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream is(line);
    ScoreLine s;
    if (!(is >> s.enroll >> s.test >> s.score))
      throw InputError(path + ":" + std::to_string(lineno) +
                       ": expected '<enroll_id> <test_id> <score>'");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw InputError(path + ": no scores");
  return out;
}

// `<id> <wav path>` per line.
inline std::vector<std::pair<std::string, std::string>> read_wav_list(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open wav list: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string id, wav;
    if (!(is >> id >> wav))
      throw InputError(path + ":" + std::to_string(lineno) +
                       ": expected '<id> <wav path>'");
    out.emplace_back(std::move(id), std::move(wav));
  }
  if (out.empty()) throw InputError(path + ": no entries");
  return out;
}

// ---------------------------------------------------------------------------
// info
// ---------------------------------------------------------------------------

struct InfoOpts {
  std::string config_path;  // empty = built-in default schedule
};

inline int cmd_info(const InfoOpts& opts, std::ostream& os = std::cout) {
  ModelConfig mc = opts.config_path.empty()
                       ? ModelConfig::defaults()
                       : parse_config_file(opts.config_path).model;
  validate(mc);
  const auto rows = stage_shapes(mc);

  // MACs are quoted for a 2-second clip at the frontend's frame rate.
  FeatureConfig fc;
  fc.n_mels = static_cast<int>(mc.f);
  const std::int64_t t2s = num_frames(2 * 16000, fc);

  Model<float> model(mc, /*seed=*/1);
  os << "stage   in (CxF)     S_f   out (CxF)    volume (CxFxT @2s)\n";
  for (const auto& r : rows) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-7lld %4lldx%-7lld %-5lld %4lldx%-7lld %lld\n",
                  static_cast<long long>(r.index),
                  static_cast<long long>(r.c_in),
                  static_cast<long long>(r.f_in),
                  static_cast<long long>(r.sf),
                  static_cast<long long>(r.c_out),
                  static_cast<long long>(r.f_out),
                  static_cast<long long>(r.volume * t2s));
    os << buf;
  }
  const std::int64_t params = model.count_params();
  const std::uint64_t macs = model.count_macs_analytic(t2s);
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "params %lld (%.3fM)\nmacs@2s %llu (%.4f GMACs, T=%lld)\n",
                static_cast<long long>(params),
                static_cast<double>(params) / 1e6,
                static_cast<unsigned long long>(macs),
                static_cast<double>(macs) / 1e9, static_cast<long long>(t2s));
  os << buf;
  return 0;
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

struct ExtractOpts {
  std::string checkpoint;
  std::string wav_list;
  std::string out;
  CommonOpts common;
};

template <typename T>
int run_extract(const ExtractOpts& opts) {
  const CheckpointData ck = load_checkpoint(opts.checkpoint);
  Model<T> model = model_from_checkpoint<T>(ck, opts.common.seed);
  FeatureConfig fc;
  fc.n_mels = static_cast<int>(model.config().f);

  EmbeddingStore store;
  store.dim = model.config().embedding_dim;
  NoGradGuard ng;
  for (const auto& [id, wav_path] : read_wav_list(opts.wav_list)) {
    const Waveform wave = read_wav(wav_path);
    validate(fc, wave.sample_rate);
    Tensor<T> feats = extract_features<T>(wave, fc);
    Tensor<T> x = reshape(feats, {1, feats.dim(0), feats.dim(1)});
    Tensor<T> emb = model.forward(x, /*training=*/false);
    std::vector<float> v(static_cast<std::size_t>(emb.numel()));
    for (std::int64_t i = 0; i < emb.numel(); ++i)
      v[static_cast<std::size_t>(i)] = static_cast<float>(emb.data()[i]);
    store.add(id, std::move(v));
  }
  save_embedding_store(opts.out, store);
  return 0;
}

inline int cmd_extract(const ExtractOpts& opts) {
  apply_common(opts.common);
  return opts.common.precision == "f64" ? run_extract<double>(opts)
                                        : run_extract<float>(opts);
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

struct ScoreOpts {
  std::string enroll_store;
  std::string test_store;
  std::string trials;
  std::string out;
  std::string cohort_store;  // empty = raw cosine only
  std::int64_t topk = 300;
  CommonOpts common;
};

inline int cmd_score(const ScoreOpts& opts) {
  apply_common(opts.common);
  const EmbeddingStore enroll = load_embedding_store(opts.enroll_store);
  const EmbeddingStore test = load_embedding_store(opts.test_store);
  const auto trials = read_trials(opts.trials);

  std::vector<std::vector<float>> cohort;
  if (!opts.cohort_store.empty()) {
    const EmbeddingStore cs = load_embedding_store(opts.cohort_store);
    for (const auto& r : cs.records) cohort.push_back(r.second);
    if (static_cast<std::int64_t>(cohort.size()) < opts.topk)
      throw ConfigError("cohort has " + std::to_string(cohort.size()) +
                        " embeddings, fewer than topk=" +
                        std::to_string(opts.topk));
  }

  std::ofstream os(opts.out);
  if (!os) throw InputError("cannot open for writing: " + opts.out);
  for (const auto& t : trials) {
    const std::vector<float>* e = enroll.find(t.enroll);
    if (!e) throw InputError("trial enroll id not in store: " + t.enroll);
    const std::vector<float>* s = test.find(t.test);
    if (!s) throw InputError("trial test id not in store: " + t.test);
    const double score =
        cohort.empty() ? cosine_score(*e, *s)
                       : asnorm_score(*e, *s, cohort, opts.topk);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s %s %.9g\n", t.enroll.c_str(),
                  t.test.c_str(), score);
    os << buf;
  }
  if (!os) throw InputError("short write: " + opts.out);
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string scores;
  std::string trials;
};

inline int cmd_eval(const EvalOpts& opts, std::ostream& os = std::cout) {
  const auto trials = read_trials(opts.trials);
  const auto scores = read_scores(opts.scores);
  if (trials.size() != scores.size())
    throw InputError("trial/score count mismatch: " +
                     std::to_string(trials.size()) + " vs " +
                     std::to_string(scores.size()));
  ScoreSet set;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].enroll != scores[i].enroll ||
        trials[i].test != scores[i].test)
      throw InputError("line " + std::to_string(i + 1) +
                       ": trial ids do not match the score file (" +
                       trials[i].enroll + "/" + trials[i].test + " vs " +
                       scores[i].enroll + "/" + scores[i].test + ")");
    set.labels.push_back(trials[i].label);
    set.scores.push_back(scores[i].score);
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "EER %.4f%% minDCF %.4f\n",
                eer(set) * 100.0, min_dcf(set));
  os << buf;
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string config_path;
  std::string stage;  // empty = from config
  std::string data = "toy";
  std::string out_dir;
  std::string init_checkpoint;  // required for --stage lm
  int save_every = 0;           // epochs; 0 = final checkpoint only
  CommonOpts common;
};

namespace detail {

// Directory corpus: each subdirectory is one speaker, WAVs inside are its
// utterances, sorted for determinism. Everything is a training utterance.
inline ToyCorpus corpus_from_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw InputError("training data directory not found: " + dir);
  std::vector<std::string> speakers;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) speakers.push_back(e.path().filename().string());
  std::sort(speakers.begin(), speakers.end());
  if (speakers.size() < 2)
    throw InputError("training directory needs >= 2 speaker subdirectories");

  ToyCorpus corpus;
  corpus.n_speakers = static_cast<std::int64_t>(speakers.size());
  for (std::size_t s = 0; s < speakers.size(); ++s) {
    std::vector<std::string> wavs;
    for (const auto& e : fs::directory_iterator(fs::path(dir) / speakers[s]))
      if (e.path().extension() == ".wav") wavs.push_back(e.path().string());
    std::sort(wavs.begin(), wavs.end());
    if (wavs.empty())
      throw InputError("speaker directory has no WAVs: " + speakers[s]);
    for (const auto& w : wavs) {
      ToyUtterance utt;
      utt.id = speakers[s] + "/" + fs::path(w).stem().string();
      utt.speaker = static_cast<std::int64_t>(s);
      utt.held_out = false;
      utt.wave = read_wav(w);
      corpus.utts.push_back(std::move(utt));
    }
  }
  return corpus;
}

}  // namespace detail

template <typename T>
int run_train(const TrainOpts& opts, FullConfig cfg) {
  namespace fs = std::filesystem;
  if (!opts.stage.empty())
    cfg.train.stage = train_stage_from_string(opts.stage);
  if (cfg.train.stage == TrainStage::Lm && opts.init_checkpoint.empty())
    throw UsageError("--stage lm requires --init <pretrain checkpoint>");
  cfg.train.seed = opts.common.seed;

  ToyCorpus corpus = opts.data == "toy"
                         ? make_toy_corpus(cfg.data, cfg.train.seed)
                         : detail::corpus_from_dir(opts.data);

  Model<T> model(cfg.model, cfg.train.seed + 1);
  LossHead<T> head(required_classes(corpus.n_speakers, cfg.train),
                   cfg.model.embedding_dim, cfg.loss, cfg.train.seed + 2);
  if (!opts.init_checkpoint.empty()) {
    const CheckpointData ck = load_checkpoint(opts.init_checkpoint);
    restore(model, ck);
    maybe_restore_loss(head, ck);
  }

  if (cfg.train.aug_noise || cfg.train.aug_music || cfg.train.aug_babble ||
      cfg.train.aug_reverb)
    throw ConfigError(
        "augmentation sources are not wired into the CLI yet; disable "
        "train.aug_* or train through the library interface");

  fs::create_directories(opts.out_dir);
  std::ofstream metrics(fs::path(opts.out_dir) / "metrics.jsonl");
  if (!metrics)
    throw InputError("cannot open metrics log in " + opts.out_dir);

  auto save_to = [&](const std::string& name) {
    CheckpointData ck = snapshot(model, &head);
    save_checkpoint((fs::path(opts.out_dir) / name).string(), ck);
  };

  TrainResult result = train(
      model, head, corpus, cfg.train, Augmentor(), &metrics,
      [&](int epoch) {
        if (opts.save_every > 0 && (epoch + 1) % opts.save_every == 0) {
          char name[48];
          std::snprintf(name, sizeof(name), "ckpt_epoch_%03d.rdnc", epoch);
          save_to(name);
        }
      });

  save_to("final.rdnc");

  // Per-epoch console summary.
  int cur = -1;
  double acc = 0.0;
  int cnt = 0;
  auto flush_epoch = [&](const TrainRecord& last) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "epoch %d loss %.6f lr %.6g margin %.3g\n",
                  cur, acc / cnt, last.lr, last.margin);
    std::cout << buf;
  };
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const auto& r = result.records[i];
    if (r.epoch != cur) {
      if (cnt > 0) flush_epoch(result.records[i - 1]);
      cur = r.epoch;
      acc = 0.0;
      cnt = 0;
    }
    acc += r.loss;
    ++cnt;
  }
  if (cnt > 0) flush_epoch(result.records.back());
  return 0;
}

inline int cmd_train(const TrainOpts& opts) {
  apply_common(opts.common);
  if (opts.config_path.empty()) throw UsageError("train requires --config");
  if (opts.out_dir.empty()) throw UsageError("train requires --out");
  FullConfig cfg = parse_config_file(opts.config_path);
  return opts.common.precision == "f64" ? run_train<double>(opts, cfg)
                                        : run_train<float>(opts, cfg);
}

}  // namespace redimnet
