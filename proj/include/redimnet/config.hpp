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

#include <cstdlib>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "redimnet/loss.hpp"
#include "redimnet/model.hpp"
#include "redimnet/toydata.hpp"
#include "redimnet/trainer.hpp"

namespace redimnet {

// Text config: one `key = value` per line, dotted keys, `#` comments, blank
// lines ignored. Stage records append with the repeatable key
//
//   model.stages[] = sf=1 mult=2 n2d=2 kind2d=convnext2d kind1d=conv1d+mha
//
// The first stages[] line replaces the built-in default schedule; later
// lines append. Unknown keys are an error (fail loudly, not silently).
struct FullConfig {
  ModelConfig model = ModelConfig::defaults();
  LossConfig loss;
  TrainConfig train;
  ToyParams data;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::int64_t parse_i64(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const long long r = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return static_cast<std::int64_t>(r);
}

inline double parse_f64(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const double r = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return r;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

// `sf=1 mult=2 n2d=2 kind2d=convnext2d kind1d=conv1d+mha`, all five
// required, order free. `index` is the 1-based stage number for messages.
inline StageSpec parse_stage_entry(const std::string& body,
                                   std::size_t index) {
  const std::string where = "stage " + std::to_string(index);
  StageSpec s;
  bool got_sf = false, got_mult = false, got_n2d = false, got_k2 = false,
       got_k1 = false;
  std::istringstream is(body);
  std::string tok;
  while (is >> tok) {
    const std::size_t eq = tok.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= tok.size())
      throw ConfigError(where + ": malformed field '" + tok +
                        "', expected key=value");
    const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
    try {
      if (k == "sf") {
        s.sf = parse_i64(v, k);
        got_sf = true;
      } else if (k == "mult") {
        s.mult = parse_i64(v, k);
        got_mult = true;
      } else if (k == "n2d") {
        s.n2d = parse_i64(v, k);
        got_n2d = true;
      } else if (k == "kind2d") {
        s.kind2d = block2d_kind_from_string(v);
        got_k2 = true;
      } else if (k == "kind1d") {
        s.kind1d = block1d_kind_from_string(v);
        got_k1 = true;
      } else {
        throw ConfigError("unknown field '" + k + "'");
      }
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  if (!(got_sf && got_mult && got_n2d && got_k2 && got_k1))
    throw ConfigError(where +
                      ": needs all of sf, mult, n2d, kind2d, kind1d");
  return s;
}

}  // namespace detail

inline FullConfig parse_config(std::istream& in) {
  FullConfig cfg;
  bool stages_replaced = false;
  bool crop_set = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError("line " + std::to_string(lineno) +
                        ": empty key or value");

    try {
      if (key == "model.stages[]") {
        if (!stages_replaced) {
          cfg.model.stages.clear();
          stages_replaced = true;
        }
        cfg.model.stages.push_back(
            detail::parse_stage_entry(val, cfg.model.stages.size() + 1));
      } else if (key == "model.c") {
        cfg.model.c = detail::parse_i64(val, key);
      } else if (key == "model.f") {
        cfg.model.f = detail::parse_i64(val, key);
      } else if (key == "model.embedding_dim") {
        cfg.model.embedding_dim = detail::parse_i64(val, key);
      } else if (key == "model.heads") {
        cfg.model.heads = detail::parse_i64(val, key);
      } else if (key == "model.pool_attn_dim") {
        cfg.model.pool_attn_dim = detail::parse_i64(val, key);
      } else if (key == "loss.kind") {
        cfg.loss.kind = loss_kind_from_string(val);
      } else if (key == "loss.scale") {
        cfg.loss.scale = detail::parse_f64(val, key);
      } else if (key == "loss.margin") {
        cfg.loss.margin = detail::parse_f64(val, key);
      } else if (key == "loss.subcenters") {
        cfg.loss.subcenters = detail::parse_i64(val, key);
      } else if (key == "loss.lambda") {
        cfg.loss.lambda = detail::parse_f64(val, key);
      } else if (key == "loss.t") {
        cfg.loss.t = detail::parse_i64(val, key);
      } else if (key == "train.stage") {
        cfg.train.stage = train_stage_from_string(val);
      } else if (key == "train.crop_seconds") {
        cfg.train.crop_seconds = detail::parse_f64(val, key);
        crop_set = true;
      } else if (key == "train.epochs") {
        cfg.train.epochs = static_cast<int>(detail::parse_i64(val, key));
      } else if (key == "train.batch_size") {
        cfg.train.batch_size = static_cast<int>(detail::parse_i64(val, key));
      } else if (key == "train.lr_max") {
        cfg.train.lr_max = detail::parse_f64(val, key);
      } else if (key == "train.lr_min") {
        cfg.train.lr_min = detail::parse_f64(val, key);
      } else if (key == "train.warmup_epochs") {
        cfg.train.warmup_epochs =
            static_cast<int>(detail::parse_i64(val, key));
      } else if (key == "train.momentum") {
        cfg.train.momentum = detail::parse_f64(val, key);
      } else if (key == "train.weight_decay") {
        cfg.train.weight_decay = detail::parse_f64(val, key);
      } else if (key == "train.speed_perturb") {
        cfg.train.speed_perturb = detail::parse_bool(val, key);
      } else if (key == "train.aug_noise") {
        cfg.train.aug_noise = detail::parse_bool(val, key);
      } else if (key == "train.aug_music") {
        cfg.train.aug_music = detail::parse_bool(val, key);
      } else if (key == "train.aug_babble") {
        cfg.train.aug_babble = detail::parse_bool(val, key);
      } else if (key == "train.aug_reverb") {
        cfg.train.aug_reverb = detail::parse_bool(val, key);
      } else if (key == "train.seed") {
        cfg.train.seed =
            static_cast<std::uint64_t>(detail::parse_i64(val, key));
      } else if (key == "data.n_speakers") {
        cfg.data.n_speakers = detail::parse_i64(val, key);
      } else if (key == "data.utts_per_speaker") {
        cfg.data.utts_per_speaker = detail::parse_i64(val, key);
      } else if (key == "data.seconds") {
        cfg.data.seconds = detail::parse_f64(val, key);
      } else if (key == "data.sample_rate") {
        cfg.data.sample_rate =
            static_cast<int>(detail::parse_i64(val, key));
      } else if (key == "data.held_out_per_speaker") {
        cfg.data.held_out_per_speaker = detail::parse_i64(val, key);
      } else {
        throw ConfigError("unknown key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!crop_set) cfg.train.crop_seconds = default_crop_seconds(cfg.train.stage);
  return cfg;
}

inline FullConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config: " + path);
  return parse_config(in);
}

}  // namespace redimnet
