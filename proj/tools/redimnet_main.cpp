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

#include <iostream>

#include <CLI11.hpp>

#include "redimnet/cli.hpp"

namespace {

void add_common(CLI::App* cmd, redimnet::CommonOpts& opts) {
  cmd->add_option("--seed", opts.seed, "Run seed")->capture_default_str();
  cmd->add_option("--precision", opts.precision, "Compute precision")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  cmd->add_option("--threads", opts.threads, "Worker threads")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"redimnet: speaker-embedding toolkit"};
  app.require_subcommand(1);

  redimnet::InfoOpts info;
  CLI::App* c_info = app.add_subcommand(
      "info", "Print the stage-shape table, params, and MACs at 2 s");
  c_info->add_option("--config", info.config_path, "Model config file");

  redimnet::ExtractOpts extract;
  CLI::App* c_extract =
      app.add_subcommand("extract", "Extract one embedding per utterance");
  c_extract->add_option("--checkpoint", extract.checkpoint, "Model checkpoint")
      ->required();
  c_extract
      ->add_option("--wav-list", extract.wav_list,
                   "Text file with '<id> <wav path>' lines")
      ->required();
  c_extract->add_option("--out", extract.out, "Output embedding store")
      ->required();
  add_common(c_extract, extract.common);

  redimnet::ScoreOpts score;
  CLI::App* c_score = app.add_subcommand(
      "score", "Score trials by cosine, with optional AS-Norm");
  c_score->add_option("--enroll-store", score.enroll_store, "Enroll embeddings")
      ->required();
  c_score->add_option("--test-store", score.test_store, "Test embeddings")
      ->required();
  c_score->add_option("--trials", score.trials, "Trial list")->required();
  c_score->add_option("--out", score.out, "Output score file")->required();
  c_score->add_option("--cohort-store", score.cohort_store,
                      "Cohort embeddings (enables AS-Norm)");
  c_score->add_option("--topk", score.topk, "AS-Norm cohort top-k")
      ->capture_default_str();
  add_common(c_score, score.common);

  redimnet::EvalOpts eval;
  CLI::App* c_eval =
      app.add_subcommand("eval", "Report EER and minDCF for a score file");
  c_eval->add_option("--scores", eval.scores, "Score file")->required();
  c_eval->add_option("--trials", eval.trials, "Trial list")->required();

  redimnet::TrainOpts train;
  CLI::App* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--config", train.config_path, "Config file")
      ->required();
  c_train->add_option("--stage", train.stage, "pretrain | lm")
      ->check(CLI::IsMember({"pretrain", "lm"}));
  c_train->add_option("--data", train.data,
                      "'toy' or a directory of <speaker>/<utt>.wav");
  c_train->add_option("--out", train.out_dir, "Output directory")->required();
  c_train->add_option("--init", train.init_checkpoint,
                      "Initial checkpoint (required for --stage lm)");
  c_train->add_option("--save-every", train.save_every,
                      "Checkpoint every N epochs (0 = final only)");
  add_common(c_train, train.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "redimnet: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*c_info) return redimnet::cmd_info(info);
    if (*c_extract) return redimnet::cmd_extract(extract);
    if (*c_score) return redimnet::cmd_score(score);
    if (*c_eval) return redimnet::cmd_eval(eval);
    if (*c_train) return redimnet::cmd_train(train);
  } catch (const redimnet::ConfigError& e) {
    std::cerr << "redimnet: config error: " << e.what() << "\n";
    return 2;
  } catch (const redimnet::UsageError& e) {
    std::cerr << "redimnet: usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "redimnet: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
