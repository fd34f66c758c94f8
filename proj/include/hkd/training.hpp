// Copyright 2026 The hkd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hkd/calibration.hpp"
#include "hkd/datagen.hpp"
#include "hkd/distillation.hpp"
#include "hkd/model.hpp"

namespace hkd {

enum class LossMode { kCe, kLsUniform, kLsUnigram, kSoftKd, kHkdToken, kHkdSentence };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& name);
bool needs_teacher(LossMode mode);
bool is_hkd(LossMode mode);

// Adam with inverse-square-root decay after linear warmup.
struct OptimizerConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::size_t warmup_steps = 100;

  double learning_rate(std::size_t step) const;  // step is 1-based
};

struct TrainConfig {
  LossMode loss_mode = LossMode::kCe;
  std::string teacher_checkpoint;
  std::optional<double> teacher_temperature;  // empty means "fit"
  double ls_epsilon = 0.1;
  double soft_kd_alpha = 0.5;
  double soft_kd_tau = 2.0;
  OptimizerConfig optimizer;
  std::size_t epochs = 16;
  std::uint64_t seed = 0;
  std::size_t max_tokens = 512;
  ModelConfig model;  // vocab_size is taken from the corpus when zero
  std::vector<double> temperature_grid = kDefaultTemperatureGrid;
  std::size_t num_bins = kDefaultNumBins;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Missing fields keep their current values, so a config file can be layered
// over defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> alpha_token;     // hkd modes only
  std::optional<double> alpha_sentence;  // hkd modes only
  std::size_t valid_positions = 0;
  double lr = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_nll = 0.0;
  double valid_ece = 0.0;
  double valid_accuracy = 0.0;
};

struct RunLog {
  LossMode mode = LossMode::kCe;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;

  // step,epoch,loss,alpha_token,alpha_sentence,valid_positions,lr
  std::string steps_csv() const;
  // The gate trace: step,mode,alpha_mean,alpha_sentence_mean,count_valid.
  std::string gate_trace_csv() const;
  nlohmann::json epochs_json() const;
  static RunLog from_files(const std::string& steps_csv, const nlohmann::json& epochs);
};

// Per-tensor Adam moments.
struct OptimizerState {
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static OptimizerState for_params(const ModelParams& params);
};

// One Adam update from params' accumulated gradients. Throws NumericError on
// non-finite gradients without touching the parameters.
void step_optimizer(ModelParams& params, OptimizerState& state, const OptimizerConfig& config);

struct TrainHooks {
  // Called on every computed gate mask before it is used.
  std::function<void(GateMask&)> gate_override;
};

struct TrainResult {
  ModelParams best;  // lowest validation NLL
  RunLog log;
};

// Mini-batch training with the configured loss. KD modes need the teacher.
TrainResult train(const TrainConfig& config, const ParallelCorpus& corpus, const TeacherHandle* teacher = nullptr,
                  const TrainHooks& hooks = {});

struct TeacherBuild {
  TeacherHandle handle;
  RunLog log;
  std::optional<TemperatureFit> fit;
};

// Trains a same-architecture teacher with ce or ls_uniform, then fixes its
// temperature: fitted on validation data when config.teacher_temperature is
// empty, taken as-is otherwise.
TeacherBuild build_teacher(const TrainConfig& config, const ParallelCorpus& corpus);

// Resolves a temperature for a frozen model ("fit" when `fixed` is empty).
double resolve_temperature(const ModelParams& model, const ParallelCorpus& corpus, std::optional<double> fixed,
                           const TrainConfig& config, std::optional<TemperatureFit>* fit_out = nullptr);

// Target-side token counts over the training split (for the unigram prior).
std::vector<double> unigram_counts(const ParallelCorpus& corpus);

}  // namespace hkd
