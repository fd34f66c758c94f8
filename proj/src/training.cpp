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

#include "hkd/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include <fmt/format.h>

#include "hkd/errors.hpp"
#include "hkd/io.hpp"
#include "hkd/ops.hpp"

namespace hkd {

namespace {

struct ModeName {
  LossMode mode;
  const char* name;
};

constexpr ModeName kModeNames[] = {
    {LossMode::kCe, "ce"},           {LossMode::kLsUniform, "ls_uniform"}, {LossMode::kLsUnigram, "ls_unigram"},
    {LossMode::kSoftKd, "soft_kd"},  {LossMode::kHkdToken, "hkd_token"},   {LossMode::kHkdSentence, "hkd_sentence"},
};

std::string opt_real(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

std::optional<double> parse_opt_real(const std::string& field) {
  if (field.empty()) return std::nullopt;
  return std::stod(field);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string to_string(LossMode mode) {
  for (const auto& m : kModeNames) {
    if (m.mode == mode) return m.name;
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& name) {
  for (const auto& m : kModeNames) {
    if (name == m.name) return m.mode;
  }
  throw ConfigError(fmt::format("unknown loss mode '{}'", name));
}

bool needs_teacher(LossMode mode) {
  return mode == LossMode::kSoftKd || mode == LossMode::kHkdToken || mode == LossMode::kHkdSentence;
}

bool is_hkd(LossMode mode) { return mode == LossMode::kHkdToken || mode == LossMode::kHkdSentence; }

double OptimizerConfig::learning_rate(std::size_t step) const {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  if (warmup_steps == 0) return lr / std::sqrt(s);
  const double w = static_cast<double>(warmup_steps);
  return s <= w ? lr * s / w : lr * std::sqrt(w / s);
}

void TrainConfig::validate() const {
  if (!(optimizer.lr > 0.0) || !std::isfinite(optimizer.lr)) throw ConfigError("lr must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(optimizer.eps > 0.0)) throw ConfigError("adam eps must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (max_tokens == 0) throw ConfigError("max_tokens must be positive");
  if (!(ls_epsilon >= 0.0 && ls_epsilon < 1.0)) throw ConfigError("ls_epsilon must lie in [0, 1)");
  if (!(soft_kd_alpha >= 0.0 && soft_kd_alpha <= 1.0)) throw ConfigError("soft_kd_alpha must lie in [0, 1]");
  if (!(soft_kd_tau > 0.0)) throw ConfigError("soft_kd_tau must be positive");
  if (teacher_temperature && !(*teacher_temperature > 0.0 && std::isfinite(*teacher_temperature))) {
    throw ConfigError("teacher temperature must be positive");
  }
  if (temperature_grid.empty()) throw ConfigError("temperature grid is empty");
  for (double t : temperature_grid) {
    if (!(t > 0.0)) throw ConfigError("temperature grid entries must be positive");
  }
  if (num_bins == 0) throw ConfigError("num_bins must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"loss_mode", to_string(c.loss_mode)},
       {"teacher_checkpoint", c.teacher_checkpoint},
       {"ls_epsilon", c.ls_epsilon},
       {"soft_kd_alpha", c.soft_kd_alpha},
       {"soft_kd_tau", c.soft_kd_tau},
       {"lr", c.optimizer.lr},
       {"adam_beta1", c.optimizer.beta1},
       {"adam_beta2", c.optimizer.beta2},
       {"adam_eps", c.optimizer.eps},
       {"warmup_steps", c.optimizer.warmup_steps},
       {"epochs", c.epochs},
       {"seed", c.seed},
       {"max_tokens", c.max_tokens},
       {"model", c.model},
       {"temperature_grid", c.temperature_grid},
       {"num_bins", c.num_bins}};
  if (c.teacher_temperature) {
    j["teacher_temperature"] = *c.teacher_temperature;
  } else {
    j["teacher_temperature"] = "fit";
  }
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  static const char* kKnown[] = {"loss_mode", "teacher_checkpoint", "teacher_temperature", "ls_epsilon",
                                 "soft_kd_alpha", "soft_kd_tau", "lr", "adam_beta1", "adam_beta2", "adam_eps",
                                 "warmup_steps", "epochs", "seed", "max_tokens", "model", "temperature_grid",
                                 "num_bins"};
  for (const auto& item : j.items()) {
    if (std::find_if(std::begin(kKnown), std::end(kKnown), [&](const char* k) { return item.key() == k; }) ==
        std::end(kKnown)) {
      throw ConfigError(fmt::format("unknown train config field '{}'", item.key()));
    }
  }
  try {
    if (j.contains("loss_mode")) c.loss_mode = parse_loss_mode(j.at("loss_mode").get<std::string>());
    if (j.contains("teacher_checkpoint")) c.teacher_checkpoint = j.at("teacher_checkpoint").get<std::string>();
    if (j.contains("teacher_temperature")) {
      const auto& t = j.at("teacher_temperature");
      if (t.is_string()) {
        if (t.get<std::string>() != "fit") throw ConfigError("teacher_temperature must be a number or \"fit\"");
        c.teacher_temperature.reset();
      } else {
        c.teacher_temperature = t.get<double>();
      }
    }
    if (j.contains("ls_epsilon")) c.ls_epsilon = j.at("ls_epsilon").get<double>();
    if (j.contains("soft_kd_alpha")) c.soft_kd_alpha = j.at("soft_kd_alpha").get<double>();
    if (j.contains("soft_kd_tau")) c.soft_kd_tau = j.at("soft_kd_tau").get<double>();
    if (j.contains("lr")) c.optimizer.lr = j.at("lr").get<double>();
    if (j.contains("adam_beta1")) c.optimizer.beta1 = j.at("adam_beta1").get<double>();
    if (j.contains("adam_beta2")) c.optimizer.beta2 = j.at("adam_beta2").get<double>();
    if (j.contains("adam_eps")) c.optimizer.eps = j.at("adam_eps").get<double>();
    if (j.contains("warmup_steps")) c.optimizer.warmup_steps = j.at("warmup_steps").get<std::size_t>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("max_tokens")) c.max_tokens = j.at("max_tokens").get<std::size_t>();
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("temperature_grid")) c.temperature_grid = j.at("temperature_grid").get<std::vector<double>>();
    if (j.contains("num_bins")) c.num_bins = j.at("num_bins").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("bad train config: {}", e.what()));
  }
}

std::string RunLog::steps_csv() const {
  std::string out = "step,epoch,loss,alpha_token,alpha_sentence,valid_positions,lr\n";
  for (const auto& s : steps) {
    out += fmt::format("{},{},{},{},{},{},{}\n", s.step, s.epoch, format_real(s.loss), opt_real(s.alpha_token),
                       opt_real(s.alpha_sentence), s.valid_positions, format_real(s.lr));
  }
  return out;
}

std::string RunLog::gate_trace_csv() const {
  std::string out = "step,mode,alpha_mean,alpha_sentence_mean,count_valid\n";
  const std::string mode_name = mode == LossMode::kHkdSentence ? "sentence" : "token";
  for (const auto& s : steps) {
    if (!s.alpha_token) continue;
    out += fmt::format("{},{},{},{},{}\n", s.step, mode_name, format_real(*s.alpha_token),
                       opt_real(s.alpha_sentence), s.valid_positions);
  }
  return out;
}

nlohmann::json RunLog::epochs_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"valid_nll", e.valid_nll},
                    {"valid_ece", e.valid_ece},
                    {"valid_accuracy", e.valid_accuracy}});
  }
  return {{"loss_mode", to_string(mode)}, {"best_epoch", best_epoch}, {"epochs", rows}};
}

RunLog RunLog::from_files(const std::string& steps_csv, const nlohmann::json& epochs) {
  RunLog log;
  try {
    log.mode = parse_loss_mode(epochs.at("loss_mode").get<std::string>());
    log.best_epoch = epochs.at("best_epoch").get<std::size_t>();
    for (const auto& e : epochs.at("epochs")) {
      log.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                            e.at("valid_nll").get<double>(), e.at("valid_ece").get<double>(),
                            e.at("valid_accuracy").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(fmt::format("bad epoch log: {}", e.what()));
  }
  std::istringstream in(steps_csv);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 7) throw IoError(fmt::format("bad step log row '{}'", line));
    log.steps.push_back({std::stoul(f[0]), std::stoul(f[1]), std::stod(f[2]), parse_opt_real(f[3]),
                         parse_opt_real(f[4]), std::stoul(f[5]), std::stod(f[6])});
  }
  return log;
}

OptimizerState OptimizerState::for_params(const ModelParams& params) {
  OptimizerState s;
  for (std::size_t i = 0; i < params.count(); ++i) {
    Tensor zero(params.at(i).value.shape());
    s.m.push_back(zero);
    s.v.push_back(std::move(zero));
  }
  return s;
}

void step_optimizer(ModelParams& params, OptimizerState& state, const OptimizerConfig& config) {
  if (state.m.size() != params.count() || state.v.size() != params.count()) {
    throw DimensionError("optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& p = params.at(i);
    if (p.grad.shape() != state.m[i].shape()) {
      throw DimensionError(fmt::format("optimizer state shape {} vs gradient {} for {}", shape_string(state.m[i].shape()),
                                       shape_string(p.grad.shape()), params.name(i)));
    }
    if (!p.grad.all_finite()) throw NumericError(fmt::format("non-finite gradient in {}", params.name(i)));
  }
  ++state.step;
  const double lr = config.learning_rate(state.step);
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params.at(i);
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    auto w = p.value.data();
    const auto g = std::as_const(p.grad).data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.eps);
    }
  }
}

std::vector<double> unigram_counts(const ParallelCorpus& corpus) {
  std::vector<double> counts(corpus.vocab.size(), 0.0);
  for (const auto& pair : corpus.train) {
    for (std::size_t i = 1; i < pair.target.size(); ++i) counts.at(static_cast<std::size_t>(pair.target[i])) += 1.0;
  }
  return counts;
}

namespace {

struct ValidationStats {
  double nll = 0.0;
  double ece = 0.0;
  double accuracy = 0.0;
};

ValidationStats validate_model(const ModelParams& model, std::span<const Batch> batches, std::size_t num_bins) {
  ValidationStats s;
  s.nll = mean_nll(model, batches, 1.0);
  const auto records = collect_next_token_records(model, 1.0, batches);
  s.ece = ece(bin_predictions(records, num_bins));
  std::size_t correct = 0;
  for (const auto& r : records) correct += r.correct ? 1 : 0;
  s.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
  return s;
}

// Frozen teacher outputs for one batch; batches are fixed across epochs, so
// these are computed once.
struct TeacherCache {
  LogitGrid logits;
  ProbGrid probs;
  std::vector<double> sentence_logprob;
};

ModelConfig resolve_model_config(const TrainConfig& config, const ParallelCorpus& corpus) {
  ModelConfig mc = config.model;
  if (mc.vocab_size == 0) mc.vocab_size = corpus.vocab.size();
  if (mc.vocab_size != corpus.vocab.size()) {
    throw IncompatibilityError(
        fmt::format("model vocab {} does not match corpus vocab {}", mc.vocab_size, corpus.vocab.size()));
  }
  mc.validate();
  return mc;
}

}  // namespace

TrainResult train(const TrainConfig& config, const ParallelCorpus& corpus, const TeacherHandle* teacher,
                  const TrainHooks& hooks) {
  config.validate();
  if (corpus.train.empty()) throw ValidationError("training split is empty");
  if (corpus.valid.empty()) throw ValidationError("validation split is empty");
  const ModelConfig mc = resolve_model_config(config, corpus);
  const LossMode mode = config.loss_mode;
  if (needs_teacher(mode)) {
    if (teacher == nullptr) throw ConfigError(fmt::format("loss mode {} needs a teacher", to_string(mode)));
    if (teacher->params.config() != mc) {
      throw IncompatibilityError("teacher architecture or vocabulary differs from the student");
    }
    if (!(teacher->temperature > 0.0)) throw ConfigError("teacher temperature must be positive");
  }
  const std::size_t V = mc.vocab_size;

  BatchingStats stats;
  const std::vector<Batch> batches = make_batches(corpus.train, config.max_tokens, config.seed + 1, &stats);
  const std::vector<Batch> valid_batches = make_batches(corpus.valid, config.max_tokens, config.seed + 1);
  if (batches.empty()) throw ValidationError("no training pair fits in max_tokens");
  if (valid_batches.empty()) throw ValidationError("no validation pair fits in max_tokens");

  std::vector<double> counts;
  if (mode == LossMode::kLsUnigram) counts = unigram_counts(corpus);

  std::vector<std::optional<TeacherCache>> cache(batches.size());
  auto teacher_outputs = [&](std::size_t bi) -> const TeacherCache& {
    if (!cache[bi]) {
      TeacherCache tc;
      tc.logits = forward(teacher->params, batches[bi]);
      tc.probs = to_probs(tc.logits, teacher->temperature);
      tc.sentence_logprob = sentence_logprob(tc.logits, batches[bi], teacher->temperature);
      cache[bi] = std::move(tc);
    }
    return *cache[bi];
  };

  ModelParams params = ModelParams::initialize(mc, config.seed);
  OptimizerState opt = OptimizerState::for_params(params);
  std::mt19937_64 dropout_rng(config.seed + 2);

  TrainResult result;
  result.log.mode = mode;
  double best_nll = std::numeric_limits<double>::infinity();
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = shuffled_order(batches.size(), config.seed * 1000003ULL + epoch);
    double loss_sum = 0.0;
    std::size_t loss_positions = 0;
    for (std::size_t bi : order) {
      const Batch& batch = batches[bi];
      ++step;
      params.zero_grad();
      Tape tape;
      const Tape::Var logits = forward(tape, params, batch, mc.dropout > 0.0 ? &dropout_rng : nullptr);
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.valid_positions = batch.valid_steps();

      Tape::Var loss{};
      switch (mode) {
        case LossMode::kCe:
          loss = supervised_loss(tape, logits, onehot_supervision(batch, V));
          break;
        case LossMode::kLsUniform:
          loss = supervised_loss(tape, logits, ls_supervision(batch, V, config.ls_epsilon, SmoothingPrior::kUniform));
          break;
        case LossMode::kLsUnigram:
          loss = supervised_loss(tape, logits,
                                 ls_supervision(batch, V, config.ls_epsilon, SmoothingPrior::kUnigram,
                                                std::span<const double>(counts)));
          break;
        case LossMode::kSoftKd: {
          const auto& tc = teacher_outputs(bi);
          loss = soft_kd_loss(tape, logits, tc.logits.values, batch, config.soft_kd_alpha, config.soft_kd_tau);
          break;
        }
        case LossMode::kHkdToken:
        case LossMode::kHkdSentence: {
          const auto& tc = teacher_outputs(bi);
          // Gates treat both models as constants. Without dropout the recorded
          // forward already is the no-gradient evaluation, bit for bit.
          const LogitGrid student =
              mc.dropout > 0.0
                  ? forward(params, batch)
                  : LogitGrid{tape.value(logits).reshaped({batch.batch_size, batch.steps(), V})};
          GateMask gates = mode == LossMode::kHkdToken
                               ? token_gate(to_probs(student, 1.0), tc.probs, batch)
                               : sentence_gate(sentence_logprob(student, batch, 1.0), tc.sentence_logprob, batch);
          if (hooks.gate_override) hooks.gate_override(gates);
          rec.alpha_token = gates.token_mean();
          rec.alpha_sentence = gates.sentence_mean();
          loss = supervised_loss(tape, logits, hkd_supervision(tc.probs, gates, batch));
          break;
        }
      }

      rec.loss = tape.value(loss).data()[0];
      if (!std::isfinite(rec.loss)) {
        throw NumericError(fmt::format("non-finite loss at step {} (epoch {}, batch {}): loss={} mode={} alpha={}",
                                       step, epoch, bi, rec.loss, to_string(mode), opt_real(rec.alpha_token)));
      }
      tape.backward(loss);
      try {
        step_optimizer(params, opt, config.optimizer);
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("step {} (epoch {}, batch {}), loss={}: {}", step, epoch, bi, rec.loss,
                                       e.what()));
      }
      rec.lr = config.optimizer.learning_rate(opt.step);
      loss_sum += rec.loss * static_cast<double>(rec.valid_positions);
      loss_positions += rec.valid_positions;
      result.log.steps.push_back(rec);
    }

    const ValidationStats vs = validate_model(params, valid_batches, config.num_bins);
    result.log.epochs.push_back(
        {epoch, loss_sum / static_cast<double>(std::max<std::size_t>(loss_positions, 1)), vs.nll, vs.ece, vs.accuracy});
    if (vs.nll < best_nll) {
      best_nll = vs.nll;
      result.best = params;
      result.log.best_epoch = epoch;
    }
  }
  return result;
}

double resolve_temperature(const ModelParams& model, const ParallelCorpus& corpus, std::optional<double> fixed,
                           const TrainConfig& config, std::optional<TemperatureFit>* fit_out) {
  if (fixed) {
    if (!(*fixed > 0.0)) throw ConfigError("teacher temperature must be positive");
    return *fixed;
  }
  const auto valid_batches = make_batches(corpus.valid, config.max_tokens, config.seed + 1);
  const TemperatureFit fit = fit_temperature(model, valid_batches, config.temperature_grid);
  if (fit_out) *fit_out = fit;
  return fit.temperature;
}

TeacherBuild build_teacher(const TrainConfig& config, const ParallelCorpus& corpus) {
  if (config.loss_mode != LossMode::kCe && config.loss_mode != LossMode::kLsUniform) {
    throw ConfigError(fmt::format("teacher loss must be ce or ls_uniform, got {}", to_string(config.loss_mode)));
  }
  TrainResult trained = train(config, corpus);
  TeacherBuild out;
  out.log = std::move(trained.log);
  out.handle.temperature = resolve_temperature(trained.best, corpus, config.teacher_temperature, config, &out.fit);
  out.handle.params = std::move(trained.best);
  return out;
}

}  // namespace hkd
