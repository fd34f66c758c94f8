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

#include "hkd/distillation.hpp"

#include <cmath>

#include <fmt/format.h>

#include "hkd/errors.hpp"
#include "hkd/ops.hpp"

namespace hkd {

std::string to_string(GateMode mode) { return mode == GateMode::kToken ? "token" : "sentence"; }

GateMask GateMask::all(const Batch& batch, bool value, GateMode mode) {
  GateMask g;
  g.batch_size = batch.batch_size;
  g.steps = batch.steps();
  g.mode = mode;
  g.alpha.assign(g.batch_size * g.steps, 0);
  g.valid.assign(g.batch_size * g.steps, 0);
  for (std::size_t b = 0; b < g.batch_size; ++b) {
    for (std::size_t t = 0; t < g.steps; ++t) {
      const bool ok = batch.step_valid(b, t);
      g.valid[b * g.steps + t] = ok;
      g.alpha[b * g.steps + t] = ok && value;
    }
  }
  return g;
}

std::size_t GateMask::count_valid() const {
  std::size_t n = 0;
  for (auto v : valid) n += v;
  return n;
}

double GateMask::token_mean() const {
  std::size_t on = 0, n = 0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (!valid[i]) continue;
    ++n;
    on += alpha[i];
  }
  return n == 0 ? 0.0 : static_cast<double>(on) / static_cast<double>(n);
}

double GateMask::sentence_mean() const {
  double total = 0.0;
  std::size_t rows = 0;
  for (std::size_t b = 0; b < batch_size; ++b) {
    std::size_t on = 0, n = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      if (!valid[b * steps + t]) continue;
      ++n;
      on += alpha[b * steps + t];
    }
    if (n == 0) continue;
    total += static_cast<double>(on) / static_cast<double>(n);
    ++rows;
  }
  return rows == 0 ? 0.0 : total / static_cast<double>(rows);
}

void GateMask::validate(const Batch& batch) const {
  if (batch_size != batch.batch_size || steps != batch.steps() || alpha.size() != batch_size * steps ||
      valid.size() != alpha.size()) {
    throw ValidationError(fmt::format("gate grid {}x{} does not match batch {}x{}", batch_size, steps,
                                      batch.batch_size, batch.steps()));
  }
  for (std::size_t b = 0; b < batch_size; ++b) {
    int row_value = -1;
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t i = b * steps + t;
      if (alpha[i] > 1) throw ValidationError(fmt::format("alpha {} at ({}, {}) is not binary", alpha[i], b, t));
      if (static_cast<bool>(valid[i]) != batch.step_valid(b, t)) {
        throw ValidationError(fmt::format("gate validity disagrees with the batch at ({}, {})", b, t));
      }
      if (!valid[i]) {
        if (alpha[i]) throw ValidationError(fmt::format("alpha set on padding at ({}, {})", b, t));
        continue;
      }
      if (mode == GateMode::kSentence) {
        if (row_value >= 0 && row_value != alpha[i]) {
          throw ValidationError(fmt::format("sentence gate varies within row {}", b));
        }
        row_value = alpha[i];
      }
    }
  }
}

namespace {

void check_grid(const Tensor& grid, const Batch& batch, const char* what) {
  if (grid.rank() != 3 || grid.dim(0) != batch.batch_size || grid.dim(1) != batch.steps()) {
    throw ValidationError(fmt::format("{} grid {} does not match batch {}x{}", what, shape_string(grid.shape()),
                                      batch.batch_size, batch.steps()));
  }
}

std::size_t label_index(const Batch& batch, std::size_t b, std::size_t t, std::size_t vocab) {
  const auto y = batch.label(b, t);
  if (y < 0 || static_cast<std::size_t>(y) >= vocab) {
    throw ValidationError(fmt::format("label {} outside vocabulary of {}", y, vocab));
  }
  return static_cast<std::size_t>(y);
}

std::vector<double> step_weights(const Batch& batch) {
  const std::size_t n = batch.valid_steps();
  if (n == 0) throw ValidationError("batch has no valid target positions");
  std::vector<double> w(batch.batch_size * batch.steps(), 0.0);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    for (std::size_t t = 0; t < batch.steps(); ++t) {
      if (batch.step_valid(b, t)) w[b * batch.steps() + t] = 1.0 / static_cast<double>(n);
    }
  }
  return w;
}

void check_teacher(const ProbGrid& teacher, const Batch& batch) {
  check_grid(teacher.values, batch, "teacher");
  if (!teacher.values.all_finite()) throw NumericError("teacher probabilities contain NaN or Inf");
}

}  // namespace

GateMask token_gate(const ProbGrid& student_probs, const ProbGrid& teacher_probs, const Batch& targets) {
  check_grid(student_probs.values, targets, "student");
  check_grid(teacher_probs.values, targets, "teacher");
  if (student_probs.values.shape() != teacher_probs.values.shape()) {
    throw ValidationError("student grid " + shape_string(student_probs.values.shape()) + " vs teacher grid " +
                          shape_string(teacher_probs.values.shape()));
  }
  const std::size_t V = student_probs.values.dim(2);
  GateMask g = GateMask::all(targets, false, GateMode::kToken);
  for (std::size_t b = 0; b < g.batch_size; ++b) {
    for (std::size_t t = 0; t < g.steps; ++t) {
      if (!g.valid[b * g.steps + t]) continue;
      const std::size_t row = (b * g.steps + t) * V + label_index(targets, b, t, V);
      g.at(b, t) = student_probs.values[row] > teacher_probs.values[row] ? 1 : 0;
    }
  }
  return g;
}

GateMask sentence_gate(std::span<const double> student_logprob, std::span<const double> teacher_logprob,
                       const Batch& targets) {
  if (student_logprob.size() != targets.batch_size || teacher_logprob.size() != targets.batch_size) {
    throw ValidationError(fmt::format("sentence scores for {} and {} rows, batch has {}", student_logprob.size(),
                                      teacher_logprob.size(), targets.batch_size));
  }
  GateMask g = GateMask::all(targets, false, GateMode::kSentence);
  for (std::size_t b = 0; b < g.batch_size; ++b) {
    const bool on = student_logprob[b] > teacher_logprob[b];
    for (std::size_t t = 0; t < g.steps; ++t) {
      if (g.valid[b * g.steps + t]) g.at(b, t) = on;
    }
  }
  return g;
}

SupervisionTarget onehot_supervision(const Batch& targets, std::size_t vocab_size) {
  SupervisionTarget s{Tensor({targets.batch_size * targets.steps(), vocab_size}), step_weights(targets)};
  for (std::size_t b = 0; b < targets.batch_size; ++b) {
    for (std::size_t t = 0; t < targets.steps(); ++t) {
      if (!targets.step_valid(b, t)) continue;
      s.rows.at(b * targets.steps() + t, label_index(targets, b, t, vocab_size)) = 1.0;
    }
  }
  return s;
}

SupervisionTarget hkd_supervision(const ProbGrid& teacher_probs, const GateMask& gates, const Batch& targets) {
  check_teacher(teacher_probs, targets);
  gates.validate(targets);
  const std::size_t V = teacher_probs.values.dim(2);
  SupervisionTarget s = onehot_supervision(targets, V);
  for (std::size_t b = 0; b < targets.batch_size; ++b) {
    for (std::size_t t = 0; t < targets.steps(); ++t) {
      if (!gates.at(b, t)) continue;
      const std::size_t n = b * targets.steps() + t;
      auto dst = s.rows.row(n);
      const auto src = teacher_probs.values.row(n);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  return s;
}

SupervisionTarget ls_supervision(const Batch& targets, std::size_t vocab_size, double epsilon,
                                 SmoothingPrior prior, std::optional<std::span<const double>> unigram_counts) {
  // epsilon = 1 is the pure-prior limit; training configs stay below it.
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError(fmt::format("epsilon {} outside [0, 1]", epsilon));
  std::vector<double> p(vocab_size, 1.0 / static_cast<double>(vocab_size));
  if (prior == SmoothingPrior::kUnigram) {
    if (!unigram_counts || unigram_counts->size() != vocab_size) {
      throw ConfigError("unigram label smoothing needs counts over the whole vocabulary");
    }
    double total = 0.0;
    for (double c : *unigram_counts) {
      if (!(c >= 0.0)) throw ConfigError("unigram counts must be nonnegative");
      total += c;
    }
    if (!(total > 0.0)) throw ConfigError("unigram counts are all zero");
    for (std::size_t v = 0; v < vocab_size; ++v) p[v] = (*unigram_counts)[v] / total;
  }
  SupervisionTarget s = onehot_supervision(targets, vocab_size);
  for (std::size_t n = 0; n < s.weights.size(); ++n) {
    if (s.weights[n] == 0.0) continue;
    auto row = s.rows.row(n);
    for (std::size_t v = 0; v < vocab_size; ++v) row[v] = (1.0 - epsilon) * row[v] + epsilon * p[v];
  }
  return s;
}

LossValue supervised_loss(const LogitGrid& student_logits, const SupervisionTarget& target) {
  const Tensor& z = student_logits.values;
  if (target.rows.size() != z.size() || target.weights.size() != z.rows()) {
    throw DimensionError("supervision " + shape_string(target.rows.shape()) + " vs logits " +
                         shape_string(z.shape()));
  }
  const std::size_t V = z.cols();
  LossValue out{0.0, Tensor(z.shape())};
  std::vector<double> logp(V);
  for (std::size_t n = 0; n < z.rows(); ++n) {
    const double w = target.weights[n];
    if (w == 0.0) continue;
    log_softmax_row(z.row(n), 1.0, logp);
    const auto q = target.rows.row(n);
    double acc = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      // log_softmax is finite; the floor guards the q > 0, p -> 0 corner.
      acc -= q[v] * std::max(logp[v], std::log(kProbFloor));
      out.grad[n * V + v] = w * (std::exp(logp[v]) - q[v]);
    }
    out.value += w * acc;
  }
  return out;
}

LossValue ce_loss(const LogitGrid& student_logits, const Batch& targets) {
  check_grid(student_logits.values, targets, "student");
  return supervised_loss(student_logits, onehot_supervision(targets, student_logits.values.dim(2)));
}

LossValue hkd_loss(const LogitGrid& student_logits, const ProbGrid& teacher_probs, const GateMask& gates,
                   const Batch& targets) {
  check_grid(student_logits.values, targets, "student");
  if (student_logits.values.shape() != teacher_probs.values.shape()) {
    throw ValidationError("student logits and teacher probabilities differ in shape");
  }
  return supervised_loss(student_logits, hkd_supervision(teacher_probs, gates, targets));
}

LossValue ls_loss(const LogitGrid& student_logits, const Batch& targets, double epsilon, SmoothingPrior prior,
                  std::optional<std::span<const double>> unigram_counts) {
  check_grid(student_logits.values, targets, "student");
  return supervised_loss(student_logits,
                         ls_supervision(targets, student_logits.values.dim(2), epsilon, prior, unigram_counts));
}

double teacher_cross_entropy(const LogitGrid& student_logits, const ProbGrid& teacher_probs,
                             const Batch& targets) {
  check_grid(student_logits.values, targets, "student");
  check_teacher(teacher_probs, targets);
  const Tensor logp = log_softmax(student_logits.values, 1.0);
  const std::size_t V = logp.cols();
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < targets.batch_size; ++b) {
    for (std::size_t t = 0; t < targets.steps(); ++t) {
      if (!targets.step_valid(b, t)) continue;
      const std::size_t r = b * targets.steps() + t;
      double h = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        h -= teacher_probs.values[r * V + v] * std::max(logp[r * V + v], std::log(kProbFloor));
      }
      total += h;
      ++n;
    }
  }
  return total / static_cast<double>(n);
}

namespace {

void check_soft_kd(double alpha, double tau) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError(fmt::format("soft KD alpha {} outside [0, 1]", alpha));
  if (!(tau > 0.0)) throw ConfigError(fmt::format("soft KD temperature {} must be positive", tau));
}

}  // namespace

LossValue soft_kd_loss(const LogitGrid& student_logits, const LogitGrid& teacher_logits, const Batch& targets,
                       double alpha, double tau) {
  check_soft_kd(alpha, tau);
  check_grid(student_logits.values, targets, "student");
  check_grid(teacher_logits.values, targets, "teacher");
  const LossValue hard = ce_loss(student_logits, targets);
  const ProbGrid teacher_tau = to_probs(teacher_logits, tau);
  const Tensor logp_tau = log_softmax(student_logits.values, tau);
  const std::size_t V = logp_tau.cols();
  const std::vector<double> w = step_weights(targets);
  LossValue out{(1.0 - alpha) * hard.value, Tensor(student_logits.values.shape())};
  for (std::size_t n = 0; n < w.size(); ++n) {
    if (w[n] == 0.0) continue;
    double acc = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      const double q = teacher_tau.values[n * V + v];
      acc -= q * logp_tau[n * V + v];
      const double soft_grad = w[n] * (std::exp(logp_tau[n * V + v]) - q) / tau;
      out.grad[n * V + v] = (1.0 - alpha) * hard.grad[n * V + v] + alpha * soft_grad;
    }
    out.value += alpha * w[n] * acc;
  }
  return out;
}

Tape::Var supervised_loss(Tape& tape, Tape::Var logits, const SupervisionTarget& target) {
  const auto logp = tape.log_softmax(logits, 1.0);
  return tape.weighted_cross_entropy(logp, target.rows, target.weights);
}

Tape::Var soft_kd_loss(Tape& tape, Tape::Var logits, const Tensor& teacher_logits, const Batch& targets,
                       double alpha, double tau) {
  check_soft_kd(alpha, tau);
  const std::size_t V = tape.value(logits).cols();
  const SupervisionTarget hard = onehot_supervision(targets, V);
  SupervisionTarget soft{softmax(teacher_logits.reshaped(tape.value(logits).shape()), tau), hard.weights};
  const auto hard_term = tape.weighted_cross_entropy(tape.log_softmax(logits, 1.0), hard.rows, hard.weights);
  const auto soft_term = tape.weighted_cross_entropy(tape.log_softmax(logits, tau), soft.rows, soft.weights);
  return tape.add(tape.scale(hard_term, 1.0 - alpha), tape.scale(soft_term, alpha));
}

std::vector<double> incorrect_class_grad_sum(const LogitGrid& student_logits, const ProbGrid& teacher_probs,
                                             const Batch& targets, const GateMask& gates) {
  const SupervisionTarget s = hkd_supervision(teacher_probs, gates, targets);
  const Tensor& z = student_logits.values;
  const std::size_t V = z.cols();
  std::vector<double> out;
  std::vector<double> p(V);
  for (std::size_t b = 0; b < targets.batch_size; ++b) {
    for (std::size_t t = 0; t < targets.steps(); ++t) {
      if (!targets.step_valid(b, t)) continue;
      const std::size_t n = b * targets.steps() + t;
      const std::size_t y = label_index(targets, b, t, V);
      softmax_row(z.row(n), 1.0, p);
      double sum = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        if (v != y) sum += p[v] - s.rows[n * V + v];
      }
      out.push_back(sum);
    }
  }
  return out;
}

SupervisionEntropies supervision_entropies(std::span<const double> teacher_row, std::size_t target_index,
                                           double alpha) {
  if (target_index >= teacher_row.size()) throw ValidationError("target index outside the teacher row");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("interpolation weight outside [0, 1]");
  std::vector<double> soft(teacher_row.begin(), teacher_row.end());
  std::vector<double> hard(teacher_row.size(), 0.0);
  hard[target_index] = 1.0;
  for (std::size_t v = 0; v < soft.size(); ++v) soft[v] = (1.0 - alpha) * hard[v] + alpha * soft[v];
  return {entropy(teacher_row), entropy(soft), entropy(hard)};
}

}  // namespace hkd
