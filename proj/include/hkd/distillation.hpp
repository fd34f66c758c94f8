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
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "hkd/model.hpp"
#include "hkd/tape.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

enum class GateMode { kToken, kSentence };

std::string to_string(GateMode mode);

// Binary per-step switch between ground truth (alpha = 0) and teacher
// (alpha = 1) supervision, laid out [B x steps] like the prediction grid.
struct GateMask {
  std::size_t batch_size = 0;
  std::size_t steps = 0;
  std::vector<std::uint8_t> alpha;
  std::vector<std::uint8_t> valid;
  GateMode mode = GateMode::kToken;

  static GateMask all(const Batch& batch, bool value, GateMode mode = GateMode::kToken);

  std::uint8_t& at(std::size_t b, std::size_t t) { return alpha[b * steps + t]; }
  std::uint8_t at(std::size_t b, std::size_t t) const { return alpha[b * steps + t]; }
  std::size_t count_valid() const;
  // Fraction of valid steps with alpha = 1.
  double token_mean() const;
  // Mean over rows of the per-row fraction of alpha = 1.
  double sentence_mean() const;
  // Throws ValidationError when alpha is non-binary or set on padding, or
  // when sentence mode is not row-constant.
  void validate(const Batch& batch) const;
};

// Frozen teacher and the temperature applied to its logits.
struct TeacherHandle {
  ModelParams params;
  double temperature = 1.0;
};

// Dense per-step supervision rows q[n, v] plus per-step loss weights. Every
// loss below is -sum_n w_n sum_v q[n, v] log P(v | c_n).
struct SupervisionTarget {
  Tensor rows;                  // [B*steps x V]
  std::vector<double> weights;  // [B*steps]; 1/valid_steps or 0 on padding
};

struct LossValue {
  double value = 0.0;
  Tensor grad;  // d value / d logits, [B x steps x V]
};

// alpha_t = 1 iff P_student(y_t) > P_teacher(y_t; tau), strictly.
GateMask token_gate(const ProbGrid& student_probs, const ProbGrid& teacher_probs, const Batch& targets);

// Whole-row alpha from comparing sentence log-probabilities, strictly.
GateMask sentence_gate(std::span<const double> student_logprob, std::span<const double> teacher_logprob,
                       const Batch& targets);

SupervisionTarget onehot_supervision(const Batch& targets, std::size_t vocab_size);
SupervisionTarget hkd_supervision(const ProbGrid& teacher_probs, const GateMask& gates, const Batch& targets);

enum class SmoothingPrior { kUniform, kUnigram };

// (1 - epsilon) onehot + epsilon prior. The unigram prior needs counts over
// the vocabulary.
SupervisionTarget ls_supervision(const Batch& targets, std::size_t vocab_size, double epsilon,
                                 SmoothingPrior prior,
                                 std::optional<std::span<const double>> unigram_counts = std::nullopt);

// Closed-form evaluation: loss -sum q log softmax(z) averaged over valid steps
// and its logit gradient w_n (softmax(z) - q). Independent of the tape.
LossValue supervised_loss(const LogitGrid& student_logits, const SupervisionTarget& target);

LossValue ce_loss(const LogitGrid& student_logits, const Batch& targets);
LossValue hkd_loss(const LogitGrid& student_logits, const ProbGrid& teacher_probs,
                   const GateMask& gates, const Batch& targets);
LossValue ls_loss(const LogitGrid& student_logits, const Batch& targets, double epsilon,
                  SmoothingPrior prior, std::optional<std::span<const double>> unigram_counts = std::nullopt);
// Mean over valid steps of H(P_teacher, P_student) with the student at temperature 1.
double teacher_cross_entropy(const LogitGrid& student_logits, const ProbGrid& teacher_probs,
                             const Batch& targets);
// (1 - alpha) CE(y, P_student) + alpha CE(P_teacher(tau), P_student(tau)), per step.
LossValue soft_kd_loss(const LogitGrid& student_logits, const LogitGrid& teacher_logits,
                       const Batch& targets, double alpha, double tau);

// Tape versions used for training: log_softmax followed by a weighted
// cross-entropy node, so gradients come from the chained adjoints.
Tape::Var supervised_loss(Tape& tape, Tape::Var logits, const SupervisionTarget& target);
Tape::Var soft_kd_loss(Tape& tape, Tape::Var logits, const Tensor& teacher_logits, const Batch& targets,
                       double alpha, double tau);

// Sum over v != y of d loss / d z_v at every valid step, from the logit
// gradient of a loss. For CE this is 1 - P(y); under alpha = 1 it is
// P_teacher(y) - P_student(y). Values are unweighted (per-step losses).
std::vector<double> incorrect_class_grad_sum(const LogitGrid& student_logits, const ProbGrid& teacher_probs,
                                             const Batch& targets, const GateMask& gates);

struct SupervisionEntropies {
  double teacher = 0.0;  // H(P_teacher(tau))
  double soft = 0.0;     // H((1 - alpha) y + alpha P_teacher)
  double hard = 0.0;     // H(y)
};

SupervisionEntropies supervision_entropies(std::span<const double> teacher_row, std::size_t target_index,
                                           double alpha);

}  // namespace hkd
