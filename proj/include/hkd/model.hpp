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
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "hkd/tape.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

// Reserved token ids shared by the model and every vocabulary.
inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kBos = 1;
inline constexpr std::int32_t kEos = 2;
inline constexpr std::int32_t kUnk = 3;
inline constexpr std::int32_t kNumReserved = 4;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t ffn_dim = 128;
  std::size_t num_layers = 1;
  std::size_t max_len = 32;
  double dropout = 0.0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// All weights of the encoder-decoder, stored in a fixed canonical order so that
// optimizers, checkpoints and checksums can walk them uniformly.
class ModelParams {
 public:
  ModelParams() = default;
  // uniform(-0.08, 0.08) weights, zero biases.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);
  // Zero-filled tensors with the right shapes.
  static ModelParams zeros(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::size_t count() const { return tensors_.size(); }
  DualTensor& at(std::size_t i) { return tensors_.at(i); }
  const DualTensor& at(std::size_t i) const { return tensors_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::size_t index_of(const std::string& name) const;
  std::size_t num_weights() const;

  void zero_grad();
  bool all_finite() const;
  // FNV-1a over parameter values, in canonical order.
  std::uint64_t checksum() const;

  struct AttentionIdx {
    std::size_t wq, wk, wv, wo;
  };
  struct FfnIdx {
    std::size_t w1, b1, w2, b2;
  };
  struct EncoderIdx {
    AttentionIdx self;
    FfnIdx ffn;
  };
  struct DecoderIdx {
    AttentionIdx self, cross;
    FfnIdx ffn;
  };
  struct Layout {
    std::size_t token_embedding, encoder_positions, decoder_positions;
    std::vector<EncoderIdx> encoder;
    std::vector<DecoderIdx> decoder;
    std::size_t out_weight, out_bias;
  };
  const Layout& layout() const { return layout_; }

 private:
  std::size_t add(std::string name, Shape shape);

  ModelConfig config_;
  std::vector<DualTensor> tensors_;
  std::vector<std::string> names_;
  Layout layout_{};
};

// Padded source/target grids. target rows are BOS y_1 ... y_n EOS; prediction
// step t (0-based) reads decoder inputs 0..t and predicts target_ids[t + 1].
struct Batch {
  std::size_t batch_size = 0;
  std::size_t source_len = 0;
  std::size_t target_len = 0;
  std::vector<std::int32_t> source_ids;
  std::vector<std::int32_t> target_ids;
  std::vector<std::uint8_t> source_mask;
  std::vector<std::uint8_t> target_mask;
  // Position of each row in the corpus it came from, when known.
  std::vector<std::size_t> pair_index;

  // Pads ragged rows; targets must already carry BOS/EOS.
  static Batch from_sequences(const std::vector<std::vector<std::int32_t>>& sources,
                              const std::vector<std::vector<std::int32_t>>& targets);

  std::size_t steps() const { return target_len - 1; }
  std::int32_t label(std::size_t b, std::size_t t) const {
    return target_ids[b * target_len + t + 1];
  }
  bool step_valid(std::size_t b, std::size_t t) const {
    return target_mask[b * target_len + t + 1] != 0;
  }
  std::size_t source_length(std::size_t b) const;
  std::size_t target_length(std::size_t b) const;
  std::size_t valid_steps() const;
  std::size_t real_tokens() const;

  // Throws ValidationError unless ids are in range, masks are prefix-shaped
  // and every row has at least one predicted position.
  void validate(std::size_t vocab_size) const;
};

// [B x steps x V] scores or probabilities.
struct LogitGrid {
  Tensor values;
};
struct ProbGrid {
  Tensor values;
};

// Records the teacher-forced forward pass on `tape`; gradients flow into
// `params` on backward(). Returns a [B*steps x V] logit node.
Tape::Var forward(Tape& tape, ModelParams& params, const Batch& batch,
                  std::mt19937_64* dropout_rng = nullptr);

// Gradient-free evaluation.
LogitGrid forward(const ModelParams& params, const Batch& batch);

// Logits for every decoder input position: [B*T_in x V] for decoder_inputs of
// width T_in (row-major, PAD-padded, lengths given per row).
Tensor decoder_logits(const ModelParams& params, const Batch& sources,
                      const std::vector<std::int32_t>& decoder_inputs, std::size_t input_len,
                      const std::vector<std::size_t>& input_lengths);

ProbGrid next_token_dist(const ModelParams& params, const Batch& batch, double temperature);
ProbGrid to_probs(const LogitGrid& logits, double temperature);

// Per-row sum over valid steps of log P(y_t | c_<t; temperature).
std::vector<double> sentence_logprob(const ModelParams& params, const Batch& batch,
                                     double temperature);
std::vector<double> sentence_logprob(const LogitGrid& logits, const Batch& batch,
                                     double temperature);

// Versioned binary container: magic, version, JSON header (config plus
// free-form metadata), then named tensors with shape headers.
struct Checkpoint {
  ModelParams params;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hkd
