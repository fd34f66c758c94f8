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

#include "hkd/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "hkd/errors.hpp"
#include "hkd/io.hpp"
#include "hkd/ops.hpp"

namespace hkd {

void ModelConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kNumReserved)) {
    throw ConfigError(fmt::format("vocab_size {} leaves no room beyond reserved ids", vocab_size));
  }
  if (embed_dim == 0 || ffn_dim == 0 || num_layers == 0 || max_len < 2) {
    throw ConfigError("embed_dim, ffn_dim and num_layers must be positive and max_len at least 2");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim}, {"ffn_dim", c.ffn_dim},
       {"num_layers", c.num_layers}, {"max_len", c.max_len},     {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.max_len = j.value("max_len", c.max_len);
  c.dropout = j.value("dropout", c.dropout);
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t ModelParams::add(std::string name, Shape shape) {
  tensors_.emplace_back(Tensor(std::move(shape)));
  names_.push_back(std::move(name));
  return tensors_.size() - 1;
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config_ = config;
  const std::size_t V = config.vocab_size, D = config.embed_dim, F = config.ffn_dim,
                    L = config.max_len;
  auto attention = [&](const std::string& prefix) {
    AttentionIdx a{};
    a.wq = p.add(prefix + ".wq", {D, D});
    a.wk = p.add(prefix + ".wk", {D, D});
    a.wv = p.add(prefix + ".wv", {D, D});
    a.wo = p.add(prefix + ".wo", {D, D});
    return a;
  };
  auto ffn = [&](const std::string& prefix) {
    FfnIdx f{};
    f.w1 = p.add(prefix + ".w1", {D, F});
    f.b1 = p.add(prefix + ".b1", {F});
    f.w2 = p.add(prefix + ".w2", {F, D});
    f.b2 = p.add(prefix + ".b2", {D});
    return f;
  };
  p.layout_.token_embedding = p.add("token_embedding", {V, D});
  p.layout_.encoder_positions = p.add("encoder_positions", {L, D});
  p.layout_.decoder_positions = p.add("decoder_positions", {L, D});
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string prefix = fmt::format("encoder.{}", l);
    EncoderIdx e{};
    e.self = attention(prefix + ".self");
    e.ffn = ffn(prefix + ".ffn");
    p.layout_.encoder.push_back(e);
  }
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string prefix = fmt::format("decoder.{}", l);
    DecoderIdx d{};
    d.self = attention(prefix + ".self");
    d.cross = attention(prefix + ".cross");
    d.ffn = ffn(prefix + ".ffn");
    p.layout_.decoder.push_back(d);
  }
  p.layout_.out_weight = p.add("output.weight", {D, V});
  p.layout_.out_bias = p.add("output.bias", {V});
  return p;
}

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zeros(config);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < p.count(); ++i) {
    if (p.at(i).value.rank() == 1) continue;  // biases stay zero
    for (double& w : p.at(i).value.data()) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      w = -0.08 + 0.16 * u;
    }
  }
  return p;
}

std::size_t ModelParams::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ValidationError("no parameter named " + name);
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t ModelParams::num_weights() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

bool ModelParams::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(),
                     [](const DualTensor& t) { return t.value.all_finite(); });
}

std::uint64_t ModelParams::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : tensors_) {
    const auto d = t.value.data();
    h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(d.data()), d.size_bytes()), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Batch

Batch Batch::from_sequences(const std::vector<std::vector<std::int32_t>>& sources,
                            const std::vector<std::vector<std::int32_t>>& targets) {
  if (sources.size() != targets.size() || sources.empty()) {
    throw ValidationError(fmt::format("batch needs matching nonempty rows, got {} sources and {} targets",
                                      sources.size(), targets.size()));
  }
  Batch b;
  b.batch_size = sources.size();
  for (std::size_t i = 0; i < sources.size(); ++i) {
    b.source_len = std::max(b.source_len, sources[i].size());
    b.target_len = std::max(b.target_len, targets[i].size());
  }
  b.source_ids.assign(b.batch_size * b.source_len, kPad);
  b.target_ids.assign(b.batch_size * b.target_len, kPad);
  b.source_mask.assign(b.source_ids.size(), 0);
  b.target_mask.assign(b.target_ids.size(), 0);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    for (std::size_t t = 0; t < sources[i].size(); ++t) {
      b.source_ids[i * b.source_len + t] = sources[i][t];
      b.source_mask[i * b.source_len + t] = 1;
    }
    for (std::size_t t = 0; t < targets[i].size(); ++t) {
      b.target_ids[i * b.target_len + t] = targets[i][t];
      b.target_mask[i * b.target_len + t] = 1;
    }
  }
  return b;
}

std::size_t Batch::source_length(std::size_t b) const {
  std::size_t n = 0;
  while (n < source_len && source_mask[b * source_len + n]) ++n;
  return n;
}

std::size_t Batch::target_length(std::size_t b) const {
  std::size_t n = 0;
  while (n < target_len && target_mask[b * target_len + n]) ++n;
  return n;
}

std::size_t Batch::valid_steps() const {
  std::size_t n = 0;
  for (std::size_t b = 0; b < batch_size; ++b) {
    for (std::size_t t = 0; t < steps(); ++t) n += step_valid(b, t) ? 1 : 0;
  }
  return n;
}

std::size_t Batch::real_tokens() const {
  std::size_t n = 0;
  for (auto m : source_mask) n += m;
  for (auto m : target_mask) n += m;
  return n;
}

void Batch::validate(std::size_t vocab_size) const {
  if (batch_size == 0 || source_len == 0 || target_len < 2) {
    throw ValidationError("batch needs at least one source token and a BOS plus one target");
  }
  if (source_ids.size() != batch_size * source_len || target_ids.size() != batch_size * target_len ||
      source_mask.size() != source_ids.size() || target_mask.size() != target_ids.size()) {
    throw ValidationError("batch grids have inconsistent sizes");
  }
  auto check_grid = [&](const std::vector<std::int32_t>& ids, const std::vector<std::uint8_t>& mask,
                        std::size_t width, const char* side) {
    for (std::size_t b = 0; b < batch_size; ++b) {
      bool seen_pad = false;
      for (std::size_t t = 0; t < width; ++t) {
        const std::int32_t id = ids[b * width + t];
        const bool real = mask[b * width + t] != 0;
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
          throw ValidationError(fmt::format("{} id {} at row {} pos {} outside vocab of {}", side, id, b,
                                            t, vocab_size));
        }
        if (real && seen_pad) throw ValidationError(fmt::format("{} row {} has a hole in its mask", side, b));
        if (real && id == kPad) throw ValidationError(fmt::format("{} row {} has PAD inside its span", side, b));
        if (!real) seen_pad = true;
      }
    }
  };
  check_grid(source_ids, source_mask, source_len, "source");
  check_grid(target_ids, target_mask, target_len, "target");
  for (std::size_t b = 0; b < batch_size; ++b) {
    if (source_length(b) == 0) throw ValidationError(fmt::format("row {} has an empty source", b));
    if (target_length(b) < 2) throw ValidationError(fmt::format("row {} has no predicted target", b));
  }
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

struct Binder {
  Tape& tape;
  const ModelParams& params;
  ModelParams* trainable;

  Tape::Var operator()(std::size_t idx) const {
    return trainable ? tape.parameter(trainable->at(idx)) : tape.parameter(params.at(idx).value);
  }
};

Tape::Var attention_block(Tape& tape, const Binder& bind, const ModelParams::AttentionIdx& idx,
                          Tape::Var queries, Tape::Var memory, AttentionLayout layout) {
  const auto q = tape.matmul(queries, bind(idx.wq));
  const auto k = tape.matmul(memory, bind(idx.wk));
  const auto v = tape.matmul(memory, bind(idx.wv));
  const auto a = tape.attention(q, k, v, std::move(layout));
  return tape.matmul(a, bind(idx.wo));
}

Tape::Var ffn_block(Tape& tape, const Binder& bind, const ModelParams::FfnIdx& idx, Tape::Var x) {
  const auto h = tape.relu(tape.add_bias(tape.matmul(x, bind(idx.w1)), bind(idx.b1)));
  return tape.add_bias(tape.matmul(h, bind(idx.w2)), bind(idx.b2));
}

struct DecoderInputs {
  const std::vector<std::int32_t>& ids;
  std::size_t len;
  std::vector<std::size_t> lengths;
};

Tape::Var build_forward(Tape& tape, const ModelParams& params, ModelParams* trainable,
                        const Batch& src, const DecoderInputs& dec, std::mt19937_64* rng) {
  const ModelConfig& cfg = params.config();
  const auto& layout = params.layout();
  const Binder bind{tape, params, trainable};
  const std::size_t B = src.batch_size;
  if (src.source_len > cfg.max_len || dec.len > cfg.max_len) {
    throw CapacityError(fmt::format("sequence of length {} exceeds max_len {}",
                                    std::max(src.source_len, dec.len), cfg.max_len));
  }
  const double rate = (rng && tape.recording()) ? cfg.dropout : 0.0;
  std::mt19937_64 unused;
  std::mt19937_64& gen = rng ? *rng : unused;

  std::vector<std::size_t> src_lengths(B);
  for (std::size_t b = 0; b < B; ++b) src_lengths[b] = src.source_length(b);

  const auto embed = bind(layout.token_embedding);
  auto x = tape.add(tape.gather_rows(embed, src.source_ids),
                    tape.tile_positions(bind(layout.encoder_positions), B, src.source_len));
  for (const auto& layer : layout.encoder) {
    AttentionLayout self{B, src.source_len, src.source_len, src_lengths, false};
    x = tape.add(x, tape.dropout(attention_block(tape, bind, layer.self, x, x, self), rate, gen));
    x = tape.add(x, tape.dropout(ffn_block(tape, bind, layer.ffn, x), rate, gen));
  }

  auto y = tape.add(tape.gather_rows(embed, dec.ids),
                    tape.tile_positions(bind(layout.decoder_positions), B, dec.len));
  for (const auto& layer : layout.decoder) {
    AttentionLayout self{B, dec.len, dec.len, dec.lengths, true};
    y = tape.add(y, tape.dropout(attention_block(tape, bind, layer.self, y, y, self), rate, gen));
    AttentionLayout cross{B, dec.len, src.source_len, src_lengths, false};
    y = tape.add(y, tape.dropout(attention_block(tape, bind, layer.cross, y, x, cross), rate, gen));
    y = tape.add(y, tape.dropout(ffn_block(tape, bind, layer.ffn, y), rate, gen));
  }
  return tape.add_bias(tape.matmul(y, bind(layout.out_weight)), bind(layout.out_bias));
}

// Decoder inputs are target rows without their final column.
std::vector<std::int32_t> shifted_inputs(const Batch& batch, std::vector<std::size_t>& lengths) {
  const std::size_t T = batch.steps();
  std::vector<std::int32_t> ids(batch.batch_size * T);
  lengths.assign(batch.batch_size, 0);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    for (std::size_t t = 0; t < T; ++t) ids[b * T + t] = batch.target_ids[b * batch.target_len + t];
    lengths[b] = std::max<std::size_t>(batch.target_length(b), 2) - 1;
  }
  return ids;
}

Tape::Var teacher_forced(Tape& tape, const ModelParams& params, ModelParams* trainable,
                         const Batch& batch, std::mt19937_64* rng) {
  batch.validate(params.config().vocab_size);
  std::vector<std::size_t> lengths;
  const auto ids = shifted_inputs(batch, lengths);
  return build_forward(tape, params, trainable, batch, DecoderInputs{ids, batch.steps(), lengths}, rng);
}

}  // namespace

Tape::Var forward(Tape& tape, ModelParams& params, const Batch& batch, std::mt19937_64* rng) {
  return teacher_forced(tape, params, &params, batch, rng);
}

LogitGrid forward(const ModelParams& params, const Batch& batch) {
  Tape tape(false);
  const auto out = teacher_forced(tape, params, nullptr, batch, nullptr);
  return LogitGrid{tape.value(out).reshaped({batch.batch_size, batch.steps(), params.config().vocab_size})};
}

Tensor decoder_logits(const ModelParams& params, const Batch& sources,
                      const std::vector<std::int32_t>& decoder_inputs, std::size_t input_len,
                      const std::vector<std::size_t>& input_lengths) {
  if (decoder_inputs.size() != sources.batch_size * input_len ||
      input_lengths.size() != sources.batch_size) {
    throw DimensionError("decoder inputs do not match the source batch");
  }
  Tape tape(false);
  const auto out = build_forward(tape, params, nullptr, sources,
                                 DecoderInputs{decoder_inputs, input_len, input_lengths}, nullptr);
  return tape.value(out);
}

ProbGrid to_probs(const LogitGrid& logits, double temperature) {
  return ProbGrid{softmax(logits.values, temperature)};
}

ProbGrid next_token_dist(const ModelParams& params, const Batch& batch, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  return to_probs(forward(params, batch), temperature);
}

std::vector<double> sentence_logprob(const LogitGrid& logits, const Batch& batch, double temperature) {
  const Tensor logp = log_softmax(logits.values, temperature);
  const std::size_t V = logp.cols();
  std::vector<double> out(batch.batch_size, 0.0);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    for (std::size_t t = 0; t < batch.steps(); ++t) {
      if (!batch.step_valid(b, t)) continue;
      out[b] += logp[(b * batch.steps() + t) * V + static_cast<std::size_t>(batch.label(b, t))];
    }
  }
  return out;
}

std::vector<double> sentence_logprob(const ModelParams& params, const Batch& batch,
                                     double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  return sentence_logprob(forward(params, batch), batch, temperature);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'H', 'K', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, std::string path) : data_(data), path_(std::move(path)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw IoError("truncated checkpoint " + path_);
  }
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const nlohmann::json& metadata) {
  nlohmann::json header = {{"config", params.config()}, {"metadata", metadata}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.count()));
  for (std::size_t i = 0; i < params.count(); ++i) {
    const std::string& name = params.name(i);
    const Tensor& t = params.at(i).value;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data().data()), t.data().size_bytes());
  }
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_text_file(path);
  Reader in(data, path.string());
  if (in.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw IoError(path.string() + " is not a checkpoint");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) throw IoError(fmt::format("unsupported checkpoint version {}", version));
  const auto header_len = in.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  Checkpoint ckpt;
  ckpt.params = ModelParams::zeros(header.at("config").get<ModelConfig>());
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  const auto count = in.get<std::uint32_t>();
  if (count != ckpt.params.count()) {
    throw IoError(fmt::format("checkpoint holds {} tensors, config implies {}", count, ckpt.params.count()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = in.bytes(in.get<std::uint32_t>());
    Tensor& t = ckpt.params.at(i).value;
    if (name != ckpt.params.name(i)) throw IoError("unexpected tensor " + name + " in " + path.string());
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint64_t>();
    if (shape != t.shape()) {
      throw IoError("tensor " + name + " has shape " + shape_string(shape) + ", expected " +
                    shape_string(t.shape()));
    }
    const std::string raw = in.bytes(t.data().size_bytes());
    std::memcpy(t.data().data(), raw.data(), raw.size());
  }
  if (!in.done()) throw IoError("trailing bytes in checkpoint " + path.string());
  return ckpt;
}

}  // namespace hkd
