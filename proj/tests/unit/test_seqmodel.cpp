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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "hkd/errors.hpp"
#include "hkd/model.hpp"
#include "hkd/ops.hpp"
#include "test_util.hpp"

using namespace hkd;

namespace {

ModelConfig tiny_config(std::size_t vocab = 12) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 8;
  c.ffn_dim = 12;
  c.max_len = 10;
  return c;
}

std::vector<std::int32_t> random_tokens(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(kNumReserved + static_cast<std::int32_t>(rng() % (vocab - kNumReserved)));
  return out;
}

std::vector<std::int32_t> with_specials(std::vector<std::int32_t> body) {
  body.insert(body.begin(), kBos);
  body.push_back(kEos);
  return body;
}

Batch random_batch(std::mt19937_64& rng, std::size_t rows, std::size_t vocab) {
  std::vector<std::vector<std::int32_t>> src, tgt;
  for (std::size_t r = 0; r < rows; ++r) {
    src.push_back(random_tokens(rng, 2 + rng() % 5, vocab));
    tgt.push_back(with_specials(random_tokens(rng, 1 + rng() % 5, vocab)));
  }
  return Batch::from_sequences(src, tgt);
}

double mean_nll_of(ModelParams& params, const Batch& batch) {
  Tape tape;
  const auto logits = forward(tape, params, batch);
  const Tensor& z = tape.value(logits);
  std::vector<double> lp(z.cols());
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    for (std::size_t t = 0; t < batch.steps(); ++t) {
      if (!batch.step_valid(b, t)) continue;
      log_softmax_row(z.row(b * batch.steps() + t), 1.0, lp);
      total -= lp[static_cast<std::size_t>(batch.label(b, t))];
      ++n;
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("model config validation and json round trip") {
  ModelConfig c = tiny_config();
  c.validate();
  nlohmann::json j = c;
  CHECK(j.get<ModelConfig>() == c);
  ModelConfig bad = c;
  bad.embed_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("initialization ranges") {
  const ModelParams p = ModelParams::initialize(tiny_config(), 4);
  for (std::size_t i = 0; i < p.count(); ++i) {
    const bool bias = p.name(i).ends_with(".b1") || p.name(i).ends_with(".b2") || p.name(i) == "output.bias";
    for (double v : p.at(i).value.data()) {
      if (bias) {
        CHECK(v == 0.0);
      } else {
        CHECK(std::abs(v) <= 0.08);
      }
    }
  }
  CHECK(ModelParams::initialize(tiny_config(), 4).checksum() == p.checksum());
  CHECK(ModelParams::initialize(tiny_config(), 5).checksum() != p.checksum());
}

TEST_CASE("batch layout and validation") {
  const Batch b = Batch::from_sequences({{5, 6, 7}, {8}}, {{kBos, 9, kEos}, {kBos, 4, 5, kEos}});
  CHECK(b.batch_size == 2);
  CHECK(b.source_len == 3);
  CHECK(b.target_len == 4);
  CHECK(b.steps() == 3);
  CHECK(b.label(0, 0) == 9);
  CHECK(b.label(0, 1) == kEos);
  CHECK_FALSE(b.step_valid(0, 2));
  CHECK(b.valid_steps() == 5);
  b.validate(12);
  CHECK_THROWS_AS(b.validate(9), ValidationError);

  Batch pad_inside = b;
  pad_inside.source_ids[1] = kPad;
  CHECK_THROWS_AS(pad_inside.validate(12), ValidationError);
}

TEST_CASE("forward is causal in the target prefix") {
  std::mt19937_64 rng(1);
  const ModelParams p = ModelParams::initialize(tiny_config(), 1);
  Batch batch = Batch::from_sequences({{5, 6, 7, 8}}, {with_specials({4, 9, 10, 11})});
  const LogitGrid base = forward(p, batch);
  for (std::size_t j = 1; j + 1 < batch.target_len; ++j) {
    Batch changed = batch;
    changed.target_ids[j] = changed.target_ids[j] == 4 ? 5 : 4;
    const LogitGrid other = forward(p, changed);
    const std::size_t V = p.config().vocab_size;
    for (std::size_t t = 0; t < batch.steps(); ++t) {
      bool same = true;
      for (std::size_t v = 0; v < V; ++v) same = same && base.values[t * V + v] == other.values[t * V + v];
      // Step t reads decoder inputs 0..t, i.e. target positions <= t.
      CHECK(same == (t < j));
    }
  }
}

TEST_CASE("no gradient reaches later decoder positions") {
  ModelParams p = ModelParams::initialize(tiny_config(), 2);
  const Batch batch = Batch::from_sequences({{5, 6, 7, 8}}, {with_specials({4, 9, 10, 11, 5})});
  const std::size_t V = p.config().vocab_size;
  const std::size_t dec_pos = p.layout().decoder_positions;
  for (std::size_t t = 0; t < batch.steps(); ++t) {
    p.zero_grad();
    Tape tape;
    const auto logits = forward(tape, p, batch);
    Tensor coeffs(tape.value(logits).shape());
    for (std::size_t v = 0; v < V; ++v) coeffs.at(t, v) = 1.0 + static_cast<double>(v);
    tape.backward(tape.dot(logits, coeffs));
    const Tensor& g = p.at(dec_pos).grad;
    for (std::size_t pos = t + 1; pos < g.rows(); ++pos) {
      for (double x : g.row(pos)) CHECK(x == 0.0);
    }
    double mass = 0.0;
    for (double x : g.row(t)) mass += std::abs(x);
    CHECK(mass > 0.0);
  }
}

TEST_CASE("padding does not change a row's logits") {
  std::mt19937_64 rng(9);
  const ModelParams p = ModelParams::initialize(tiny_config(), 3);
  const std::vector<std::int32_t> src = {5, 6, 7};
  const std::vector<std::int32_t> tgt = with_specials({8, 9});
  const Batch alone = Batch::from_sequences({src}, {tgt});
  const Batch padded = Batch::from_sequences({random_tokens(rng, 6, 12), src, random_tokens(rng, 2, 12), {4}},
                                             {with_specials({4, 5, 6, 7, 8}), tgt, with_specials({4}),
                                              with_specials({9, 9, 9})});
  const LogitGrid a = forward(p, alone);
  const LogitGrid b = forward(p, padded);
  const std::size_t V = p.config().vocab_size;
  for (std::size_t t = 0; t < alone.steps(); ++t) {
    for (std::size_t v = 0; v < V; ++v) {
      CHECK(std::abs(a.values[t * V + v] - b.values[(1 * padded.steps() + t) * V + v]) < 1e-9);
    }
  }
}

TEST_CASE("padded rows and positions leave a row's gradient unchanged") {
  const std::vector<std::int32_t> src = {5, 6, 7};
  const std::vector<std::int32_t> tgt = with_specials({8, 9});
  const Batch alone = Batch::from_sequences({src}, {tgt});
  const Batch padded = Batch::from_sequences({src, {4, 5, 6, 7, 8, 9}}, {tgt, with_specials({4, 5, 6, 7})});
  // Supervise only the shared row; everything else must be inert.
  auto grads = [](const Batch& batch) {
    ModelParams p = ModelParams::initialize(tiny_config(), 3);
    Tape tape;
    const auto logits = forward(tape, p, batch);
    Tensor target(tape.value(logits).shape());
    std::vector<double> w(target.rows(), 0.0);
    for (std::size_t t = 0; t < batch.steps(); ++t) {
      if (!batch.step_valid(0, t)) continue;
      target.at(t, static_cast<std::size_t>(batch.label(0, t))) = 1.0;
      w[t] = 0.5;
    }
    tape.backward(tape.weighted_cross_entropy(tape.log_softmax(logits, 1.0), target, w));
    return p;
  };
  const ModelParams a = grads(alone), b = grads(padded);
  for (std::size_t i = 0; i < a.count(); ++i) {
    for (std::size_t k = 0; k < a.at(i).grad.size(); ++k) {
      CHECK(std::abs(a.at(i).grad[k] - b.at(i).grad[k]) < 1e-12);
    }
  }
}

TEST_CASE("parameter gradients match central differences") {
  std::mt19937_64 rng(17);
  for (int config = 0; config < 5; ++config) {
    ModelParams p = ModelParams::initialize(tiny_config(), 100 + config);
    // Spread the weights out so no group sits at a degenerate point.
    for (std::size_t i = 0; i < p.count(); ++i) {
      for (auto& v : p.at(i).value.data()) v = testutil::uniform(rng, -0.5, 0.5);
    }
    const Batch batch = random_batch(rng, 3, 12);
    for (std::size_t i = 0; i < p.count(); ++i) {
      auto f = [&](const Tensor& x, Tensor* grad) {
        ModelParams q = p;
        q.at(i).value = x;
        q.zero_grad();
        if (grad) {
          Tape tape;
          const auto logits = forward(tape, q, batch);
          Tensor target(tape.value(logits).shape());
          std::vector<double> w(target.rows(), 0.0);
          for (std::size_t b = 0; b < batch.batch_size; ++b) {
            for (std::size_t t = 0; t < batch.steps(); ++t) {
              if (!batch.step_valid(b, t)) continue;
              target.at(b * batch.steps() + t, static_cast<std::size_t>(batch.label(b, t))) = 1.0;
              w[b * batch.steps() + t] = 1.0 / static_cast<double>(batch.valid_steps());
            }
          }
          const auto loss = tape.weighted_cross_entropy(tape.log_softmax(logits, 1.0), target, w);
          tape.backward(loss);
          *grad = q.at(i).grad;
          return tape.value(loss)[0];
        }
        return mean_nll_of(q, batch);
      };
      const double err = finite_diff_check(f, p.at(i).value, 1e-4);
      INFO(p.name(i));
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("next_token_dist temperatures") {
  std::mt19937_64 rng(4);
  ModelParams p = ModelParams::initialize(tiny_config(), 5);
  for (std::size_t i = 0; i < p.count(); ++i) {
    for (auto& v : p.at(i).value.data()) v = testutil::uniform(rng, -0.6, 0.6);
  }
  const Batch batch = random_batch(rng, 4, 12);
  const LogitGrid z = forward(p, batch);
  const ProbGrid p1 = next_token_dist(p, batch, 1.0);
  CHECK(p1.values == softmax(z.values, 1.0));
  const ProbGrid hot = next_token_dist(p, batch, 1000.0);
  for (double v : hot.values.data()) CHECK(std::abs(v - 1.0 / 12.0) < 1e-2);
  for (std::size_t r = 0; r < z.values.rows(); ++r) {
    double sum = 0.0;
    for (double v : p1.values.row(r)) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-12);
    for (double tau : {0.8, 1.0, 1.5, 2.0, 2.5}) {
      const ProbGrid pt = to_probs(z, tau);
      CHECK(argmax(pt.values.row(r)) == argmax(z.values.row(r)));
    }
  }
  CHECK_THROWS_AS(next_token_dist(p, batch, 0.0), ParameterError);
}

TEST_CASE("sentence log-probabilities") {
  // One predicted position with probability p on the label.
  const Batch one = Batch::from_sequences({{5}}, {{kBos, kEos}});
  LogitGrid z{Tensor({1, 1, 4})};
  z.values[kEos] = std::log(3.0);  // p(EOS) = 3 / 6
  CHECK(sentence_logprob(z, one, 1.0)[0] == doctest::Approx(std::log(0.5)).epsilon(1e-14));

  const Batch two = Batch::from_sequences({{5}}, {{kBos, 3, kEos}});
  LogitGrid z2{Tensor({1, 2, 4})};
  z2.values[3] = std::log(3.0);  // step 0: p(3) = 0.5; step 1 is uniform, p(EOS) = 0.25
  CHECK(sentence_logprob(z2, two, 1.0)[0] == doctest::Approx(std::log(0.125)).epsilon(1e-14));

  std::mt19937_64 rng(8);
  const ModelParams p = ModelParams::initialize(tiny_config(), 6);
  const Batch batch = random_batch(rng, 5, 12);
  for (double tau : {1.0, 1.5}) {
    const auto lp = sentence_logprob(p, batch, tau);
    const ProbGrid probs = next_token_dist(p, batch, tau);
    for (std::size_t b = 0; b < batch.batch_size; ++b) {
      double ref = 0.0;
      for (std::size_t t = 0; t < batch.steps(); ++t) {
        if (!batch.step_valid(b, t)) continue;
        ref += std::log(probs.values.row(b * batch.steps() + t)[static_cast<std::size_t>(batch.label(b, t))]);
      }
      CHECK(std::abs(lp[b] - ref) < 1e-12);
    }
  }
}

TEST_CASE("sequences beyond max_len are a capacity error") {
  const ModelParams p = ModelParams::initialize(tiny_config(), 1);
  std::vector<std::int32_t> long_src(11, 5);
  CHECK_THROWS_AS(forward(p, Batch::from_sequences({long_src}, {with_specials({4})})), CapacityError);
}

TEST_CASE("forward is deterministic") {
  std::mt19937_64 rng(6);
  const ModelParams p = ModelParams::initialize(tiny_config(), 9);
  const Batch batch = random_batch(rng, 4, 12);
  CHECK(forward(p, batch).values == forward(p, batch).values);
}

TEST_CASE("checkpoint round trip reproduces logits bitwise") {
  std::mt19937_64 rng(10);
  const ModelParams p = ModelParams::initialize(tiny_config(), 11);
  const auto dir = std::filesystem::temp_directory_path() / "hkd_seqmodel_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.ckpt";
  save_checkpoint(path, p, {{"note", "x"}});
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.metadata.at("note") == "x");
  CHECK(loaded.params.config() == p.config());
  CHECK(loaded.params.checksum() == p.checksum());
  const Batch batch = random_batch(rng, 3, 12);
  CHECK(forward(loaded.params, batch).values == forward(p, batch).values);

  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);

  // Truncation is detected.
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  {
    std::ofstream out(dir / "short.ckpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 9);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}
