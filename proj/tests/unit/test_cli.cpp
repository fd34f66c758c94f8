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

#include <algorithm>
#include <filesystem>
#include <limits>
#include <map>

#include "hkd/cli.hpp"
#include "hkd/datagen.hpp"
#include "hkd/io.hpp"
#include "hkd/model.hpp"

using namespace hkd;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "hkd_cli_test";

int cli(std::vector<std::string> args) { return run_cli(args); }

std::string p(const std::string& rel) { return (kRoot / rel).string(); }

std::map<std::string, std::string> hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) out[e.path().filename().string()] = hex64(fnv1a64(read_text_file(e.path())));
  }
  return out;
}

std::size_t lines(const fs::path& file) {
  const std::string s = read_text_file(file);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// Small model and schedule shared by the pipeline runs.
void write_train_config() {
  write_file_atomic(kRoot / "train.json", R"({"model": {"vocab_size": 0, "embed_dim": 32, "ffn_dim": 64,
    "num_layers": 1, "max_len": 16, "dropout": 0.0}, "epochs": 40, "max_tokens": 128, "lr": 0.02,
    "warmup_steps": 50})");
}

struct Setup {
  Setup() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    write_train_config();
  }
};
const Setup setup;

}  // namespace

TEST_CASE("usage errors") {
  CHECK(cli({}) == kExitUsage);
  CHECK(cli({"frobnicate"}) == kExitUsage);
  CHECK(cli({"--help"}) == kExitOk);
  CHECK(cli({"gen-corpus"}) == kExitUsage);
  CHECK(cli({"gen-corpus", "--out", p("bad"), "--ambiguity", "1.5"}) == kExitUsage);
  CHECK_FALSE(fs::exists(kRoot / "bad" / "train.src"));
  CHECK(cli({"gen-corpus", "--out", p("bad"), "--pairs", "5"}) == kExitUsage);
  CHECK(cli({"train-student", "--corpus", p("nowhere"), "--out", p("s"), "--loss", "hkd_token"}) == kExitUsage);
  CHECK_FALSE(fs::exists(kRoot / "s"));
  CHECK(cli({"train-student", "--corpus", p("nowhere"), "--out", p("s"), "--loss", "bogus"}) == kExitUsage);
  CHECK(cli({"train-student", "--corpus", p("nowhere"), "--out", p("s"), "--loss", "ce"}) == kExitIo);
  CHECK(cli({"train-teacher", "--corpus", p("nowhere"), "--out", p("t"), "--loss", "hkd_token"}) == kExitUsage);
  CHECK(cli({"train-student", "--corpus", p("nowhere"), "--out", p("s"), "--loss", "soft_kd", "--teacher", "x",
             "--teacher-temp", "warm"}) == kExitUsage);
}

TEST_CASE("gen-corpus is deterministic and records a manifest") {
  REQUIRE(cli({"gen-corpus", "--out", p("c1"), "--pairs", "300", "--seed", "4"}) == kExitOk);
  REQUIRE(cli({"gen-corpus", "--out", p("c2"), "--pairs", "300", "--seed", "4"}) == kExitOk);
  for (const char* f : {"train.src", "train.tgt", "valid.src", "valid.tgt", "test.src", "test.tgt", "vocab.json",
                        "grammar.json", "manifest.json"}) {
    CHECK(fs::exists(kRoot / "c1" / f));
  }
  auto a = hashes(kRoot / "c1"), b = hashes(kRoot / "c2");
  a.erase("manifest.json");
  b.erase("manifest.json");
  CHECK(a == b);
  CHECK(lines(kRoot / "c1" / "train.src") == 240);
  const auto manifest = nlohmann::json::parse(read_text_file(kRoot / "c1" / "manifest.json"));
  const auto& entry = manifest.at("commands").at("gen-corpus");
  CHECK(entry.at("artifacts").at("vocab.json").at("hash").get<std::string>().size() == 16);

  // A grammar file reproduces the same corpus.
  REQUIRE(cli({"gen-corpus", "--out", p("c3"), "--pairs", "300", "--seed", "4", "--grammar",
               p("c1/grammar.json")}) == kExitOk);
  CHECK(hashes(kRoot / "c3")["train.tgt"] == a["train.tgt"]);
}

TEST_CASE("gen-corpus ingests text") {
  std::string src, tgt;
  for (int i = 0; i < 20; ++i) {
    src += "w" + std::to_string(i % 5) + " x\n";
    tgt += "v" + std::to_string(i % 5) + " y\n";
  }
  write_file_atomic(kRoot / "raw.src", src);
  write_file_atomic(kRoot / "raw.tgt", tgt);
  REQUIRE(cli({"gen-corpus", "--out", p("text"), "--source-text", p("raw.src"), "--target-text", p("raw.tgt")}) ==
          kExitOk);
  CHECK(lines(kRoot / "text" / "train.src") == 16);
  CHECK(lines(kRoot / "text" / "valid.src") == 2);
  CHECK(lines(kRoot / "text" / "test.tgt") == 2);
  write_file_atomic(kRoot / "short.tgt", "a\n");
  CHECK(cli({"gen-corpus", "--out", p("text2"), "--source-text", p("raw.src"), "--target-text", p("short.tgt")}) ==
        kExitIo);
}

TEST_CASE("full pipeline on the unambiguous task") {
  REQUIRE(cli({"gen-corpus", "--out", p("echo"), "--pairs", "600", "--ambiguity", "1.0", "--source-vocab", "16",
               "--target-vocab", "16", "--min-len", "2", "--max-len", "6", "--seed", "2"}) == kExitOk);
  const std::string cfg = p("train.json");
  REQUIRE(cli({"train-teacher", "--corpus", p("echo"), "--out", p("teacher"), "--config", cfg, "--loss",
               "ls_uniform", "--teacher-temp", "fit"}) == kExitOk);
  for (const char* f : {"teacher.ckpt", "config.json", "steps.csv", "epochs.json", "manifest.json"}) {
    CHECK(fs::exists(kRoot / "teacher" / f));
  }
  const Checkpoint t = load_checkpoint(kRoot / "teacher" / "teacher.ckpt");
  CHECK(t.metadata.at("role") == "teacher");
  CHECK(t.metadata.contains("temperature_fit"));

  REQUIRE(cli({"train-student", "--corpus", p("echo"), "--out", p("student"), "--config", cfg, "--loss",
               "hkd_token", "--teacher", p("teacher/teacher.ckpt"), "--teacher-temp", "fit"}) == kExitOk);
  CHECK(fs::exists(kRoot / "student" / "gate_trace.csv"));
  CHECK(lines(kRoot / "student" / "gate_trace.csv") == lines(kRoot / "student" / "steps.csv"));

  // A non-distillation loss warns about teacher flags and carries on.
  REQUIRE(cli({"train-student", "--corpus", p("echo"), "--out", p("ce"), "--config", cfg, "--loss", "ce",
               "--teacher-temp", "1.5", "--epochs", "2"}) == kExitOk);
  CHECK_FALSE(fs::exists(kRoot / "ce" / "gate_trace.csv"));

  REQUIRE(cli({"calibrate", "--checkpoint", p("student/student.ckpt"), "--corpus", p("echo"), "--out",
               p("student")}) == kExitOk);
  const auto cal = nlohmann::json::parse(read_text_file(kRoot / "student" / "calibration.json"));
  CHECK(cal.at("nll").size() == 5);

  REQUIRE(cli({"evaluate", "--checkpoint", p("student/student.ckpt"), "--corpus", p("echo"), "--out",
               p("eval")}) == kExitOk);
  REQUIRE(cli({"report", "--checkpoint", p("student/student.ckpt"), "--corpus", p("echo"), "--out",
               p("report")}) == kExitOk);
  const auto metrics = nlohmann::json::parse(read_text_file(kRoot / "report" / "metrics.json"));
  CHECK(metrics.at("ece").get<double>() < 0.05);
  CHECK(metrics.at("bleu").get<double>() > 0.9);
  CHECK(lines(kRoot / "report" / "reliability.csv") == 1 + 10);
  CHECK(lines(kRoot / "report" / "histogram.csv") == 1 + 10);
  CHECK(fs::exists(kRoot / "report" / "alpha_trajectory.csv"));
  CHECK(lines(kRoot / "report" / "hypotheses.txt") == 60);

  auto first = hashes(kRoot / "report");
  REQUIRE(cli({"report", "--checkpoint", p("student/student.ckpt"), "--corpus", p("echo"), "--out",
               p("report")}) == kExitOk);
  auto second = hashes(kRoot / "report");
  CHECK(first == second);

  // Determinism of a training command.
  const auto before = hashes(kRoot / "student");
  REQUIRE(cli({"train-student", "--corpus", p("echo"), "--out", p("student"), "--config", cfg, "--loss",
               "hkd_token", "--teacher", p("teacher/teacher.ckpt"), "--teacher-temp", "fit"}) == kExitOk);
  const auto after = hashes(kRoot / "student");
  for (const char* f : {"student.ckpt", "steps.csv", "epochs.json", "gate_trace.csv", "config.json"}) {
    CHECK(before.at(f) == after.at(f));
  }

  const auto manifest = nlohmann::json::parse(read_text_file(kRoot / "student" / "manifest.json"));
  const auto& commands = manifest.at("commands");
  CHECK(commands.contains("train-student"));
  CHECK(commands.contains("calibrate"));
  CHECK(commands.at("train-student").at("inputs").contains("teacher"));

  CHECK(cli({"report", "--checkpoint", p("student/student.ckpt"), "--corpus", p("echo"), "--out", p("r2"),
             "--run-dir", p("nowhere")}) == kExitIo);
  CHECK(cli({"evaluate", "--checkpoint", p("missing.ckpt"), "--corpus", p("echo"), "--out", p("r3")}) == kExitIo);
  CHECK(cli({"evaluate", "--checkpoint", p("student/student.ckpt"), "--corpus", p("c1"), "--out", p("r4")}) ==
        kExitUsage);
}

TEST_CASE("a non-finite teacher exits with the numeric code") {
  REQUIRE(cli({"gen-corpus", "--out", p("nan"), "--pairs", "100", "--source-vocab", "8", "--target-vocab", "8",
               "--min-len", "2", "--max-len", "4"}) == kExitOk);
  const ParallelCorpus corpus = load_corpus(kRoot / "nan");
  ModelConfig mc;
  mc.vocab_size = corpus.vocab.size();
  mc.embed_dim = 32;
  mc.ffn_dim = 64;
  mc.max_len = 16;
  ModelParams broken = ModelParams::initialize(mc, 0);
  broken.at(broken.count() - 1).value.fill(std::numeric_limits<double>::quiet_NaN());
  save_checkpoint(kRoot / "nan" / "broken.ckpt", broken, {{"vocab_fingerprint", hex64(corpus.vocab.fingerprint())}});
  CHECK(cli({"train-student", "--corpus", p("nan"), "--out", p("nan_out"), "--config", p("train.json"), "--loss",
             "soft_kd", "--teacher", p("nan/broken.ckpt"), "--teacher-temp", "1.0", "--epochs", "1"}) ==
        kExitNumeric);
}
