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
#include <string>
#include <vector>

#include <json.hpp>

#include "hkd/calibration.hpp"
#include "hkd/datagen.hpp"
#include "hkd/model.hpp"

namespace hkd {

struct DecodeResult {
  std::vector<std::int32_t> ids;  // no BOS, EOS or PAD
  std::string text;
  std::string reference;
};

using TokenSeq = std::vector<std::string>;

// Greedy decoding from BOS until EOS or max_len generated tokens, batched over
// sources. PAD and BOS are never emitted.
std::vector<std::vector<std::int32_t>> greedy_decode(const ModelParams& model,
                                                     const std::vector<std::vector<std::int32_t>>& sources,
                                                     std::size_t max_len);
DecodeResult greedy_decode(const ModelParams& model, const std::vector<std::int32_t>& source, std::size_t max_len,
                           const Vocabulary& vocab, Tokenization mode = Tokenization::kWhitespace);

// Corpus BLEU, case-sensitive over tokens: clipped n-gram precisions for
// n = 1..max_n, add-one on orders with no matches, times the brevity penalty.
double bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references, std::size_t max_n = 4);

std::size_t edit_distance(const TokenSeq& a, const TokenSeq& b);
// Total token edit distance over total reference tokens.
double wer(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references);

struct MetricsReport {
  double bleu = 0.0;  // test split, in [0, 1]
  double wer = 0.0;
  double valid_nll = 0.0;
  double ece = 0.0;  // validation next-token records at temperature 1
  double mce = 0.0;
  double valid_accuracy = 0.0;
  std::size_t num_records = 0;
  std::size_t num_bins = kDefaultNumBins;
  double temperature = 1.0;
  std::filesystem::path reliability_csv;
  std::filesystem::path histogram_csv;
  std::filesystem::path records_csv;
  std::filesystem::path hypotheses_txt;

  nlohmann::json to_json() const;
};

// In-memory evaluation pieces, before anything touches disk.
struct Evaluation {
  MetricsReport report;
  std::vector<PredictionRecord> records;
  CalibrationBins bins;
  std::vector<DecodeResult> decoded;
};

Evaluation evaluate_model(const ModelParams& model, const ParallelCorpus& corpus, std::size_t num_bins = kDefaultNumBins,
                          std::size_t max_tokens = 512, Tokenization mode = Tokenization::kWhitespace);

// Loads the checkpoint, evaluates it and writes metrics.json, reliability.csv,
// histogram.csv, records.csv, hypotheses.txt and references.txt into out_dir.
// A vocabulary that differs from the one the checkpoint was trained on is an
// IncompatibilityError.
MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const ParallelCorpus& corpus,
                                  std::size_t num_bins, const std::filesystem::path& out_dir,
                                  Tokenization mode = Tokenization::kWhitespace);

// CSV: confidence,correct.
std::string records_csv(const std::vector<PredictionRecord>& records);

}  // namespace hkd
