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
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hkd/model.hpp"

namespace hkd {

// Token-aligned stochastic translation: every source token independently
// emits one target token drawn from its mapping row. The top entry of each
// row has probability p_amb, so the Bayes-optimal next-token confidence is
// known exactly.
struct ToyGrammar {
  std::size_t source_vocab_size = 50;
  std::size_t target_vocab_size = 50;
  double p_amb = 0.7;
  std::size_t min_len = 4;
  std::size_t max_len = 12;
  std::uint64_t noise_seed = 0;
  // [source_vocab_size][target_vocab_size], rows sum to 1.
  std::vector<std::vector<double>> mapping;

  // Random top target per source token with mass p_amb; the remaining mass is
  // split evenly over `alternatives` other targets.
  static ToyGrammar build(std::size_t source_vocab_size, std::size_t target_vocab_size, double p_amb,
                          std::size_t min_len, std::size_t max_len, std::uint64_t noise_seed,
                          std::size_t alternatives = 3);

  void validate() const;
  std::size_t top_target(std::size_t source_token) const;
};

void to_json(nlohmann::json& j, const ToyGrammar& g);
void from_json(const nlohmann::json& j, ToyGrammar& g);

// Token strings to ids. Ids 0..3 are PAD, BOS, EOS, UNK; the rest follow
// frequency (descending) then lexicographic order.
class Vocabulary {
 public:
  Vocabulary();
  // max_entries bounds the number of non-reserved tokens (0 = unbounded).
  static Vocabulary from_counts(const std::map<std::string, std::size_t>& counts, std::size_t max_entries = 0);

  std::size_t size() const { return tokens_.size(); }
  std::int32_t id(const std::string& token) const;  // UNK when absent
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(std::int32_t id) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  std::uint64_t fingerprint() const;

 private:
  void append(const std::string& token);

  std::vector<std::string> tokens_;
  std::map<std::string, std::int32_t> ids_;
};

struct SentencePair {
  std::vector<std::int32_t> source;  // no specials
  std::vector<std::int32_t> target;  // BOS ... EOS
};

struct ParallelCorpus {
  std::vector<SentencePair> train;
  std::vector<SentencePair> valid;
  std::vector<SentencePair> test;
  Vocabulary vocab;
};

enum class Tokenization { kWhitespace, kChar };

Tokenization parse_tokenization(const std::string& name);
std::vector<std::string> tokenize(const std::string& line, Tokenization mode);
std::string detokenize(const std::vector<std::int32_t>& ids, const Vocabulary& vocab, Tokenization mode);

// n_pairs >= 10, split 80/10/10 in generation order.
ParallelCorpus generate_corpus(const ToyGrammar& grammar, std::size_t n_pairs, std::uint64_t seed);

struct IngestResult {
  std::vector<SentencePair> pairs;
  Vocabulary vocab;
};

// Line-aligned files; vocabulary over both sides, truncated to max_vocab
// non-reserved tokens.
IngestResult ingest_parallel_text(const std::filesystem::path& source_path, const std::filesystem::path& target_path,
                                  Tokenization mode, std::size_t max_vocab);
// Same, against a fixed vocabulary.
std::vector<SentencePair> encode_parallel_text(const std::filesystem::path& source_path,
                                               const std::filesystem::path& target_path, Tokenization mode,
                                               const Vocabulary& vocab);

// {train,valid,test}.{src,tgt} plus vocab.json.
void write_corpus(const std::filesystem::path& dir, const ParallelCorpus& corpus);
ParallelCorpus load_corpus(const std::filesystem::path& dir, Tokenization mode = Tokenization::kWhitespace);
std::vector<std::filesystem::path> corpus_files(const std::filesystem::path& dir);

struct BatchingStats {
  std::size_t skipped = 0;
};

// Length-bucketed padded batches with B * (S + T) <= max_tokens, in an order
// shuffled by seed.
std::vector<Batch> make_batches(const std::vector<SentencePair>& pairs, std::size_t max_tokens, std::uint64_t seed,
                                BatchingStats* stats = nullptr);

// Deterministic permutation of 0..n-1.
std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed);

}  // namespace hkd
