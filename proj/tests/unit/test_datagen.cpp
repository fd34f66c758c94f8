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
#include <fstream>
#include <numeric>
#include <set>

#include "hkd/datagen.hpp"
#include "hkd/errors.hpp"

using namespace hkd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hkd_datagen_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

bool same_pairs(const std::vector<SentencePair>& a, const std::vector<SentencePair>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].source != b[i].source || a[i].target != b[i].target) return false;
  }
  return true;
}

std::size_t total_tokens(const std::vector<SentencePair>& pairs) {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.source.size() + p.target.size();
  return n;
}

}  // namespace

TEST_CASE("grammar rows are normalized with the top entry at p_amb") {
  const ToyGrammar g = ToyGrammar::build(50, 50, 0.7, 4, 12, 0, 3);
  for (std::size_t s = 0; s < g.source_vocab_size; ++s) {
    const auto& row = g.mapping[s];
    CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(row[g.top_target(s)] == 0.7);
    CHECK(std::count_if(row.begin(), row.end(), [](double p) { return p > 0.0; }) == 4);
  }
  const ToyGrammar det = ToyGrammar::build(10, 10, 1.0, 2, 3, 5);
  for (const auto& row : det.mapping) CHECK(std::count(row.begin(), row.end(), 1.0) == 1);
}

TEST_CASE("grammar errors") {
  CHECK_THROWS_AS(ToyGrammar::build(0, 5, 0.7, 1, 2, 0), ConfigError);
  CHECK_THROWS_AS(ToyGrammar::build(5, 5, 0.0, 1, 2, 0), ConfigError);
  CHECK_THROWS_AS(ToyGrammar::build(5, 5, 0.7, 1, 2, 0, 5), ConfigError);
  ToyGrammar g = ToyGrammar::build(5, 5, 0.7, 1, 2, 0);
  g.mapping.clear();
  CHECK_THROWS_AS(g.validate(), ConfigError);
  CHECK_THROWS_AS(generate_corpus(g, 100, 0), ConfigError);
  g = ToyGrammar::build(5, 5, 0.7, 1, 2, 0);
  g.mapping[0][0] += 0.5;
  CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("grammar json round trip") {
  const ToyGrammar g = ToyGrammar::build(7, 9, 0.6, 3, 5, 42, 2);
  nlohmann::json j = g;
  const ToyGrammar back = j.get<ToyGrammar>();
  CHECK(back.mapping == g.mapping);
  CHECK(back.noise_seed == 42);
  CHECK(back.max_len == 5);
}

TEST_CASE("corpus structure and determinism") {
  const ToyGrammar g = ToyGrammar::build(50, 50, 0.7, 4, 12, 0);
  const ParallelCorpus a = generate_corpus(g, 1000, 7);
  const ParallelCorpus b = generate_corpus(g, 1000, 7);
  const ParallelCorpus c = generate_corpus(g, 1000, 8);
  CHECK(a.train.size() == 800);
  CHECK(a.valid.size() == 100);
  CHECK(a.test.size() == 100);
  CHECK(same_pairs(a.train, b.train));
  CHECK(same_pairs(a.test, b.test));
  CHECK(a.vocab.fingerprint() == b.vocab.fingerprint());
  CHECK_FALSE(same_pairs(a.train, c.train));
  for (const auto* split : {&a.train, &a.valid, &a.test}) {
    for (const auto& p : *split) {
      CHECK(p.source.size() >= 4);
      CHECK(p.source.size() <= 12);
      CHECK(p.target.size() == p.source.size() + 2);
      CHECK(p.target.front() == kBos);
      CHECK(p.target.back() == kEos);
      CHECK(std::count(p.target.begin(), p.target.end(), kEos) == 1);
      for (auto id : p.source) CHECK((id >= kNumReserved && static_cast<std::size_t>(id) < a.vocab.size()));
    }
  }
  CHECK_THROWS_AS(generate_corpus(g, 9, 0), ConfigError);
}

TEST_CASE("unambiguous grammar gives a token-wise translation") {
  const ToyGrammar g = ToyGrammar::build(20, 20, 1.0, 2, 6, 3);
  const ParallelCorpus corpus = generate_corpus(g, 200, 1);
  for (const auto& p : corpus.train) {
    for (std::size_t i = 0; i < p.source.size(); ++i) {
      const std::size_t s = std::stoul(corpus.vocab.token(p.source[i]).substr(1));
      CHECK(corpus.vocab.token(p.target[i + 1]) == "t" + std::to_string(g.top_target(s)));
    }
  }
}

TEST_CASE("empirical top-target frequency matches p_amb") {
  const ToyGrammar g = ToyGrammar::build(10, 10, 0.7, 4, 12, 11);
  const ParallelCorpus corpus = generate_corpus(g, 10000, 5);
  std::size_t hits = 0, total = 0;
  for (const auto* split : {&corpus.train, &corpus.valid, &corpus.test}) {
    for (const auto& p : *split) {
      for (std::size_t i = 0; i < p.source.size(); ++i) {
        const std::size_t s = std::stoul(corpus.vocab.token(p.source[i]).substr(1));
        hits += corpus.vocab.token(p.target[i + 1]) == "t" + std::to_string(g.top_target(s)) ? 1 : 0;
        ++total;
      }
    }
  }
  CHECK(std::abs(static_cast<double>(hits) / static_cast<double>(total) - 0.7) < 0.02);
}

TEST_CASE("vocabulary ordering, lookup and truncation") {
  const std::map<std::string, std::size_t> counts = {{"b", 3}, {"a", 3}, {"c", 5}, {"d", 1}};
  const Vocabulary v = Vocabulary::from_counts(counts);
  CHECK(v.size() == 8);
  CHECK(v.token(kPad) == "<pad>");
  CHECK(v.token(kBos) == "<s>");
  CHECK(v.token(kEos) == "</s>");
  CHECK(v.token(kUnk) == "<unk>");
  CHECK(v.id("c") == 4);
  CHECK(v.id("a") == 5);
  CHECK(v.id("b") == 6);
  CHECK(v.id("d") == 7);
  CHECK(v.id("zzz") == kUnk);
  CHECK_THROWS_AS(v.token(99), ValidationError);

  const Vocabulary small = Vocabulary::from_counts(counts, 2);
  CHECK(small.size() == 6);
  CHECK(small.id("b") == kUnk);

  const Vocabulary back = Vocabulary::from_json(v.to_json());
  CHECK(back.fingerprint() == v.fingerprint());
  for (std::int32_t i = 0; i < static_cast<std::int32_t>(v.size()); ++i) CHECK(back.token(i) == v.token(i));
  CHECK(small.fingerprint() != v.fingerprint());
  CHECK_THROWS_AS(Vocabulary::from_json(nlohmann::json{{"x", 0}}), ValidationError);
}

TEST_CASE("tokenization round trips") {
  CHECK(tokenize("  a  bb c ", Tokenization::kWhitespace) == std::vector<std::string>{"a", "bb", "c"});
  CHECK(tokenize("h\xc3\xa9!", Tokenization::kChar) == std::vector<std::string>{"h", "\xc3\xa9", "!"});
  CHECK(parse_tokenization("char") == Tokenization::kChar);
  CHECK_THROWS_AS(parse_tokenization("bpe"), ConfigError);

  const std::map<std::string, std::size_t> counts = {{"the", 2}, {"cat", 1}, {"sat", 1}};
  const Vocabulary v = Vocabulary::from_counts(counts);
  const std::string line = "the cat sat the";
  std::vector<std::int32_t> ids = {kBos};
  for (const auto& t : tokenize(line, Tokenization::kWhitespace)) ids.push_back(v.id(t));
  ids.push_back(kEos);
  CHECK(detokenize(ids, v, Tokenization::kWhitespace) == line);
}

TEST_CASE("ingesting parallel text") {
  const fs::path dir = scratch_dir("ingest");
  const std::vector<std::string> lines = {"a b c", "b c", "c a a"};
  write_lines(dir / "s.txt", lines);
  write_lines(dir / "t.txt", lines);
  const IngestResult r = ingest_parallel_text(dir / "s.txt", dir / "t.txt", Tokenization::kWhitespace, 0);
  REQUIRE(r.pairs.size() == 3);
  CHECK(r.vocab.size() == 7);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(detokenize(r.pairs[i].source, r.vocab, Tokenization::kWhitespace) == lines[i]);
    CHECK(detokenize(r.pairs[i].target, r.vocab, Tokenization::kWhitespace) == lines[i]);
    CHECK(r.pairs[i].target.front() == kBos);
    CHECK(r.pairs[i].target.back() == kEos);
  }

  const IngestResult cut = ingest_parallel_text(dir / "s.txt", dir / "t.txt", Tokenization::kWhitespace, 2);
  CHECK(cut.vocab.size() == 6);
  CHECK(cut.pairs[0].source[1] == kUnk);

  write_lines(dir / "short.txt", {"a b", "c"});
  try {
    ingest_parallel_text(dir / "s.txt", dir / "short.txt", Tokenization::kWhitespace, 0);
    FAIL("expected an ingestion error");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("unmatched line is 3") != std::string::npos);
  }
  CHECK_THROWS_AS(ingest_parallel_text(dir / "missing", dir / "t.txt", Tokenization::kWhitespace, 0), IngestionError);
}

TEST_CASE("corpus files round trip") {
  const fs::path dir = scratch_dir("roundtrip");
  const ParallelCorpus corpus = generate_corpus(ToyGrammar::build(30, 30, 0.7, 2, 8, 1), 200, 3);
  write_corpus(dir, corpus);
  const ParallelCorpus back = load_corpus(dir);
  CHECK(same_pairs(back.train, corpus.train));
  CHECK(same_pairs(back.valid, corpus.valid));
  CHECK(same_pairs(back.test, corpus.test));
  CHECK(back.vocab.fingerprint() == corpus.vocab.fingerprint());
  fs::remove(dir / "valid.tgt");
  CHECK_THROWS_AS(load_corpus(dir), IoError);
}

TEST_CASE("batching") {
  const ParallelCorpus corpus = generate_corpus(ToyGrammar::build(50, 50, 0.7, 4, 12, 0), 1000, 2);

  const auto one = make_batches({corpus.train.front()}, 512, 0);
  CHECK(one.size() == 1);

  const auto batches = make_batches(corpus.train, 512, 4);
  std::size_t tokens = 0, rows = 0;
  std::set<std::size_t> seen;
  for (const Batch& b : batches) {
    CHECK(b.batch_size * (b.source_len + b.target_len) <= 512);
    tokens += b.real_tokens();
    rows += b.batch_size;
    for (std::size_t i : b.pair_index) seen.insert(i);
    b.validate(corpus.vocab.size());
  }
  CHECK(tokens == total_tokens(corpus.train));
  CHECK(rows == corpus.train.size());
  CHECK(seen.size() == corpus.train.size());

  const auto again = make_batches(corpus.train, 512, 4);
  REQUIRE(again.size() == batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    CHECK(again[i].pair_index == batches[i].pair_index);
    CHECK(again[i].target_ids == batches[i].target_ids);
  }
  const auto other = make_batches(corpus.train, 512, 5);
  bool differs = other.size() != batches.size();
  for (std::size_t i = 0; !differs && i < batches.size(); ++i) differs = other[i].pair_index != batches[i].pair_index;
  CHECK(differs);

  BatchingStats stats;
  const auto tight = make_batches(corpus.train, 20, 0, &stats);
  std::size_t kept = 0;
  for (const auto& p : corpus.train) kept += p.source.size() + p.target.size() <= 20 ? 1 : 0;
  CHECK(stats.skipped == corpus.train.size() - kept);
  std::size_t tight_rows = 0;
  for (const Batch& b : tight) tight_rows += b.batch_size;
  CHECK(tight_rows == kept);
}

TEST_CASE("shuffled order is a permutation") {
  const auto a = shuffled_order(100, 9);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(100);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
  CHECK(a == shuffled_order(100, 9));
  CHECK(a != shuffled_order(100, 10));
}
