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

#include "hkd/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "hkd/errors.hpp"
#include "hkd/io.hpp"

namespace hkd {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)), n - 1);
}

// Fisher-Yates with our own index draw, so results do not depend on the
// standard library's distribution implementations.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

std::size_t sample_row(const std::vector<double>& row, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    acc += row[i];
    if (u < acc) return i;
  }
  // u landed in the rounding slack past the last nonzero entry.
  for (std::size_t i = row.size(); i-- > 0;) {
    if (row[i] > 0.0) return i;
  }
  return 0;
}

std::string source_token(std::size_t i) { return fmt::format("s{}", i); }
std::string target_token(std::size_t i) { return fmt::format("t{}", i); }

}  // namespace

// ---------------------------------------------------------------------------
// Grammar

ToyGrammar ToyGrammar::build(std::size_t source_vocab_size, std::size_t target_vocab_size, double p_amb,
                             std::size_t min_len, std::size_t max_len, std::uint64_t noise_seed,
                             std::size_t alternatives) {
  ToyGrammar g;
  g.source_vocab_size = source_vocab_size;
  g.target_vocab_size = target_vocab_size;
  g.p_amb = p_amb;
  g.min_len = min_len;
  g.max_len = max_len;
  g.noise_seed = noise_seed;
  if (source_vocab_size == 0 || target_vocab_size == 0) throw ConfigError("grammar vocabularies must be nonempty");
  if (!(p_amb > 0.0 && p_amb <= 1.0)) throw ConfigError(fmt::format("p_amb {} outside (0, 1]", p_amb));
  if (p_amb < 1.0 && (alternatives == 0 || alternatives >= target_vocab_size)) {
    throw ConfigError("ambiguous grammar needs between 1 and target_vocab_size - 1 alternatives");
  }
  std::mt19937_64 rng(noise_seed);
  std::vector<std::size_t> perm(target_vocab_size);
  std::iota(perm.begin(), perm.end(), 0);
  g.mapping.assign(source_vocab_size, std::vector<double>(target_vocab_size, 0.0));
  for (std::size_t s = 0; s < source_vocab_size; ++s) {
    shuffle(perm, rng);
    g.mapping[s][perm[0]] = p_amb;
    if (p_amb < 1.0) {
      for (std::size_t a = 1; a <= alternatives; ++a) {
        g.mapping[s][perm[a]] = (1.0 - p_amb) / static_cast<double>(alternatives);
      }
    }
  }
  g.validate();
  return g;
}

void ToyGrammar::validate() const {
  if (source_vocab_size == 0 || target_vocab_size == 0 || mapping.empty()) {
    throw ConfigError("degenerate grammar: empty vocabulary or mapping");
  }
  if (!(p_amb > 0.0 && p_amb <= 1.0)) throw ConfigError(fmt::format("p_amb {} outside (0, 1]", p_amb));
  if (min_len == 0 || min_len > max_len) throw ConfigError("grammar length range must satisfy 1 <= min <= max");
  if (mapping.size() != source_vocab_size) throw ConfigError("mapping needs one row per source token");
  for (std::size_t s = 0; s < mapping.size(); ++s) {
    const auto& row = mapping[s];
    if (row.size() != target_vocab_size) throw ConfigError(fmt::format("mapping row {} has wrong width", s));
    double total = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) throw ConfigError(fmt::format("mapping row {} has a negative entry", s));
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError(fmt::format("mapping row {} sums to {}", s, total));
  }
}

std::size_t ToyGrammar::top_target(std::size_t source_token) const {
  const auto& row = mapping.at(source_token);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

void to_json(nlohmann::json& j, const ToyGrammar& g) {
  j = {{"source_vocab_size", g.source_vocab_size},
       {"target_vocab_size", g.target_vocab_size},
       {"p_amb", g.p_amb},
       {"min_len", g.min_len},
       {"max_len", g.max_len},
       {"noise_seed", g.noise_seed},
       {"mapping", g.mapping}};
}

void from_json(const nlohmann::json& j, ToyGrammar& g) {
  g.source_vocab_size = j.at("source_vocab_size").get<std::size_t>();
  g.target_vocab_size = j.at("target_vocab_size").get<std::size_t>();
  g.p_amb = j.at("p_amb").get<double>();
  g.min_len = j.at("min_len").get<std::size_t>();
  g.max_len = j.at("max_len").get<std::size_t>();
  g.noise_seed = j.at("noise_seed").get<std::uint64_t>();
  g.mapping = j.at("mapping").get<std::vector<std::vector<double>>>();
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<s>", "</s>", "<unk>"}) append(s);
}

void Vocabulary::append(const std::string& token) {
  ids_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::from_counts(const std::map<std::string, std::size_t>& counts, std::size_t max_entries) {
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [token, n] : items) {
    if (max_entries != 0 && v.size() - kNumReserved >= max_entries) break;
    if (v.contains(token)) continue;
    v.append(token);
  }
  return v;
}

std::int32_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValidationError(fmt::format("token id {} outside vocabulary of {}", id, tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  std::vector<std::string> by_id(j.size());
  for (const auto& [token, id] : j.items()) {
    const auto i = id.get<std::size_t>();
    if (i >= by_id.size() || !by_id[i].empty()) throw ValidationError("vocabulary ids are not a permutation");
    by_id[i] = token;
  }
  Vocabulary v;
  for (std::size_t i = 0; i < static_cast<std::size_t>(kNumReserved); ++i) {
    if (i >= by_id.size() || by_id[i] != v.tokens_[i]) {
      throw ValidationError(fmt::format("vocabulary id {} must be a reserved token", i));
    }
  }
  for (std::size_t i = kNumReserved; i < by_id.size(); ++i) v.append(by_id[i]);
  return v;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : tokens_) h = fnv1a64(t + '\n', h);
  return h;
}

// ---------------------------------------------------------------------------
// Tokenization

Tokenization parse_tokenization(const std::string& name) {
  if (name == "whitespace") return Tokenization::kWhitespace;
  if (name == "char") return Tokenization::kChar;
  throw ConfigError("unknown tokenization '" + name + "' (expected whitespace or char)");
}

std::vector<std::string> tokenize(const std::string& line, Tokenization mode) {
  std::vector<std::string> out;
  if (mode == Tokenization::kWhitespace) {
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
  }
  // One token per UTF-8 code point.
  for (std::size_t i = 0; i < line.size();) {
    const auto c = static_cast<unsigned char>(line[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 1;
    len = std::min(len, line.size() - i);
    out.push_back(line.substr(i, len));
    i += len;
  }
  return out;
}

std::string detokenize(const std::vector<std::int32_t>& ids, const Vocabulary& vocab, Tokenization mode) {
  std::string out;
  bool first = true;
  for (auto id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    if (mode == Tokenization::kWhitespace && !first) out += ' ';
    out += vocab.token(id);
    first = false;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus generation and ingestion

ParallelCorpus generate_corpus(const ToyGrammar& grammar, std::size_t n_pairs, std::uint64_t seed) {
  grammar.validate();
  if (n_pairs < 10) throw ConfigError(fmt::format("need at least 10 pairs, got {}", n_pairs));
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> src_raw(n_pairs), tgt_raw(n_pairs);
  std::map<std::string, std::size_t> counts;
  for (std::size_t s = 0; s < grammar.source_vocab_size; ++s) counts[source_token(s)] = 0;
  for (std::size_t t = 0; t < grammar.target_vocab_size; ++t) counts[target_token(t)] = 0;
  const std::size_t n_train = n_pairs * 8 / 10;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const std::size_t len = grammar.min_len + uniform_index(rng, grammar.max_len - grammar.min_len + 1);
    for (std::size_t p = 0; p < len; ++p) {
      const std::size_t s = uniform_index(rng, grammar.source_vocab_size);
      const std::size_t t = sample_row(grammar.mapping[s], uniform01(rng));
      src_raw[i].push_back(s);
      tgt_raw[i].push_back(t);
      if (i < n_train) {
        ++counts[source_token(s)];
        ++counts[target_token(t)];
      }
    }
  }
  ParallelCorpus corpus;
  corpus.vocab = Vocabulary::from_counts(counts);
  const std::size_t n_valid = (n_pairs - n_train) / 2;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    SentencePair pair;
    pair.target.push_back(kBos);
    for (std::size_t p = 0; p < src_raw[i].size(); ++p) {
      pair.source.push_back(corpus.vocab.id(source_token(src_raw[i][p])));
      pair.target.push_back(corpus.vocab.id(target_token(tgt_raw[i][p])));
    }
    pair.target.push_back(kEos);
    auto& split = i < n_train ? corpus.train : i < n_train + n_valid ? corpus.valid : corpus.test;
    split.push_back(std::move(pair));
  }
  return corpus;
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void check_aligned(const std::vector<std::string>& src, const std::vector<std::string>& tgt,
                   const std::filesystem::path& sp, const std::filesystem::path& tp) {
  if (src.size() != tgt.size()) {
    throw IngestionError(fmt::format("{} has {} lines but {} has {}; first unmatched line is {}", sp.string(),
                                     src.size(), tp.string(), tgt.size(), std::min(src.size(), tgt.size()) + 1));
  }
}

std::vector<SentencePair> encode_lines(const std::vector<std::string>& src, const std::vector<std::string>& tgt,
                                       Tokenization mode, const Vocabulary& vocab) {
  std::vector<SentencePair> pairs;
  for (std::size_t i = 0; i < src.size(); ++i) {
    SentencePair pair;
    for (const auto& tok : tokenize(src[i], mode)) pair.source.push_back(vocab.id(tok));
    pair.target.push_back(kBos);
    for (const auto& tok : tokenize(tgt[i], mode)) pair.target.push_back(vocab.id(tok));
    pair.target.push_back(kEos);
    if (pair.source.empty()) {
      throw IngestionError(fmt::format("line {} has an empty source sentence", i + 1));
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace

IngestResult ingest_parallel_text(const std::filesystem::path& source_path, const std::filesystem::path& target_path,
                                  Tokenization mode, std::size_t max_vocab) {
  const auto src = read_lines(source_path);
  const auto tgt = read_lines(target_path);
  check_aligned(src, tgt, source_path, target_path);
  std::map<std::string, std::size_t> counts;
  for (const auto* side : {&src, &tgt}) {
    for (const auto& line : *side) {
      for (const auto& tok : tokenize(line, mode)) ++counts[tok];
    }
  }
  IngestResult out;
  out.vocab = Vocabulary::from_counts(counts, max_vocab);
  out.pairs = encode_lines(src, tgt, mode, out.vocab);
  return out;
}

std::vector<SentencePair> encode_parallel_text(const std::filesystem::path& source_path,
                                               const std::filesystem::path& target_path, Tokenization mode,
                                               const Vocabulary& vocab) {
  const auto src = read_lines(source_path);
  const auto tgt = read_lines(target_path);
  check_aligned(src, tgt, source_path, target_path);
  return encode_lines(src, tgt, mode, vocab);
}

namespace {

const char* const kSplits[] = {"train", "valid", "test"};

}  // namespace

std::vector<std::filesystem::path> corpus_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const char* split : kSplits) {
    files.push_back(dir / fmt::format("{}.src", split));
    files.push_back(dir / fmt::format("{}.tgt", split));
  }
  files.push_back(dir / "vocab.json");
  return files;
}

void write_corpus(const std::filesystem::path& dir, const ParallelCorpus& corpus) {
  const std::vector<SentencePair>* splits[] = {&corpus.train, &corpus.valid, &corpus.test};
  for (std::size_t s = 0; s < 3; ++s) {
    std::string src, tgt;
    for (const auto& pair : *splits[s]) {
      src += detokenize(pair.source, corpus.vocab, Tokenization::kWhitespace) + '\n';
      tgt += detokenize(pair.target, corpus.vocab, Tokenization::kWhitespace) + '\n';
    }
    write_file_atomic(dir / fmt::format("{}.src", kSplits[s]), src);
    write_file_atomic(dir / fmt::format("{}.tgt", kSplits[s]), tgt);
  }
  write_file_atomic(dir / "vocab.json", corpus.vocab.to_json().dump(1) + '\n');
}

ParallelCorpus load_corpus(const std::filesystem::path& dir, Tokenization mode) {
  for (const auto& f : corpus_files(dir)) {
    if (!std::filesystem::exists(f)) throw IoError("missing corpus file " + f.string());
  }
  ParallelCorpus corpus;
  try {
    corpus.vocab = Vocabulary::from_json(nlohmann::json::parse(read_text_file(dir / "vocab.json")));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed vocab.json in " + dir.string() + ": " + e.what());
  }
  std::vector<SentencePair>* splits[] = {&corpus.train, &corpus.valid, &corpus.test};
  for (std::size_t s = 0; s < 3; ++s) {
    *splits[s] = encode_parallel_text(dir / fmt::format("{}.src", kSplits[s]),
                                      dir / fmt::format("{}.tgt", kSplits[s]), mode, corpus.vocab);
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  shuffle(order, rng);
  return order;
}

std::vector<Batch> make_batches(const std::vector<SentencePair>& pairs, std::size_t max_tokens, std::uint64_t seed,
                                BatchingStats* stats) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint64_t> tiebreak(pairs.size());
  for (auto& k : tiebreak) k = rng();
  std::vector<std::size_t> idx;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].source.size() + pairs[i].target.size() > max_tokens) {
      ++skipped;
      continue;
    }
    idx.push_back(i);
  }
  if (stats) stats->skipped = skipped;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto ka = std::make_tuple(pairs[a].target.size(), pairs[a].source.size(), tiebreak[a]);
    const auto kb = std::make_tuple(pairs[b].target.size(), pairs[b].source.size(), tiebreak[b]);
    return ka < kb;
  });

  std::vector<Batch> batches;
  std::vector<std::size_t> current;
  std::size_t max_src = 0, max_tgt = 0;
  auto flush = [&] {
    if (current.empty()) return;
    std::vector<std::vector<std::int32_t>> src, tgt;
    for (std::size_t i : current) {
      src.push_back(pairs[i].source);
      tgt.push_back(pairs[i].target);
    }
    Batch b = Batch::from_sequences(src, tgt);
    b.pair_index = current;
    batches.push_back(std::move(b));
    current.clear();
    max_src = max_tgt = 0;
  };
  for (std::size_t i : idx) {
    const std::size_t s = std::max(max_src, pairs[i].source.size());
    const std::size_t t = std::max(max_tgt, pairs[i].target.size());
    if (!current.empty() && (current.size() + 1) * (s + t) > max_tokens) flush();
    current.push_back(i);
    max_src = std::max(max_src, pairs[i].source.size());
    max_tgt = std::max(max_tgt, pairs[i].target.size());
  }
  flush();

  std::vector<Batch> ordered;
  ordered.reserve(batches.size());
  for (std::size_t i : shuffled_order(batches.size(), seed ^ 0x9e3779b97f4a7c15ULL)) {
    ordered.push_back(std::move(batches[i]));
  }
  return ordered;
}

}  // namespace hkd
