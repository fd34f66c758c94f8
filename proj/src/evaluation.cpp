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

#include "hkd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "hkd/errors.hpp"
#include "hkd/io.hpp"
#include "hkd/ops.hpp"

namespace hkd {

std::vector<std::vector<std::int32_t>> greedy_decode(const ModelParams& model,
                                                     const std::vector<std::vector<std::int32_t>>& sources,
                                                     std::size_t max_len) {
  const std::size_t B = sources.size();
  std::vector<std::vector<std::int32_t>> hyps(B);
  if (B == 0 || max_len == 0) return hyps;
  // Decoder inputs are BOS plus generated tokens, bounded by the position table.
  const std::size_t limit = std::min(max_len, model.config().max_len - 1);
  const std::vector<std::vector<std::int32_t>> dummy(B, {kBos, kEos});
  const Batch src = Batch::from_sequences(sources, dummy);
  const std::size_t V = model.config().vocab_size;

  std::vector<std::vector<std::int32_t>> inputs(B, std::vector<std::int32_t>{kBos});
  std::vector<bool> done(B, false);
  for (std::size_t step = 0; step < limit; ++step) {
    std::size_t width = 0;
    for (const auto& in : inputs) width = std::max(width, in.size());
    std::vector<std::int32_t> flat(B * width, kPad);
    std::vector<std::size_t> lengths(B);
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(inputs[b].begin(), inputs[b].end(), flat.begin() + static_cast<std::ptrdiff_t>(b * width));
      lengths[b] = inputs[b].size();
    }
    const Tensor logits = decoder_logits(model, src, flat, width, lengths);
    bool any = false;
    for (std::size_t b = 0; b < B; ++b) {
      if (done[b]) continue;
      const auto row = logits.row(b * width + lengths[b] - 1);
      std::size_t best = static_cast<std::size_t>(kEos);
      for (std::size_t v = 0; v < V; ++v) {
        if (v == static_cast<std::size_t>(kPad) || v == static_cast<std::size_t>(kBos)) continue;
        if (row[v] > row[best]) best = v;
      }
      const auto tok = static_cast<std::int32_t>(best);
      if (tok == kEos) {
        done[b] = true;
        continue;
      }
      hyps[b].push_back(tok);
      inputs[b].push_back(tok);
      any = true;
    }
    if (!any) break;
  }
  return hyps;
}

DecodeResult greedy_decode(const ModelParams& model, const std::vector<std::int32_t>& source, std::size_t max_len,
                           const Vocabulary& vocab, Tokenization mode) {
  DecodeResult r;
  r.ids = greedy_decode(model, {source}, max_len).front();
  r.text = detokenize(r.ids, vocab, mode);
  return r;
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const TokenSeq& seq, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++out[std::vector<std::string>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                                   seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

void check_aligned(std::size_t h, std::size_t r) {
  if (h != r) throw ValidationError(fmt::format("{} hypotheses vs {} references", h, r));
  if (h == 0) throw ValidationError("empty evaluation corpus");
}

}  // namespace

double bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references, std::size_t max_n) {
  check_aligned(hypotheses.size(), references.size());
  if (max_n == 0) throw ParameterError("max_n must be positive");
  std::vector<double> matches(max_n, 0.0), totals(max_n, 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += static_cast<double>(hypotheses[i].size());
    ref_len += static_cast<double>(references[i].size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto h = ngram_counts(hypotheses[i], n);
      const auto r = ngram_counts(references[i], n);
      for (const auto& [gram, count] : h) {
        const auto it = r.find(gram);
        matches[n - 1] += static_cast<double>(std::min(count, it == r.end() ? 0 : it->second));
        totals[n - 1] += static_cast<double>(count);
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_p = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    const double p = matches[n] == 0.0 ? 1.0 / (totals[n] + 1.0) : matches[n] / totals[n];
    log_p += std::log(p) / static_cast<double>(max_n);
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return bp * std::exp(log_p);
}

std::size_t edit_distance(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double wer(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references) {
  check_aligned(hypotheses.size(), references.size());
  std::size_t edits = 0, ref_tokens = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    edits += edit_distance(hypotheses[i], references[i]);
    ref_tokens += references[i].size();
  }
  if (ref_tokens == 0) throw ValidationError("references contain no tokens");
  return static_cast<double>(edits) / static_cast<double>(ref_tokens);
}

nlohmann::json MetricsReport::to_json() const {
  return {{"bleu", bleu},
          {"wer", wer},
          {"valid_nll", valid_nll},
          {"ece", ece},
          {"mce", mce},
          {"valid_accuracy", valid_accuracy},
          {"n", num_records},
          {"num_bins", num_bins},
          {"temperature", temperature},
          {"calibration_split", "valid"},
          {"generation_split", "test"},
          {"note", "students are scored without temperature scaling"},
          {"reliability_csv", reliability_csv.filename().string()},
          {"histogram_csv", histogram_csv.filename().string()},
          {"records_csv", records_csv.filename().string()},
          {"hypotheses", hypotheses_txt.filename().string()}};
}

std::string records_csv(const std::vector<PredictionRecord>& records) {
  std::string out = "confidence,correct\n";
  for (const auto& r : records) out += fmt::format("{},{}\n", format_real(r.confidence), r.correct ? 1 : 0);
  return out;
}

namespace {

TokenSeq to_tokens(const std::vector<std::int32_t>& ids, const Vocabulary& vocab) {
  TokenSeq out;
  for (auto id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

}  // namespace

Evaluation evaluate_model(const ModelParams& model, const ParallelCorpus& corpus, std::size_t num_bins,
                          std::size_t max_tokens, Tokenization mode) {
  if (model.config().vocab_size != corpus.vocab.size()) {
    throw IncompatibilityError(fmt::format("model vocab {} vs corpus vocab {}", model.config().vocab_size,
                                           corpus.vocab.size()));
  }
  if (corpus.test.empty()) throw ValidationError("test split is empty");
  if (corpus.valid.empty()) throw ValidationError("validation split is empty");

  Evaluation ev;
  const auto valid_batches = make_batches(corpus.valid, max_tokens, 0);
  ev.records = collect_next_token_records(model, 1.0, valid_batches);
  ev.bins = bin_predictions(ev.records, num_bins);
  MetricsReport& r = ev.report;
  r.num_bins = num_bins;
  r.num_records = ev.records.size();
  r.ece = ece(ev.bins);
  r.mce = mce(ev.bins);
  r.valid_nll = mean_nll(model, valid_batches, 1.0);
  std::size_t correct = 0;
  for (const auto& rec : ev.records) correct += rec.correct ? 1 : 0;
  r.valid_accuracy = static_cast<double>(correct) / static_cast<double>(ev.records.size());

  // Decode in fixed-size chunks, in corpus order.
  constexpr std::size_t kChunk = 64;
  std::vector<TokenSeq> hyps, refs;
  const std::size_t max_len = model.config().max_len - 1;
  for (std::size_t start = 0; start < corpus.test.size(); start += kChunk) {
    const std::size_t end = std::min(corpus.test.size(), start + kChunk);
    std::vector<std::vector<std::int32_t>> sources;
    for (std::size_t i = start; i < end; ++i) sources.push_back(corpus.test[i].source);
    const auto out = greedy_decode(model, sources, max_len);
    for (std::size_t i = start; i < end; ++i) {
      DecodeResult d;
      d.ids = out[i - start];
      d.text = detokenize(d.ids, corpus.vocab, mode);
      d.reference = detokenize(corpus.test[i].target, corpus.vocab, mode);
      hyps.push_back(to_tokens(d.ids, corpus.vocab));
      refs.push_back(to_tokens(corpus.test[i].target, corpus.vocab));
      ev.decoded.push_back(std::move(d));
    }
  }
  r.bleu = bleu(hyps, refs);
  r.wer = wer(hyps, refs);
  return ev;
}

MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const ParallelCorpus& corpus,
                                  std::size_t num_bins, const std::filesystem::path& out_dir, Tokenization mode) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  if (ckpt.metadata.contains("vocab_fingerprint")) {
    const std::string want = ckpt.metadata.at("vocab_fingerprint").get<std::string>();
    const std::string have = hex64(corpus.vocab.fingerprint());
    if (want != have) {
      throw IncompatibilityError(
          fmt::format("checkpoint was trained on vocabulary {} but the corpus has {}", want, have));
    }
  }
  std::size_t max_tokens = 512;
  if (ckpt.metadata.contains("max_tokens")) max_tokens = ckpt.metadata.at("max_tokens").get<std::size_t>();
  Evaluation ev = evaluate_model(ckpt.params, corpus, num_bins, max_tokens, mode);
  MetricsReport& r = ev.report;
  r.reliability_csv = out_dir / "reliability.csv";
  r.histogram_csv = out_dir / "histogram.csv";
  r.records_csv = out_dir / "records.csv";
  r.hypotheses_txt = out_dir / "hypotheses.txt";

  std::string hyp_text, ref_text;
  for (const auto& d : ev.decoded) {
    hyp_text += d.text + "\n";
    ref_text += d.reference + "\n";
  }
  write_file_atomic(r.reliability_csv, reliability_csv(ev.bins));
  write_file_atomic(r.histogram_csv, histogram_csv(ev.bins));
  write_file_atomic(r.records_csv, records_csv(ev.records));
  write_file_atomic(r.hypotheses_txt, hyp_text);
  write_file_atomic(out_dir / "references.txt", ref_text);
  write_file_atomic(out_dir / "metrics.json", r.to_json().dump(2) + "\n");
  return r;
}

}  // namespace hkd
