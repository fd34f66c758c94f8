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

#include "hkd/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "hkd/errors.hpp"
#include "hkd/io.hpp"
#include "hkd/ops.hpp"

namespace hkd {

std::size_t CalibrationBins::total() const {
  std::size_t n = 0;
  for (auto c : count) n += c;
  return n;
}

double CalibrationBins::lower_edge(std::size_t bin) const {
  return static_cast<double>(bin) / static_cast<double>(num_bins);
}

double CalibrationBins::upper_edge(std::size_t bin) const {
  return static_cast<double>(bin + 1) / static_cast<double>(num_bins);
}

double CalibrationBins::mean_confidence(std::size_t bin) const {
  return count[bin] == 0 ? 0.0 : confidence_sum[bin] / static_cast<double>(count[bin]);
}

double CalibrationBins::accuracy(std::size_t bin) const {
  return count[bin] == 0 ? 0.0 : static_cast<double>(correct[bin]) / static_cast<double>(count[bin]);
}

std::size_t bin_index(double confidence, std::size_t num_bins) {
  const double n = static_cast<double>(num_bins);
  // ceil(c n) can land one off an edge after rounding; edges are k / n.
  auto b = static_cast<std::size_t>(std::max(1.0, std::ceil(confidence * n)));
  b = std::min(b, num_bins);
  if (b > 1 && confidence <= static_cast<double>(b - 1) / n) --b;
  if (b < num_bins && confidence > static_cast<double>(b) / n) ++b;
  return b - 1;
}

CalibrationBins bin_predictions(std::span<const PredictionRecord> records, std::size_t num_bins) {
  if (num_bins == 0) throw ValidationError("need at least one bin");
  if (records.empty()) throw ValidationError("no prediction records to bin");
  CalibrationBins bins{num_bins, std::vector<std::size_t>(num_bins, 0), std::vector<double>(num_bins, 0.0),
                       std::vector<std::size_t>(num_bins, 0)};
  for (const auto& r : records) {
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) {
      throw ValidationError(fmt::format("confidence {} outside [0, 1]", r.confidence));
    }
    const std::size_t b = bin_index(r.confidence, num_bins);
    ++bins.count[b];
    bins.confidence_sum[b] += r.confidence;
    bins.correct[b] += r.correct ? 1 : 0;
  }
  return bins;
}

double ece(const CalibrationBins& bins) {
  const double n = static_cast<double>(bins.total());
  if (n == 0.0) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < bins.num_bins; ++b) {
    if (bins.count[b] == 0) continue;
    total += static_cast<double>(bins.count[b]) / n * std::abs(bins.accuracy(b) - bins.mean_confidence(b));
  }
  return total;
}

double mce(const CalibrationBins& bins) {
  double worst = 0.0;
  for (std::size_t b = 0; b < bins.num_bins; ++b) {
    if (bins.count[b] == 0) continue;
    worst = std::max(worst, std::abs(bins.accuracy(b) - bins.mean_confidence(b)));
  }
  return worst;
}

std::vector<PredictionRecord> records_from_probs(const ProbGrid& probs, const Batch& batch) {
  const Tensor& p = probs.values;
  std::vector<PredictionRecord> out;
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    for (std::size_t t = 0; t < batch.steps(); ++t) {
      if (!batch.step_valid(b, t)) continue;
      const auto row = p.row(b * batch.steps() + t);
      const std::size_t best = argmax(row);
      out.push_back({std::min(row[best], 1.0), best == static_cast<std::size_t>(batch.label(b, t))});
    }
  }
  return out;
}

std::vector<PredictionRecord> collect_next_token_records(const ModelParams& model, double temperature,
                                                         std::span<const Batch> dataset) {
  std::vector<PredictionRecord> out;
  for (const Batch& batch : dataset) {
    const auto recs = records_from_probs(next_token_dist(model, batch, temperature), batch);
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

double mean_nll(const Tensor& logits, std::span<const std::size_t> labels, double temperature) {
  if (logits.rows() != labels.size() || labels.empty()) {
    throw ValidationError("need one label per logit row");
  }
  std::vector<double> logp(logits.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    log_softmax_row(logits.row(r), temperature, logp);
    total -= logp.at(labels[r]);
  }
  return total / static_cast<double>(labels.size());
}

namespace {

// Valid-position logits and labels of a whole dataset, flattened.
void gather_valid(const ModelParams& model, std::span<const Batch> dataset, Tensor& logits,
                  std::vector<std::size_t>& labels) {
  const std::size_t V = model.config().vocab_size;
  std::vector<double> rows;
  for (const Batch& batch : dataset) {
    const LogitGrid grid = forward(model, batch);
    for (std::size_t b = 0; b < batch.batch_size; ++b) {
      for (std::size_t t = 0; t < batch.steps(); ++t) {
        if (!batch.step_valid(b, t)) continue;
        const auto row = grid.values.row(b * batch.steps() + t);
        rows.insert(rows.end(), row.begin(), row.end());
        labels.push_back(static_cast<std::size_t>(batch.label(b, t)));
      }
    }
  }
  if (labels.empty()) throw ValidationError("validation set has no target positions");
  logits = Tensor({labels.size(), V}, std::move(rows));
}

}  // namespace

double mean_nll(const ModelParams& model, std::span<const Batch> dataset, double temperature) {
  Tensor logits;
  std::vector<std::size_t> labels;
  gather_valid(model, dataset, logits, labels);
  return mean_nll(logits, labels, temperature);
}

double select_temperature(std::span<const double> grid, std::span<const double> nll) {
  if (grid.empty() || grid.size() != nll.size()) throw ValidationError("temperature grid is empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double di = std::abs(grid[i] - 1.0), db = std::abs(grid[best] - 1.0);
    if (nll[i] < nll[best] || (nll[i] == nll[best] && (di < db || (di == db && grid[i] < grid[best])))) {
      best = i;
    }
  }
  return grid[best];
}

TemperatureFit fit_temperature(const Tensor& logits, std::span<const std::size_t> labels,
                               std::span<const double> grid) {
  if (grid.empty()) throw ValidationError("temperature grid is empty");
  TemperatureFit fit;
  fit.grid.assign(grid.begin(), grid.end());
  for (double tau : grid) {
    if (!(tau > 0.0)) throw ParameterError(fmt::format("grid temperature {} is not positive", tau));
    fit.nll.push_back(mean_nll(logits, labels, tau));
  }
  fit.temperature = select_temperature(fit.grid, fit.nll);
  return fit;
}

TemperatureFit fit_temperature(const ModelParams& model, std::span<const Batch> validation,
                               std::span<const double> grid) {
  if (validation.empty()) throw ValidationError("empty validation set");
  Tensor logits;
  std::vector<std::size_t> labels;
  gather_valid(model, validation, logits, labels);
  return fit_temperature(logits, labels, grid);
}

std::string reliability_csv(const CalibrationBins& bins) {
  std::string out = "bin_lo,bin_hi,count,mean_confidence,accuracy\n";
  for (std::size_t b = 0; b < bins.num_bins; ++b) {
    out += fmt::format("{},{},{},{},{}\n", format_real(bins.lower_edge(b)), format_real(bins.upper_edge(b)),
                       bins.count[b], format_real(bins.mean_confidence(b)), format_real(bins.accuracy(b)));
  }
  return out;
}

std::string histogram_csv(const CalibrationBins& bins) {
  std::string out = "bin,count\n";
  for (std::size_t b = 0; b < bins.num_bins; ++b) out += fmt::format("{},{}\n", b + 1, bins.count[b]);
  return out;
}

nlohmann::json calibration_summary(const CalibrationBins& bins, double temperature) {
  return {{"ece", ece(bins)},
          {"mce", mce(bins)},
          {"n", bins.total()},
          {"num_bins", bins.num_bins},
          {"temperature", temperature}};
}

}  // namespace hkd
