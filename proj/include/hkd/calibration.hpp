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

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hkd/model.hpp"

namespace hkd {

// Appendix grid of teacher temperatures searched by fit_temperature.
inline const std::vector<double> kDefaultTemperatureGrid = {0.8, 1.0, 1.5, 2.0, 2.5};
inline constexpr std::size_t kDefaultNumBins = 10;

struct PredictionRecord {
  double confidence = 0.0;  // max predicted probability
  bool correct = false;     // argmax == ground truth
};

// Equal-width, right-closed bins over (0, 1]; bin b (1-based) holds
// (b-1)/n < c <= b/n, and c = 0 goes to bin 1.
struct CalibrationBins {
  std::size_t num_bins = 0;
  std::vector<std::size_t> count;
  std::vector<double> confidence_sum;
  std::vector<std::size_t> correct;

  std::size_t total() const;
  double lower_edge(std::size_t bin) const;  // 0-based bin
  double upper_edge(std::size_t bin) const;
  double mean_confidence(std::size_t bin) const;
  double accuracy(std::size_t bin) const;
};

// 0-based bin of a confidence under the right-closed rule.
std::size_t bin_index(double confidence, std::size_t num_bins);

CalibrationBins bin_predictions(std::span<const PredictionRecord> records, std::size_t num_bins = kDefaultNumBins);
double ece(const CalibrationBins& bins);
double mce(const CalibrationBins& bins);

// Teacher-forced next-token records over all valid target positions.
std::vector<PredictionRecord> collect_next_token_records(const ModelParams& model, double temperature,
                                                         std::span<const Batch> dataset);
std::vector<PredictionRecord> records_from_probs(const ProbGrid& probs, const Batch& batch);

// Mean NLL of labels under softmax(logits / temperature) over rows of a
// [N x V] logit matrix.
double mean_nll(const Tensor& logits, std::span<const std::size_t> labels, double temperature);
// Mean NLL over valid positions of a dataset.
double mean_nll(const ModelParams& model, std::span<const Batch> dataset, double temperature);

struct TemperatureFit {
  double temperature = 1.0;
  std::vector<double> grid;
  std::vector<double> nll;  // one per grid point
};

// Grid point with the lowest validation NLL; ties go to the point closest to
// 1, then to the smaller one.
TemperatureFit fit_temperature(const ModelParams& model, std::span<const Batch> validation,
                               std::span<const double> grid = kDefaultTemperatureGrid);
TemperatureFit fit_temperature(const Tensor& logits, std::span<const std::size_t> labels,
                               std::span<const double> grid = kDefaultTemperatureGrid);
// Selection rule on precomputed NLL values.
double select_temperature(std::span<const double> grid, std::span<const double> nll);

// CSV: bin_lo,bin_hi,count,mean_confidence,accuracy (one row per bin).
std::string reliability_csv(const CalibrationBins& bins);
// CSV: bin,count.
std::string histogram_csv(const CalibrationBins& bins);
nlohmann::json calibration_summary(const CalibrationBins& bins, double temperature);

}  // namespace hkd
