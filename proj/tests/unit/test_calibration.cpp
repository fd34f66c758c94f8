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
#include <cmath>
#include <random>

#include "hkd/calibration.hpp"
#include "hkd/errors.hpp"
#include "hkd/ops.hpp"
#include "test_util.hpp"

using namespace hkd;

namespace {

struct BruteForce {
  double ece = 0.0;
  double mce = 0.0;
  std::vector<std::size_t> count;
};

// Scans every bin against every record with the interval test written out.
BruteForce brute_force(const std::vector<PredictionRecord>& records, std::size_t n) {
  BruteForce out;
  out.count.assign(n, 0);
  for (std::size_t b = 0; b < n; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(n);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(n);
    long double conf = 0.0L;
    std::size_t hits = 0, members = 0;
    for (const auto& r : records) {
      const bool inside = (r.confidence > lo && r.confidence <= hi) || (b == 0 && r.confidence == 0.0);
      if (!inside) continue;
      ++members;
      conf += r.confidence;
      hits += r.correct ? 1 : 0;
    }
    out.count[b] = members;
    if (members == 0) continue;
    const long double gap = std::fabs(static_cast<long double>(hits) / members - conf / members);
    out.ece += static_cast<double>(gap * members / static_cast<long double>(records.size()));
    out.mce = std::max(out.mce, static_cast<double>(gap));
  }
  return out;
}

std::vector<PredictionRecord> random_records(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PredictionRecord> out(n);
  for (auto& r : out) {
    // Mix in exact bin edges.
    r.confidence = rng() % 10 == 0 ? static_cast<double>(rng() % 11) / 10.0 : u(rng);
    r.correct = u(rng) < r.confidence * 0.8 + 0.1;
  }
  return out;
}

}  // namespace

TEST_CASE("right-closed bin edges") {
  CHECK(bin_index(0.0, 10) == 0);
  CHECK(bin_index(0.1, 10) == 0);
  CHECK(bin_index(std::nextafter(0.1, 1.0), 10) == 1);
  CHECK(bin_index(0.3, 10) == 2);
  CHECK(bin_index(0.7, 10) == 6);
  CHECK(bin_index(1.0, 10) == 9);
  CHECK(bin_index(0.55, 10) == 5);
  for (std::size_t k = 1; k <= 10; ++k) CHECK(bin_index(static_cast<double>(k) / 10.0, 10) == k - 1);
}

TEST_CASE("ece and mce against brute force") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto records = random_records(rng, 10000);
    const std::size_t n = trial % 2 == 0 ? 10 : 1 + rng() % 25;
    const CalibrationBins bins = bin_predictions(records, n);
    const BruteForce ref = brute_force(records, n);
    CHECK(bins.count == ref.count);
    CHECK(bins.total() == records.size());
    CHECK(std::abs(ece(bins) - ref.ece) < 1e-12);
    CHECK(std::abs(mce(bins) - ref.mce) < 1e-12);
    CHECK(ece(bins) <= mce(bins) + 1e-15);
  }
}

TEST_CASE("small hand-computed calibration") {
  // Bin 10 holds 0.95 (correct) and 0.85 lands in bin 9 (wrong).
  const std::vector<PredictionRecord> records = {{0.95, true}, {0.85, false}, {0.55, true}, {0.55, false}};
  const CalibrationBins bins = bin_predictions(records, 10);
  // gaps: bin10 0.05, bin9 0.85, bin6 0.05
  const double expected = 0.25 * 0.05 + 0.25 * 0.85 + 0.5 * 0.05;
  CHECK(ece(bins) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(mce(bins) == doctest::Approx(0.85).epsilon(1e-14));
}

TEST_CASE("perfect calibration and constant predictors") {
  const std::vector<PredictionRecord> all_right(50, {1.0, true});
  CHECK(ece(bin_predictions(all_right)) == 0.0);
  std::vector<PredictionRecord> seventy;
  for (int i = 0; i < 100; ++i) seventy.push_back({0.7, i < 70});
  CHECK(std::abs(ece(bin_predictions(seventy))) < 1e-12);
  CHECK(std::abs(mce(bin_predictions(seventy))) < 1e-12);
}

TEST_CASE("binning errors") {
  CHECK_THROWS_AS(bin_predictions(std::vector<PredictionRecord>{}), ValidationError);
  CHECK_THROWS_AS(bin_predictions(std::vector<PredictionRecord>{{0.5, true}}, 0), ValidationError);
  CHECK_THROWS_AS(bin_predictions(std::vector<PredictionRecord>{{1.5, true}}), ValidationError);
  CHECK_THROWS_AS(bin_predictions(std::vector<PredictionRecord>{{std::nan(""), true}}), ValidationError);
}

TEST_CASE("reliability and histogram csv") {
  const std::vector<PredictionRecord> records = {{0.95, true}, {0.15, false}};
  const CalibrationBins bins = bin_predictions(records, 10);
  const std::string rel = reliability_csv(bins);
  CHECK(rel.rfind("bin_lo,bin_hi,count,mean_confidence,accuracy\n", 0) == 0);
  CHECK(std::count(rel.begin(), rel.end(), '\n') == 11);
  const std::string hist = histogram_csv(bins);
  CHECK(hist.find("2,1\n") != std::string::npos);
  CHECK(hist.find("10,1\n") != std::string::npos);
  const auto j = calibration_summary(bins, 1.5);
  CHECK(j.at("temperature").get<double>() == 1.5);
  CHECK(j.at("n").get<std::size_t>() == 2);
}

TEST_CASE("temperature selection tie-breaking") {
  const std::vector<double> grid = {0.8, 1.0, 1.5, 2.0, 2.5};
  CHECK(select_temperature(grid, std::vector<double>{3, 2, 1, 2, 3}) == 1.5);
  CHECK(select_temperature(grid, std::vector<double>{1, 1, 1, 1, 1}) == 1.0);
  CHECK(select_temperature(std::vector<double>{0.8, 1.2}, std::vector<double>{1, 1}) == 0.8);
  CHECK(select_temperature(grid, std::vector<double>{2, 3, 3, 3, 2}) == 0.8);
  CHECK_THROWS(select_temperature(grid, std::vector<double>{1, 2}));
}

TEST_CASE("temperature fit recovers scaled logits") {
  std::mt19937_64 rng(12);
  const std::size_t N = 4000, V = 8;
  Tensor truth({N, V});
  std::normal_distribution<double> gauss(0.0, 1.5);
  for (double& x : truth.data()) x = gauss(rng);
  std::vector<std::size_t> labels(N);
  for (std::size_t r = 0; r < N; ++r) {
    const auto p = testutil::ref_softmax(testutil::row_of(truth, r));
    std::vector<double> w(p.begin(), p.end());
    labels[r] = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
  }
  for (double k : {0.5, 2.0}) {
    Tensor scaled = truth;
    for (double& x : scaled.data()) x *= k;
    const TemperatureFit fit = fit_temperature(scaled, labels);
    // Reference NLL per grid point in extended precision.
    std::vector<long double> nll;
    for (double tau : kDefaultTemperatureGrid) {
      long double total = 0.0L;
      for (std::size_t r = 0; r < N; ++r) {
        total -= std::log(testutil::ref_softmax(testutil::row_of(scaled, r), tau)[labels[r]]);
      }
      nll.push_back(total / N);
    }
    const std::size_t best = static_cast<std::size_t>(std::min_element(nll.begin(), nll.end()) - nll.begin());
    CHECK(fit.temperature == kDefaultTemperatureGrid[best]);
    for (std::size_t i = 0; i < nll.size(); ++i) CHECK(std::abs(fit.nll[i] - static_cast<double>(nll[i])) < 1e-10);
    CHECK(fit.nll[best] <= fit.nll[1]);
    if (k == 2.0) CHECK(fit.temperature == 2.0);
    if (k == 0.5) CHECK(fit.temperature == 0.8);
  }
}

TEST_CASE("records from probabilities") {
  const Batch batch = Batch::from_sequences({{5}, {6}}, {{kBos, 4, kEos}, {kBos, kEos}});
  ProbGrid probs{Tensor({2, 2, 5}, {0.1, 0.1, 0.1, 0.1, 0.6, 0.0, 0.0, 0.9, 0.1, 0.0,
                                    0.0, 0.0, 0.3, 0.7, 0.0, 0.2, 0.2, 0.2, 0.2, 0.2})};
  const auto recs = records_from_probs(probs, batch);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].confidence == 0.6);
  CHECK(recs[0].correct);
  CHECK(recs[1].confidence == 0.9);
  CHECK(recs[1].correct);
  CHECK(recs[2].confidence == 0.7);
  CHECK_FALSE(recs[2].correct);
}
