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

#include "hkd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <fmt/format.h>

#include "hkd/errors.hpp"

namespace hkd {

namespace kernels {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict o = out.data() + i * n;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      const double* __restrict bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += s * bp[j];
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n) {
  // Transpose b once so the inner loop runs over contiguous output columns.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(a, bt, out, m, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r) {
    const double* ar = a.data() + r * k;
    const double* __restrict br = b.data() + r * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ar[p];
      double* __restrict o = out.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += s * br[j];
    }
  }
}

}  // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul of " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  kernels::gemm_nn(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

void log_softmax_row(std::span<const double> z, double temperature, std::span<double> out) {
  const double inv = 1.0 / temperature;
  double mx = z[0] * inv;
  for (double v : z) mx = std::max(mx, v * inv);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v * inv - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] * inv - lse;
}

void softmax_row(std::span<const double> z, double temperature, std::span<double> out) {
  const double inv = 1.0 / temperature;
  double mx = z[0] * inv;
  for (double v : z) mx = std::max(mx, v * inv);
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] * inv - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

namespace {

void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError(fmt::format("temperature must be positive and finite, got {}", temperature));
  }
}

}  // namespace

Tensor log_softmax(const Tensor& z, double temperature) {
  check_temperature(temperature);
  Tensor out(z.shape());
  for (std::size_t r = 0; r < z.rows(); ++r) log_softmax_row(z.row(r), temperature, out.row(r));
  return out;
}

Tensor softmax(const Tensor& z, double temperature) {
  check_temperature(temperature);
  Tensor out(z.shape());
  for (std::size_t r = 0; r < z.rows(); ++r) softmax_row(z.row(r), temperature, out.row(r));
  return out;
}

double entropy(std::span<const double> p) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ValidationError(fmt::format("negative or NaN probability {}", v));
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError(fmt::format("distribution sums to {}, not 1", total));
  }
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  Tensor analytic(x.shape());
  const double f0 = f(x, &analytic);
  if (!std::isfinite(f0)) throw NumericError("non-finite function value at base point");
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe, nullptr);
    probe[i] = orig - h;
    const double fm = f(probe, nullptr);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError(fmt::format("non-finite function value perturbing coordinate {}", i));
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max(std::abs(analytic[i]), 1e-8);
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace hkd
