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

#include <functional>
#include <span>

#include "hkd/tensor.hpp"

namespace hkd {

// Probabilities are floored here before any log taken in loss code.
inline constexpr double kProbFloor = 1e-12;

// Raw kernels. All accumulate into `out` (out += ...), sizes are not checked.
// Reductions run in a fixed left-to-right order.
namespace kernels {
// out[m x n] += a[m x k] * b[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n);
// out[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n);
// out[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> out,
             std::size_t m, std::size_t k, std::size_t n);
}  // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b);

// Last-axis log-softmax of z / temperature.
Tensor log_softmax(const Tensor& z, double temperature = 1.0);
Tensor softmax(const Tensor& z, double temperature = 1.0);
void log_softmax_row(std::span<const double> z, double temperature, std::span<double> out);
void softmax_row(std::span<const double> z, double temperature, std::span<double> out);

// Shannon entropy in nats, 0 ln 0 := 0. Rejects rows that are not distributions.
double entropy(std::span<const double> p);

std::size_t argmax(std::span<const double> row);

// Central-difference gradient check. `f` returns the scalar value at x and, when
// `grad` is non-null, writes the analytic gradient into it. Returns the max over
// coordinates of |numeric - analytic| / max(|analytic|, 1e-8).
using ScalarFn = std::function<double(const Tensor& x, Tensor* grad)>;
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

}  // namespace hkd
