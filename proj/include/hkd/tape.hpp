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
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd {

// Describes how flattened [B*Tq x D] queries attend over flattened
// [B*Tk x D] keys: row b may see its first key_lengths[b] keys, and in causal
// mode query i only sees keys j <= i.
struct AttentionLayout {
  std::size_t batch = 0;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::vector<std::size_t> key_lengths;
  bool causal = false;
};

// Linear reverse-mode tape. Every op appends a node holding its value and,
// when recording, an adjoint rule; backward() walks the nodes in reverse.
//
// A tape built with record = false is a plain evaluator: parameters are read
// but never receive gradient.
class Tape {
 public:
  using Var = std::size_t;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  // The tensor is referenced, not copied; it must outlive the tape.
  Var parameter(DualTensor& param);
  Var parameter(const Tensor& frozen);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() target with respect to v.
  const Tensor& grad(Var v) const;

  // out = a b, for rank-2 operands.
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  // x[N x D] + bias[D] broadcast over rows.
  Var add_bias(Var x, Var bias);
  Var relu(Var x);
  Var scale(Var x, double factor);
  // Rows of table[V x D] selected by ids.
  Var gather_rows(Var table, std::vector<std::int32_t> ids);
  // Rows of table[L x D] 0..len-1, tiled for each of `batch` sequences.
  Var tile_positions(Var table, std::size_t batch, std::size_t len);
  // Scaled dot-product attention, single head.
  Var attention(Var q, Var k, Var v, AttentionLayout layout);
  Var log_softmax(Var z, double temperature);
  // Scalar -sum_n weights[n] * sum_v target[n, v] * logp[n, v].
  Var weighted_cross_entropy(Var logp, Tensor target, std::vector<double> weights);
  // Scalar sum_i coeffs[i] * x[i].
  Var dot(Var x, Tensor coeffs);
  // Inverted dropout; identity when rate is 0 or the tape is not recording.
  Var dropout(Var x, double rate, std::mt19937_64& rng);

  // Seeds d(out)/d(out) = 1 for a scalar output and propagates adjoints.
  // Parameter gradients are accumulated into their DualTensor::grad.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    DualTensor* param = nullptr;
    bool needs_grad = false;
    std::function<void(Tape&, Node&)> adjoint;

    const Tensor& value() const { return ref ? *ref : owned; }
  };

  Var push(Tensor value, bool needs_grad, std::function<void(Tape&, Node&)> adjoint);
  bool needs(Var v) const { return nodes_[v].needs_grad; }
  Tensor& grad_slot(Var v);

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace hkd
