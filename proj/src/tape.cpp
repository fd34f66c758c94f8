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

#include "hkd/tape.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "hkd/errors.hpp"
#include "hkd/ops.hpp"

namespace hkd {

Tape::Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, Node&)> adjoint) {
  Node node;
  node.owned = std::move(value);
  node.needs_grad = record_ && needs_grad;
  if (node.needs_grad) node.adjoint = std::move(adjoint);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Tape::Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Tape::Var Tape::parameter(DualTensor& param) {
  Node node;
  node.ref = &param.value;
  node.needs_grad = record_;
  node.param = record_ ? &param : nullptr;
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Tape::Var Tape::parameter(const Tensor& frozen) {
  Node node;
  node.ref = &frozen;
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v).value(); }

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v);
  if (n.grad.empty()) throw ValidationError(fmt::format("no gradient recorded for node {}", v));
  return n.grad;
}

Tensor& Tape::grad_slot(Var v) {
  Node& n = nodes_[v];
  if (n.grad.empty()) n.grad = Tensor(n.value().shape());
  return n.grad;
}

Tape::Var Tape::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul of " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  kernels::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  return push(std::move(out), needs(a) || needs(b), [a, b, m, k, n](Tape& t, Node& self) {
    if (t.needs(a)) kernels::gemm_nt(self.grad.data(), t.value(b).data(), t.grad_slot(a).data(), m, n, k);
    if (t.needs(b)) kernels::gemm_tn(t.value(a).data(), self.grad.data(), t.grad_slot(b).data(), m, k, n);
  });
}

Tape::Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("add of " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, Node& self) {
    for (Var v : {a, b}) {
      if (!t.needs(v)) continue;
      Tensor& g = t.grad_slot(v);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tape::Var Tape::add_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  if (bv.rank() != 1 || bv.dim(0) != xv.cols()) {
    throw DimensionError("bias " + shape_string(bv.shape()) + " does not fit " +
                         shape_string(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t d = xv.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += bv[c];
  }
  return push(std::move(out), needs(x) || needs(bias), [x, bias, d](Tape& t, Node& self) {
    if (t.needs(x)) {
      Tensor& g = t.grad_slot(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (t.needs(bias)) {
      Tensor& g = t.grad_slot(bias);
      const std::size_t rows = self.grad.size() / d;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c];
      }
    }
  });
}

Tape::Var Tape::relu(Var x) {
  Tensor out = value(x);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), needs(x), [x](Tape& t, Node& self) {
    const Tensor& in = t.value(x);
    Tensor& g = t.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tape::Var Tape::scale(Var x, double factor) {
  Tensor out = value(x);
  for (double& v : out.data()) v *= factor;
  return push(std::move(out), needs(x), [x, factor](Tape& t, Node& self) {
    Tensor& g = t.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tape::Var Tape::gather_rows(Var table, std::vector<std::int32_t> ids) {
  const Tensor& tv = value(table);
  if (tv.rank() != 2) throw DimensionError("gather_rows needs a matrix, got " + shape_string(tv.shape()));
  const std::size_t d = tv.dim(1);
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.dim(0)) {
      throw ValidationError(fmt::format("id {} outside table of {} rows", ids[r], tv.dim(0)));
    }
    std::copy_n(tv.row(ids[r]).begin(), d, out.row(r).begin());
  }
  return push(std::move(out), needs(table), [table, ids = std::move(ids), d](Tape& t, Node& self) {
    Tensor& g = t.grad_slot(table);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const double* src = self.grad.data().data() + r * d;
      double* dst = g.data().data() + static_cast<std::size_t>(ids[r]) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Tape::Var Tape::tile_positions(Var table, std::size_t batch, std::size_t len) {
  const Tensor& tv = value(table);
  if (tv.rank() != 2 || len > tv.dim(0)) {
    throw CapacityError(fmt::format("sequence length {} exceeds position table {}", len,
                                    shape_string(tv.shape())));
  }
  const std::size_t d = tv.dim(1);
  Tensor out({batch * len, d});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(tv.data().begin(), len * d, out.data().begin() + b * len * d);
  }
  return push(std::move(out), needs(table), [table, batch, len, d](Tape& t, Node& self) {
    Tensor& g = t.grad_slot(table);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < len * d; ++i) g[i] += self.grad[b * len * d + i];
    }
  });
}

Tape::Var Tape::attention(Var q, Var k, Var v, AttentionLayout layout) {
  const Tensor& qv = value(q);
  const Tensor& kv = value(k);
  const Tensor& vv = value(v);
  const std::size_t B = layout.batch, Tq = layout.query_len, Tk = layout.key_len;
  const std::size_t d = qv.cols();
  if (qv.rows() != B * Tq || kv.rows() != B * Tk || vv.rows() != B * Tk || kv.cols() != d ||
      layout.key_lengths.size() != B) {
    throw DimensionError(fmt::format("attention layout B={} Tq={} Tk={} does not match q {} k {} v {}",
                                     B, Tq, Tk, shape_string(qv.shape()), shape_string(kv.shape()),
                                     shape_string(vv.shape())));
  }
  const std::size_t dv = vv.cols();
  const double s = 1.0 / std::sqrt(static_cast<double>(d));

  // weights[b, i, j], zero where masked.
  Tensor weights({B * Tq, Tk});
  Tensor out({B * Tq, dv});
  std::vector<double> scores(Tk);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t klen = layout.key_lengths[b];
    if (klen == 0 || klen > Tk) throw ValidationError("attention row without valid keys");
    for (std::size_t i = 0; i < Tq; ++i) {
      const std::size_t visible = layout.causal ? std::min(klen, i + 1) : klen;
      const double* qi = qv.data().data() + (b * Tq + i) * d;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < visible; ++j) {
        const double* kj = kv.data().data() + (b * Tk + j) * d;
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += qi[c] * kj[c];
        scores[j] = acc * s;
        mx = std::max(mx, scores[j]);
      }
      double sum = 0.0;
      double* w = weights.data().data() + (b * Tq + i) * Tk;
      for (std::size_t j = 0; j < visible; ++j) {
        w[j] = std::exp(scores[j] - mx);
        sum += w[j];
      }
      double* o = out.data().data() + (b * Tq + i) * dv;
      for (std::size_t j = 0; j < visible; ++j) {
        w[j] /= sum;
        const double* vj = vv.data().data() + (b * Tk + j) * dv;
        for (std::size_t c = 0; c < dv; ++c) o[c] += w[j] * vj[c];
      }
    }
  }

  auto adjoint = [q, k, v, layout, weights = std::move(weights), d, dv, s](Tape& t, Node& self) {
    const std::size_t B = layout.batch, Tq = layout.query_len, Tk = layout.key_len;
    const Tensor& qv = t.value(q);
    const Tensor& kv = t.value(k);
    const Tensor& vv = t.value(v);
    Tensor* gq = t.needs(q) ? &t.grad_slot(q) : nullptr;
    Tensor* gk = t.needs(k) ? &t.grad_slot(k) : nullptr;
    Tensor* gv = t.needs(v) ? &t.grad_slot(v) : nullptr;
    std::vector<double> dw(Tk);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t klen = layout.key_lengths[b];
      for (std::size_t i = 0; i < Tq; ++i) {
        const std::size_t visible = layout.causal ? std::min(klen, i + 1) : klen;
        const double* go = self.grad.data().data() + (b * Tq + i) * dv;
        const double* w = weights.data().data() + (b * Tq + i) * Tk;
        double inner = 0.0;
        for (std::size_t j = 0; j < visible; ++j) {
          const double* vj = vv.data().data() + (b * Tk + j) * dv;
          double acc = 0.0;
          for (std::size_t c = 0; c < dv; ++c) acc += go[c] * vj[c];
          dw[j] = acc;
          inner += w[j] * acc;
          if (gv) {
            double* gvj = gv->data().data() + (b * Tk + j) * dv;
            for (std::size_t c = 0; c < dv; ++c) gvj[c] += w[j] * go[c];
          }
        }
        const double* qi = qv.data().data() + (b * Tq + i) * d;
        double* gqi = gq ? gq->data().data() + (b * Tq + i) * d : nullptr;
        for (std::size_t j = 0; j < visible; ++j) {
          const double ds = w[j] * (dw[j] - inner) * s;
          const double* kj = kv.data().data() + (b * Tk + j) * d;
          if (gqi) {
            for (std::size_t c = 0; c < d; ++c) gqi[c] += ds * kj[c];
          }
          if (gk) {
            double* gkj = gk->data().data() + (b * Tk + j) * d;
            for (std::size_t c = 0; c < d; ++c) gkj[c] += ds * qi[c];
          }
        }
      }
    }
  };
  return push(std::move(out), needs(q) || needs(k) || needs(v), std::move(adjoint));
}

Tape::Var Tape::log_softmax(Var z, double temperature) {
  Tensor out = hkd::log_softmax(value(z), temperature);
  return push(std::move(out), needs(z), [z, temperature](Tape& t, Node& self) {
    Tensor& g = t.grad_slot(z);
    const std::size_t cols = self.grad.cols();
    const double inv = 1.0 / temperature;
    for (std::size_t r = 0; r < self.grad.rows(); ++r) {
      const auto gy = self.grad.row(r);
      const auto y = self.value().row(r);
      double total = 0.0;
      for (double x : gy) total += x;
      double* gz = g.data().data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) gz[c] += (gy[c] - std::exp(y[c]) * total) * inv;
    }
  });
}

Tape::Var Tape::weighted_cross_entropy(Var logp, Tensor target, std::vector<double> weights) {
  const Tensor& lv = value(logp);
  if (target.shape() != lv.shape() || weights.size() != lv.rows()) {
    throw DimensionError("cross-entropy target " + shape_string(target.shape()) + " vs log-probs " +
                         shape_string(lv.shape()));
  }
  const std::size_t cols = lv.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (weights[r] == 0.0) continue;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double q = target[r * cols + c];
      if (q != 0.0) acc += q * lv[r * cols + c];
    }
    total -= weights[r] * acc;
  }
  return push(Tensor(Shape{1}, std::vector<double>{total}), needs(logp),
              [logp, target = std::move(target), weights = std::move(weights), cols](Tape& t, Node& self) {
                const double g0 = self.grad[0];
                Tensor& g = t.grad_slot(logp);
                for (std::size_t r = 0; r < weights.size(); ++r) {
                  if (weights[r] == 0.0) continue;
                  const double f = -g0 * weights[r];
                  for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += f * target[r * cols + c];
                }
              });
}

Tape::Var Tape::dot(Var x, Tensor coeffs) {
  const Tensor& xv = value(x);
  if (coeffs.size() != xv.size()) throw DimensionError("dot coefficient count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) total += coeffs[i] * xv[i];
  return push(Tensor(Shape{1}, std::vector<double>{total}), needs(x), [x, coeffs = std::move(coeffs)](Tape& t, Node& self) {
    Tensor& g = t.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * coeffs[i];
  });
}

Tape::Var Tape::dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0 || !record_) return x;
  if (rate >= 1.0) throw ParameterError("dropout rate must be below 1");
  const Tensor& xv = value(x);
  Tensor mask(xv.shape());
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < rate ? 0.0 : keep;
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return push(std::move(out), needs(x), [x, mask = std::move(mask)](Tape& t, Node& self) {
    Tensor& g = t.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += mask[i] * self.grad[i];
  });
}

void Tape::backward(Var out) {
  if (value(out).size() != 1) throw DimensionError("backward needs a scalar output");
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[out].needs_grad) return;
  grad_slot(out)[0] = 1.0;
  for (std::size_t i = out + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.adjoint) n.adjoint(*this, n);
    if (n.param) {
      for (std::size_t j = 0; j < n.grad.size(); ++j) n.param->grad[j] += n.grad[j];
    }
  }
}

}  // namespace hkd
