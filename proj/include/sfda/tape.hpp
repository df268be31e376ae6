// Copyright (c) 2026 The sfda Authors. All Rights Reserved.
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
#include <vector>

#include "sfda/tensor.hpp"

namespace sfda {

/// Handle to a node on a Tape. Only meaningful together with the tape that
/// produced it.
struct Var {
  std::uint32_t index = 0;
};

/// Per-feature running statistics for batch normalization. Lives outside the
/// tape; training-mode forward passes update it as a side effect.
struct BatchNormState {
  Tensor running_mean;  // [d]
  Tensor running_var;   // [d]
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Reverse-mode autodiff over a fixed primitive set. Ops append nodes in
/// execution order, so creation order is a topological order and backward()
/// is a single reverse sweep. A tape is single-threaded; independent tapes
/// may run concurrently.
class Tape {
 public:
  /// Arguments of log() are clamped here before taking the logarithm, so the
  /// entropy of one-hot rows is finite and exactly zero.
  static constexpr double kLogClamp = 1e-12;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// C[m,n] = A[m,k] B[k,n].
  Var matmul(Var a, Var b);
  /// Elementwise sum of two same-shape tensors.
  Var add(Var a, Var b);
  /// M[b,n] + bias[n], bias added to every row.
  Var add_row_bias(Var m, Var bias);
  Var scalar_mul(Var x, double c);
  /// Elementwise product of two same-shape tensors.
  Var mul(Var a, Var b);
  Var relu(Var x);
  Var exp(Var x);
  /// ln(max(x, kLogClamp)); derivative is 0 in the clamped region.
  Var log(Var x);
  /// Row-wise softmax with max-subtraction; input [batch,K], K >= 2.
  Var softmax(Var logits);
  /// Sum of all elements, shape {1}.
  Var sum(Var x);
  /// Mean of all elements, shape {1}.
  Var mean(Var x);
  /// [b,m] ++ [b,n] -> [b,m+n] along the feature axis.
  Var concat_cols(Var a, Var b);
  /// Batch normalization over [batch,d] with per-feature gamma/beta. In
  /// training mode batch statistics are used and `state` running estimates
  /// are updated; in evaluation mode running estimates are used and `state`
  /// is untouched.
  Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, bool training);
  /// logits[b,K] = x[b,d] dot (g_k * v_k / ||v_k||) + bias_k. The direction
  /// rows v are normalized inside the op, so scaling any v_k by a positive
  /// constant leaves the output unchanged.
  Var weight_norm_linear(Var x, Var v, Var g, Var bias);

  /// Reverse sweep from a scalar loss. Grad buffers of every node are reset
  /// first, the loss seed is 1, and nodes are visited in exact reverse
  /// creation order. ContractError if the loss is not a scalar.
  void backward(Var loss);

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const { return node(v).grad; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  Var push(Tensor value, bool requires_grad, std::function<void(Tape&)> bwd);

  std::vector<Node> nodes_;
};

}  // namespace sfda
