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

#include <span>

#include "sfda/tape.hpp"
#include "sfda/tensor.hpp"

namespace sfda {

struct LossBreakdown {
  double l_ent = 0.0;
  double l_info = 0.0;
  double l_ce = 0.0;
  double l_rot = 0.0;
  double total = 0.0;
  int conflict_count = 0;
  int batch_size = 0;
};

/// Mean over the batch of -sum_k q_k log softmax_k(logits), where q is the
/// one-hot target mixed with the uniform distribution at weight alpha_smooth.
Var label_smoothing_ce(Tape& tape, Var logits, std::span<const int> labels,
                       double alpha_smooth);

/// Per-row entropy H_i = -sum_k p_ik log p_ik of a probability matrix.
/// Forward-only helper (reporting); the differentiable path is the loss
/// functions below. Rows must sum to 1 within 1e-6.
Tensor conditional_entropy_per_sample(const Tensor& probs);

/// Mean over the batch of delta_i * H_i with delta_i in {-1,+1}. Sign -1
/// turns entropy minimization into maximization for that sample.
Var signed_entropy_loss(Tape& tape, Var probs, std::span<const int> delta);

/// Mean conditional entropy (all signs +1).
Var mean_conditional_entropy(Tape& tape, Var probs);

/// sum_k phat_k log phat_k where phat is the batch-mean probability row.
/// Negative entropy of the prediction marginal; in [-ln K, 0].
Var info_entropy_loss(Tape& tape, Var probs);

/// Mean over the batch of -log softmax_{label}(logits).
Var pseudo_label_ce(Tape& tape, Var logits, std::span<const int> pseudo_labels);

/// Mean 4-way cross-entropy over rotation logits.
Var rotation_loss(Tape& tape, Var rot_logits, std::span<const int> rot_labels);

/// l_ent + l_info + alpha_ce * l_ce + beta_rot * l_rot, on the tape.
Var weighted_total(Tape& tape, Var l_ent, Var l_info, Var l_ce, Var l_rot,
                   double alpha_ce, double beta_rot);

/// Scalar-side combiner mirroring weighted_total; fills the breakdown.
LossBreakdown total_loss(double l_ent, double l_info, double l_ce, double l_rot,
                         double alpha_ce, double beta_rot, int conflict_count,
                         int batch_size);

}  // namespace sfda
