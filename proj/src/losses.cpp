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

#include "sfda/losses.hpp"

#include <cmath>

#include "sfda/errors.hpp"

namespace sfda {
namespace {

void check_labels(std::span<const int> labels, std::size_t batch, std::size_t k,
                  const char* who) {
  if (labels.size() != batch) {
    throw ContractError(std::string(who) + ": label count does not match batch");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw ContractError(std::string(who) + ": label out of range [0,K)");
    }
  }
}

void check_prob_rows(const Tensor& probs, const char* who) {
  if (probs.rank() != 2) throw ContractError(std::string(who) + ": probs must be [batch,K]");
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double s = 0.0;
    for (double v : probs.row(i)) s += v;
    if (std::abs(s - 1.0) > 1e-6) {
      throw ContractError(std::string(who) + ": row does not sum to 1 within 1e-6");
    }
  }
}

// Mean over batch of -sum_k targets_ik * log softmax_k(logits_i), with a
// fixed (constant) target matrix.
Var target_matrix_ce(Tape& tape, Var logits, Tensor targets) {
  const std::size_t batch = tape.value(logits).rows();
  Var logp = tape.log(tape.softmax(logits));
  Var weighted = tape.mul(tape.constant(std::move(targets)), logp);
  return tape.scalar_mul(tape.sum(weighted), -1.0 / static_cast<double>(batch));
}

}  // namespace

Var label_smoothing_ce(Tape& tape, Var logits, std::span<const int> labels,
                       double alpha_smooth) {
  const Tensor& lv = tape.value(logits);
  const std::size_t batch = lv.rows(), k = lv.cols();
  if (alpha_smooth < 0.0 || alpha_smooth >= 1.0) {
    throw ContractError("label_smoothing_ce: alpha_smooth must be in [0,1)");
  }
  check_labels(labels, batch, k, "label_smoothing_ce");
  Tensor targets({batch, k});
  const double off = alpha_smooth / static_cast<double>(k);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < k; ++j) targets.at(i, j) = off;
    targets.at(i, static_cast<std::size_t>(labels[i])) += 1.0 - alpha_smooth;
  }
  return target_matrix_ce(tape, logits, std::move(targets));
}

Tensor conditional_entropy_per_sample(const Tensor& probs) {
  check_prob_rows(probs, "conditional_entropy_per_sample");
  const std::size_t batch = probs.rows(), k = probs.cols();
  Tensor h({batch});
  for (std::size_t i = 0; i < batch; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = probs.at(i, j);
      s += p * std::log(p > Tape::kLogClamp ? p : Tape::kLogClamp);
    }
    h[i] = -s;
  }
  return h;
}

Var signed_entropy_loss(Tape& tape, Var probs, std::span<const int> delta) {
  const Tensor& pv = tape.value(probs);
  check_prob_rows(pv, "signed_entropy_loss");
  const std::size_t batch = pv.rows(), k = pv.cols();
  if (delta.size() != batch) {
    throw ContractError("signed_entropy_loss: delta length does not match batch");
  }
  Tensor signs({batch, k});
  for (std::size_t i = 0; i < batch; ++i) {
    if (delta[i] != 1 && delta[i] != -1) {
      throw ContractError("signed_entropy_loss: sign not in {-1,+1}");
    }
    for (std::size_t j = 0; j < k; ++j) signs.at(i, j) = static_cast<double>(delta[i]);
  }
  // mean_i delta_i * (-sum_k p log p) = -(1/b) * sum_ik delta_i p_ik log p_ik
  Var plogp = tape.mul(probs, tape.log(probs));
  Var weighted = tape.mul(tape.constant(std::move(signs)), plogp);
  return tape.scalar_mul(tape.sum(weighted), -1.0 / static_cast<double>(batch));
}

Var mean_conditional_entropy(Tape& tape, Var probs) {
  const std::size_t batch = tape.value(probs).rows();
  std::vector<int> ones(batch, 1);
  return signed_entropy_loss(tape, probs, ones);
}

Var info_entropy_loss(Tape& tape, Var probs) {
  const Tensor& pv = tape.value(probs);
  check_prob_rows(pv, "info_entropy_loss");
  const std::size_t batch = pv.rows();
  if (batch == 0) throw ContractError("info_entropy_loss: empty batch");
  Tensor ones({1, batch});
  ones.fill(1.0 / static_cast<double>(batch));
  Var phat = tape.matmul(tape.constant(std::move(ones)), probs);  // [1,K]
  return tape.sum(tape.mul(phat, tape.log(phat)));
}

Var pseudo_label_ce(Tape& tape, Var logits, std::span<const int> pseudo_labels) {
  const Tensor& lv = tape.value(logits);
  const std::size_t batch = lv.rows(), k = lv.cols();
  check_labels(pseudo_labels, batch, k, "pseudo_label_ce");
  Tensor targets({batch, k});
  for (std::size_t i = 0; i < batch; ++i) {
    targets.at(i, static_cast<std::size_t>(pseudo_labels[i])) = 1.0;
  }
  return target_matrix_ce(tape, logits, std::move(targets));
}

Var rotation_loss(Tape& tape, Var rot_logits, std::span<const int> rot_labels) {
  const Tensor& lv = tape.value(rot_logits);
  if (lv.cols() != 4) throw ContractError("rotation_loss: logits must be [batch,4]");
  check_labels(rot_labels, lv.rows(), 4, "rotation_loss");
  Tensor targets({lv.rows(), 4});
  for (std::size_t i = 0; i < lv.rows(); ++i) {
    targets.at(i, static_cast<std::size_t>(rot_labels[i])) = 1.0;
  }
  return target_matrix_ce(tape, rot_logits, std::move(targets));
}

Var weighted_total(Tape& tape, Var l_ent, Var l_info, Var l_ce, Var l_rot,
                   double alpha_ce, double beta_rot) {
  if (alpha_ce < 0.0 || beta_rot < 0.0) {
    throw ContractError("weighted_total: loss weights must be nonnegative");
  }
  Var weighted = tape.add(tape.scalar_mul(l_ce, alpha_ce), tape.scalar_mul(l_rot, beta_rot));
  return tape.add(tape.add(l_ent, l_info), weighted);
}

LossBreakdown total_loss(double l_ent, double l_info, double l_ce, double l_rot,
                         double alpha_ce, double beta_rot, int conflict_count,
                         int batch_size) {
  if (alpha_ce < 0.0 || beta_rot < 0.0) {
    throw ContractError("total_loss: loss weights must be nonnegative");
  }
  LossBreakdown b;
  b.l_ent = l_ent;
  b.l_info = l_info;
  b.l_ce = l_ce;
  b.l_rot = l_rot;
  b.total = (l_ent + l_info) + (alpha_ce * l_ce + beta_rot * l_rot);
  b.conflict_count = conflict_count;
  b.batch_size = batch_size;
  return b;
}

}  // namespace sfda
