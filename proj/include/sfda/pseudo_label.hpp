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

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sfda/tensor.hpp"

namespace sfda {

/// Per-class prototype vectors in embedding space. Distance metric is cosine
/// throughout. A class whose soft-assignment weight was (numerically) zero is
/// flagged degenerate and excluded from nearest-centroid scans.
struct CentroidSet {
  enum class Pass { initial, refined };
  Tensor centroids;  // [K,d]
  Pass pass = Pass::initial;
  std::vector<std::uint8_t> degenerate;  // per class

  std::size_t k() const { return centroids.rows(); }
  std::size_t d() const { return centroids.cols(); }
};

/// Per-target-sample pseudo-label state, frozen once per epoch.
struct PseudoLabelTable {
  std::vector<int> labels;       // final (refined-pass) pseudo-labels
  std::vector<int> provisional;  // pass-1 labels (pre-refinement)
  std::vector<double> ratios;    // uncertainty ratios vs refined centroids
  int epoch_stamp = 0;
};

struct PseudoLabelResult {
  PseudoLabelTable table;
  CentroidSet refined;
};

struct RatioStats {
  double mean = 0.0;
  double median = 0.0;
  std::array<long, 20> histogram{};  // bins [i/20, (i+1)/20), last bin closed
};

/// 1 - u.v / (||u|| ||v|| + 1e-12), in [0,2] up to epsilon effects.
double cosine_distance(std::span<const double> u, std::span<const double> v);

/// C_k = sum_i probs_ik * emb_i / sum_i probs_ik (soft class means).
CentroidSet weighted_centroids(const Tensor& embeddings, const Tensor& probs);

/// Nearest centroid per sample under cosine distance; ties resolved to the
/// lowest class index. ClusteringError when every class is degenerate.
std::vector<int> assign_nearest(const Tensor& embeddings, const CentroidSet& centroids);

/// Soft-weighted centroids -> provisional labels -> one-hot refined centroids
/// (an empty class keeps its pass-1 centroid) -> final labels and ratios.
PseudoLabelResult generate_pseudo_labels(const Tensor& embeddings, const Tensor& probs);

/// Nearest distance over second-nearest distance, in [0,1]; 1 when the sample
/// coincides with two or more centroids.
double uncertainty_ratio(std::span<const double> embedding, const CentroidSet& centroids);

/// True iff the hypothesis disagrees with the pseudo-label AND the ratio is
/// strictly below r_th.
std::vector<std::uint8_t> conflict_flags(std::span<const int> pseudo_labels,
                                         std::span<const int> hypotheses,
                                         std::span<const double> ratios, double r_th);

/// Mean / median / 20-bin histogram of ratios where mask is true.
/// StatisticsError when the selection is empty.
RatioStats threshold_stats(std::span<const double> ratios,
                           std::span<const std::uint8_t> selected);

/// Plain-text table: sample_id, pseudo_label, ratio, conflict_flag, epoch.
void write_pseudo_label_table(const PseudoLabelTable& table,
                              std::span<const std::uint8_t> flags,
                              const std::string& path);

}  // namespace sfda
