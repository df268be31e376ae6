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
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sfda/tensor.hpp"

namespace sfda {

enum class Domain { source, target };

struct LabeledDataset {
  Tensor inputs;            // [n, in_dim]
  std::vector<int> labels;  // empty when unlabeled
  Domain domain = Domain::source;

  std::size_t n() const { return inputs.rows(); }
  std::size_t dim() const { return inputs.cols(); }
  bool has_labels() const { return !labels.empty(); }
};

struct RotationBatch {
  Tensor original;          // [batch, H*W]
  Tensor rotated;           // [batch, H*W]
  std::vector<int> labels;  // quarter turns in [0,4)
};

/// Domain shift applied to the target copy of the blobs: rotate about the
/// origin, then translate, then resample class sizes by the given ratios
/// (empty = balanced). Ratios must be nonnegative and sum to 1 within 1e-6.
struct BlobShift {
  std::vector<double> translation;  // length in_dim (or empty = none)
  double rotation_deg = 0.0;        // first two dims
  std::vector<double> class_ratios;
};

struct BlobParams {
  std::size_t in_dim = 2;
  double radius = 4.0;  // class means on a circle of this radius
  double stddev = 1.0;
};

/// K Gaussian blobs; source balanced, target transformed per shift.
/// Deterministic per seed.
std::pair<LabeledDataset, LabeledDataset> gen_shifted_blobs(std::uint64_t seed,
                                                            std::size_t k,
                                                            std::size_t n_source,
                                                            std::size_t n_target,
                                                            const BlobShift& shift,
                                                            const BlobParams& params = {});

struct BarDomainParams {
  int thickness = 1;
  double noise = 0.05;
};

/// Oriented-bar images on an HxW grid (flattened rows). Four prototypes, all
/// asymmetric under 180-degree rotation so relative rotation is identifiable.
LabeledDataset gen_bar_images(std::uint64_t seed, std::size_t k, std::size_t n,
                              const BarDomainParams& params, Domain domain,
                              std::size_t image_size = 8);

/// Exact index-permutation rotation of a square grid, counter-clockwise per
/// quarter turn: out(i,j) = in(j, W-1-i). No interpolation.
Tensor rotate90(const Tensor& grid, int quarter_turns);

/// rotate90 applied to one flattened row of a [n, H*W] tensor.
std::vector<double> rotate90_flat(std::span<const double> row, std::size_t hw_side,
                                  int quarter_turns);

/// Rotation batch for self-supervision: per-sample uniform labels from rng.
RotationBatch make_rotation_batch(const Tensor& inputs, std::size_t image_size,
                                  std::mt19937_64& rng);

/// Rows of comma-separated floats with an optional trailing integer label.
/// Width is inferred from the first row and enforced; errors carry 1-based
/// line numbers.
LabeledDataset load_csv_dataset(const std::string& path, bool has_labels);

/// Inverse of load_csv_dataset: %.17g fields, so a round-trip is exact.
void save_csv_dataset(const LabeledDataset& data, const std::string& path);

}  // namespace sfda
