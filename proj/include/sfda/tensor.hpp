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

#include <cstddef>
#include <span>
#include <vector>

namespace sfda {

/// Dense row-major tensor of 64-bit floats. Rank is 1 or 2 throughout this
/// codebase; scalars are shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros_like(const Tensor& t);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool is_scalar() const { return numel() == 1; }
  bool all_finite() const;
  void fill(double v);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Rank-2 transpose (materialized copy).
Tensor transpose(const Tensor& m);

/// Index of the largest element; ties resolved to the lowest index.
std::size_t argmax(std::span<const double> v);

/// Per-row argmax of a rank-2 tensor.
std::vector<int> argmax_rows(const Tensor& m);

}  // namespace sfda
