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

#include "sfda/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "sfda/errors.hpp"

namespace sfda {
namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ContractError("Tensor: data length does not match shape");
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros_like(const Tensor& t) { return Tensor(t.shape_); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ContractError("Tensor::rows: tensor is not rank-2");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ContractError("Tensor::cols: tensor is not rank-2");
  return shape_[1];
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return {data_.data() + r * c, c};
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return {data_.data() + r * c, c};
}

double& Tensor::at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

double Tensor::at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor transpose(const Tensor& m) {
  const std::size_t r = m.rows();
  const std::size_t c = m.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = m.at(i, j);
  }
  return out;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw ContractError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::vector<int> argmax_rows(const Tensor& m) {
  std::vector<int> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = static_cast<int>(argmax(m.row(i)));
  return out;
}

}  // namespace sfda
