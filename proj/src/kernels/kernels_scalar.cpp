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

// Scalar reference kernels. Compiled with -ffp-contract=off so results stay
// bit-comparable with the AVX2 backend.

#include "sfda/kernels.hpp"

#include <cstring>

namespace sfda::kernels {
namespace {

void s_add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale(const double* x, double c, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = c * x[i];
}

void s_axpy(double c, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += c * x[i];
}

void s_relu(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_relu_backward(const double* x, const double* g, double* acc, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) acc[i] += g[i];
  }
}

double s_dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double s_sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

// i-k-j order: the j loop is a pure elementwise accumulate, which keeps the
// summation order identical to the AVX2 variant.
void s_matmul(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = a[i * k + kk];
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

void s_sgd_update(double* p, double* v, const double* g, double lr,
                  double momentum, double weight_decay, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
    p[i] -= lr * v[i];
  }
}

const Ops kScalarOps = {
    "scalar", s_add,  s_mul, s_scale,  s_axpy,       s_relu,
    s_relu_backward,  s_dot, s_sum,    s_matmul,     s_sgd_update,
};

}  // namespace

const Ops& scalar_ops() { return kScalarOps; }

}  // namespace sfda::kernels
