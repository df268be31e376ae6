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
#include <string>

namespace sfda::kernels {

// Double-precision inner-loop kernels. Two implementations exist: a scalar
// reference and an AVX2 variant. One is selected at startup (see select());
// everything above this layer is backend-agnostic.
//
// Equivalence contract between backends, relied on by tests:
//   - elementwise kernels (add, mul, scale, axpy, relu, relu_backward,
//     sgd_update) and matmul are bit-identical (both backends are compiled
//     with FP contraction off and matmul uses the same i-k-j order),
//   - reductions (dot, sum) may differ by summation order; they agree to a
//     tight relative tolerance.
struct Ops {
  const char* name;

  // out[i] = a[i] + b[i]
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  // out[i] = a[i] * b[i]
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // out[i] = c * x[i]
  void (*scale)(const double* x, double c, double* out, std::size_t n);
  // y[i] += c * x[i]
  void (*axpy)(double c, const double* x, double* y, std::size_t n);
  // out[i] = max(x[i], 0)
  void (*relu)(const double* x, double* out, std::size_t n);
  // acc[i] += g[i] where x[i] > 0
  void (*relu_backward)(const double* x, const double* g, double* acc, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  // C[m,n] = A[m,k] * B[k,n], row-major, C overwritten.
  void (*matmul)(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n);
  // v[i] = momentum*v[i] + g[i] + weight_decay*p[i]; p[i] -= lr*v[i]
  void (*sgd_update)(double* p, double* v, const double* g, double lr,
                     double momentum, double weight_decay, std::size_t n);
};

const Ops& scalar_ops();

// AVX2 backend, or nullptr when the binary was not built with AVX2 support
// or the CPU lacks it.
const Ops* avx2_ops();
bool avx2_compiled();

// Active backend. First call resolves the SFDA_KERNELS environment variable
// ("scalar" | "avx2" | "auto", default auto = best available).
const Ops& active();

// Force a backend by name; "auto" re-runs detection. Throws ConfigError for
// unknown names or an unavailable backend. Intended for tests and the CLI.
void select(const std::string& name);

}  // namespace sfda::kernels
