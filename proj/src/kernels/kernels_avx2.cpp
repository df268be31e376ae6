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

// AVX2 kernels (4 doubles per vector). Multiply and add are kept separate
// (no FMA) so elementwise kernels and matmul stay bit-identical with the
// scalar reference; dot/sum use four lane accumulators and therefore agree
// with the reference only up to summation order.

#include "sfda/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

#include <cstring>

namespace sfda::kernels {
namespace {

void v_add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_scale(const double* x, double c, double* out, std::size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(vc, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) out[i] = c * x[i];
}

void v_axpy(double c, const double* x, double* y, std::size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(vc, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += c * x[i];
}

void v_relu(const double* x, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void v_relu_backward(const double* x, const double* g, double* acc, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d gate = _mm256_and_pd(mask, _mm256_loadu_pd(g + i));
    _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), gate));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0) acc[i] += g[i];
  }
}

double horizontal_sum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  const __m128d swapped = _mm_unpackhi_pd(pair, pair);
  return _mm_cvtsd_f64(_mm_add_sd(pair, swapped));
}

double v_dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  double total = horizontal_sum(acc);
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

double v_sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double total = horizontal_sum(acc);
  for (; i < n; ++i) total += x[i];
  return total;
}

void v_matmul(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = a[i * k + kk];
      const double* brow = b + kk * n;
      const __m256d va = _mm256_set1_pd(aik);
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
      }
      for (; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

void v_sgd_update(double* p, double* v, const double* g, double lr,
                  double momentum, double weight_decay, std::size_t n) {
  const __m256d vmom = _mm256_set1_pd(momentum);
  const __m256d vwd = _mm256_set1_pd(weight_decay);
  const __m256d vlr = _mm256_set1_pd(lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d pv = _mm256_loadu_pd(p + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    vv = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(vmom, vv), _mm256_loadu_pd(g + i)),
                       _mm256_mul_pd(vwd, pv));
    _mm256_storeu_pd(v + i, vv);
    _mm256_storeu_pd(p + i, _mm256_sub_pd(pv, _mm256_mul_pd(vlr, vv)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
    p[i] -= lr * v[i];
  }
}

const Ops kAvx2Ops = {
    "avx2", v_add,  v_mul, v_scale,  v_axpy,       v_relu,
    v_relu_backward, v_dot, v_sum,    v_matmul,     v_sgd_update,
};

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

}  // namespace

bool avx2_compiled() { return true; }

const Ops* avx2_ops() { return cpu_has_avx2() ? &kAvx2Ops : nullptr; }

}  // namespace sfda::kernels

#else  // !defined(__AVX2__)

namespace sfda::kernels {

bool avx2_compiled() { return false; }

const Ops* avx2_ops() { return nullptr; }

}  // namespace sfda::kernels

#endif
