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

#include "sfda/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "sfda/errors.hpp"
#include "sfda/kernels.hpp"

namespace sfda {
namespace {

constexpr double kNormEps = 1e-12;
constexpr double kWeightEps = 1e-8;

void check_dims(const Tensor& embeddings, const CentroidSet& cs, const char* who) {
  if (embeddings.cols() != cs.d()) {
    throw ContractError(std::string(who) + ": embedding dimension mismatch");
  }
}

}  // namespace

double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ContractError("cosine_distance: dimension mismatch");
  const kernels::Ops& ops = kernels::active();
  const double dot = ops.dot(u.data(), v.data(), u.size());
  const double nu = std::sqrt(ops.dot(u.data(), u.data(), u.size()));
  const double nv = std::sqrt(ops.dot(v.data(), v.data(), v.size()));
  return 1.0 - dot / (nu * nv + kNormEps);
}

CentroidSet weighted_centroids(const Tensor& embeddings, const Tensor& probs) {
  const std::size_t n = embeddings.rows(), d = embeddings.cols();
  if (n == 0) throw ContractError("weighted_centroids: empty input");
  if (probs.rows() != n) throw ContractError("weighted_centroids: probs row mismatch");
  const std::size_t k = probs.cols();

  CentroidSet cs;
  cs.centroids = Tensor({k, d});
  cs.pass = CentroidSet::Pass::initial;
  cs.degenerate.assign(k, 0);
  const kernels::Ops& ops = kernels::active();
  for (std::size_t c = 0; c < k; ++c) {
    double total = 0.0;
    double* out = cs.centroids.data() + c * d;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = probs.at(i, c);
      ops.axpy(w, embeddings.data() + i * d, out, d);
      total += w;
    }
    if (total <= kWeightEps) {
      cs.degenerate[c] = 1;
      total = kWeightEps;
    }
    ops.scale(out, 1.0 / total, out, d);
  }
  return cs;
}

std::vector<int> assign_nearest(const Tensor& embeddings, const CentroidSet& cs) {
  check_dims(embeddings, cs, "assign_nearest");
  const std::size_t n = embeddings.rows(), k = cs.k();
  if (std::all_of(cs.degenerate.begin(), cs.degenerate.end(),
                  [](std::uint8_t f) { return f != 0; })) {
    throw ClusteringError("assign_nearest: every centroid is degenerate");
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_k = -1;
    for (std::size_t c = 0; c < k; ++c) {
      if (cs.degenerate[c]) continue;
      const double dist = cosine_distance(embeddings.row(i), cs.centroids.row(c));
      if (dist < best) {  // strict: ties keep the lowest class index
        best = dist;
        best_k = static_cast<int>(c);
      }
    }
    labels[i] = best_k;
  }
  return labels;
}

double uncertainty_ratio(std::span<const double> embedding, const CentroidSet& cs) {
  if (embedding.size() != cs.d()) {
    throw ContractError("uncertainty_ratio: embedding dimension mismatch");
  }
  double d1 = std::numeric_limits<double>::infinity();  // smallest
  double d2 = std::numeric_limits<double>::infinity();  // second smallest
  std::size_t valid = 0;
  for (std::size_t c = 0; c < cs.k(); ++c) {
    if (c < cs.degenerate.size() && cs.degenerate[c]) continue;
    ++valid;
    const double dist = cosine_distance(embedding, cs.centroids.row(c));
    if (dist < d1) {
      d2 = d1;
      d1 = dist;
    } else if (dist < d2) {
      d2 = dist;
    }
  }
  if (valid < 2) {
    throw ClusteringError("uncertainty_ratio: fewer than two usable centroids");
  }
  if (d2 <= 0.0) return 1.0;  // coincides with at least two centroids
  const double r = d1 / d2;
  return r < 0.0 ? 0.0 : (r > 1.0 ? 1.0 : r);
}

PseudoLabelResult generate_pseudo_labels(const Tensor& embeddings, const Tensor& probs) {
  const std::size_t n = embeddings.rows(), d = embeddings.cols();
  const std::size_t k = probs.cols();

  CentroidSet initial = weighted_centroids(embeddings, probs);
  std::vector<int> provisional = assign_nearest(embeddings, initial);

  // Refinement pass: hard one-hot means from the provisional labels; classes
  // that received no samples keep their pass-1 centroid.
  CentroidSet refined;
  refined.centroids = Tensor({k, d});
  refined.pass = CentroidSet::Pass::refined;
  refined.degenerate.assign(k, 0);
  std::vector<std::size_t> counts(k, 0);
  const kernels::Ops& ops = kernels::active();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = static_cast<std::size_t>(provisional[i]);
    ops.axpy(1.0, embeddings.data() + i * d, refined.centroids.data() + c * d, d);
    ++counts[c];
  }
  for (std::size_t c = 0; c < k; ++c) {
    double* out = refined.centroids.data() + c * d;
    if (counts[c] == 0) {
      std::copy(initial.centroids.row(c).begin(), initial.centroids.row(c).end(), out);
      refined.degenerate[c] = initial.degenerate[c];
    } else {
      ops.scale(out, 1.0 / static_cast<double>(counts[c]), out, d);
    }
  }

  PseudoLabelResult result;
  result.table.provisional = std::move(provisional);
  result.table.labels = assign_nearest(embeddings, refined);
  result.table.ratios.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    result.table.ratios[i] = uncertainty_ratio(embeddings.row(i), refined);
  }
  result.refined = std::move(refined);
  return result;
}

std::vector<std::uint8_t> conflict_flags(std::span<const int> pseudo_labels,
                                         std::span<const int> hypotheses,
                                         std::span<const double> ratios, double r_th) {
  if (pseudo_labels.size() != hypotheses.size() || pseudo_labels.size() != ratios.size()) {
    throw ContractError("conflict_flags: input lengths differ");
  }
  if (r_th < 0.0 || r_th > 1.0) throw ContractError("conflict_flags: r_th must be in [0,1]");
  std::vector<std::uint8_t> flags(pseudo_labels.size());
  for (std::size_t i = 0; i < flags.size(); ++i) {
    flags[i] = (hypotheses[i] != pseudo_labels[i] && ratios[i] < r_th) ? 1 : 0;
  }
  return flags;
}

RatioStats threshold_stats(std::span<const double> ratios,
                           std::span<const std::uint8_t> selected) {
  if (ratios.size() != selected.size()) {
    throw ContractError("threshold_stats: mask length mismatch");
  }
  std::vector<double> vals;
  vals.reserve(ratios.size());
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (selected[i]) vals.push_back(ratios[i]);
  }
  if (vals.empty()) throw StatisticsError("threshold_stats: empty selection");

  RatioStats st;
  double sum = 0.0;
  for (double v : vals) {
    sum += v;
    int bin = static_cast<int>(v * 20.0);
    if (bin < 0) bin = 0;
    if (bin > 19) bin = 19;
    ++st.histogram[static_cast<std::size_t>(bin)];
  }
  st.mean = sum / static_cast<double>(vals.size());

  const std::size_t n = vals.size();
  const std::size_t mid = n / 2;
  std::nth_element(vals.begin(), vals.begin() + mid, vals.end());
  if (n % 2 == 1) {
    st.median = vals[mid];
  } else {
    const double upper = vals[mid];
    const double lower = *std::max_element(vals.begin(), vals.begin() + mid);
    st.median = 0.5 * (lower + upper);
  }
  return st;
}

void write_pseudo_label_table(const PseudoLabelTable& table,
                              std::span<const std::uint8_t> flags,
                              const std::string& path) {
  if (flags.size() != table.labels.size()) {
    throw ContractError("write_pseudo_label_table: flag length mismatch");
  }
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw IoError("write_pseudo_label_table: cannot open " + path);
  std::fprintf(f, "sample_id,pseudo_label,ratio,conflict_flag,epoch\n");
  for (std::size_t i = 0; i < table.labels.size(); ++i) {
    std::fprintf(f, "%zu,%d,%.9g,%d,%d\n", i, table.labels[i], table.ratios[i],
                 flags[i] ? 1 : 0, table.epoch_stamp);
  }
  if (std::fclose(f) != 0) throw IoError("write_pseudo_label_table: write failed");
}

}  // namespace sfda
