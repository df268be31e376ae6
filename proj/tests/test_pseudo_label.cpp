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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "fd_check.hpp"
#include "sfda/errors.hpp"
#include "sfda/pseudo_label.hpp"

using namespace sfda;
using test::rand_tensor;

namespace {

// Brute-force reference: scan every (sample, centroid) pair.
std::vector<int> nearest_oracle(const Tensor& emb, const CentroidSet& cs) {
  std::vector<int> out(emb.rows());
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cs.k(); ++c) {
      if (cs.degenerate[c]) continue;
      const double d = cosine_distance(emb.row(i), cs.centroids.row(c));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    out[i] = best;
  }
  return out;
}

double ratio_oracle(std::span<const double> z, const CentroidSet& cs) {
  std::vector<double> dists;
  for (std::size_t c = 0; c < cs.k(); ++c) {
    if (cs.degenerate[c]) continue;
    dists.push_back(cosine_distance(z, cs.centroids.row(c)));
  }
  std::sort(dists.begin(), dists.end());
  if (dists[1] <= 0.0) return 1.0;
  const double r = dists[0] / dists[1];
  return std::clamp(r, 0.0, 1.0);
}

CentroidSet make_centroids(Tensor t) {
  CentroidSet cs;
  cs.degenerate.assign(t.rows(), 0);
  cs.centroids = std::move(t);
  cs.pass = CentroidSet::Pass::refined;
  return cs;
}

}  // namespace

TEST_CASE("cosine_distance: identical, orthogonal and opposite vectors") {
  const std::vector<double> u{3.0, 4.0};
  const std::vector<double> e1{1.0, 0.0};
  const std::vector<double> e2{0.0, 2.0};
  std::vector<double> neg_u{-3.0, -4.0};
  CHECK(std::abs(cosine_distance(u, u)) < 1e-9);
  CHECK(cosine_distance(e1, e2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_distance(u, neg_u) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK_THROWS_AS(cosine_distance(u, std::vector<double>{1.0}), ContractError);
}

TEST_CASE("cosine_distance handles zero vectors via the epsilon guard") {
  const std::vector<double> zero{0.0, 0.0};
  const std::vector<double> u{1.0, 2.0};
  const double d = cosine_distance(zero, u);
  CHECK(std::isfinite(d));
  CHECK(d == doctest::Approx(1.0));  // dot is 0, so distance collapses to 1
}

TEST_CASE("weighted_centroids: uniform, one-hot and hand-computed weights") {
  Tensor emb({3, 2}, {1, 0, 0, 1, -1, 0});

  SUBCASE("uniform probs give the global mean for every class") {
    Tensor probs({3, 2});
    probs.fill(0.5);
    const CentroidSet cs = weighted_centroids(emb, probs);
    const double mean_x = (1.0 + 0.0 - 1.0) / 3.0;
    const double mean_y = (0.0 + 1.0 + 0.0) / 3.0;
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(cs.centroids.at(c, 0) == doctest::Approx(mean_x).epsilon(1e-12));
      CHECK(cs.centroids.at(c, 1) == doctest::Approx(mean_y).epsilon(1e-12));
    }
  }
  SUBCASE("one-hot probs reduce to plain class means") {
    Tensor probs({3, 2}, {1, 0, 0, 1, 1, 0});
    const CentroidSet cs = weighted_centroids(emb, probs);
    CHECK(cs.centroids.at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cs.centroids.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cs.centroids.at(1, 0) == doctest::Approx(0.0));
    CHECK(cs.centroids.at(1, 1) == doctest::Approx(1.0));
  }
  SUBCASE("known soft weights match a direct weighted average") {
    Tensor probs({3, 2}, {0.9, 0.1, 0.2, 0.8, 0.5, 0.5});
    const CentroidSet cs = weighted_centroids(emb, probs);
    const double w0 = 0.9 + 0.2 + 0.5;
    const double c0x = (0.9 * 1.0 + 0.2 * 0.0 + 0.5 * -1.0) / w0;
    const double c0y = (0.9 * 0.0 + 0.2 * 1.0 + 0.5 * 0.0) / w0;
    CHECK(cs.centroids.at(0, 0) == doctest::Approx(c0x).epsilon(1e-12));
    CHECK(cs.centroids.at(0, 1) == doctest::Approx(c0y).epsilon(1e-12));
  }
  SUBCASE("zero-weight class is flagged degenerate") {
    Tensor probs({3, 2}, {1, 0, 1, 0, 1, 0});
    const CentroidSet cs = weighted_centroids(emb, probs);
    CHECK_FALSE(cs.degenerate[0]);
    CHECK(cs.degenerate[1]);
  }
}

TEST_CASE("assign_nearest: exact hit, tie-break to lowest index, degenerate error") {
  CentroidSet cs = make_centroids(Tensor({3, 2}, {1, 0, 0, 1, -1, 0}));
  Tensor emb({1, 2}, {-2, 0});
  CHECK(assign_nearest(emb, cs) == std::vector<int>{2});

  // equidistant from centroids 0 and 1 -> 0
  CentroidSet tie = make_centroids(Tensor({2, 2}, {0, 1, 0, -1}));
  Tensor on_axis({1, 2}, {1, 0});
  CHECK(assign_nearest(on_axis, tie) == std::vector<int>{0});

  CentroidSet dead = make_centroids(Tensor({2, 2}, {1, 0, 0, 1}));
  dead.degenerate.assign(2, 1);
  CHECK_THROWS_AS(assign_nearest(emb, dead), ClusteringError);
}

TEST_CASE("assign_nearest and uncertainty_ratio match brute force on random instances") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> n_dist(1, 200), k_dist(2, 10), d_dist(2, 16);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = n_dist(rng), k = k_dist(rng), d = d_dist(rng);
    const Tensor emb = rand_tensor({n, d}, rng, -2.0, 2.0);
    const CentroidSet cs = make_centroids(rand_tensor({k, d}, rng, -2.0, 2.0));
    CHECK(assign_nearest(emb, cs) == nearest_oracle(emb, cs));
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(uncertainty_ratio(emb.row(i), cs) == ratio_oracle(emb.row(i), cs));
    }
  }
}

TEST_CASE("uncertainty_ratio: geometric anchor cases") {
  // coincides with one centroid, far from the other -> 0
  CentroidSet cs = make_centroids(Tensor({2, 2}, {1, 0, -1, 0}));
  const std::vector<double> at_c0{1.0, 0.0};
  CHECK(std::abs(uncertainty_ratio(at_c0, cs)) < 1e-12);

  // equidistant from the two nearest -> 1
  const std::vector<double> boundary{0.0, 1.0};
  CHECK(uncertainty_ratio(boundary, cs) == doctest::Approx(1.0).epsilon(1e-12));

  // distances 0.2 and 0.5 -> 0.4 (angles chosen so cosine distance is exact)
  const double a1 = std::acos(0.8), a2 = std::acos(0.5);
  CentroidSet angled = make_centroids(
      Tensor({2, 2}, {std::cos(a1), std::sin(a1), std::cos(a2), std::sin(a2)}));
  const std::vector<double> x_axis{1.0, 0.0};
  CHECK(uncertainty_ratio(x_axis, angled) == doctest::Approx(0.4).epsilon(1e-9));

  // coincides with two centroids -> maximal uncertainty
  CentroidSet doubled = make_centroids(Tensor({2, 2}, {1, 0, 1, 0}));
  CHECK(uncertainty_ratio(x_axis, doubled) == 1.0);
}

TEST_CASE("uncertainty_ratio: in [0,1] and monotone in the nearest distance") {
  std::mt19937_64 rng(32);
  for (int rep = 0; rep < 100; ++rep) {
    const CentroidSet cs = make_centroids(rand_tensor({4, 3}, rng, -2.0, 2.0));
    const Tensor z = rand_tensor({1, 3}, rng, -2.0, 2.0);
    const double r = uncertainty_ratio(z.row(0), cs);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }
  // rotate the sample towards the second-nearest centroid: nearest distance
  // grows while the second stays the anchor; the ratio must not decrease.
  CentroidSet cs = make_centroids(Tensor({2, 2}, {1, 0, 0, 1}));
  double prev = -1.0;
  for (int step = 0; step <= 8; ++step) {
    const double angle = (std::numbers::pi / 4.0) * static_cast<double>(step) / 8.0;
    const std::vector<double> z{std::cos(angle), std::sin(angle)};
    const double r = uncertainty_ratio(z, cs);
    CHECK(r >= prev - 1e-12);
    prev = r;
  }
}

TEST_CASE("generate_pseudo_labels: separable clusters, fixed point, single sample") {
  SUBCASE("two well-separated clusters with mostly-correct probs") {
    std::mt19937_64 rng(33);
    const std::size_t n = 60, d = 2;
    Tensor emb({n, d});
    std::vector<int> truth(n);
    std::normal_distribution<double> jitter(0.0, 0.15);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(i % 2);
      emb.at(i, 0) = (truth[i] == 0 ? 2.0 : -2.0) + jitter(rng);
      emb.at(i, 1) = (truth[i] == 0 ? 0.5 : -0.5) + jitter(rng);
    }
    // ~90% correct soft probs
    Tensor probs({n, 2});
    std::bernoulli_distribution wrong(0.1);
    for (std::size_t i = 0; i < n; ++i) {
      const int lab = wrong(rng) ? 1 - truth[i] : truth[i];
      probs.at(i, static_cast<std::size_t>(lab)) = 0.8;
      probs.at(i, static_cast<std::size_t>(1 - lab)) = 0.2;
    }
    const PseudoLabelResult res = generate_pseudo_labels(emb, probs);
    CHECK(res.table.labels == truth);
    CHECK(res.refined.pass == CentroidSet::Pass::refined);

    // refinement does not hurt on separable data
    std::size_t prov_hits = 0, final_hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      prov_hits += res.table.provisional[i] == truth[i];
      final_hits += res.table.labels[i] == truth[i];
    }
    CHECK(final_hits >= prov_hits);
  }

  SUBCASE("one-hot probs consistent with nearest centroids are a fixed point") {
    Tensor emb({4, 2}, {2, 0, 2.2, 0, -2, 0, -2.2, 0});
    Tensor probs({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
    const PseudoLabelResult res = generate_pseudo_labels(emb, probs);
    CHECK(res.table.provisional == res.table.labels);
    CHECK(res.table.labels == std::vector<int>{0, 0, 1, 1});
  }

  SUBCASE("single sample, K=2") {
    Tensor emb({1, 2}, {1.0, 0.3});
    Tensor probs({1, 2}, {0.7, 0.3});
    const PseudoLabelResult res = generate_pseudo_labels(emb, probs);
    CHECK(res.table.labels.size() == 1);
    CHECK(res.table.ratios.size() == 1);
    CHECK(res.table.ratios[0] >= 0.0);
    CHECK(res.table.ratios[0] <= 1.0);
  }

  SUBCASE("deterministic given embeddings and probs") {
    std::mt19937_64 rng(34);
    const Tensor emb = rand_tensor({50, 4}, rng, -2.0, 2.0);
    Tape tape;
    const Tensor probs =
        tape.value(tape.softmax(tape.constant(rand_tensor({50, 3}, rng, -2.0, 2.0))));
    const PseudoLabelResult a = generate_pseudo_labels(emb, probs);
    const PseudoLabelResult b = generate_pseudo_labels(emb, probs);
    CHECK(a.table.labels == b.table.labels);
    CHECK(a.table.ratios == b.table.ratios);
  }

  SUBCASE("a class emptied by refinement keeps its pass-1 centroid") {
    // All samples sit near the class-0 prototype; class 1 gets soft weight
    // but no hard assignments.
    Tensor emb({3, 2}, {1.0, 0.0, 0.9, 0.1, 1.1, -0.1});
    Tensor probs({3, 2}, {0.6, 0.4, 0.7, 0.3, 0.8, 0.2});
    const CentroidSet initial = weighted_centroids(emb, probs);
    const PseudoLabelResult res = generate_pseudo_labels(emb, probs);
    bool class1_empty = std::none_of(res.table.provisional.begin(),
                                     res.table.provisional.end(),
                                     [](int l) { return l == 1; });
    if (class1_empty) {
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(res.refined.centroids.at(1, j) == initial.centroids.at(1, j));
      }
    }
  }
}

TEST_CASE("conflict_flags: agreement, threshold and degenerate thresholds") {
  const std::vector<int> pl{0, 1, 2, 1};
  const std::vector<int> hyp{0, 2, 2, 0};
  const std::vector<double> ratios{0.1, 0.3, 0.9, 0.7};

  SUBCASE("agreement is never a conflict") {
    const auto flags = conflict_flags(pl, pl, ratios, 1.0);
    CHECK(std::count(flags.begin(), flags.end(), std::uint8_t{1}) == 0);
  }
  SUBCASE("disagreement below the threshold is flagged") {
    const auto flags = conflict_flags(pl, hyp, ratios, 0.65);
    CHECK(flags == std::vector<std::uint8_t>{0, 1, 0, 0});
  }
  SUBCASE("r_th = 0 disables the mechanism entirely") {
    const auto flags = conflict_flags(pl, hyp, ratios, 0.0);
    CHECK(std::count(flags.begin(), flags.end(), std::uint8_t{1}) == 0);
  }
  SUBCASE("r_th = 1 reduces to pure disagreement") {
    const auto flags = conflict_flags(pl, hyp, ratios, 1.0);
    CHECK(flags == std::vector<std::uint8_t>{0, 1, 0, 1});
  }
  SUBCASE("out-of-range threshold is a contract error") {
    CHECK_THROWS_AS(conflict_flags(pl, hyp, ratios, 1.5), ContractError);
  }
}

TEST_CASE("threshold_stats: medians, conservation and the sort oracle") {
  SUBCASE("three ratios") {
    const std::vector<double> r{0.2, 0.6, 0.9};
    const std::vector<std::uint8_t> all(3, 1);
    const RatioStats st = threshold_stats(r, all);
    CHECK(st.median == doctest::Approx(0.6));
    CHECK(st.mean == doctest::Approx((0.2 + 0.6 + 0.9) / 3.0));
  }
  SUBCASE("all equal") {
    const std::vector<double> r(7, 0.37);
    const std::vector<std::uint8_t> all(7, 1);
    const RatioStats st = threshold_stats(r, all);
    CHECK(st.mean == doctest::Approx(0.37));
    CHECK(st.median == doctest::Approx(0.37));
  }
  SUBCASE("1000 samples: median matches a full-sort oracle, histogram conserves") {
    std::mt19937_64 rng(35);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> r(1000);
    std::vector<std::uint8_t> mask(1000);
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i] = dist(rng);
      mask[i] = (i % 3 != 0) ? 1 : 0;
    }
    const RatioStats st = threshold_stats(r, mask);

    std::vector<double> selected;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (mask[i]) selected.push_back(r[i]);
    }
    std::sort(selected.begin(), selected.end());
    const std::size_t n = selected.size();
    const double oracle = n % 2 == 1
                              ? selected[n / 2]
                              : 0.5 * (selected[n / 2 - 1] + selected[n / 2]);
    CHECK(st.median == doctest::Approx(oracle).epsilon(1e-15));

    long total = 0;
    for (long c : st.histogram) total += c;
    CHECK(total == static_cast<long>(n));
  }
  SUBCASE("even count averages the two middle values") {
    const std::vector<double> r{0.1, 0.2, 0.8, 0.4};
    const std::vector<std::uint8_t> all(4, 1);
    CHECK(threshold_stats(r, all).median == doctest::Approx(0.3));
  }
  SUBCASE("empty selection raises a statistics error") {
    const std::vector<double> r{0.5};
    const std::vector<std::uint8_t> none(1, 0);
    CHECK_THROWS_AS(threshold_stats(r, none), StatisticsError);
  }
  SUBCASE("boundary ratio 1.0 lands in the last bin") {
    const std::vector<double> r{1.0, 0.999, 0.0};
    const std::vector<std::uint8_t> all(3, 1);
    const RatioStats st = threshold_stats(r, all);
    CHECK(st.histogram[19] == 2);
    CHECK(st.histogram[0] == 1);
  }
}
