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

#include <cmath>
#include <random>
#include <vector>

#include "fd_check.hpp"
#include "sfda/errors.hpp"
#include "sfda/losses.hpp"

using namespace sfda;
using test::check_gradients;
using test::rand_tensor;

namespace {

double scalar_of(Tape& tape, Var v) { return tape.value(v)[0]; }

// High-precision scalar oracle for -log softmax_label(logits).
double ce_oracle(const std::vector<double>& logits, int label) {
  long double mx = logits[0];
  for (double v : logits) mx = std::max<long double>(mx, v);
  long double denom = 0.0L;
  for (double v : logits) denom += std::exp(static_cast<long double>(v) - mx);
  const long double logp =
      static_cast<long double>(logits[static_cast<std::size_t>(label)]) - mx -
      std::log(denom);
  return static_cast<double>(-logp);
}

std::vector<int> random_signs(std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution flip(0.5);
  std::vector<int> s(n);
  for (auto& v : s) v = flip(rng) ? -1 : 1;
  return s;
}

}  // namespace

TEST_CASE("label_smoothing_ce: smoothed targets, reduction to plain CE, uniform row") {
  // alpha=0.1, K=10: target is 0.91 on the true class, 0.01 elsewhere.
  {
    const double alpha = 0.1;
    const std::size_t k = 10;
    const double off = alpha / k;
    const double on = off + (1.0 - alpha);
    CHECK(on == doctest::Approx(0.91));
    CHECK(off == doctest::Approx(0.01));
    CHECK(on + (k - 1) * off == doctest::Approx(1.0));
    // and the loss equals the hand-mixed cross entropy
    Tape tape;
    Tensor logits({1, 10});
    for (std::size_t j = 0; j < 10; ++j) logits[j] = 0.3 * static_cast<double>(j) - 1.0;
    Var loss = label_smoothing_ce(tape, tape.constant(logits), std::vector<int>{3}, alpha);
    double expect = 0.0;
    for (int j = 0; j < 10; ++j) {
      const double q = j == 3 ? on : off;
      std::vector<double> row(logits.values().begin(), logits.values().end());
      expect += q * ce_oracle(row, j);
    }
    CHECK(scalar_of(tape, loss) == doctest::Approx(expect).epsilon(1e-12));
  }

  // alpha=0 equals standard cross-entropy.
  {
    Tape tape;
    Tensor logits({2, 3}, {2, 1, 0, -1, 0.5, 0.25});
    const std::vector<int> labels{0, 2};
    Var loss = label_smoothing_ce(tape, tape.constant(logits), labels, 0.0);
    const double expect = 0.5 * (ce_oracle({2, 1, 0}, 0) + ce_oracle({-1, 0.5, 0.25}, 2));
    CHECK(scalar_of(tape, loss) == doctest::Approx(expect).epsilon(1e-12));
  }

  // uniform logits, K=4, any label, alpha=0.1 -> ln 4.
  {
    Tape tape;
    Tensor logits({1, 4});
    Var loss = label_smoothing_ce(tape, tape.constant(logits), std::vector<int>{2}, 0.1);
    CHECK(scalar_of(tape, loss) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }

  // out-of-range label
  {
    Tape tape;
    Var z = tape.constant(Tensor({1, 4}));
    CHECK_THROWS_AS(label_smoothing_ce(tape, z, std::vector<int>{4}, 0.1), ContractError);
  }
}

TEST_CASE("conditional_entropy_per_sample: extremes and scalar oracle") {
  Tensor probs({3, 4},
               {0.25, 0.25, 0.25, 0.25,  //
                1.0, 0.0, 0.0, 0.0,      //
                0.7, 0.3, 0.0, 0.0});
  const Tensor h = conditional_entropy_per_sample(probs);
  CHECK(std::abs(h[0] - std::log(4.0)) < 1e-9);
  CHECK(std::abs(h[1]) < 1e-9);  // one-hot, exact under the log clamp
  const long double oracle = -(0.7L * std::log(0.7L) + 0.3L * std::log(0.3L));
  CHECK(h[2] == doctest::Approx(static_cast<double>(oracle)).epsilon(1e-9));
  CHECK(std::abs(static_cast<double>(oracle) - 0.610864) < 1e-6);

  Tensor bad({1, 2}, {0.7, 0.2});
  CHECK_THROWS_AS(conditional_entropy_per_sample(bad), ContractError);
}

TEST_CASE("conditional entropy stays in [0, ln K]") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    Tape tape;
    Var p = tape.softmax(tape.constant(rand_tensor({5, 6}, rng, -8.0, 8.0)));
    const Tensor h = conditional_entropy_per_sample(tape.value(p));
    for (std::size_t i = 0; i < h.numel(); ++i) {
      CHECK(h[i] >= -1e-12);
      CHECK(h[i] <= std::log(6.0) + 1e-12);
    }
  }
}

TEST_CASE("info_entropy_loss: minimum, maximum and symmetry") {
  {
    // batch whose mean row is uniform over K=4 -> -ln 4 (the minimum), exact
    Tape tape;
    Tensor probs({4, 4});
    for (std::size_t i = 0; i < 4; ++i) probs.at(i, i) = 1.0;
    Var loss = info_entropy_loss(tape, tape.constant(probs));
    CHECK(std::abs(scalar_of(tape, loss) - (-std::log(4.0))) < 1e-12);
  }
  {
    // identical one-hot rows -> 0 (the maximum, under the log clamp)
    Tape tape;
    Tensor probs({3, 4});
    for (std::size_t i = 0; i < 3; ++i) probs.at(i, 1) = 1.0;
    Var loss = info_entropy_loss(tape, tape.constant(probs));
    CHECK(std::abs(scalar_of(tape, loss)) < 1e-12);
  }
  {
    // rows [1,0] and [0,1] -> phat=[0.5,0.5] -> -ln 2
    Tape tape;
    Tensor probs({2, 2}, {1, 0, 0, 1});
    Var loss = info_entropy_loss(tape, tape.constant(probs));
    CHECK(std::abs(scalar_of(tape, loss) - (-std::log(2.0))) < 1e-12);
  }
}

TEST_CASE("info_entropy_loss range property") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    Tape tape;
    Var p = tape.softmax(tape.constant(rand_tensor({6, 5}, rng, -6.0, 6.0)));
    const double v = scalar_of(tape, info_entropy_loss(tape, p));
    CHECK(v >= -std::log(5.0) - 1e-12);
    CHECK(v <= 1e-12);
  }
}

TEST_CASE("signed_entropy_loss: reductions and arithmetic") {
  std::mt19937_64 rng(13);
  Tensor logits = rand_tensor({4, 5}, rng, -2.0, 2.0);

  // all +1 equals the plain mean conditional entropy, bit for bit
  {
    Tape tape;
    Var p = tape.softmax(tape.constant(logits));
    const std::vector<int> plus(4, 1);
    const double signed_v = scalar_of(tape, signed_entropy_loss(tape, p, plus));
    const double lh = scalar_of(tape, mean_conditional_entropy(tape, p));
    CHECK(signed_v == lh);
  }
  // all -1 equals the negated mean conditional entropy
  {
    Tape tape;
    Var p = tape.softmax(tape.constant(logits));
    const std::vector<int> minus(4, -1);
    const double signed_v = scalar_of(tape, signed_entropy_loss(tape, p, minus));
    const double lh = scalar_of(tape, mean_conditional_entropy(tape, p));
    CHECK(signed_v == doctest::Approx(-lh).epsilon(1e-12));
  }
  // batch of 2: (H0 - H1)/2 against the per-sample helper
  {
    Tape tape;
    Tensor probs({2, 2}, {0.5, 0.5, 1.0, 0.0});  // H = ln2, 0
    Var p = tape.constant(probs);
    const std::vector<int> delta{1, -1};
    const double v = scalar_of(tape, signed_entropy_loss(tape, p, delta));
    CHECK(v == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
    const Tensor h = conditional_entropy_per_sample(probs);
    CHECK(v == doctest::Approx(0.5 * (h[0] - h[1])).epsilon(1e-12));
  }
  // invalid sign
  {
    Tape tape;
    Var p = tape.constant(Tensor({1, 2}, {0.5, 0.5}));
    CHECK_THROWS_AS(signed_entropy_loss(tape, p, std::vector<int>{0}), ContractError);
  }
}

TEST_CASE("one step of maximization strictly increases a sample's entropy") {
  std::mt19937_64 rng(14);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor logits = rand_tensor({1, 4}, rng, -2.0, 2.0);
    logits[0] += 1.0;  // keep the row away from uniform
    Tape tape;
    Var z = tape.leaf(logits, true);
    Var p = tape.softmax(z);
    const std::vector<int> minus{-1};
    Var loss = signed_entropy_loss(tape, p, minus);
    tape.backward(loss);
    const double h_before = conditional_entropy_per_sample(tape.value(p))[0];

    const double lr = 1e-3;
    Tensor stepped = logits;
    for (std::size_t i = 0; i < 4; ++i) stepped[i] -= lr * tape.grad(z)[i];
    Tape tape2;
    Var p2 = tape2.softmax(tape2.constant(stepped));
    const double h_after = conditional_entropy_per_sample(tape2.value(p2))[0];
    CHECK(h_after > h_before);
  }
}

TEST_CASE("pseudo_label_ce: uniform, saturated and oracle values") {
  {
    Tape tape;
    Var z = tape.constant(Tensor({1, 4}));
    const double v = scalar_of(tape, pseudo_label_ce(tape, z, std::vector<int>{1}));
    CHECK(v == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  {
    Tape tape;
    Tensor logits({1, 3}, {20.0, 0.0, 0.0});
    const double v =
        scalar_of(tape, pseudo_label_ce(tape, tape.constant(logits), std::vector<int>{0}));
    CHECK(v < 0.01);
  }
  {
    Tape tape;
    Tensor logits({1, 3}, {2, 1, 0});
    const double v =
        scalar_of(tape, pseudo_label_ce(tape, tape.constant(logits), std::vector<int>{0}));
    CHECK(v == doctest::Approx(ce_oracle({2, 1, 0}, 0)).epsilon(1e-12));
    CHECK(std::abs(v - 0.407606) < 1e-6);
  }
}

TEST_CASE("rotation_loss: chance level, perfect logits, oracle") {
  {
    Tape tape;
    Var z = tape.constant(Tensor({2, 4}));
    const double v = scalar_of(tape, rotation_loss(tape, z, std::vector<int>{0, 3}));
    CHECK(v == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  {
    Tape tape;
    Tensor logits({1, 4}, {0, 25, 0, 0});
    const double v =
        scalar_of(tape, rotation_loss(tape, tape.constant(logits), std::vector<int>{1}));
    CHECK(v < 0.01);
  }
  {
    std::mt19937_64 rng(15);
    Tensor logits = rand_tensor({3, 4}, rng, -2.0, 2.0);
    const std::vector<int> labels{2, 0, 3};
    Tape tape;
    const double v = scalar_of(tape, rotation_loss(tape, tape.constant(logits), labels));
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<double> row(logits.row(i).begin(), logits.row(i).end());
      expect += ce_oracle(row, labels[i]);
    }
    CHECK(v == doctest::Approx(expect / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("total_loss: reductions, arithmetic and the breakdown invariant") {
  {
    const LossBreakdown b = total_loss(0.4, -0.9, 2.0, 3.0, 0.0, 0.0, 0, 8);
    CHECK(b.total == doctest::Approx(0.4 - 0.9).epsilon(1e-15));
  }
  {
    const LossBreakdown b = total_loss(0.5, -1.0, 1.0, 1.4, 0.3, 0.6, 2, 16);
    CHECK(b.total == doctest::Approx(0.64).epsilon(1e-12));
    CHECK(b.conflict_count == 2);
    CHECK(b.batch_size == 16);
  }
  {
    std::mt19937_64 rng(16);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (int rep = 0; rep < 50; ++rep) {
      const double ent = dist(rng), info = dist(rng), ce = std::abs(dist(rng)),
                   rot = std::abs(dist(rng));
      const LossBreakdown b = total_loss(ent, info, ce, rot, 0.3, 0.6, 0, 4);
      CHECK(std::abs(b.total - (b.l_ent + b.l_info + 0.3 * b.l_ce + 0.6 * b.l_rot)) <=
            1e-10);
    }
  }
}

// Finite-difference sweeps for every loss, through the softmax where the loss
// consumes probabilities.

TEST_CASE("gradcheck: label smoothing CE (20 instances)") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t b = 3, k = 4;
    std::vector<int> labels(b);
    std::uniform_int_distribution<int> lab(0, static_cast<int>(k) - 1);
    for (auto& l : labels) l = lab(rng);
    auto r = check_gradients({rand_tensor({b, k}, rng, -2.0, 2.0)},
                             [&labels](Tape& t, const std::vector<Var>& v) {
                               return label_smoothing_ce(t, v[0], labels, 0.1);
                             });
    CHECK(r.ok);
  }
}

TEST_CASE("gradcheck: signed entropy with mixed signs (20 instances)") {
  std::mt19937_64 rng(22);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t b = 4, k = 3;
    const std::vector<int> delta = random_signs(b, rng);
    auto r = check_gradients({rand_tensor({b, k}, rng, -2.0, 2.0)},
                             [&delta](Tape& t, const std::vector<Var>& v) {
                               return signed_entropy_loss(t, t.softmax(v[0]), delta);
                             });
    CHECK(r.ok);
  }
}

TEST_CASE("gradcheck: info entropy (20 instances)") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 20; ++rep) {
    auto r = check_gradients({rand_tensor({4, 3}, rng, -2.0, 2.0)},
                             [](Tape& t, const std::vector<Var>& v) {
                               return info_entropy_loss(t, t.softmax(v[0]));
                             });
    CHECK(r.ok);
  }
}

TEST_CASE("gradcheck: pseudo-label CE and rotation loss (20 instances each)") {
  std::mt19937_64 rng(24);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t b = 3;
    std::uniform_int_distribution<int> lab4(0, 3);
    std::vector<int> labels(b);
    for (auto& l : labels) l = lab4(rng);
    auto r = check_gradients({rand_tensor({b, 4}, rng, -2.0, 2.0)},
                             [&labels](Tape& t, const std::vector<Var>& v) {
                               return pseudo_label_ce(t, v[0], labels);
                             });
    CHECK(r.ok);
    r = check_gradients({rand_tensor({b, 4}, rng, -2.0, 2.0)},
                        [&labels](Tape& t, const std::vector<Var>& v) {
                          return rotation_loss(t, v[0], labels);
                        });
    CHECK(r.ok);
  }
}

TEST_CASE("gradcheck: composite total; gradient equals weighted sum of term gradients") {
  std::mt19937_64 rng(25);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t b = 3, k = 4;
    std::uniform_int_distribution<int> lab(0, static_cast<int>(k) - 1);
    std::vector<int> pl(b), rl(b);
    for (auto& l : pl) l = lab(rng);
    for (auto& l : rl) l = lab(rng);
    const std::vector<int> delta = random_signs(b, rng);

    const Tensor logits = rand_tensor({b, k}, rng, -2.0, 2.0);
    const Tensor rot_logits = rand_tensor({b, 4}, rng, -2.0, 2.0);

    auto build = [&](Tape& t, const std::vector<Var>& v) {
      Var probs = t.softmax(v[0]);
      Var l_ent = signed_entropy_loss(t, probs, delta);
      Var l_info = info_entropy_loss(t, probs);
      Var l_ce = pseudo_label_ce(t, v[0], pl);
      Var l_rot = rotation_loss(t, v[1], rl);
      return weighted_total(t, l_ent, l_info, l_ce, l_rot, 0.3, 0.6);
    };
    auto r = check_gradients({logits, rot_logits}, build);
    CHECK(r.ok);

    Tape t_total;
    Var v0 = t_total.leaf(logits, true);
    Var v1 = t_total.leaf(rot_logits, true);
    t_total.backward(build(t_total, {v0, v1}));

    auto term_grad = [&](int which) {
      Tape t;
      Var a = t.leaf(logits, true);
      Var b2 = t.leaf(rot_logits, true);
      Var probs = t.softmax(a);
      Var loss = which == 0   ? signed_entropy_loss(t, probs, delta)
                 : which == 1 ? info_entropy_loss(t, probs)
                 : which == 2 ? pseudo_label_ce(t, a, pl)
                              : rotation_loss(t, b2, rl);
      t.backward(loss);
      return std::pair(t.grad(a), t.grad(b2));
    };
    const auto [g_ent, g_ent_r] = term_grad(0);
    const auto [g_info, g_info_r] = term_grad(1);
    const auto [g_ce, g_ce_r] = term_grad(2);
    const auto [g_rot_a, g_rot] = term_grad(3);
    for (std::size_t i = 0; i < logits.numel(); ++i) {
      const double expect = g_ent[i] + g_info[i] + 0.3 * g_ce[i];
      CHECK(t_total.grad(v0)[i] == doctest::Approx(expect).epsilon(1e-10));
    }
    for (std::size_t i = 0; i < rot_logits.numel(); ++i) {
      CHECK(t_total.grad(v1)[i] == doctest::Approx(0.6 * g_rot[i]).epsilon(1e-10));
    }
  }
}
