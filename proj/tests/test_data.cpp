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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "sfda/data.hpp"
#include "sfda/errors.hpp"

using namespace sfda;

namespace {

bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("gen_shifted_blobs: determinism, translation property, imbalance counts") {
  BlobShift shift;
  shift.translation = {1.5, 1.0};

  SUBCASE("fixed seed gives byte-identical datasets") {
    const auto [s1, t1] = gen_shifted_blobs(123, 4, 200, 200, shift);
    const auto [s2, t2] = gen_shifted_blobs(123, 4, 200, 200, shift);
    CHECK(tensors_equal(s1.inputs, s2.inputs));
    CHECK(tensors_equal(t1.inputs, t2.inputs));
    CHECK(s1.labels == s2.labels);
    CHECK(t1.labels == t2.labels);
  }
  SUBCASE("pure translation moves class means by the shift vector") {
    const std::size_t n = 4000;
    const auto [source, target] = gen_shifted_blobs(7, 4, n, n, shift);
    for (int c = 0; c < 4; ++c) {
      double sx = 0, sy = 0, tx = 0, ty = 0;
      std::size_t ns = 0, nt = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (source.labels[i] == c) {
          sx += source.inputs.at(i, 0);
          sy += source.inputs.at(i, 1);
          ++ns;
        }
        if (target.labels[i] == c) {
          tx += target.inputs.at(i, 0);
          ty += target.inputs.at(i, 1);
          ++nt;
        }
      }
      CHECK(tx / nt - sx / ns == doctest::Approx(1.5).epsilon(0.15));
      CHECK(ty / nt - sy / ns == doctest::Approx(1.0).epsilon(0.15));
    }
  }
  SUBCASE("imbalance ratios produce largest-remainder counts") {
    BlobShift imb = shift;
    imb.class_ratios = {0.35, 0.25, 0.25, 0.15};
    const auto [source, target] = gen_shifted_blobs(9, 4, 100, 600, imb);
    std::vector<int> counts(4, 0);
    for (int l : target.labels) ++counts[static_cast<std::size_t>(l)];
    CHECK(counts == std::vector<int>{210, 150, 150, 90});
  }
  SUBCASE("bad ratios are a config error") {
    BlobShift bad = shift;
    bad.class_ratios = {0.5, 0.5, 0.5, 0.5};
    CHECK_THROWS_AS(gen_shifted_blobs(1, 4, 10, 10, bad), ConfigError);
  }
  SUBCASE("source is balanced") {
    const auto [source, target] = gen_shifted_blobs(11, 4, 600, 600, shift);
    std::vector<int> counts(4, 0);
    for (int l : source.labels) ++counts[static_cast<std::size_t>(l)];
    CHECK(counts == std::vector<int>{150, 150, 150, 150});
  }
}

TEST_CASE("gen_bar_images: prototypes, noise, determinism") {
  SUBCASE("zero noise makes every sample of a class identical") {
    const LabeledDataset d = gen_bar_images(5, 4, 16, {1, 0.0}, Domain::source);
    for (std::size_t i = 4; i < 16; ++i) {
      const std::size_t proto = i % 4;
      CHECK(std::memcmp(d.inputs.row(i).data(), d.inputs.row(proto).data(),
                        64 * sizeof(double)) == 0);
    }
  }
  SUBCASE("class prototypes are pairwise distinct") {
    const LabeledDataset d = gen_bar_images(5, 4, 4, {1, 0.0}, Domain::source);
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t b = a + 1; b < 4; ++b) {
        double dist = 0.0;
        for (std::size_t j = 0; j < 64; ++j) {
          const double diff = d.inputs.at(a, j) - d.inputs.at(b, j);
          dist += diff * diff;
        }
        CHECK(dist > 0.0);
      }
    }
  }
  SUBCASE("prototypes are asymmetric under a half turn") {
    const LabeledDataset d = gen_bar_images(5, 4, 4, {1, 0.0}, Domain::source);
    for (std::size_t c = 0; c < 4; ++c) {
      const std::vector<double> half = rotate90_flat(d.inputs.row(c), 8, 2);
      bool same = true;
      for (std::size_t j = 0; j < 64; ++j) {
        if (half[j] != d.inputs.at(c, j)) same = false;
      }
      CHECK_FALSE(same);
    }
  }
  SUBCASE("fixed seed is deterministic") {
    const LabeledDataset a = gen_bar_images(6, 4, 32, {2, 0.1}, Domain::target);
    const LabeledDataset b = gen_bar_images(6, 4, 32, {2, 0.1}, Domain::target);
    CHECK(tensors_equal(a.inputs, b.inputs));
  }
  SUBCASE("too many classes is a contract error") {
    CHECK_THROWS_AS(gen_bar_images(1, 5, 8, {1, 0.0}, Domain::source), ContractError);
  }
}

TEST_CASE("rotate90: identity, group property, 2x2 oracle") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor g({4, 4});
  for (double& v : g.values()) v = dist(rng);

  SUBCASE("zero turns is the identity") { CHECK(tensors_equal(rotate90(g, 0), g)); }
  SUBCASE("four quarter turns are the identity") {
    Tensor r = g;
    for (int i = 0; i < 4; ++i) r = rotate90(r, 1);
    CHECK(tensors_equal(r, g));
  }
  SUBCASE("2x2 grid, one counter-clockwise turn: [[a,b],[c,d]] -> [[b,d],[a,c]]") {
    Tensor q({2, 2}, {1, 2, 3, 4});  // a=1 b=2 c=3 d=4
    const Tensor r = rotate90(q, 1);
    CHECK(r.at(0, 0) == 2);
    CHECK(r.at(0, 1) == 4);
    CHECK(r.at(1, 0) == 1);
    CHECK(r.at(1, 1) == 3);
  }
  SUBCASE("composition: rotating by a then b equals rotating by (a+b) mod 4") {
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        CHECK(tensors_equal(rotate90(rotate90(g, a), b), rotate90(g, (a + b) % 4)));
      }
    }
  }
  SUBCASE("non-square grid is a contract error") {
    Tensor bad({2, 3});
    CHECK_THROWS_AS(rotate90(bad, 1), ContractError);
  }
}

TEST_CASE("make_rotation_batch: rotated rows match their labels") {
  const LabeledDataset d = gen_bar_images(8, 4, 12, {1, 0.05}, Domain::target);
  std::mt19937_64 rng(22);
  const RotationBatch rb = make_rotation_batch(d.inputs, 8, rng);
  CHECK(rb.labels.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(rb.labels[i] >= 0);
    CHECK(rb.labels[i] < 4);
    const std::vector<double> expect = rotate90_flat(rb.original.row(i), 8, rb.labels[i]);
    CHECK(std::memcmp(expect.data(), rb.rotated.row(i).data(), 64 * sizeof(double)) == 0);
  }
}

TEST_CASE("csv: parse, errors with line numbers, exact round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "sfda_csv_test";
  fs::create_directories(dir);
  auto write_file = [&](const std::string& name, const std::string& content) {
    std::ofstream f(dir / name);
    f << content;
    return (dir / name).string();
  };

  SUBCASE("labeled two-row file") {
    const auto path = write_file("ok.csv", "1.0,2.0,0\n3.0,4.0,1\n");
    const LabeledDataset d = load_csv_dataset(path, true);
    CHECK(d.n() == 2);
    CHECK(d.dim() == 2);
    CHECK(d.labels == std::vector<int>{0, 1});
    CHECK(d.inputs.at(1, 0) == 3.0);
  }
  SUBCASE("empty file is a parse error") {
    const auto path = write_file("empty.csv", "");
    CHECK_THROWS_AS(load_csv_dataset(path, false), ParseError);
  }
  SUBCASE("ragged row reports its line number") {
    const auto path = write_file("ragged.csv", "1.0,2.0\n3.0\n");
    CHECK_THROWS_WITH_AS(load_csv_dataset(path, false),
                         doctest::Contains("line 2"), ParseError);
  }
  SUBCASE("non-numeric field reports its line number") {
    const auto path = write_file("nonnum.csv", "1.0,2.0\n3.0,abc\n");
    CHECK_THROWS_WITH_AS(load_csv_dataset(path, false),
                         doctest::Contains("line 2"), ParseError);
  }
  SUBCASE("non-integer label is a parse error") {
    const auto path = write_file("floatlabel.csv", "1.0,2.0,0.5\n");
    CHECK_THROWS_AS(load_csv_dataset(path, true), ParseError);
  }
  SUBCASE("missing file is an io error") {
    CHECK_THROWS_AS(load_csv_dataset((dir / "absent.csv").string(), false), IoError);
  }
  SUBCASE("round trip is exact, including awkward doubles") {
    LabeledDataset d;
    d.inputs = Tensor({3, 2}, {0.1, -1.5e300, 1e-17, 3.0, -0.0, 123456.789});
    d.labels = {2, 0, 1};
    d.domain = Domain::source;
    const auto path = (dir / "rt.csv").string();
    save_csv_dataset(d, path);
    const LabeledDataset back = load_csv_dataset(path, true);
    CHECK(tensors_equal(back.inputs, d.inputs));
    CHECK(back.labels == d.labels);
  }
  SUBCASE("round trip of generated blob data is exact") {
    BlobShift shift;
    const auto [source, target] = gen_shifted_blobs(33, 3, 50, 50, shift);
    const auto path = (dir / "blobs.csv").string();
    save_csv_dataset(source, path);
    const LabeledDataset back = load_csv_dataset(path, true);
    CHECK(tensors_equal(back.inputs, source.inputs));
    CHECK(back.labels == source.labels);
  }
  fs::remove_all(dir);
}
