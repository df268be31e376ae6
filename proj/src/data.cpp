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

#include "sfda/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "sfda/errors.hpp"

namespace sfda {
namespace {

std::vector<std::size_t> ratio_counts(std::size_t n, std::size_t k,
                                      const std::vector<double>& ratios) {
  std::vector<double> r = ratios;
  if (r.empty()) r.assign(k, 1.0 / static_cast<double>(k));
  if (r.size() != k) throw ConfigError("class ratios: expected one entry per class");
  double total = 0.0;
  for (double v : r) {
    if (v < 0.0) throw ConfigError("class ratios: negative entry");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("class ratios: must sum to 1");

  // Largest-remainder allocation; remainder ties go to the lowest class.
  std::vector<std::size_t> counts(k);
  std::vector<std::pair<double, std::size_t>> rem(k);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double exact = r[c] * static_cast<double>(n);
    counts[c] = static_cast<std::size_t>(exact);
    assigned += counts[c];
    rem[c] = {exact - std::floor(exact), c};
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[rem[i % k].second];
  return counts;
}

}  // namespace

std::pair<LabeledDataset, LabeledDataset> gen_shifted_blobs(std::uint64_t seed,
                                                            std::size_t k,
                                                            std::size_t n_source,
                                                            std::size_t n_target,
                                                            const BlobShift& shift,
                                                            const BlobParams& params) {
  if (k < 2) throw ContractError("gen_shifted_blobs: K must be >= 2");
  if (params.in_dim < 2) throw ContractError("gen_shifted_blobs: in_dim must be >= 2");
  if (!shift.translation.empty() && shift.translation.size() != params.in_dim) {
    throw ConfigError("gen_shifted_blobs: translation length must equal in_dim");
  }
  const std::size_t d = params.in_dim;

  // Class means on a circle in the first two dims.
  std::vector<std::vector<double>> means(k, std::vector<double>(d, 0.0));
  for (std::size_t c = 0; c < k; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
    means[c][0] = params.radius * std::cos(angle);
    means[c][1] = params.radius * std::sin(angle);
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, params.stddev);

  LabeledDataset source;
  source.domain = Domain::source;
  source.inputs = Tensor({n_source, d});
  source.labels.resize(n_source);
  for (std::size_t i = 0; i < n_source; ++i) {
    const std::size_t c = i % k;
    source.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < d; ++j) source.inputs.at(i, j) = means[c][j] + noise(rng);
  }

  const std::vector<std::size_t> counts = ratio_counts(n_target, k, shift.class_ratios);
  const double theta = shift.rotation_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);

  LabeledDataset target;
  target.domain = Domain::target;
  target.inputs = Tensor({n_target, d});
  target.labels.resize(n_target);
  std::size_t row = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i, ++row) {
      target.labels[row] = static_cast<int>(c);
      std::vector<double> x(d);
      for (std::size_t j = 0; j < d; ++j) x[j] = means[c][j] + noise(rng);
      const double x0 = x[0] * ct - x[1] * st;
      const double x1 = x[0] * st + x[1] * ct;
      x[0] = x0;
      x[1] = x1;
      for (std::size_t j = 0; j < d; ++j) {
        target.inputs.at(row, j) = x[j] + (shift.translation.empty() ? 0.0 : shift.translation[j]);
      }
    }
  }
  return {std::move(source), std::move(target)};
}

LabeledDataset gen_bar_images(std::uint64_t seed, std::size_t k, std::size_t n,
                              const BarDomainParams& params, Domain domain,
                              std::size_t image_size) {
  constexpr std::size_t kPrototypes = 4;
  if (k < 2 || k > kPrototypes) {
    throw ContractError("gen_bar_images: K must be in [2,4] (distinct bar prototypes)");
  }
  if (image_size < 6) throw ContractError("gen_bar_images: image_size must be >= 6");
  if (params.thickness < 1) throw ContractError("gen_bar_images: thickness must be >= 1");
  const std::size_t hw = image_size;

  // Prototypes: off-center bars whose rotation orbits are pairwise disjoint
  // (no rotation of one class coincides with any rotation of another) and all
  // asymmetric under a half turn, so the relative-rotation task is
  // identifiable from the images.
  //   0 horizontal bar rows [1, 1+t)      1 vertical bar cols [4, 4+t)
  //   2 superdiagonals (i, i+o), o=1..t   3 anti-diagonals (i, hw-1-i-o), o=2..t+1
  auto prototype = [&](std::size_t cls, int thickness) {
    Tensor img({hw, hw});
    for (int t = 0; t < thickness; ++t) {
      const std::size_t o = static_cast<std::size_t>(t);
      switch (cls) {
        case 0:
          for (std::size_t j = 0; j < hw; ++j) img.at((1 + o) % hw, j) = 1.0;
          break;
        case 1:
          for (std::size_t i = 0; i < hw; ++i) img.at(i, (4 + o) % hw) = 1.0;
          break;
        case 2:
          for (std::size_t i = 0; i + 1 + o < hw; ++i) img.at(i, i + 1 + o) = 1.0;
          break;
        default:
          for (std::size_t i = 0; i + 3 + o < hw; ++i) img.at(i, hw - 3 - i - o) = 1.0;
          break;
      }
    }
    return img;
  };

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<Tensor> protos;
  for (std::size_t c = 0; c < k; ++c) protos.push_back(prototype(c, params.thickness));

  LabeledDataset out;
  out.domain = domain;
  out.inputs = Tensor({n, hw * hw});
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;
    out.labels[i] = static_cast<int>(c);
    const Tensor& p = protos[c];
    for (std::size_t j = 0; j < hw * hw; ++j) {
      out.inputs.at(i, j) = p[j] + params.noise * noise(rng);
    }
  }
  return out;
}

Tensor rotate90(const Tensor& grid, int quarter_turns) {
  if (grid.rank() != 2 || grid.rows() != grid.cols()) {
    throw ContractError("rotate90: grid must be square");
  }
  const std::size_t w = grid.rows();
  int q = quarter_turns % 4;
  if (q < 0) q += 4;
  Tensor cur = grid;
  for (int t = 0; t < q; ++t) {
    Tensor next({w, w});
    for (std::size_t i = 0; i < w; ++i) {
      for (std::size_t j = 0; j < w; ++j) next.at(i, j) = cur.at(j, w - 1 - i);
    }
    cur = std::move(next);
  }
  return cur;
}

std::vector<double> rotate90_flat(std::span<const double> row, std::size_t hw_side,
                                  int quarter_turns) {
  if (row.size() != hw_side * hw_side) {
    throw ContractError("rotate90_flat: row length is not a square grid");
  }
  Tensor grid({hw_side, hw_side}, std::vector<double>(row.begin(), row.end()));
  Tensor rotated = rotate90(grid, quarter_turns);
  return std::vector<double>(rotated.values().begin(), rotated.values().end());
}

RotationBatch make_rotation_batch(const Tensor& inputs, std::size_t image_size,
                                  std::mt19937_64& rng) {
  if (inputs.cols() != image_size * image_size) {
    throw ContractError("make_rotation_batch: inputs are not flattened square grids");
  }
  RotationBatch batch;
  batch.original = inputs;
  batch.rotated = Tensor(inputs.shape());
  batch.labels.resize(inputs.rows());
  std::uniform_int_distribution<int> dist(0, 3);
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const int q = dist(rng);
    batch.labels[i] = q;
    const std::vector<double> rot = rotate90_flat(inputs.row(i), image_size, q);
    std::copy(rot.begin(), rot.end(), batch.rotated.data() + i * rot.size());
  }
  return batch;
}

LabeledDataset load_csv_dataset(const std::string& path, bool has_labels) {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv_dataset: cannot open " + path);

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t width = 0;  // feature count
  std::size_t line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");

    const std::size_t feature_count = has_labels ? fields.size() - 1 : fields.size();
    if (has_labels && fields.size() < 2) {
      throw ParseError("load_csv_dataset: line " + std::to_string(line_no) +
                       ": expected features plus a label");
    }
    if (width == 0) {
      width = feature_count;
      if (width == 0) {
        throw ParseError("load_csv_dataset: line " + std::to_string(line_no) +
                         ": no feature columns");
      }
    } else if (feature_count != width) {
      throw ParseError("load_csv_dataset: line " + std::to_string(line_no) +
                       ": ragged row (expected " + std::to_string(width) + " features)");
    }

    auto parse_double = [&](const std::string& s) {
      const char* b = s.data();
      const char* e = s.data() + s.size();
      while (b < e && (*b == ' ' || *b == '\t')) ++b;
      while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t' || *(e - 1) == '\r')) --e;
      double v = 0.0;
      auto [p, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || p != e || b == e) {
        throw ParseError("load_csv_dataset: line " + std::to_string(line_no) +
                         ": non-numeric field '" + s + "'");
      }
      return v;
    };

    for (std::size_t j = 0; j < width; ++j) values.push_back(parse_double(fields[j]));
    if (has_labels) {
      const double raw = parse_double(fields[width]);
      const int label = static_cast<int>(raw);
      if (static_cast<double>(label) != raw || label < 0) {
        throw ParseError("load_csv_dataset: line " + std::to_string(line_no) +
                         ": label must be a nonnegative integer");
      }
      labels.push_back(label);
    }
  }
  if (width == 0) throw ParseError("load_csv_dataset: empty file " + path);

  LabeledDataset out;
  const std::size_t n = values.size() / width;
  out.inputs = Tensor({n, width}, std::move(values));
  out.labels = std::move(labels);
  out.domain = has_labels ? Domain::source : Domain::target;
  return out;
}

void save_csv_dataset(const LabeledDataset& data, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw IoError("save_csv_dataset: cannot open " + path);
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j) {
      std::fprintf(f, j == 0 ? "%.17g" : ",%.17g", data.inputs.at(i, j));
    }
    if (data.has_labels()) std::fprintf(f, ",%d", data.labels[i]);
    std::fprintf(f, "\n");
  }
  if (std::fclose(f) != 0) throw IoError("save_csv_dataset: write failed");
}

}  // namespace sfda
