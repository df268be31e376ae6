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

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sfda/model.hpp"

namespace sfda {

enum class Mode { shot, rchc };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

enum class DatasetKind { blobs, bars, csv };

struct DataSpec {
  DatasetKind kind = DatasetKind::blobs;
  // blobs
  std::size_t n_source = 600;
  std::size_t n_target = 600;
  double blob_std = 1.0;
  double blob_radius = 4.0;
  std::vector<double> shift_translation;   // empty = none
  double shift_rotation_deg = 0.0;
  std::vector<double> target_class_ratios;  // empty = balanced
  // bars
  std::size_t image_size = 8;
  int source_thickness = 1;
  int target_thickness = 2;
  double source_noise = 0.05;
  double target_noise = 0.15;
  // csv
  std::string source_csv;
  std::string target_csv;
};

/// Every knob of the pipeline. mode=shot is behaviorally identical to
/// mode=rchc with r_th=0.
struct AdaptationConfig {
  Mode mode = Mode::rchc;
  double r_th = 0.65;
  double alpha_ce = 0.3;
  double beta_rot = 0.6;
  double alpha_smooth = 0.1;
  int epochs = 15;         // adaptation epochs
  int source_epochs = 30;  // source-training epochs
  int batch_size = 64;
  double lr_new_layers = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  std::uint64_t seed = 2019;
  bool rotation_enabled = false;

  ModelSpec model;
  DataSpec data;

  /// Pre-trained layers adapt at a tenth of the new-layer rate.
  double lr_backbone() const { return lr_new_layers / 10.0; }

  /// ConfigError naming the offending field. Used at the CLI boundary; the
  /// library functions additionally tolerate epochs == 0.
  void validate() const;
};

/// Flat key=value file ('#' comments). Unknown keys and missing required keys
/// (`dataset`, `num_classes`) raise ConfigError naming the key.
AdaptationConfig parse_config_file(const std::string& path);

/// Same parser over in-memory text (tests, overrides).
AdaptationConfig parse_config_text(const std::string& text, const std::string& origin);

/// Sorted key=value serialization with %.17g numerics; input to the hash and
/// recorded in run manifests.
std::string canonical_config_text(const AdaptationConfig& config);

/// FNV-1a 64-bit over the canonical text.
std::uint64_t config_hash(const AdaptationConfig& config);

std::uint64_t fnv1a64(const void* data, std::size_t size);

}  // namespace sfda
