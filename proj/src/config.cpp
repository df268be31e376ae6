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

#include "sfda/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sfda/errors.hpp"

namespace sfda {
namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_double_value(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

long long parse_int_value(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool_value(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true|false, got '" + v + "'");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_double_value(key, item));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_double_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i != 0) out += ',';
    out += format_double(v[i]);
  }
  return out;
}

}  // namespace

std::string to_string(Mode m) { return m == Mode::shot ? "shot" : "rchc"; }

Mode mode_from_string(const std::string& s) {
  if (s == "shot") return Mode::shot;
  if (s == "rchc") return Mode::rchc;
  throw ConfigError("mode: expected shot|rchc, got '" + s + "'");
}

void AdaptationConfig::validate() const {
  if (r_th < 0.0 || r_th > 1.0) throw ConfigError("r_th: must be in [0,1]");
  if (alpha_ce < 0.0) throw ConfigError("alpha_ce: must be >= 0");
  if (beta_rot < 0.0) throw ConfigError("beta_rot: must be >= 0");
  if (alpha_smooth < 0.0 || alpha_smooth >= 1.0) {
    throw ConfigError("alpha_smooth: must be in [0,1)");
  }
  if (epochs < 1) throw ConfigError("epochs: must be >= 1");
  if (source_epochs < 1) throw ConfigError("source_epochs: must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (!(lr_new_layers > 0.0)) throw ConfigError("lr: must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum: must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay: must be >= 0");
  if (model.num_classes < 2) throw ConfigError("num_classes: must be >= 2");
  if (model.in_dim < 1) throw ConfigError("in_dim: must be >= 1");
  if (model.embed_dim < 2) throw ConfigError("embed_dim: must be >= 2");
  if (data.kind == DatasetKind::bars) {
    if (model.in_dim != data.image_size * data.image_size) {
      throw ConfigError("in_dim: must equal image_size^2 for the bars dataset");
    }
  }
  if (rotation_enabled) {
    const std::size_t side = static_cast<std::size_t>(std::llround(std::sqrt(
        static_cast<double>(model.in_dim))));
    if (side * side != model.in_dim) {
      throw ConfigError("rotation: requires square-grid inputs (in_dim must be a square)");
    }
  }
  if (!data.target_class_ratios.empty()) {
    if (data.target_class_ratios.size() != model.num_classes) {
      throw ConfigError("target_class_ratios: expected one entry per class");
    }
    double total = 0.0;
    for (double v : data.target_class_ratios) {
      if (v < 0.0) throw ConfigError("target_class_ratios: negative entry");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ConfigError("target_class_ratios: must sum to 1");
    }
  }
  if (!data.shift_translation.empty() &&
      data.shift_translation.size() != model.in_dim) {
    throw ConfigError("shift_translation: length must equal in_dim");
  }
}

AdaptationConfig parse_config_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    if (!kv.emplace(key, value).second) {
      throw ConfigError(origin + ": duplicate key '" + key + "'");
    }
  }

  AdaptationConfig c;
  bool saw_dataset = false, saw_num_classes = false, saw_in_dim = false;
  for (const auto& [key, value] : kv) {
    if (key == "mode") {
      c.mode = mode_from_string(value);
    } else if (key == "r_th") {
      c.r_th = parse_double_value(key, value);
    } else if (key == "alpha_ce") {
      c.alpha_ce = parse_double_value(key, value);
    } else if (key == "beta_rot") {
      c.beta_rot = parse_double_value(key, value);
    } else if (key == "alpha_smooth") {
      c.alpha_smooth = parse_double_value(key, value);
    } else if (key == "epochs") {
      c.epochs = static_cast<int>(parse_int_value(key, value));
    } else if (key == "source_epochs") {
      c.source_epochs = static_cast<int>(parse_int_value(key, value));
    } else if (key == "batch_size") {
      c.batch_size = static_cast<int>(parse_int_value(key, value));
    } else if (key == "lr") {
      c.lr_new_layers = parse_double_value(key, value);
    } else if (key == "momentum") {
      c.momentum = parse_double_value(key, value);
    } else if (key == "weight_decay") {
      c.weight_decay = parse_double_value(key, value);
    } else if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(parse_int_value(key, value));
    } else if (key == "rotation") {
      c.rotation_enabled = parse_bool_value(key, value);
    } else if (key == "in_dim") {
      c.model.in_dim = static_cast<std::size_t>(parse_int_value(key, value));
      saw_in_dim = true;
    } else if (key == "hidden_width") {
      c.model.hidden_width = static_cast<std::size_t>(parse_int_value(key, value));
    } else if (key == "hidden_layers") {
      c.model.hidden_layers = static_cast<std::size_t>(parse_int_value(key, value));
    } else if (key == "embed_dim") {
      c.model.embed_dim = static_cast<std::size_t>(parse_int_value(key, value));
    } else if (key == "num_classes") {
      c.model.num_classes = static_cast<std::size_t>(parse_int_value(key, value));
      saw_num_classes = true;
    } else if (key == "dataset") {
      saw_dataset = true;
      if (value == "blobs") {
        c.data.kind = DatasetKind::blobs;
      } else if (value == "bars") {
        c.data.kind = DatasetKind::bars;
      } else if (value == "csv") {
        c.data.kind = DatasetKind::csv;
      } else {
        throw ConfigError("dataset: expected blobs|bars|csv, got '" + value + "'");
      }
    } else if (key == "n_source") {
      c.data.n_source = static_cast<std::size_t>(parse_int_value(key, value));
    } else if (key == "n_target") {
      c.data.n_target = static_cast<std::size_t>(parse_int_value(key, value));
    } else if (key == "blob_std") {
      c.data.blob_std = parse_double_value(key, value);
    } else if (key == "blob_radius") {
      c.data.blob_radius = parse_double_value(key, value);
    } else if (key == "shift_translation") {
      c.data.shift_translation = parse_double_list(key, value);
    } else if (key == "shift_rotation_deg") {
      c.data.shift_rotation_deg = parse_double_value(key, value);
    } else if (key == "target_class_ratios") {
      c.data.target_class_ratios = parse_double_list(key, value);
    } else if (key == "image_size") {
      c.data.image_size = static_cast<std::size_t>(parse_int_value(key, value));
    } else if (key == "source_thickness") {
      c.data.source_thickness = static_cast<int>(parse_int_value(key, value));
    } else if (key == "target_thickness") {
      c.data.target_thickness = static_cast<int>(parse_int_value(key, value));
    } else if (key == "source_noise") {
      c.data.source_noise = parse_double_value(key, value);
    } else if (key == "target_noise") {
      c.data.target_noise = parse_double_value(key, value);
    } else if (key == "source_csv") {
      c.data.source_csv = value;
    } else if (key == "target_csv") {
      c.data.target_csv = value;
    } else {
      throw ConfigError(origin + ": unknown config key '" + key + "'");
    }
  }
  if (!saw_dataset) throw ConfigError(origin + ": missing required key 'dataset'");
  if (!saw_num_classes) throw ConfigError(origin + ": missing required key 'num_classes'");
  if (c.data.kind == DatasetKind::bars && !saw_in_dim) {
    c.model.in_dim = c.data.image_size * c.data.image_size;
  }
  if (c.data.kind == DatasetKind::csv && !saw_in_dim) {
    throw ConfigError(origin + ": missing required key 'in_dim' (needed for dataset=csv)");
  }
  return c;
}

AdaptationConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string canonical_config_text(const AdaptationConfig& c) {
  std::map<std::string, std::string> kv;
  kv["mode"] = to_string(c.mode);
  kv["r_th"] = format_double(c.r_th);
  kv["alpha_ce"] = format_double(c.alpha_ce);
  kv["beta_rot"] = format_double(c.beta_rot);
  kv["alpha_smooth"] = format_double(c.alpha_smooth);
  kv["epochs"] = std::to_string(c.epochs);
  kv["source_epochs"] = std::to_string(c.source_epochs);
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["lr"] = format_double(c.lr_new_layers);
  kv["momentum"] = format_double(c.momentum);
  kv["weight_decay"] = format_double(c.weight_decay);
  kv["seed"] = std::to_string(c.seed);
  kv["rotation"] = c.rotation_enabled ? "true" : "false";
  kv["in_dim"] = std::to_string(c.model.in_dim);
  kv["hidden_width"] = std::to_string(c.model.hidden_width);
  kv["hidden_layers"] = std::to_string(c.model.hidden_layers);
  kv["embed_dim"] = std::to_string(c.model.embed_dim);
  kv["num_classes"] = std::to_string(c.model.num_classes);
  switch (c.data.kind) {
    case DatasetKind::blobs:
      kv["dataset"] = "blobs";
      break;
    case DatasetKind::bars:
      kv["dataset"] = "bars";
      break;
    case DatasetKind::csv:
      kv["dataset"] = "csv";
      break;
  }
  kv["n_source"] = std::to_string(c.data.n_source);
  kv["n_target"] = std::to_string(c.data.n_target);
  kv["blob_std"] = format_double(c.data.blob_std);
  kv["blob_radius"] = format_double(c.data.blob_radius);
  kv["shift_translation"] = format_double_list(c.data.shift_translation);
  kv["shift_rotation_deg"] = format_double(c.data.shift_rotation_deg);
  kv["target_class_ratios"] = format_double_list(c.data.target_class_ratios);
  kv["image_size"] = std::to_string(c.data.image_size);
  kv["source_thickness"] = std::to_string(c.data.source_thickness);
  kv["target_thickness"] = std::to_string(c.data.target_thickness);
  kv["source_noise"] = format_double(c.data.source_noise);
  kv["target_noise"] = format_double(c.data.target_noise);
  kv["source_csv"] = c.data.source_csv;
  kv["target_csv"] = c.data.target_csv;

  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t config_hash(const AdaptationConfig& config) {
  const std::string text = canonical_config_text(config);
  return fnv1a64(text.data(), text.size());
}

}  // namespace sfda
