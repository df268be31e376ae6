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

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfda/checkpoint.hpp"
#include "sfda/config.hpp"
#include "sfda/data.hpp"
#include "sfda/errors.hpp"
#include "sfda/kernels.hpp"
#include "sfda/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

// Every config key is mirrored as a flag; flag values win over the file.
struct Overrides {
  std::optional<std::string> mode, dataset, source_csv, target_csv;
  std::optional<double> r_th, alpha_ce, beta_rot, alpha_smooth, lr, momentum,
      weight_decay, blob_std, blob_radius, shift_rotation_deg, source_noise, target_noise;
  std::optional<int> epochs, source_epochs, batch_size, source_thickness, target_thickness;
  std::optional<std::uint64_t> seed;
  std::optional<bool> rotation;
  std::optional<std::size_t> in_dim, hidden_width, hidden_layers, embed_dim, num_classes,
      n_source, n_target, image_size;
  std::vector<double> shift_translation, target_class_ratios;
  bool shift_translation_set = false, target_class_ratios_set = false;
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--mode", o.mode, "shot|rchc");
  cmd->add_option("--r-th", o.r_th, "uncertainty-ratio threshold in [0,1]");
  cmd->add_option("--alpha-ce", o.alpha_ce, "pseudo-label CE weight");
  cmd->add_option("--beta-rot", o.beta_rot, "rotation loss weight");
  cmd->add_option("--alpha-smooth", o.alpha_smooth, "label smoothing parameter");
  cmd->add_option("--epochs", o.epochs, "adaptation epochs");
  cmd->add_option("--source-epochs", o.source_epochs, "source training epochs");
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--lr", o.lr, "learning rate for new layers (backbone runs at lr/10)");
  cmd->add_option("--momentum", o.momentum);
  cmd->add_option("--weight-decay", o.weight_decay);
  cmd->add_option("--seed", o.seed);
  cmd->add_option("--rotation", o.rotation, "enable the rotation self-supervision loss");
  cmd->add_option("--in-dim", o.in_dim);
  cmd->add_option("--hidden-width", o.hidden_width);
  cmd->add_option("--hidden-layers", o.hidden_layers);
  cmd->add_option("--embed-dim", o.embed_dim);
  cmd->add_option("--num-classes", o.num_classes);
  cmd->add_option("--dataset", o.dataset, "blobs|bars|csv");
  cmd->add_option("--n-source", o.n_source);
  cmd->add_option("--n-target", o.n_target);
  cmd->add_option("--blob-std", o.blob_std);
  cmd->add_option("--blob-radius", o.blob_radius);
  cmd->add_option("--shift-translation", o.shift_translation)
      ->delimiter(',')
      ->each([&o](const std::string&) { o.shift_translation_set = true; });
  cmd->add_option("--shift-rotation-deg", o.shift_rotation_deg);
  cmd->add_option("--target-class-ratios", o.target_class_ratios)
      ->delimiter(',')
      ->each([&o](const std::string&) { o.target_class_ratios_set = true; });
  cmd->add_option("--image-size", o.image_size);
  cmd->add_option("--source-thickness", o.source_thickness);
  cmd->add_option("--target-thickness", o.target_thickness);
  cmd->add_option("--source-noise", o.source_noise);
  cmd->add_option("--target-noise", o.target_noise);
  cmd->add_option("--source-csv", o.source_csv);
  cmd->add_option("--target-csv", o.target_csv);
}

void apply_overrides(sfda::AdaptationConfig& c, const Overrides& o) {
  if (o.mode) c.mode = sfda::mode_from_string(*o.mode);
  if (o.r_th) c.r_th = *o.r_th;
  if (o.alpha_ce) c.alpha_ce = *o.alpha_ce;
  if (o.beta_rot) c.beta_rot = *o.beta_rot;
  if (o.alpha_smooth) c.alpha_smooth = *o.alpha_smooth;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.source_epochs) c.source_epochs = *o.source_epochs;
  if (o.batch_size) c.batch_size = *o.batch_size;
  if (o.lr) c.lr_new_layers = *o.lr;
  if (o.momentum) c.momentum = *o.momentum;
  if (o.weight_decay) c.weight_decay = *o.weight_decay;
  if (o.seed) c.seed = *o.seed;
  if (o.rotation) c.rotation_enabled = *o.rotation;
  if (o.in_dim) c.model.in_dim = *o.in_dim;
  if (o.hidden_width) c.model.hidden_width = *o.hidden_width;
  if (o.hidden_layers) c.model.hidden_layers = *o.hidden_layers;
  if (o.embed_dim) c.model.embed_dim = *o.embed_dim;
  if (o.num_classes) c.model.num_classes = *o.num_classes;
  if (o.dataset) {
    if (*o.dataset == "blobs") {
      c.data.kind = sfda::DatasetKind::blobs;
    } else if (*o.dataset == "bars") {
      c.data.kind = sfda::DatasetKind::bars;
    } else if (*o.dataset == "csv") {
      c.data.kind = sfda::DatasetKind::csv;
    } else {
      throw sfda::ConfigError("--dataset: expected blobs|bars|csv");
    }
  }
  if (o.n_source) c.data.n_source = *o.n_source;
  if (o.n_target) c.data.n_target = *o.n_target;
  if (o.blob_std) c.data.blob_std = *o.blob_std;
  if (o.blob_radius) c.data.blob_radius = *o.blob_radius;
  if (o.shift_translation_set) c.data.shift_translation = o.shift_translation;
  if (o.shift_rotation_deg) c.data.shift_rotation_deg = *o.shift_rotation_deg;
  if (o.target_class_ratios_set) c.data.target_class_ratios = o.target_class_ratios;
  if (o.image_size) c.data.image_size = *o.image_size;
  if (o.source_thickness) c.data.source_thickness = *o.source_thickness;
  if (o.target_thickness) c.data.target_thickness = *o.target_thickness;
  if (o.source_noise) c.data.source_noise = *o.source_noise;
  if (o.target_noise) c.data.target_noise = *o.target_noise;
  if (o.source_csv) c.data.source_csv = *o.source_csv;
  if (o.target_csv) c.data.target_csv = *o.target_csv;
}

json config_json(const sfda::AdaptationConfig& c) {
  json j;
  std::istringstream canon(sfda::canonical_config_text(c));
  std::string line;
  while (std::getline(canon, line)) {
    const std::size_t eq = line.find('=');
    j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

json dataset_entry(const std::string& role, const std::string& path,
                   const sfda::LabeledDataset& data) {
  json j;
  j["role"] = role;
  j["path"] = path;
  j["rows"] = data.n();
  j["labeled"] = data.has_labels();
  j["content_hash"] = hex64(sfda::dataset_content_hash(data));
  return j;
}

void write_manifest(const fs::path& out_dir, const json& manifest) {
  std::ofstream f(out_dir / "manifest.json");
  if (!f) throw sfda::IoError("cannot write manifest.json in " + out_dir.string());
  f << manifest.dump(2) << "\n";
}

// Labeled iff the file carries in_dim + 1 columns.
sfda::LabeledDataset load_for_model(const std::string& path, std::size_t in_dim) {
  sfda::LabeledDataset probe = sfda::load_csv_dataset(path, /*has_labels=*/false);
  if (probe.dim() == in_dim + 1) return sfda::load_csv_dataset(path, /*has_labels=*/true);
  if (probe.dim() == in_dim) return probe;
  throw sfda::ConfigError("dataset " + path + " has width " + std::to_string(probe.dim()) +
                          ", expected " + std::to_string(in_dim) + " (or +1 with labels)");
}

void check_model_matches(const sfda::ModelSpec& ckpt, const sfda::ModelSpec& cfg) {
  if (!(ckpt == cfg)) {
    throw sfda::ConfigError(
        "checkpoint/config dimension mismatch (in_dim/hidden/embed/num_classes differ)");
  }
}

int cmd_train_source(const std::string& config_path, const std::string& out_dir,
                     const Overrides& overrides) {
  sfda::AdaptationConfig cfg = sfda::parse_config_file(config_path);
  apply_overrides(cfg, overrides);
  cfg.validate();
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  auto [source, target] = sfda::make_datasets(cfg);
  sfda::save_csv_dataset(source, (out / "source.csv").string());
  sfda::save_csv_dataset(target, (out / "target.csv").string());

  sfda::ModelParams model = sfda::train_source(cfg, source);
  const std::uint64_t hash = sfda::config_hash(cfg);
  sfda::save_checkpoint(model, hash, (out / "source.ckpt").string());

  const sfda::EvalResult train_acc = sfda::evaluate(model, source);
  std::printf("source_train_accuracy %s\n", fmt9(train_acc.accuracy).c_str());
  if (target.has_labels()) {
    const sfda::EvalResult t = sfda::evaluate(model, target);
    std::printf("source_only_target_accuracy %s\n", fmt9(t.accuracy).c_str());
  }

  json manifest;
  manifest["command"] = "train-source";
  manifest["config_hash"] = hex64(hash);
  manifest["config"] = config_json(cfg);
  manifest["mode"] = sfda::to_string(cfg.mode);
  manifest["out_dir"] = out_dir;
  manifest["seeds"] = {cfg.seed};
  manifest["datasets"] = {dataset_entry("source", (out / "source.csv").string(), source),
                          dataset_entry("target", (out / "target.csv").string(), target)};
  manifest["outputs"] = {{"checkpoint", (out / "source.ckpt").string()}};
  write_manifest(out, manifest);
  return 0;
}

int cmd_adapt(const std::string& config_path, const std::string& checkpoint_path,
              const std::string& out_dir, std::vector<std::uint64_t> seeds,
              const Overrides& overrides) {
  sfda::AdaptationConfig cfg = sfda::parse_config_file(config_path);
  apply_overrides(cfg, overrides);
  cfg.validate();
  const sfda::LoadedCheckpoint ckpt = sfda::load_checkpoint(checkpoint_path);
  check_model_matches(ckpt.model.spec, cfg.model);
  if (seeds.empty()) seeds = {cfg.seed};
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  json dataset_entries = json::array();
  json outputs;
  std::vector<double> final_acc, final_pc, source_only;

  for (std::size_t si = 0; si < seeds.size(); ++si) {
    sfda::AdaptationConfig run_cfg = cfg;
    run_cfg.seed = seeds[si];
    auto [source_data, target_data] = sfda::make_datasets(run_cfg);
    const std::string tag = "seed" + std::to_string(seeds[si]);
    const std::string target_csv = (out / ("target_" + tag + ".csv")).string();
    sfda::save_csv_dataset(target_data, target_csv);
    dataset_entries.push_back(dataset_entry("target_" + tag, target_csv, target_data));

    if (target_data.has_labels()) {
      source_only.push_back(sfda::evaluate(ckpt.model, target_data).accuracy);
    }
    sfda::AdaptResult res = sfda::adapt_target(run_cfg, ckpt.model, target_data);
    const std::string log_path = (out / ("metrics_" + tag + ".log")).string();
    sfda::write_metrics_log(res.metrics, log_path);
    const std::string model_path = (out / ("adapted_" + tag + ".ckpt")).string();
    sfda::save_checkpoint(res.model, sfda::config_hash(run_cfg), model_path);

    // Final-state pseudo-label table for offline inspection.
    const sfda::EvalForward fwd = sfda::eval_forward(res.model, target_data.inputs);
    sfda::PseudoLabelResult plr =
        sfda::generate_pseudo_labels(fwd.emb.embeddings, fwd.probs);
    plr.table.epoch_stamp = run_cfg.epochs;
    const auto hyps = sfda::argmax_rows(fwd.probs);
    const auto flags = sfda::conflict_flags(
        plr.table.labels, hyps, plr.table.ratios,
        run_cfg.mode == sfda::Mode::shot ? 0.0 : run_cfg.r_th);
    const std::string table_path = (out / ("pl_table_" + tag + ".csv")).string();
    sfda::write_pseudo_label_table(plr.table, flags, table_path);

    if (!res.metrics.empty()) {
      final_acc.push_back(res.metrics.back().accuracy);
      final_pc.push_back(res.metrics.back().per_class_accuracy);
    }
    outputs["metrics_" + tag] = log_path;
    outputs["checkpoint_" + tag] = model_path;
    outputs["pl_table_" + tag] = table_path;
  }

  // Aggregate summary (exactly seed-order invariant: value-sorted reduction).
  std::vector<double> acc_sorted = final_acc, pc_sorted = final_pc;
  std::sort(acc_sorted.begin(), acc_sorted.end());
  std::sort(pc_sorted.begin(), pc_sorted.end());
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                     : s / static_cast<double>(v.size());
  };
  auto std_of = [](const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  const double mean_acc = mean_of(acc_sorted);
  const double std_acc = std_of(acc_sorted, mean_acc);
  const double mean_pc = mean_of(pc_sorted);
  const double std_pc = std_of(pc_sorted, mean_pc);

  {
    std::ofstream sum(out / "summary.txt");
    if (!sum) throw sfda::IoError("cannot write summary.txt");
    sum << "# sfda adapt summary v1\n";
    sum << "mode " << sfda::to_string(cfg.mode) << "\n";
    sum << "r_th " << fmt9(cfg.r_th) << "\n";
    sum << "seeds";
    for (std::uint64_t s : seeds) sum << " " << s;
    sum << "\n";
    sum << "final_accuracy_per_seed";
    for (double v : final_acc) sum << " " << fmt9(v);
    sum << "\n";
    sum << "final_per_class_accuracy_per_seed";
    for (double v : final_pc) sum << " " << fmt9(v);
    sum << "\n";
    sum << "source_only_accuracy_per_seed";
    for (double v : source_only) sum << " " << fmt9(v);
    sum << "\n";
    sum << "mean_accuracy " << fmt9(mean_acc) << "\n";
    sum << "std_accuracy " << fmt9(std_acc) << "\n";
    sum << "mean_per_class_accuracy " << fmt9(mean_pc) << "\n";
    sum << "std_per_class_accuracy " << fmt9(std_pc) << "\n";
  }
  std::printf("mean_accuracy %s\n", fmt9(mean_acc).c_str());
  std::printf("std_accuracy %s\n", fmt9(std_acc).c_str());

  json manifest;
  manifest["command"] = "adapt";
  manifest["config_hash"] = hex64(sfda::config_hash(cfg));
  manifest["config"] = config_json(cfg);
  manifest["mode"] = sfda::to_string(cfg.mode);
  manifest["out_dir"] = out_dir;
  manifest["source_checkpoint"] = checkpoint_path;
  manifest["seeds"] = seeds;
  manifest["datasets"] = dataset_entries;
  outputs["summary"] = (out / "summary.txt").string();
  manifest["outputs"] = outputs;
  write_manifest(out, manifest);
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& out_path) {
  const sfda::LoadedCheckpoint ckpt = sfda::load_checkpoint(checkpoint_path);
  const sfda::LabeledDataset data = load_for_model(data_path, ckpt.model.spec.in_dim);
  if (!data.has_labels()) {
    throw sfda::ContractError(
        "eval requires a labeled dataset (rows must end with an integer label column)");
  }
  const sfda::EvalResult res = sfda::evaluate(ckpt.model, data);
  std::printf("accuracy %s\n", fmt9(res.accuracy).c_str());
  std::printf("per_class_accuracy %s\n", fmt9(res.per_class_accuracy).c_str());
  for (std::size_t c = 0; c < res.per_class.size(); ++c) {
    std::printf("class_%zu_accuracy %s\n", c, fmt9(res.per_class[c]).c_str());
  }
  if (res.missing_class_warning) {
    std::printf("warning classes_absent_from_data_excluded_from_per_class_mean\n");
  }
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw sfda::IoError("cannot write " + out_path);
    f << "accuracy " << fmt9(res.accuracy) << "\n";
    f << "per_class_accuracy " << fmt9(res.per_class_accuracy) << "\n";
    for (std::size_t c = 0; c < res.per_class.size(); ++c) {
      f << "class_" << c << "_accuracy " << fmt9(res.per_class[c]) << "\n";
    }
  }
  return 0;
}

int cmd_threshold_stats(const std::string& checkpoint_path, const std::string& data_path,
                        double r_th, const std::string& out_path) {
  if (r_th < 0.0 || r_th > 1.0) throw sfda::ConfigError("--r-th: must be in [0,1]");
  const sfda::LoadedCheckpoint ckpt = sfda::load_checkpoint(checkpoint_path);
  const sfda::LabeledDataset data = load_for_model(data_path, ckpt.model.spec.in_dim);
  const sfda::EvalForward fwd = sfda::eval_forward(ckpt.model, data.inputs);
  const sfda::PseudoLabelResult plr =
      sfda::generate_pseudo_labels(fwd.emb.embeddings, fwd.probs);
  const auto hyps = sfda::argmax_rows(fwd.probs);
  const auto flags = sfda::conflict_flags(plr.table.labels, hyps, plr.table.ratios, r_th);
  std::vector<std::uint8_t> nonconflict(flags.size());
  for (std::size_t i = 0; i < flags.size(); ++i) nonconflict[i] = flags[i] ? 0 : 1;
  const sfda::RatioStats stats = sfda::threshold_stats(plr.table.ratios, nonconflict);

  std::printf("nonconflict_ratio_mean %s\n", fmt9(stats.mean).c_str());
  std::printf("nonconflict_ratio_median %s\n", fmt9(stats.median).c_str());
  std::printf("# bin_lo bin_hi count\n");
  for (std::size_t b = 0; b < stats.histogram.size(); ++b) {
    std::printf("%s %s %ld\n", fmt9(b / 20.0).c_str(), fmt9((b + 1) / 20.0).c_str(),
                stats.histogram[b]);
  }
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw sfda::IoError("cannot write " + out_path);
    f << "nonconflict_ratio_mean " << fmt9(stats.mean) << "\n";
    f << "nonconflict_ratio_median " << fmt9(stats.median) << "\n";
    f << "# bin_lo bin_hi count\n";
    for (std::size_t b = 0; b < stats.histogram.size(); ++b) {
      f << fmt9(b / 20.0) << " " << fmt9((b + 1) / 20.0) << " " << stats.histogram[b]
        << "\n";
    }
  }
  return 0;
}

int cmd_export_embeddings(const std::string& checkpoint_path, const std::string& data_path,
                          const std::string& out_path, double r_th) {
  if (r_th < 0.0 || r_th > 1.0) throw sfda::ConfigError("--r-th: must be in [0,1]");
  const sfda::LoadedCheckpoint ckpt = sfda::load_checkpoint(checkpoint_path);
  const sfda::LabeledDataset data = load_for_model(data_path, ckpt.model.spec.in_dim);
  sfda::export_embeddings(ckpt.model, data, r_th, out_path);
  std::printf("exported %zu rows to %s\n", data.n(), out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"source-free domain adaptation trainer (SHOT/RCHC modes)"};
  app.require_subcommand(1);
  std::string kernels_backend = "auto";
  app.add_option("--kernels", kernels_backend, "kernel backend: scalar|avx2|auto");

  std::string config_path, out_dir = "run_out", checkpoint_path, data_path;
  std::string out_path;
  double r_th = 0.65;
  std::vector<std::uint64_t> seeds;
  Overrides overrides;

  CLI::App* train = app.add_subcommand("train-source", "train the source model");
  train->add_option("config", config_path, "key=value config file")->required();
  train->add_option("--out", out_dir, "output directory");
  add_override_flags(train, overrides);

  CLI::App* adapt = app.add_subcommand("adapt", "adapt a source checkpoint to the target");
  adapt->add_option("config", config_path)->required();
  adapt->add_option("--checkpoint", checkpoint_path, "source checkpoint")->required();
  adapt->add_option("--out", out_dir, "output directory");
  adapt->add_option("--seeds", seeds, "comma-separated seed list")->delimiter(',');
  add_override_flags(adapt, overrides);

  CLI::App* eval = app.add_subcommand("eval", "accuracy of a checkpoint on a labeled CSV");
  eval->add_option("--checkpoint", checkpoint_path)->required();
  eval->add_option("--data", data_path, "labeled CSV dataset")->required();
  eval->add_option("--out", out_path, "also write the metrics to this file");

  CLI::App* stats = app.add_subcommand(
      "threshold-stats", "uncertainty-ratio statistics of non-conflict samples");
  stats->add_option("--checkpoint", checkpoint_path)->required();
  stats->add_option("--data", data_path)->required();
  stats->add_option("--r-th", r_th, "conflict threshold");
  stats->add_option("--out", out_path, "also write the table to this file");

  CLI::App* exp = app.add_subcommand("export-embeddings",
                                     "per-sample embeddings with pseudo-label state");
  exp->add_option("--checkpoint", checkpoint_path)->required();
  exp->add_option("--data", data_path)->required();
  exp->add_option("--out", out_path, "output CSV")->required();
  exp->add_option("--r-th", r_th, "conflict threshold");

  CLI11_PARSE(app, argc, argv);

  try {
    sfda::kernels::select(kernels_backend);
    if (train->parsed()) return cmd_train_source(config_path, out_dir, overrides);
    if (adapt->parsed()) {
      return cmd_adapt(config_path, checkpoint_path, out_dir, seeds, overrides);
    }
    if (eval->parsed()) return cmd_eval(checkpoint_path, data_path, out_path);
    if (stats->parsed()) {
      return cmd_threshold_stats(checkpoint_path, data_path, r_th, out_path);
    }
    if (exp->parsed()) {
      return cmd_export_embeddings(checkpoint_path, data_path, out_path, r_th);
    }
  } catch (const sfda::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const sfda::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const sfda::ClusteringError& e) {
    std::fprintf(stderr, "clustering error: %s\n", e.what());
    return 3;
  } catch (const sfda::StatisticsError& e) {
    std::fprintf(stderr, "statistics error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    // ContractError, ConfigError, ParseError and anything unexpected.
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
