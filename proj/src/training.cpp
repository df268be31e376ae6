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

#include "sfda/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "sfda/errors.hpp"
#include "sfda/sgd.hpp"

namespace sfda {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> idx) {
  Tensor out({idx.size(), m.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto src = m.row(idx[i]);
    std::copy(src.begin(), src.end(), out.data() + i * m.cols());
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<ParamGrad> to_param_grads(const Tape& tape,
                                      std::span<const Trainable> trainables,
                                      const AdaptationConfig& config) {
  std::vector<ParamGrad> pgs;
  pgs.reserve(trainables.size());
  for (const Trainable& t : trainables) {
    pgs.push_back({t.param, &tape.grad(t.node),
                   t.backbone ? config.lr_backbone() : config.lr_new_layers});
  }
  return pgs;
}

double sample_std(std::vector<double> vals, double mean) {
  if (vals.size() < 2) return 0.0;
  double s = 0.0;
  for (double v : vals) s += (v - mean) * (v - mean);
  return std::sqrt(s / static_cast<double>(vals.size() - 1));
}

}  // namespace

ModelParams train_source(const AdaptationConfig& config, const LabeledDataset& source) {
  if (!source.has_labels()) throw ContractError("train_source: source data must be labeled");
  if (source.dim() != config.model.in_dim) {
    throw ContractError("train_source: dataset width does not match in_dim");
  }
  std::mt19937_64 rng(config.seed);
  ModelParams model = init_model(config.model, rng());
  SgdOptimizer opt(config.momentum, config.weight_decay);

  for (int epoch = 0; epoch < config.source_epochs; ++epoch) {
    const auto batches =
        make_batches(source.n(), static_cast<std::size_t>(config.batch_size), rng);
    for (const auto& idx : batches) {
      Tape tape;
      std::vector<Trainable> trainables;
      BoundModel bm = bind_model(tape, model, BindFor::source_training, &trainables);
      Var x = tape.constant(gather_rows(source.inputs, idx));
      Var z = features_forward(tape, bm, model, x, /*training=*/true);
      Var logits = classifier_forward(tape, bm, z);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = source.labels[idx[i]];
      Var loss = label_smoothing_ce(tape, logits, labels, config.alpha_smooth);
      tape.backward(loss);
      opt.step(to_param_grads(tape, trainables, config));
    }
  }
  return model;
}

EvalResult evaluate(const ModelParams& model, const LabeledDataset& data) {
  if (!data.has_labels()) throw ContractError("evaluate: labels are required");
  const EvalForward fwd = eval_forward(model, data.inputs);
  const std::vector<int> preds = argmax_rows(fwd.probs);
  const std::size_t k = model.spec.num_classes;

  EvalResult res;
  std::vector<long> per_class_total(k, 0), per_class_hit(k, 0);
  long hits = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const int truth = data.labels[i];
    if (truth < 0 || static_cast<std::size_t>(truth) >= k) {
      throw ContractError("evaluate: label out of range for the model's class count");
    }
    ++per_class_total[static_cast<std::size_t>(truth)];
    if (preds[i] == truth) {
      ++hits;
      ++per_class_hit[static_cast<std::size_t>(truth)];
    }
  }
  res.accuracy = static_cast<double>(hits) / static_cast<double>(data.n());
  res.per_class.assign(k, kNaN);
  double pc_sum = 0.0;
  std::size_t pc_present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (per_class_total[c] == 0) {
      res.missing_class_warning = true;
      continue;
    }
    res.per_class[c] =
        static_cast<double>(per_class_hit[c]) / static_cast<double>(per_class_total[c]);
    pc_sum += res.per_class[c];
    ++pc_present;
  }
  res.per_class_accuracy = pc_present > 0 ? pc_sum / static_cast<double>(pc_present) : kNaN;
  return res;
}

AdaptResult adapt_target(const AdaptationConfig& config, const ModelParams& source_model,
                         const LabeledDataset& target) {
  if (target.dim() != config.model.in_dim) {
    throw ContractError("adapt_target: dataset width does not match in_dim");
  }
  const double r_th_eff = config.mode == Mode::shot ? 0.0 : config.r_th;
  const std::size_t n = target.n();
  const std::size_t image_side = static_cast<std::size_t>(
      std::llround(std::sqrt(static_cast<double>(config.model.in_dim))));

  std::mt19937_64 rng(config.seed);
  AdaptResult out;
  out.model = init_target_from_source(source_model, rng());
  SgdOptimizer opt(config.momentum, config.weight_decay);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    // (1) Full-dataset pass in evaluation mode.
    const EvalForward fwd = eval_forward(out.model, target.inputs);
    const std::vector<int> refresh_hyps = argmax_rows(fwd.probs);

    // (2) Pseudo-labels, frozen for this epoch.
    PseudoLabelResult plr;
    try {
      plr = generate_pseudo_labels(fwd.emb.embeddings, fwd.probs);
    } catch (const ClusteringError& e) {
      throw ClusteringError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")");
    }
    plr.table.epoch_stamp = epoch;
    const std::vector<std::uint8_t> refresh_flags =
        conflict_flags(plr.table.labels, refresh_hyps, plr.table.ratios, r_th_eff);
    const long epoch_conflicts =
        std::count(refresh_flags.begin(), refresh_flags.end(), std::uint8_t{1});
    std::vector<std::uint8_t> nonconflict(n);
    for (std::size_t i = 0; i < n; ++i) nonconflict[i] = refresh_flags[i] ? 0 : 1;
    double ratio_median = kNaN;
    if (std::count(nonconflict.begin(), nonconflict.end(), std::uint8_t{1}) > 0) {
      ratio_median = threshold_stats(plr.table.ratios, nonconflict).median;
    }

    // (3) Mini-batch optimization against the frozen table.
    double ent_sum = 0.0, info_sum = 0.0, ce_sum = 0.0, rot_sum = 0.0;
    int batch_conflicts = 0;
    long samples_seen = 0;
    const auto batches =
        make_batches(n, static_cast<std::size_t>(config.batch_size), rng);
    for (const auto& idx : batches) {
      Tape tape;
      std::vector<Trainable> trainables;
      BoundModel bm = bind_model(tape, out.model, BindFor::adaptation, &trainables);
      Var x = tape.constant(gather_rows(target.inputs, idx));
      Var z = features_forward(tape, bm, out.model, x, /*training=*/true);
      Var logits = classifier_forward(tape, bm, z);
      Var probs = tape.softmax(logits);

      // Live hypotheses from the current batch; pseudo-labels and ratios
      // stay epoch-frozen.
      const std::vector<int> live_hyps = argmax_rows(tape.value(probs));
      std::vector<int> batch_pl(idx.size());
      std::vector<double> batch_ratio(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        batch_pl[i] = plr.table.labels[idx[i]];
        batch_ratio[i] = plr.table.ratios[idx[i]];
      }
      const std::vector<std::uint8_t> flags =
          conflict_flags(batch_pl, live_hyps, batch_ratio, r_th_eff);
      std::vector<int> delta(idx.size());
      int conflicts = 0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        delta[i] = flags[i] ? -1 : 1;
        conflicts += flags[i] ? 1 : 0;
      }
      if (conflicts > 0 && conflicts < static_cast<int>(idx.size())) {
        ++out.stats.mixed_delta_batches;
      }

      Var l_ent = signed_entropy_loss(tape, probs, delta);
      Var l_info = info_entropy_loss(tape, probs);
      Var l_ce = pseudo_label_ce(tape, logits, batch_pl);
      Var l_rot = tape.constant(Tensor::scalar(0.0));
      if (config.rotation_enabled) {
        RotationBatch rb = make_rotation_batch(tape.value(x), image_side, rng);
        Var xr = tape.constant(rb.rotated);
        Var zr = features_forward(tape, bm, out.model, xr, /*training=*/true);
        Var rot_logits = rotation_forward(tape, bm, z, zr);
        l_rot = rotation_loss(tape, rot_logits, rb.labels);
      }
      Var total =
          weighted_total(tape, l_ent, l_info, l_ce, l_rot, config.alpha_ce, config.beta_rot);
      tape.backward(total);
      opt.step(to_param_grads(tape, trainables, config));

      ent_sum += tape.value(l_ent)[0];
      info_sum += tape.value(l_info)[0];
      ce_sum += tape.value(l_ce)[0];
      rot_sum += tape.value(l_rot)[0];
      batch_conflicts += conflicts;
      samples_seen += static_cast<long>(idx.size());
      ++out.stats.batches;
      out.stats.step_totals.push_back(tape.value(total)[0]);
    }

    // (4) Epoch record.
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.conflict_count = epoch_conflicts;
    rec.ratio_median_nonconflict = ratio_median;
    const double nb = static_cast<double>(batches.size());
    rec.loss = total_loss(ent_sum / nb, info_sum / nb, ce_sum / nb, rot_sum / nb,
                          config.alpha_ce, config.beta_rot, batch_conflicts,
                          static_cast<int>(samples_seen));
    if (target.has_labels()) {
      const EvalResult ev = evaluate(out.model, target);
      rec.accuracy = ev.accuracy;
      rec.per_class_accuracy = ev.per_class_accuracy;
      rec.per_class = ev.per_class;
      long pl_hits = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (plr.table.labels[i] == target.labels[i]) ++pl_hits;
      }
      rec.pseudo_label_accuracy = static_cast<double>(pl_hits) / static_cast<double>(n);
    } else {
      rec.accuracy = kNaN;
      rec.per_class_accuracy = kNaN;
      rec.per_class.assign(config.model.num_classes, kNaN);
      rec.pseudo_label_accuracy = kNaN;
    }
    out.metrics.push_back(std::move(rec));
  }
  return out;
}

std::pair<LabeledDataset, LabeledDataset> make_datasets(const AdaptationConfig& config) {
  switch (config.data.kind) {
    case DatasetKind::blobs: {
      BlobShift shift;
      shift.translation = config.data.shift_translation;
      shift.rotation_deg = config.data.shift_rotation_deg;
      shift.class_ratios = config.data.target_class_ratios;
      BlobParams params;
      params.in_dim = config.model.in_dim;
      params.radius = config.data.blob_radius;
      params.stddev = config.data.blob_std;
      return gen_shifted_blobs(config.seed, config.model.num_classes, config.data.n_source,
                               config.data.n_target, shift, params);
    }
    case DatasetKind::bars: {
      LabeledDataset source = gen_bar_images(
          config.seed, config.model.num_classes, config.data.n_source,
          {config.data.source_thickness, config.data.source_noise}, Domain::source,
          config.data.image_size);
      LabeledDataset target = gen_bar_images(
          config.seed ^ 0x9e3779b97f4a7c15ull, config.model.num_classes,
          config.data.n_target, {config.data.target_thickness, config.data.target_noise},
          Domain::target, config.data.image_size);
      return {std::move(source), std::move(target)};
    }
    case DatasetKind::csv: {
      if (config.data.source_csv.empty() || config.data.target_csv.empty()) {
        throw ConfigError("dataset=csv requires source_csv and target_csv");
      }
      LabeledDataset source = load_csv_dataset(config.data.source_csv, /*has_labels=*/true);
      source.domain = Domain::source;
      // The target is labeled iff its rows carry in_dim + 1 columns.
      LabeledDataset probe = load_csv_dataset(config.data.target_csv, /*has_labels=*/false);
      LabeledDataset target;
      if (probe.dim() == config.model.in_dim + 1) {
        target = load_csv_dataset(config.data.target_csv, /*has_labels=*/true);
      } else {
        target = std::move(probe);
      }
      target.domain = Domain::target;
      if (source.dim() != config.model.in_dim || target.dim() != config.model.in_dim) {
        throw ConfigError("csv dataset width does not match in_dim");
      }
      return {std::move(source), std::move(target)};
    }
  }
  throw ConfigError("make_datasets: unknown dataset kind");
}

std::uint64_t dataset_content_hash(const LabeledDataset& data) {
  std::uint64_t h = fnv1a64(data.inputs.data(), data.inputs.numel() * sizeof(double));
  if (data.has_labels()) {
    h ^= fnv1a64(data.labels.data(), data.labels.size() * sizeof(int));
  }
  return h;
}

RunSeedsResult run_seeds(const AdaptationConfig& config,
                         std::span<const std::uint64_t> seeds,
                         const ModelParams* source) {
  if (seeds.empty()) throw ContractError("run_seeds: at least one seed required");
  RunSeedsResult out;
  for (const std::uint64_t seed : seeds) {
    AdaptationConfig cfg = config;
    cfg.seed = seed;
    auto [source_data, target_data] = make_datasets(cfg);
    SeedRun run;
    run.seed = seed;
    ModelParams src = source != nullptr ? *source : train_source(cfg, source_data);
    if (target_data.has_labels()) run.source_only = evaluate(src, target_data);
    run.result = adapt_target(cfg, src, target_data);
    out.runs.push_back(std::move(run));
  }

  // Exactly order-invariant aggregation: reduce over value-sorted copies.
  std::vector<double> accs, pcs;
  for (const SeedRun& run : out.runs) {
    if (run.result.metrics.empty()) continue;
    accs.push_back(run.result.metrics.back().accuracy);
    pcs.push_back(run.result.metrics.back().per_class_accuracy);
  }
  std::sort(accs.begin(), accs.end());
  std::sort(pcs.begin(), pcs.end());
  SeedAggregate agg;
  agg.seeds.assign(seeds.begin(), seeds.end());
  if (!accs.empty()) {
    agg.mean_accuracy =
        std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
    agg.std_accuracy = sample_std(accs, agg.mean_accuracy);
    agg.mean_per_class_accuracy =
        std::accumulate(pcs.begin(), pcs.end(), 0.0) / static_cast<double>(pcs.size());
    agg.std_per_class_accuracy = sample_std(pcs, agg.mean_per_class_accuracy);
  } else {
    agg.mean_accuracy = agg.std_accuracy = kNaN;
    agg.mean_per_class_accuracy = agg.std_per_class_accuracy = kNaN;
  }
  out.aggregate = std::move(agg);
  return out;
}

void export_embeddings(const ModelParams& model, const LabeledDataset& data, double r_th,
                       const std::string& path) {
  const EvalForward fwd = eval_forward(model, data.inputs);
  const std::vector<int> hyps = argmax_rows(fwd.probs);
  const PseudoLabelResult plr = generate_pseudo_labels(fwd.emb.embeddings, fwd.probs);
  const std::vector<std::uint8_t> flags =
      conflict_flags(plr.table.labels, hyps, plr.table.ratios, r_th);

  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw IoError("export_embeddings: cannot open " + path);
  const std::size_t d = fwd.emb.embeddings.cols();
  std::fprintf(f, "sample_id");
  for (std::size_t j = 0; j < d; ++j) std::fprintf(f, ",z%zu", j);
  std::fprintf(f, ",pseudo_label,hypothesis,ratio,conflict_flag,true_label\n");
  for (std::size_t i = 0; i < data.n(); ++i) {
    std::fprintf(f, "%zu", fwd.emb.sample_ids[i]);
    for (std::size_t j = 0; j < d; ++j) {
      std::fprintf(f, ",%.9g", fwd.emb.embeddings.at(i, j));
    }
    std::fprintf(f, ",%d,%d,%.9g,%d,%d\n", plr.table.labels[i], hyps[i],
                 plr.table.ratios[i], flags[i] ? 1 : 0,
                 data.has_labels() ? data.labels[i] : -1);
  }
  if (std::fclose(f) != 0) throw IoError("export_embeddings: write failed");
}

std::string format_metrics_log(const std::vector<MetricsRecord>& records) {
  std::string out;
  char buf[512];
  out += "# sfda metrics log v1\n";
  out +=
      "# epoch accuracy per_class_accuracy pseudo_label_accuracy conflict_count "
      "l_ent l_info l_ce l_rot l_total ratio_median_nonconflict per_class...\n";
  for (const MetricsRecord& r : records) {
    std::snprintf(buf, sizeof(buf),
                  "%d %.9g %.9g %.9g %ld %.9g %.9g %.9g %.9g %.9g %.9g", r.epoch,
                  r.accuracy, r.per_class_accuracy, r.pseudo_label_accuracy,
                  r.conflict_count, r.loss.l_ent, r.loss.l_info, r.loss.l_ce,
                  r.loss.l_rot, r.loss.total, r.ratio_median_nonconflict);
    out += buf;
    for (double pc : r.per_class) {
      std::snprintf(buf, sizeof(buf), " %.9g", pc);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void write_metrics_log(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_metrics_log: cannot open " + path);
  out << format_metrics_log(records);
  if (!out) throw IoError("write_metrics_log: write failed");
}

}  // namespace sfda
