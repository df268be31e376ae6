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

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfda/config.hpp"
#include "sfda/data.hpp"
#include "sfda/losses.hpp"
#include "sfda/model.hpp"
#include "sfda/pseudo_label.hpp"

namespace sfda {

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class;     // classes absent from the data hold NaN
  double per_class_accuracy = 0.0;   // mean over classes present in the data
  bool missing_class_warning = false;
};

/// One record per adaptation epoch. conflict_count and the ratio median are
/// measured at the epoch's pseudo-label refresh (full-dataset pass);
/// loss_breakdown holds epoch means of the batch losses, with conflict_count
/// inside it summed over batches. Accuracy fields are NaN when the target
/// has no ground-truth labels.
struct MetricsRecord {
  int epoch = 0;
  double accuracy = 0.0;
  double per_class_accuracy = 0.0;
  std::vector<double> per_class;
  double pseudo_label_accuracy = 0.0;
  long conflict_count = 0;
  LossBreakdown loss;
  double ratio_median_nonconflict = 0.0;
};

struct AdaptStats {
  long batches = 0;
  long mixed_delta_batches = 0;      // batches holding both +1 and -1 signs
  std::vector<double> step_totals;   // per-step total loss, in step order
};

struct AdaptResult {
  ModelParams model;
  std::vector<MetricsRecord> metrics;
  AdaptStats stats;
};

/// Supervised source training with label smoothing; deterministic per
/// config.seed. Runs config.source_epochs epochs (0 returns initialization).
ModelParams train_source(const AdaptationConfig& config, const LabeledDataset& source);

/// Per epoch: full-dataset evaluation-mode pass, pseudo-label refresh
/// (epoch-frozen labels + ratios), then mini-batches with live hypotheses,
/// conflict signs, the weighted total loss, and SGD on non-frozen params.
/// Target labels are read only by the per-epoch evaluator, never by the
/// optimization path.
AdaptResult adapt_target(const AdaptationConfig& config, const ModelParams& source_model,
                         const LabeledDataset& target);

/// Overall accuracy plus mean per-class accuracy. Labels required
/// (ContractError otherwise); classes absent from the data are excluded from
/// the per-class mean and flagged.
EvalResult evaluate(const ModelParams& model, const LabeledDataset& data);

struct SeedRun {
  std::uint64_t seed = 0;
  AdaptResult result;
  EvalResult source_only;  // source model on target data, pre-adaptation
};

struct SeedAggregate {
  std::vector<std::uint64_t> seeds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_per_class_accuracy = 0.0;
  double std_per_class_accuracy = 0.0;
};

struct RunSeedsResult {
  std::vector<SeedRun> runs;
  SeedAggregate aggregate;  // of final-epoch metrics; exactly seed-order invariant
};

/// Deterministic per-seed runs. When source is null the source model is
/// trained per seed (full pipeline); otherwise the given model is adapted
/// under each seed.
RunSeedsResult run_seeds(const AdaptationConfig& config,
                         std::span<const std::uint64_t> seeds,
                         const ModelParams* source = nullptr);

/// Datasets named by the config (generated or loaded). For dataset=csv the
/// target is treated as labeled iff its rows carry in_dim+1 columns.
std::pair<LabeledDataset, LabeledDataset> make_datasets(const AdaptationConfig& config);

std::uint64_t dataset_content_hash(const LabeledDataset& data);

/// One row per sample: sample_id, embedding coords, pseudo_label, hypothesis,
/// ratio, conflict_flag, true_label (-1 when unlabeled). CSV with a header.
void export_embeddings(const ModelParams& model, const LabeledDataset& data, double r_th,
                       const std::string& path);

/// Line-delimited log, one record per epoch, 9 significant digits,
/// '#'-prefixed header documenting the field order.
void write_metrics_log(const std::vector<MetricsRecord>& records, const std::string& path);
std::string format_metrics_log(const std::vector<MetricsRecord>& records);

}  // namespace sfda
