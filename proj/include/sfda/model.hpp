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
#include <utility>
#include <vector>

#include "sfda/tape.hpp"
#include "sfda/tensor.hpp"

namespace sfda {

struct ModelSpec {
  std::size_t in_dim = 2;
  std::size_t hidden_width = 64;
  std::size_t hidden_layers = 2;
  std::size_t embed_dim = 16;   // d
  std::size_t num_classes = 4;  // K

  bool operator==(const ModelSpec&) const = default;
};

struct LinearParams {
  Tensor w;  // [in,out]
  Tensor b;  // [out]
};

// Classifier reparameterized as direction times magnitude: row k of the
// effective weight is g[k] * v[k] / ||v[k]||.
struct WeightNormParams {
  Tensor v;  // [K,d]
  Tensor g;  // [K]
  Tensor b;  // [K]
};

// Network decomposition: feature extractor -> bottleneck -> batch norm
// (= the embedding z) -> weight-normalized classifier, plus a 4-way rotation
// head over concatenated embedding pairs.
struct ModelParams {
  ModelSpec spec;
  std::vector<LinearParams> feat;
  LinearParams bottleneck;
  Tensor bn_gamma;  // [d]
  Tensor bn_beta;   // [d]
  BatchNormState bn_state;
  WeightNormParams classifier;
  LinearParams rot_head;  // [2d,4]
  bool frozen_classifier = false;
};

struct EmbeddingBatch {
  Tensor embeddings;  // [batch,d]
  std::vector<std::size_t> sample_ids;
};

ModelParams init_model(const ModelSpec& spec, std::uint64_t seed);

/// Deep copy of a trained source model with the classifier frozen and a
/// freshly initialized rotation head (scale 0.01).
ModelParams init_target_from_source(const ModelParams& source, std::uint64_t seed);

// ---- tape-bound forward (training / gradient paths) ----

struct BoundModel {
  std::vector<std::pair<Var, Var>> feat;  // (w,b) per layer
  Var bottleneck_w, bottleneck_b;
  Var bn_gamma, bn_beta;
  Var cls_v, cls_g, cls_b;
  Var rot_w, rot_b;
};

enum class BindFor { source_training, adaptation, evaluation };

struct Trainable {
  Tensor* param;
  Var node;
  bool backbone;  // feature-extractor parameter (adapted at lr/10)
};

/// Registers all parameters as tape leaves. For source_training everything
/// is trainable; for adaptation the classifier is excluded (frozen); for
/// evaluation nothing is.
BoundModel bind_model(Tape& tape, ModelParams& params, BindFor mode,
                      std::vector<Trainable>* trainables);

/// Normalized bottleneck output z = BN(bottleneck(relu-stack(x))).
Var features_forward(Tape& tape, const BoundModel& bm, ModelParams& params, Var inputs,
                     bool training);
Var classifier_forward(Tape& tape, const BoundModel& bm, Var embeddings);
/// Rotation logits over [emb_original, emb_rotated] concatenated in that order.
Var rotation_forward(Tape& tape, const BoundModel& bm, Var emb_original, Var emb_rotated);

// ---- evaluation-mode convenience (no gradients, running stats, pure) ----

struct EvalForward {
  EmbeddingBatch emb;
  Tensor logits;  // [n,K]
  Tensor probs;   // [n,K]
};

EvalForward eval_forward(const ModelParams& params, const Tensor& inputs);

/// Embeddings for a batch; training=true uses batch statistics and updates
/// the running estimates. Batch must be non-empty.
EmbeddingBatch feature_extract(ModelParams& params, const Tensor& inputs, bool training);
Tensor classify(const ModelParams& params, const EmbeddingBatch& emb);
Tensor rotation_classify(const ModelParams& params, const Tensor& emb_original,
                         const Tensor& emb_rotated);

}  // namespace sfda
