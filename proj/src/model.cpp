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

#include "sfda/model.hpp"

#include <cmath>
#include <random>

#include "sfda/errors.hpp"
#include "sfda/kernels.hpp"

namespace sfda {
namespace {

Tensor randn(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

LinearParams init_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  // He initialization for the relu stack; harmless for the linear heads.
  const double stddev = std::sqrt(2.0 / static_cast<double>(in));
  return {randn({in, out}, stddev, rng), Tensor({out})};
}

}  // namespace

ModelParams init_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.in_dim == 0 || spec.hidden_width == 0 || spec.embed_dim == 0 ||
      spec.num_classes < 2) {
    throw ContractError("init_model: invalid model dimensions");
  }
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.spec = spec;
  std::size_t width = spec.in_dim;
  for (std::size_t l = 0; l < spec.hidden_layers; ++l) {
    p.feat.push_back(init_linear(width, spec.hidden_width, rng));
    width = spec.hidden_width;
  }
  p.bottleneck = init_linear(width, spec.embed_dim, rng);
  p.bn_gamma = Tensor({spec.embed_dim});
  p.bn_gamma.fill(1.0);
  p.bn_beta = Tensor({spec.embed_dim});
  p.bn_state.running_mean = Tensor({spec.embed_dim});
  p.bn_state.running_var = Tensor({spec.embed_dim});
  p.bn_state.running_var.fill(1.0);
  p.classifier.v =
      randn({spec.num_classes, spec.embed_dim}, std::sqrt(1.0 / spec.embed_dim), rng);
  p.classifier.g = Tensor({spec.num_classes});
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const double* row = p.classifier.v.data() + k * spec.embed_dim;
    p.classifier.g[k] = std::sqrt(kernels::active().dot(row, row, spec.embed_dim));
  }
  p.classifier.b = Tensor({spec.num_classes});
  p.rot_head.w = randn({2 * spec.embed_dim, 4}, 0.01, rng);
  p.rot_head.b = Tensor({4});
  p.frozen_classifier = false;
  return p;
}

ModelParams init_target_from_source(const ModelParams& source, std::uint64_t seed) {
  ModelParams p = source;  // deep copy, classifier weights byte-identical
  p.frozen_classifier = true;
  std::mt19937_64 rng(seed);
  p.rot_head.w = randn({2 * p.spec.embed_dim, 4}, 0.01, rng);
  p.rot_head.b = Tensor({4});
  return p;
}

BoundModel bind_model(Tape& tape, ModelParams& params, BindFor mode,
                      std::vector<Trainable>* trainables) {
  const bool train_any = mode != BindFor::evaluation;
  const bool train_cls = mode == BindFor::source_training;

  auto bind = [&](Tensor& t, bool trainable, bool backbone) {
    Var v = tape.leaf(t, trainable);
    if (trainable && trainables != nullptr) {
      trainables->push_back({&t, v, backbone});
    }
    return v;
  };

  BoundModel bm;
  for (LinearParams& layer : params.feat) {
    bm.feat.emplace_back(bind(layer.w, train_any, true), bind(layer.b, train_any, true));
  }
  bm.bottleneck_w = bind(params.bottleneck.w, train_any, false);
  bm.bottleneck_b = bind(params.bottleneck.b, train_any, false);
  bm.bn_gamma = bind(params.bn_gamma, train_any, false);
  bm.bn_beta = bind(params.bn_beta, train_any, false);
  bm.cls_v = bind(params.classifier.v, train_cls, false);
  bm.cls_g = bind(params.classifier.g, train_cls, false);
  bm.cls_b = bind(params.classifier.b, train_cls, false);
  bm.rot_w = bind(params.rot_head.w, train_any, false);
  bm.rot_b = bind(params.rot_head.b, train_any, false);
  return bm;
}

Var features_forward(Tape& tape, const BoundModel& bm, ModelParams& params, Var inputs,
                     bool training) {
  if (tape.value(inputs).rows() == 0) throw ContractError("features_forward: empty batch");
  Var h = inputs;
  for (const auto& [w, b] : bm.feat) {
    h = tape.relu(tape.add_row_bias(tape.matmul(h, w), b));
  }
  Var z0 = tape.add_row_bias(tape.matmul(h, bm.bottleneck_w), bm.bottleneck_b);
  return tape.batch_norm(z0, bm.bn_gamma, bm.bn_beta, params.bn_state, training);
}

Var classifier_forward(Tape& tape, const BoundModel& bm, Var embeddings) {
  return tape.weight_norm_linear(embeddings, bm.cls_v, bm.cls_g, bm.cls_b);
}

Var rotation_forward(Tape& tape, const BoundModel& bm, Var emb_original, Var emb_rotated) {
  Var pair = tape.concat_cols(emb_original, emb_rotated);
  return tape.add_row_bias(tape.matmul(pair, bm.rot_w), bm.rot_b);
}

EvalForward eval_forward(const ModelParams& params, const Tensor& inputs) {
  // Evaluation never mutates the model; batch_norm takes the state by
  // reference, so run on a scratch copy of the mutable pieces.
  ModelParams scratch = params;
  Tape tape;
  BoundModel bm = bind_model(tape, scratch, BindFor::evaluation, nullptr);
  Var x = tape.constant(inputs);
  Var z = features_forward(tape, bm, scratch, x, /*training=*/false);
  Var logits = classifier_forward(tape, bm, z);
  Var probs = tape.softmax(logits);

  EvalForward out;
  out.emb.embeddings = tape.value(z);
  out.emb.sample_ids.resize(inputs.rows());
  for (std::size_t i = 0; i < inputs.rows(); ++i) out.emb.sample_ids[i] = i;
  out.logits = tape.value(logits);
  out.probs = tape.value(probs);
  return out;
}

EmbeddingBatch feature_extract(ModelParams& params, const Tensor& inputs, bool training) {
  Tape tape;
  BoundModel bm = bind_model(tape, params, BindFor::evaluation, nullptr);
  Var x = tape.constant(inputs);
  Var z = features_forward(tape, bm, params, x, training);
  EmbeddingBatch out;
  out.embeddings = tape.value(z);
  out.sample_ids.resize(inputs.rows());
  for (std::size_t i = 0; i < inputs.rows(); ++i) out.sample_ids[i] = i;
  return out;
}

Tensor classify(const ModelParams& params, const EmbeddingBatch& emb) {
  if (emb.embeddings.cols() != params.spec.embed_dim) {
    throw ContractError("classify: embedding dimension mismatch");
  }
  ModelParams scratch = params;
  Tape tape;
  BoundModel bm = bind_model(tape, scratch, BindFor::evaluation, nullptr);
  Var z = tape.constant(emb.embeddings);
  return tape.value(classifier_forward(tape, bm, z));
}

Tensor rotation_classify(const ModelParams& params, const Tensor& emb_original,
                         const Tensor& emb_rotated) {
  if (!emb_original.same_shape(emb_rotated) ||
      emb_original.cols() != params.spec.embed_dim) {
    throw ContractError("rotation_classify: embedding shape mismatch");
  }
  ModelParams scratch = params;
  Tape tape;
  BoundModel bm = bind_model(tape, scratch, BindFor::evaluation, nullptr);
  Var a = tape.constant(emb_original);
  Var b = tape.constant(emb_rotated);
  return tape.value(rotation_forward(tape, bm, a, b));
}

}  // namespace sfda
