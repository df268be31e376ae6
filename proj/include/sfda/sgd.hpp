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

#include <span>
#include <unordered_map>

#include "sfda/tensor.hpp"

namespace sfda {

/// One SGD-with-momentum update:
///   velocity <- momentum * velocity + grad + weight_decay * param
///   param    <- param - lr * velocity
/// Shapes must agree and lr must be positive (ContractError otherwise).
void sgd_step(Tensor& param, Tensor& velocity, const Tensor& grad, double lr,
              double momentum, double weight_decay);

struct ParamGrad {
  Tensor* param;
  const Tensor* grad;
  double lr;
};

/// Momentum SGD over parameters that are re-enumerated every step (the tape
/// is rebuilt per step). Velocity buffers are keyed by parameter address, so
/// parameters must stay at a stable address across steps. Frozen parameters
/// are simply never passed in.
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::span<const ParamGrad> params);

 private:
  double momentum_;
  double weight_decay_;
  std::unordered_map<const Tensor*, Tensor> velocity_;
};

}  // namespace sfda
