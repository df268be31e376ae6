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

#include "sfda/sgd.hpp"

#include "sfda/errors.hpp"
#include "sfda/kernels.hpp"

namespace sfda {

void sgd_step(Tensor& param, Tensor& velocity, const Tensor& grad, double lr,
              double momentum, double weight_decay) {
  if (!param.same_shape(grad) || !param.same_shape(velocity)) {
    throw ContractError("sgd_step: param/grad/velocity shape mismatch");
  }
  if (!(lr > 0.0)) throw ContractError("sgd_step: lr must be positive");
  kernels::active().sgd_update(param.data(), velocity.data(), grad.data(), lr, momentum,
                               weight_decay, param.numel());
}

void SgdOptimizer::step(std::span<const ParamGrad> params) {
  for (const ParamGrad& pg : params) {
    auto [it, inserted] = velocity_.try_emplace(pg.param, Tensor::zeros_like(*pg.param));
    sgd_step(*pg.param, it->second, *pg.grad, pg.lr, momentum_, weight_decay_);
  }
}

}  // namespace sfda
