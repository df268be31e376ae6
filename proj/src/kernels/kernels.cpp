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

#include "sfda/kernels.hpp"

#include <cstdlib>

#include "sfda/errors.hpp"

namespace sfda::kernels {
namespace {

const Ops* resolve_auto() {
  if (const Ops* v = avx2_ops()) return v;
  return &scalar_ops();
}

const Ops* resolve_from_env() {
  const char* env = std::getenv("SFDA_KERNELS");
  if (env == nullptr || std::string(env) == "auto") return resolve_auto();
  const std::string name(env);
  if (name == "scalar") return &scalar_ops();
  if (name == "avx2") {
    if (const Ops* v = avx2_ops()) return v;
    throw ConfigError("SFDA_KERNELS=avx2 requested but AVX2 is unavailable on this machine/build");
  }
  throw ConfigError("SFDA_KERNELS: unknown backend '" + name + "' (expected scalar|avx2|auto)");
}

const Ops*& active_slot() {
  static const Ops* slot = resolve_from_env();
  return slot;
}

}  // namespace

const Ops& active() { return *active_slot(); }

void select(const std::string& name) {
  if (name == "auto") {
    active_slot() = resolve_auto();
    return;
  }
  if (name == "scalar") {
    active_slot() = &scalar_ops();
    return;
  }
  if (name == "avx2") {
    const Ops* v = avx2_ops();
    if (v == nullptr) {
      throw ConfigError("kernel backend 'avx2' is unavailable on this machine/build");
    }
    active_slot() = v;
    return;
  }
  throw ConfigError("unknown kernel backend '" + name + "' (expected scalar|avx2|auto)");
}

}  // namespace sfda::kernels
