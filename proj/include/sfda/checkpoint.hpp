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
#include <string>

#include "sfda/model.hpp"

namespace sfda {

// Flat binary checkpoint (documented in the README): magic "SFDACKP1",
// config hash, flags, then named tensors with shape metadata, little-endian
// IEEE doubles. Round-trips bit-exactly.

struct LoadedCheckpoint {
  ModelParams model;
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const ModelParams& model, std::uint64_t config_hash,
                     const std::string& path);

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace sfda
