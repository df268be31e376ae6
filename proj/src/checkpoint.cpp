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

#include "sfda/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <vector>

#include "sfda/errors.hpp"

namespace sfda {
namespace {

constexpr char kMagic[8] = {'S', 'F', 'D', 'A', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kFlagFrozenClassifier = 1u;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_tensor(std::ofstream& out, const std::string& name, const Tensor& t) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_u64(out, d);
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

struct Reader {
  std::ifstream in;
  std::string path;

  void read(void* dst, std::size_t size) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(size));
    if (!in) throw ParseError("checkpoint: truncated file " + path);
  }
  std::uint32_t u32() {
    std::uint32_t v;
    read(&v, sizeof(v));
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    read(&v, sizeof(v));
    return v;
  }
};

void for_each_tensor(ModelParams& m,
                     const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t l = 0; l < m.feat.size(); ++l) {
    const std::string base = "feat." + std::to_string(l);
    fn(base + ".w", m.feat[l].w);
    fn(base + ".b", m.feat[l].b);
  }
  fn("bottleneck.w", m.bottleneck.w);
  fn("bottleneck.b", m.bottleneck.b);
  fn("bn.gamma", m.bn_gamma);
  fn("bn.beta", m.bn_beta);
  fn("bn.running_mean", m.bn_state.running_mean);
  fn("bn.running_var", m.bn_state.running_var);
  fn("classifier.v", m.classifier.v);
  fn("classifier.g", m.classifier.g);
  fn("classifier.b", m.classifier.b);
  fn("rot_head.w", m.rot_head.w);
  fn("rot_head.b", m.rot_head.b);
}

}  // namespace

void save_checkpoint(const ModelParams& model, std::uint64_t config_hash,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, config_hash);
  write_u32(out, model.frozen_classifier ? kFlagFrozenClassifier : 0u);

  // Model geometry, so load needs no side channel.
  write_u32(out, static_cast<std::uint32_t>(model.spec.in_dim));
  write_u32(out, static_cast<std::uint32_t>(model.spec.hidden_width));
  write_u32(out, static_cast<std::uint32_t>(model.spec.hidden_layers));
  write_u32(out, static_cast<std::uint32_t>(model.spec.embed_dim));
  write_u32(out, static_cast<std::uint32_t>(model.spec.num_classes));

  std::uint32_t count = 0;
  for_each_tensor(const_cast<ModelParams&>(model),
                  [&](const std::string&, Tensor&) { ++count; });
  write_u32(out, count);
  for_each_tensor(const_cast<ModelParams&>(model),
                  [&](const std::string& name, Tensor& t) { write_tensor(out, name, t); });
  out.flush();
  if (!out) throw IoError("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  Reader r{std::ifstream(path, std::ios::binary), path};
  if (!r.in) throw IoError("checkpoint: cannot open " + path);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("checkpoint: bad magic in " + path);
  }

  LoadedCheckpoint out;
  out.config_hash = r.u64();
  const std::uint32_t flags = r.u32();

  ModelSpec spec;
  spec.in_dim = r.u32();
  spec.hidden_width = r.u32();
  spec.hidden_layers = r.u32();
  spec.embed_dim = r.u32();
  spec.num_classes = r.u32();
  out.model = init_model(spec, /*seed=*/0);
  out.model.frozen_classifier = (flags & kFlagFrozenClassifier) != 0;

  std::map<std::string, Tensor*> slots;
  for_each_tensor(out.model,
                  [&](const std::string& name, Tensor& t) { slots[name] = &t; });

  const std::uint32_t count = r.u32();
  if (count != slots.size()) {
    throw ParseError("checkpoint: tensor count mismatch in " + path);
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    if (name_len > 4096) throw ParseError("checkpoint: absurd tensor name in " + path);
    std::string name(name_len, '\0');
    r.read(name.data(), name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 4) throw ParseError("checkpoint: absurd tensor rank in " + path);
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = r.u64();
      numel *= shape[d];
    }
    auto it = slots.find(name);
    if (it == slots.end()) throw ParseError("checkpoint: unknown tensor '" + name + "'");
    if (it->second->shape() != shape) {
      throw ConfigError("checkpoint: tensor '" + name + "' shape mismatch");
    }
    r.read(it->second->data(), numel * sizeof(double));
  }
  return out;
}

}  // namespace sfda
