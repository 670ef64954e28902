// Copyright (c) 2026 The redimnet-cpp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "redimnet/loss.hpp"
#include "redimnet/model.hpp"

namespace redimnet {

// Binary container formats. Both share the same framing:
//
//   magic (4 bytes)                  "RDNC" checkpoint / "RDNE" embeddings
//   version      u32 LE              currently 1; higher versions are refused
//   metadata_len u64 LE
//   metadata     JSON (UTF-8)        config + record manifest, in order
//   per record:
//     name_len   u32 LE
//     name       UTF-8 bytes
//     dtype      u32 LE              0 = 32-bit float (the only code)
//     rank       u32 LE
//     dims       u64 LE each
//     data       raw little-endian payload
//
// The manifest order equals the on-disk record order, and loading a file
// then saving it reproduces the bytes exactly.

inline constexpr std::uint32_t kContainerVersion = 1;

namespace detail {

inline void write_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t read_u32le_or_die(std::istream& is,
                                       const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw InputError("truncated file while reading " + what);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64le_or_die(std::istream& is,
                                       const std::string& what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw InputError("truncated file while reading " + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f32le(std::ostream& os, const std::vector<float>& data) {
  for (float f : data) write_u32le(os, std::bit_cast<std::uint32_t>(f));
}

inline std::vector<float> read_f32le_or_die(std::istream& is, std::uint64_t n,
                                            const std::string& what) {
  std::vector<float> out(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] =
        std::bit_cast<float>(read_u32le_or_die(is, what));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ModelConfig <-> JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["c"] = cfg.c;
  j["f"] = cfg.f;
  j["embedding_dim"] = cfg.embedding_dim;
  j["heads"] = cfg.heads;
  j["pool_attn_dim"] = cfg.pool_attn_dim;
  j["stages"] = nlohmann::json::array();
  for (const auto& s : cfg.stages)
    j["stages"].push_back({{"sf", s.sf},
                           {"mult", s.mult},
                           {"n2d", s.n2d},
                           {"kind2d", to_string(s.kind2d)},
                           {"kind1d", to_string(s.kind1d)}});
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.c = j.at("c").get<std::int64_t>();
    cfg.f = j.at("f").get<std::int64_t>();
    cfg.embedding_dim = j.at("embedding_dim").get<std::int64_t>();
    cfg.heads = j.at("heads").get<std::int64_t>();
    cfg.pool_attn_dim = j.at("pool_attn_dim").get<std::int64_t>();
    cfg.stages.clear();
    for (const auto& sj : j.at("stages")) {
      StageSpec s;
      s.sf = sj.at("sf").get<std::int64_t>();
      s.mult = sj.at("mult").get<std::int64_t>();
      s.n2d = sj.at("n2d").get<std::int64_t>();
      s.kind2d = block2d_kind_from_string(sj.at("kind2d").get<std::string>());
      s.kind1d = block1d_kind_from_string(sj.at("kind1d").get<std::string>());
      cfg.stages.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed model config metadata: ") +
                     e.what());
  }
  validate(cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointData {
  // Everything except the tensor manifest, which is regenerated from the
  // records on save so it can never drift out of sync.
  nlohmann::json meta;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline void save_checkpoint(const std::string& path,
                            const CheckpointData& ck) {
  nlohmann::json meta = ck.meta;
  meta["tensors"] = nlohmann::json::array();
  for (const auto& t : ck.tensors) {
    nlohmann::json tj;
    tj["name"] = t.name;
    tj["dtype"] = 0;
    tj["shape"] = t.shape;
    meta["tensors"].push_back(tj);
  }
  const std::string meta_str = meta.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open for writing: " + path);
  os.write("RDNC", 4);
  detail::write_u32le(os, kContainerVersion);
  detail::write_u64le(os, meta_str.size());
  os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  for (const auto& t : ck.tensors) {
    detail::write_u32le(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_u32le(os, 0);  // dtype f32
    detail::write_u32le(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape)
      detail::write_u64le(os, static_cast<std::uint64_t>(d));
    if (static_cast<std::int64_t>(t.data.size()) != numel_of(t.shape))
      throw StateError("checkpoint record " + t.name +
                       ": payload does not match declared shape");
    detail::write_f32le(os, t.data);
  }
  if (!os) throw InputError("short write: " + path);
}

namespace detail {

// Shared record/header reader for both containers.
inline nlohmann::json read_container_header(std::istream& is,
                                            const char expect_magic[5],
                                            const std::string& path) {
  char magic[4];
  if (!is.read(magic, 4))
    throw InputError("truncated file: " + path);
  if (std::memcmp(magic, expect_magic, 4) != 0)
    throw InputError(path + ": bad magic, expected " +
                     std::string(expect_magic, 4));
  const std::uint32_t version = read_u32le_or_die(is, "version");
  if (version > kContainerVersion)
    throw InputError(path + ": format version " + std::to_string(version) +
                     " is newer than the supported version " +
                     std::to_string(kContainerVersion));
  const std::uint64_t meta_len = read_u64le_or_die(is, "metadata length");
  std::string meta_str(static_cast<std::size_t>(meta_len), '\0');
  if (!is.read(meta_str.data(), static_cast<std::streamsize>(meta_len)))
    throw InputError(path + ": truncated metadata");
  try {
    return nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": metadata is not valid JSON: " + e.what());
  }
}

inline TensorRecord read_record(std::istream& is, const std::string& path) {
  TensorRecord t;
  const std::uint32_t name_len = read_u32le_or_die(is, "record name length");
  t.name.resize(name_len);
  if (!is.read(t.name.data(), name_len))
    throw InputError(path + ": truncated record name");
  const std::uint32_t dtype = read_u32le_or_die(is, "dtype");
  if (dtype != 0)
    throw InputError(path + ": record " + t.name + " has unknown dtype code " +
                     std::to_string(dtype));
  const std::uint32_t rank = read_u32le_or_die(is, "rank");
  std::uint64_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint64_t d = read_u64le_or_die(is, "dims");
    t.shape.push_back(static_cast<std::int64_t>(d));
    numel *= d;
  }
  t.data = read_f32le_or_die(is, numel, "record " + t.name);
  return t;
}

}  // namespace detail

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint: " + path);
  CheckpointData ck;
  ck.meta = detail::read_container_header(is, "RDNC", path);
  if (!ck.meta.contains("tensors") || !ck.meta["tensors"].is_array())
    throw InputError(path + ": metadata has no tensor manifest");
  const auto manifest = ck.meta["tensors"];
  ck.meta.erase("tensors");
  for (const auto& entry : manifest) {
    TensorRecord t = detail::read_record(is, path);
    if (entry.at("name").get<std::string>() != t.name)
      throw InputError(path + ": manifest order disagrees with record order (" +
                       entry.at("name").get<std::string>() + " vs " + t.name +
                       ")");
    const auto declared = entry.at("shape").get<Shape>();
    if (declared != t.shape)
      throw InputError(path + ": record " + t.name +
                       " shape disagrees with its manifest entry");
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Model / loss-head snapshot & restore
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const LossConfig& cfg) {
  nlohmann::json j;
  j["kind"] = to_string(cfg.kind);
  j["scale"] = cfg.scale;
  j["margin"] = cfg.margin;
  j["subcenters"] = cfg.subcenters;
  j["lambda"] = cfg.lambda;
  j["t"] = cfg.t;
  return j;
}

inline LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig cfg;
  try {
    cfg.kind = loss_kind_from_string(j.at("kind").get<std::string>());
    cfg.scale = j.at("scale").get<double>();
    cfg.margin = j.at("margin").get<double>();
    cfg.subcenters = j.at("subcenters").get<std::int64_t>();
    cfg.lambda = j.at("lambda").get<double>();
    cfg.t = j.at("t").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed loss config metadata: ") +
                     e.what());
  }
  return cfg;
}

// Captures the model (and optionally the training loss head, under the
// "loss." prefix) as f32 records in named-parameter order.
template <typename T>
CheckpointData snapshot(Model<T>& model, LossHead<T>* head = nullptr) {
  CheckpointData ck;
  ck.meta["model"] = to_json(model.config());

  ParamList<T> params = model.named_params();
  if (head) {
    ck.meta["loss"] = to_json(head->config());
    ck.meta["loss"]["classes"] = head->n_classes();
    head->collect("loss", params);
  }
  for (const auto& p : params) {
    TensorRecord t;
    t.name = p.name;
    t.shape = p.tensor->shape();
    t.data.reserve(static_cast<std::size_t>(p.tensor->numel()));
    for (auto v : p.tensor->data())
      t.data.push_back(static_cast<float>(v));
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

// Loads every model parameter and buffer from the checkpoint, by name,
// strict about both presence and shape.
template <typename T>
void restore(Model<T>& model, const CheckpointData& ck) {
  for (auto& p : model.named_params()) {
    const TensorRecord* rec = ck.find(p.name);
    if (!rec)
      throw InputError("checkpoint is missing tensor " + p.name);
    if (rec->shape != p.tensor->shape())
      throw InputError("checkpoint tensor " + p.name + " has shape " +
                       shape_str(rec->shape) + ", model expects " +
                       shape_str(p.tensor->shape()));
    auto dst = p.tensor->data();
    for (std::int64_t i = 0; i < p.tensor->numel(); ++i)
      dst[i] = static_cast<T>(rec->data[static_cast<std::size_t>(i)]);
  }
}

// Builds the model described by the checkpoint metadata and restores its
// weights.
template <typename T>
Model<T> model_from_checkpoint(const CheckpointData& ck,
                               std::uint64_t seed = 1) {
  if (!ck.meta.contains("model"))
    throw InputError("checkpoint metadata has no model config");
  Model<T> model(model_config_from_json(ck.meta["model"]), seed);
  restore(model, ck);
  return model;
}

// Resume policy for the training head: restored only when the checkpoint
// carries "loss." records AND the class count matches the current run;
// otherwise the caller keeps its fresh head. Returns whether it loaded.
template <typename T>
bool maybe_restore_loss(LossHead<T>& head, const CheckpointData& ck) {
  const TensorRecord* w = ck.find("loss.weight");
  if (!w) return false;
  if (w->shape != head.weight().shape()) return false;
  if (ck.meta.contains("loss")) {
    const auto& lj = ck.meta["loss"];
    if (lj.contains("classes") &&
        lj["classes"].get<std::int64_t>() != head.n_classes())
      return false;
  }
  auto dst = head.weight().data();
  for (std::int64_t i = 0; i < head.weight().numel(); ++i)
    dst[i] = static_cast<T>(w->data[static_cast<std::size_t>(i)]);
  if (const TensorRecord* b = ck.find("loss.b")) {
    if (b->shape == head.bias().shape()) {
      auto bd = head.bias().data();
      for (std::int64_t i = 0; i < head.bias().numel(); ++i)
        bd[i] = static_cast<T>(b->data[static_cast<std::size_t>(i)]);
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Embedding store
// ---------------------------------------------------------------------------

struct EmbeddingStore {
  std::int64_t dim = 0;
  std::vector<std::pair<std::string, std::vector<float>>> records;

  void add(const std::string& id, std::vector<float> emb) {
    if (dim == 0) dim = static_cast<std::int64_t>(emb.size());
    if (static_cast<std::int64_t>(emb.size()) != dim)
      throw InputError("embedding store: " + id + " has dim " +
                       std::to_string(emb.size()) + ", store is " +
                       std::to_string(dim));
    for (const auto& r : records)
      if (r.first == id)
        throw InputError("embedding store: duplicate id " + id);
    records.emplace_back(id, std::move(emb));
  }

  const std::vector<float>* find(const std::string& id) const {
    for (const auto& r : records)
      if (r.first == id) return &r.second;
    return nullptr;
  }
};

inline void save_embedding_store(const std::string& path,
                                 const EmbeddingStore& store) {
  nlohmann::json meta;
  meta["dim"] = store.dim;
  meta["count"] = store.records.size();
  const std::string meta_str = meta.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open for writing: " + path);
  os.write("RDNE", 4);
  detail::write_u32le(os, kContainerVersion);
  detail::write_u64le(os, meta_str.size());
  os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  for (const auto& [id, emb] : store.records) {
    detail::write_u32le(os, static_cast<std::uint32_t>(id.size()));
    os.write(id.data(), static_cast<std::streamsize>(id.size()));
    detail::write_u32le(os, 0);  // dtype f32
    detail::write_u32le(os, 1);  // rank
    detail::write_u64le(os, emb.size());
    detail::write_f32le(os, emb);
  }
  if (!os) throw InputError("short write: " + path);
}

inline EmbeddingStore load_embedding_store(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open embedding store: " + path);
  const nlohmann::json meta =
      detail::read_container_header(is, "RDNE", path);
  EmbeddingStore store;
  std::uint64_t count = 0;
  try {
    store.dim = meta.at("dim").get<std::int64_t>();
    count = meta.at("count").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": malformed store metadata: " + e.what());
  }
  std::unordered_set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord rec = detail::read_record(is, path);
    if (rec.shape.size() != 1 ||
        rec.shape[0] != store.dim)
      throw InputError(path + ": record " + rec.name +
                       " does not match the declared dim " +
                       std::to_string(store.dim));
    if (!seen.insert(rec.name).second)
      throw InputError(path + ": duplicate id " + rec.name);
    store.records.emplace_back(std::move(rec.name), std::move(rec.data));
  }
  return store;
}

}  // namespace redimnet
