// Copyright 2026 The shardckpt Authors
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

#include "shardckpt/load.hpp"

#include <algorithm>
#include <cstring>
#include <mutex>
#include <set>

#include "shardckpt/error.hpp"
#include "shardckpt/save.hpp"

namespace shardckpt {

using nlohmann::json;

namespace {

std::string full_leaf_path(const std::string& item, const std::string& leaf) {
  return leaf.empty() ? item : item + "/" + leaf;
}

json get_json(StorageBackend& backend, const std::string& key) {
  Bytes b;
  try {
    b = backend.get(key);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::not_found) fail(ErrorCode::corruption, "checkpoint is missing " + key);
    throw;
  }
  try {
    return json::parse(to_string(b));
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, key + ": " + e.what());
  }
}

std::string join_list(const std::vector<std::string>& xs) {
  std::string out = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + xs[i];
  return out + "]";
}

bool is_numeric(LeafKind k) { return k == LeafKind::dense_array || k == LeafKind::scalar; }

// Checks that `source` can be delivered as `requested` and fills in the
// unspecified properties from the source.
AbstractLeaf resolve_target(const std::string& where, const AbstractLeaf& source, const AbstractLeaf& requested) {
  if (requested.placeholder || requested.kind == LeafKind::placeholder)
    fail(ErrorCode::invalid_argument, "abstract leaf '" + where + "' must not be a placeholder");
  AbstractLeaf t = requested;
  const bool same = t.kind == source.kind;
  const bool rank0_bridge = is_numeric(t.kind) && is_numeric(source.kind) &&
                            ((t.kind == LeafKind::scalar && source.shape && source.shape->empty()) ||
                             (source.kind == LeafKind::scalar && t.kind == LeafKind::dense_array &&
                              (!t.shape || t.shape->empty())));
  if (!same && !rank0_bridge)
    fail(ErrorCode::structure_mismatch, "leaf '" + where + "' is stored as " +
                                            std::string(leaf_kind_name(source.kind)) + ", requested " +
                                            std::string(leaf_kind_name(t.kind)));
  if (t.kind == LeafKind::dense_array) {
    Shape src_shape = source.shape.value_or(Shape{});
    if (t.shape && *t.shape != src_shape)
      fail(ErrorCode::structure_mismatch, "leaf '" + where + "' has shape " + to_string(src_shape) + ", requested " +
                                              to_string(*t.shape));
    t.shape = src_shape;
  }
  if (!t.dtype) t.dtype = source.dtype;
  return t;
}

struct BoxSet {
  std::vector<Box> boxes;
  bool insert(const Box& b) {
    if (std::find(boxes.begin(), boxes.end(), b) != boxes.end()) return false;
    boxes.push_back(b);
    return true;
  }
  bool has(const Box& b) const { return std::find(boxes.begin(), boxes.end(), b) != boxes.end(); }
};

void plan_reads(const std::string& where, const Sharding& s, bool broadcast, LeafDirective& d) {
  std::vector<Shard> shards = shards_of(s);
  if (!broadcast) {
    std::map<int, BoxSet> reads;
    for (const auto& sh : shards) reads[sh.process].insert(sh.ranges);
    for (auto& [p, set] : reads) d.reads[p] = std::move(set.boxes);
    return;
  }
  const auto& replica_axis = s.mesh().replica_axis();
  if (!replica_axis) fail(ErrorCode::invalid_argument, "broadcast loading of '" + where + "' needs a mesh replica axis");
  auto groups = replica_groups(s.mesh());
  std::set<DeviceId> group0(groups.front().devices.begin(), groups.front().devices.end());
  std::map<int, BoxSet> reads, receives;
  BoxSet covered;
  for (const auto& sh : shards)
    if (group0.count(sh.device)) {
      reads[sh.process].insert(sh.ranges);
      covered.insert(sh.ranges);
    }
  std::int64_t vol = 0;
  for (const auto& b : covered.boxes) vol += volume(b);
  if (vol != num_elements(s.global_shape()))
    fail(ErrorCode::invalid_argument, "replica group 0 does not hold a complete copy of '" + where + "'");
  for (const auto& sh : shards) {
    if (group0.count(sh.device) || reads[sh.process].has(sh.ranges)) continue;
    if (!covered.has(sh.ranges))
      fail(ErrorCode::invalid_argument, "shard " + to_string(sh.ranges) + " of '" + where +
                                            "' is not held by replica group 0");
    receives[sh.process].insert(sh.ranges);
  }
  for (auto& [p, set] : reads)
    if (!set.boxes.empty()) d.reads[p] = std::move(set.boxes);
  for (auto& [p, set] : receives)
    if (!set.boxes.empty()) d.receives[p] = std::move(set.boxes);
}

ItemPlan plan_tree(const CheckpointMetadata& meta, const std::string& name, const AbstractTree* abstract,
                   const PlanOptions& options) {
  ItemPlan item{name, kTreeHandler, {}, {}};
  const TreeMetadata* saved = nullptr;
  if (auto it = meta.trees.find(name); it != meta.trees.end()) saved = &it->second;

  std::map<std::string, AbstractLeaf> saved_leaves;
  if (saved)
    for_each_leaf(saved->structure, [&](const std::string& p, const AbstractLeaf& l) { saved_leaves.emplace(p, l); });

  if (abstract) {
    std::set<std::string> requested;
    for_each_leaf(*abstract, [&](const std::string& p, const AbstractLeaf&) { requested.insert(p); });
    std::vector<std::string> missing, extra;
    for (const auto& [p, l] : saved_leaves)
      if (!requested.count(p)) missing.push_back(full_leaf_path(name, p));
    for (const auto& p : requested)
      if (!saved_leaves.count(p)) extra.push_back(full_leaf_path(name, p));
    if (options.mode == LoadMode::strict) {
      if (!missing.empty() || !extra.empty())
        fail(ErrorCode::structure_mismatch, "abstract tree for '" + name + "' does not match the checkpoint: missing " +
                                                join_list(missing) + ", unexpected " + join_list(extra));
      if (!same_structure(saved->structure, *abstract))
        fail(ErrorCode::structure_mismatch, "abstract tree for '" + name + "' has different container kinds");
    }
    item.structure = *abstract;
  } else {
    item.structure = saved->structure;
  }

  for_each_leaf(item.structure, [&](const std::string& path, const AbstractLeaf& requested) {
    const std::string where = full_leaf_path(name, path);
    LeafDirective d;
    d.path = path;
    auto src = saved_leaves.find(path);
    if (src == saved_leaves.end()) {
      if (requested.placeholder || requested.kind == LeafKind::placeholder)
        fail(ErrorCode::invalid_argument, "abstract leaf '" + where + "' must not be a placeholder");
      d.placeholder = true;
      d.target = requested;
      d.target.placeholder = true;
      item.directives.push_back(std::move(d));
      return;
    }
    d.source = src->second;
    d.target = abstract ? resolve_target(where, src->second, requested) : src->second;
    d.cast = d.target.kind != d.source->kind || d.target.dtype != d.source->dtype;
    if (d.source->kind == LeafKind::dense_array) {
      const Sharding* saved_sharding = d.source->sharding ? &*d.source->sharding : nullptr;
      std::optional<Sharding> target = d.target.kind == LeafKind::dense_array ? d.target.sharding : std::nullopt;
      if (target) {
        if (target->global_shape() != *d.source->shape)
          fail(ErrorCode::invalid_argument, "target sharding of '" + where + "' is for shape " +
                                                to_string(target->global_shape()));
        if (target->mesh().process_count() != options.process_count)
          fail(ErrorCode::topology_mismatch, "target sharding of '" + where + "' spans " +
                                                 std::to_string(target->mesh().process_count()) +
                                                 " processes, runtime has " + std::to_string(options.process_count));
      } else {
        if (!saved_sharding) fail(ErrorCode::corruption, "no saved sharding for '" + where + "'");
        if (options.mesh) {
          validate_topology(*saved_sharding, *options.mesh);
        } else if (saved_sharding->mesh().process_count() != options.process_count) {
          fail(ErrorCode::topology_mismatch,
               "'" + where + "' was saved on " + std::to_string(saved_sharding->mesh().process_count()) +
                   " processes but " + std::to_string(options.process_count) +
                   " are running; supply an abstract state with target shardings");
        }
        target = *saved_sharding;
      }
      plan_reads(where, *target, options.broadcast, d);
      if (d.target.kind == LeafKind::dense_array) d.target.sharding = std::move(target);
    }
    item.directives.push_back(std::move(d));
  });
  return item;
}

std::string box_message_key(const std::string& leaf, const Box& box) { return leaf + "@" + to_string(box); }

}  // namespace

std::string_view load_layout_name(LoadLayout layout) {
  switch (layout) {
    case LoadLayout::automatic: return "auto";
    case LoadLayout::native: return "native";
    case LoadLayout::safetensors: return "safetensors";
  }
  return "?";
}

LoadLayout parse_load_layout(std::string_view name) {
  if (name == "auto") return LoadLayout::automatic;
  if (name == "native") return LoadLayout::native;
  if (name == "safetensors") return LoadLayout::safetensors;
  fail(ErrorCode::invalid_argument, "unknown load layout '" + std::string(name) + "'");
}

const CheckpointableDescriptor* CheckpointMetadata::descriptor(const std::string& name) const {
  for (const auto& d : checkpointables)
    if (d.name == name) return &d;
  return nullptr;
}

std::size_t LoadPlan::directive_count() const {
  std::size_t n = 0;
  for (const auto& [name, item] : items) n += item.directives.size();
  return n;
}

CheckpointMetadata read_metadata(StorageBackend& backend, const std::string& path) {
  if (!is_finalized(backend, path)) fail(ErrorCode::not_found, "no finalized checkpoint at " + path);
  CheckpointMetadata meta;
  meta.path = path;
  meta.global = get_json(backend, join_key(path, kGlobalMetadataKey));
  meta.index = MergedIndex::from_json(get_json(backend, join_key(path, kMergedIndexKey)));
  try {
    if (meta.global.at("format") != kCheckpointFormat)
      fail(ErrorCode::parse, "unsupported checkpoint format " + meta.global.at("format").dump());
    meta.process_count = meta.global.at("process_count").get<int>();
    for (const auto& d : meta.global.at("checkpointables"))
      meta.checkpointables.push_back({d.at("name").get<std::string>(), d.at("handler").get<std::string>()});
    for (const auto& [name, t] : meta.global.at("trees").items()) {
      TreeMetadata tm;
      AbstractTree structure = structure_from_json(t.at("structure"));
      for (const auto& [p, v] : t.at("inline").items()) tm.inline_leaves.emplace(p, leaf_value_from_json(v));
      tm.structure = map_leaves(structure, [&](const std::string& p, const AbstractLeaf& leaf) {
        const std::string full = full_leaf_path(name, p);
        AbstractLeaf out = leaf;
        if (leaf.kind == LeafKind::dense_array) {
          auto it = meta.index.arrays.find(full);
          if (it == meta.index.arrays.end())
            fail(ErrorCode::corruption, "merged index has no entry for leaf '" + full + "'");
          if (it->second.meta.global_shape != leaf.shape.value_or(Shape{}) || it->second.meta.dtype != leaf.dtype)
            fail(ErrorCode::corruption, "merged index disagrees with the structure on leaf '" + full + "'");
          if (!it->second.sharding.is_null()) out.sharding = sharding_from_json(it->second.sharding);
        } else if (!tm.inline_leaves.count(p)) {
          fail(ErrorCode::corruption, "inline value missing for leaf '" + full + "'");
        }
        return out;
      });
      meta.trees.emplace(name, std::move(tm));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, "global metadata of " + path + ": " + e.what());
  }
  for (const auto& d : meta.checkpointables)
    if (d.handler == kTreeHandler && !meta.trees.count(d.name))
      fail(ErrorCode::corruption, "no structure recorded for '" + d.name + "'");
  return meta;
}

AbstractCheckpointables abstract_checkpointables(const CheckpointMetadata& meta) {
  AbstractCheckpointables out;
  for (const auto& d : meta.checkpointables) {
    if (d.handler == kTreeHandler) {
      out.emplace(d.name, meta.trees.at(d.name).structure);
    } else {
      out.emplace(d.name, AbstractDocument{});
    }
  }
  return out;
}

LoadPlan plan_load(const CheckpointMetadata& meta, const AbstractCheckpointables* abstract, const PlanOptions& options) {
  LoadPlan plan;
  plan.mode = options.mode;
  plan.broadcast = options.broadcast;
  auto plan_host = [&](const std::string& name, const std::string& handler) {
    plan.items.emplace(name, ItemPlan{name, handler, {}, {}});
  };
  if (!abstract) {
    for (const auto& d : meta.checkpointables) {
      if (d.handler == kTreeHandler) {
        plan.items.emplace(d.name, plan_tree(meta, d.name, nullptr, options));
      } else {
        plan_host(d.name, d.handler);
      }
    }
    return plan;
  }
  for (const auto& [name, value] : *abstract) {
    const CheckpointableDescriptor* d = meta.descriptor(name);
    const auto* tree = std::get_if<AbstractTree>(&value);
    if (!d) {
      if (options.mode == LoadMode::strict || !tree)
        fail(ErrorCode::structure_mismatch, "checkpoint has no checkpointable '" + name + "'");
      plan.items.emplace(name, plan_tree(meta, name, tree, options));
      continue;
    }
    if ((d->handler == kTreeHandler) != (tree != nullptr))
      fail(ErrorCode::structure_mismatch, "checkpointable '" + name + "' was saved by the " + d->handler + " handler");
    if (tree) {
      plan.items.emplace(name, plan_tree(meta, name, tree, options));
    } else {
      plan_host(name, d->handler);
    }
  }
  return plan;
}

namespace {

struct ReadSink {
  std::mutex mu;
  std::map<std::string, std::vector<std::pair<Box, Bytes>>> pieces;  // full leaf path -> pieces
  std::map<std::string, ReadStats> stats;

  void add(const std::string& leaf, Box box, Bytes data, const ReadStats* st) {
    std::lock_guard lk(mu);
    if (st) stats[leaf] += *st;
    pieces[leaf].emplace_back(std::move(box), std::move(data));
  }
};

void read_for_process(ProcessContext& ctx, const std::string& path, const CheckpointMetadata& meta,
                      const LoadPlan& plan, ReadSink& sink) {
  const int p = ctx.index();
  for (const auto& [name, item] : plan.items) {
    for (const auto& d : item.directives) {
      const std::string full = full_leaf_path(name, d.path);
      if (auto it = d.reads.find(p); it != d.reads.end()) {
        const ArrayIndex& index = meta.index.arrays.at(full);
        for (const Box& box : it->second) {
          ReadResult r = read_range(ctx.storage(), path, full, index, box);
          if (plan.broadcast) ctx.publish(box_message_key(full, box), r.data);
          sink.add(full, box, std::move(r.data), &r.stats);
        }
      }
    }
  }
  for (const auto& [name, item] : plan.items) {
    for (const auto& d : item.directives) {
      if (auto it = d.receives.find(p); it != d.receives.end()) {
        const std::string full = full_leaf_path(name, d.path);
        for (const Box& box : it->second) sink.add(full, box, ctx.receive(box_message_key(full, box)), nullptr);
      }
    }
  }
}

Leaf assemble_leaf(const std::string& item, const LeafDirective& d, const CheckpointMetadata& meta, ReadSink& sink) {
  if (d.placeholder) return Placeholder{};
  const std::string full = full_leaf_path(item, d.path);
  Leaf leaf;
  if (d.source->kind == LeafKind::dense_array) {
    DenseArray a(*d.source->dtype, *d.source->shape);
    const Box whole = full_box(a.shape());
    const std::size_t width = dtype_width(a.dtype());
    for (const auto& [box, bytes] : sink.pieces[full]) insert_box(a.mutable_bytes(), whole, box, bytes, width);
    leaf = std::move(a);
  } else {
    leaf = meta.trees.at(item).inline_leaves.at(d.path);
  }
  return d.cast ? cast_leaf(leaf, d.target) : leaf;
}

LoadResult load_native(SimulatedRuntime& rt, const std::string& path, const AbstractCheckpointables* abstract,
                       const LoadOptions& options) {
  StorageBackend& backend = rt.storage();
  CheckpointMetadata meta = read_metadata(backend, path);
  LoadResult result;
  result.plan = plan_load(meta, abstract, PlanOptions{options.mode, options.broadcast, options.mesh, rt.process_count()});

  ReadSink sink;
  auto task = [&](ProcessContext& ctx) { read_for_process(ctx, path, meta, result.plan, sink); };
  if (rt.mode() == ControllerMode::multi_controller) {
    rt.run("load " + path, task);
  } else {
    rt.run_on_workers("load " + path, task, rt.all_workers());
  }

  for (const auto& [name, item] : result.plan.items) {
    if (item.handler != kTreeHandler) {
      const AbstractCheckpointable* a = nullptr;
      if (abstract)
        if (auto it = abstract->find(name); it != abstract->end()) a = &it->second;
      BackendScope scope(backend, join_key(path, name));
      result.items.emplace(name, host_handler(item.handler).load(a, scope));
      continue;
    }
    std::vector<Leaf> leaves;
    ShardingMap shardings;
    for (const auto& d : item.directives) {
      leaves.push_back(assemble_leaf(name, d, meta, sink));
      if (d.target.sharding && !d.placeholder) shardings.emplace(d.path, *d.target.sharding);
    }
    result.items.emplace(name, TreeItem{unflatten<Leaf>(item.structure, std::move(leaves)), std::move(shardings)});
  }
  result.leaf_stats = std::move(sink.stats);
  for (const auto& [leaf, st] : result.leaf_stats) result.total += st;
  return result;
}

}  // namespace

LoadResult load(SimulatedRuntime& rt, const std::string& path, const AbstractCheckpointables* abstract,
                const LoadOptions& options) {
  LoadLayout layout = options.layout;
  if (layout == LoadLayout::automatic) {
    if (is_finalized(rt.storage(), path)) {
      layout = LoadLayout::native;
    } else if (looks_like_safetensors(rt.storage(), path)) {
      layout = LoadLayout::safetensors;
    } else {
      fail(ErrorCode::not_found, "no finalized checkpoint or safetensors file at " + path);
    }
  }
  if (layout == LoadLayout::native) return load_native(rt, path, abstract, options);

  const AbstractTree* tree = nullptr;
  if (abstract) {
    for (const auto& [name, value] : *abstract) {
      if (name != kSafetensorsItem || !std::holds_alternative<AbstractTree>(value))
        fail(ErrorCode::structure_mismatch, std::string("safetensors files hold a single tree named '") +
                                                kSafetensorsItem + "'");
      tree = &std::get<AbstractTree>(value);
    }
  }
  LoadResult result;
  auto before = rt.storage().counters().total;
  result.items.emplace(kSafetensorsItem, TreeItem{load_safetensors(rt.storage(), path, tree, options.mode), {}});
  auto delta = rt.storage().counters().total - before;
  result.total.bytes_loaded = delta.bytes_read;
  return result;
}

std::future<LoadResult> load_async(SimulatedRuntime& rt, const std::string& path,
                                   std::optional<AbstractCheckpointables> abstract, LoadOptions options) {
  const int actor = ActorScope::current();
  return std::async(std::launch::async, [&rt, path, abstract = std::move(abstract), options, actor] {
    ActorScope scope(actor);
    return load(rt, path, abstract ? &*abstract : nullptr, options);
  });
}

// ---------------------------------------------------------------------------
// safetensors

namespace {

constexpr std::uint64_t kMaxHeaderBytes = 100ull << 20;

std::optional<DType> safetensors_dtype(const std::string& s) {
  if (s == "F32") return DType::f32;
  if (s == "F64") return DType::f64;
  if (s == "I32") return DType::i32;
  if (s == "I64") return DType::i64;
  if (s == "U8") return DType::u8;
  if (s == "BOOL") return DType::boolean;
  return std::nullopt;
}

std::uint64_t read_u64_le(std::span<const std::byte> b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]);
  return v;
}

}  // namespace

SafetensorsHeader parse_safetensors_header(std::span<const std::byte> prefix, std::uint64_t file_size) {
  if (prefix.size() < 8 || file_size < 8) fail(ErrorCode::parse, "safetensors file shorter than its length prefix");
  SafetensorsHeader h;
  h.header_bytes = read_u64_le(prefix.first(8));
  if (h.header_bytes > kMaxHeaderBytes) fail(ErrorCode::parse, "safetensors header too large");
  if (h.header_bytes > file_size - 8) fail(ErrorCode::parse, "safetensors header runs past end of file");
  if (prefix.size() < 8 + h.header_bytes) fail(ErrorCode::parse, "safetensors header truncated");
  h.data_offset = 8 + h.header_bytes;
  const std::uint64_t data_size = file_size - h.data_offset;

  json doc;
  try {
    doc = json::parse(std::string_view(reinterpret_cast<const char*>(prefix.data() + 8), h.header_bytes));
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("safetensors header is not JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorCode::parse, "safetensors header must be a JSON object");
  try {
    for (const auto& [name, v] : doc.items()) {
      if (name == "__metadata__") {
        if (!v.is_object()) fail(ErrorCode::parse, "__metadata__ must be an object");
        for (const auto& [k, s] : v.items()) {
          if (!s.is_string()) fail(ErrorCode::parse, "__metadata__ values must be strings");
          h.metadata.emplace(k, s.get<std::string>());
        }
        continue;
      }
      if (name.empty() || name.find('/') != std::string::npos)
        fail(ErrorCode::parse, "unsupported tensor name '" + name + "'");
      if (!v.is_object()) fail(ErrorCode::parse, "tensor entry '" + name + "' must be an object");
      SafetensorsEntry e;
      e.name = name;
      auto dt = safetensors_dtype(v.at("dtype").get<std::string>());
      if (!dt) fail(ErrorCode::parse, "tensor '" + name + "' has unsupported dtype " + v.at("dtype").dump());
      e.dtype = *dt;
      for (const auto& d : v.at("shape")) {
        if (!d.is_number_integer() || d.get<std::int64_t>() < 0)
          fail(ErrorCode::parse, "tensor '" + name + "' has an invalid shape");
        e.shape.push_back(d.get<std::int64_t>());
      }
      const auto& off = v.at("data_offsets");
      if (!off.is_array() || off.size() != 2 || !off[0].is_number_unsigned() || !off[1].is_number_unsigned())
        fail(ErrorCode::parse, "tensor '" + name + "' has invalid data_offsets");
      e.begin = off[0].get<std::uint64_t>();
      e.end = off[1].get<std::uint64_t>();
      if (e.end < e.begin) fail(ErrorCode::parse, "tensor '" + name + "' has reversed data_offsets");
      if (e.end > data_size) fail(ErrorCode::parse, "tensor '" + name + "' extends past the end of the data section");
      const auto expected = static_cast<std::uint64_t>(num_elements(e.shape)) * dtype_width(e.dtype);
      if (e.end - e.begin != expected)
        fail(ErrorCode::parse, "tensor '" + name + "' spans " + std::to_string(e.end - e.begin) + " bytes, shape needs " +
                                   std::to_string(expected));
      h.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("malformed safetensors entry: ") + e.what());
  }
  std::vector<const SafetensorsEntry*> by_offset;
  for (const auto& e : h.entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(), [](auto* a, auto* b) {
    return std::tie(a->begin, a->end) < std::tie(b->begin, b->end);
  });
  std::uint64_t cursor = 0;
  for (const auto* e : by_offset) {
    if (e->begin < cursor) fail(ErrorCode::parse, "tensor '" + e->name + "' overlaps another tensor");
    if (e->begin > cursor) fail(ErrorCode::parse, "gap in data section before tensor '" + e->name + "'");
    cursor = e->end;
  }
  if (cursor != data_size) fail(ErrorCode::parse, "data section has " + std::to_string(data_size - cursor) +
                                                      " unindexed trailing bytes");
  return h;
}

bool looks_like_safetensors(StorageBackend& backend, const std::string& key) {
  auto info = backend.stat(key);
  if (!info || info->is_directory || info->size < 10) return false;
  Bytes head = backend.get_range(key, 0, 9);
  std::uint64_t n = read_u64_le(std::span<const std::byte>(head).first(8));
  return n + 8 <= info->size && static_cast<char>(head[8]) == '{';
}

CheckpointTree load_safetensors(StorageBackend& backend, const std::string& key, const AbstractTree* abstract,
                                LoadMode mode) {
  auto info = backend.stat(key);
  if (!info || info->is_directory) fail(ErrorCode::not_found, "no safetensors file at " + key);
  if (info->size < 8) fail(ErrorCode::parse, "safetensors file shorter than its length prefix");
  Bytes len = backend.get_range(key, 0, 8);
  std::uint64_t n = read_u64_le(len);
  if (n > kMaxHeaderBytes || n > info->size - 8) fail(ErrorCode::parse, "safetensors header runs past end of file");
  Bytes prefix = len;
  Bytes header = backend.get_range(key, 8, n);
  prefix.insert(prefix.end(), header.begin(), header.end());
  SafetensorsHeader h = parse_safetensors_header(prefix, info->size);

  std::map<std::string, const SafetensorsEntry*> by_name;
  for (const auto& e : h.entries) by_name.emplace(e.name, &e);
  auto read_entry = [&](const SafetensorsEntry& e) {
    Bytes data = e.end > e.begin ? backend.get_range(key, h.data_offset + e.begin, e.end - e.begin) : Bytes{};
    return DenseArray(e.dtype, e.shape, std::move(data));
  };

  if (!abstract) {
    std::vector<std::pair<std::string, Leaf>> leaves;
    for (const auto& [name, e] : by_name) leaves.emplace_back(name, read_entry(*e));
    return leaves.empty() ? CheckpointTree::empty(NodeKind::mapping) : tree_from_paths(leaves);
  }

  std::set<std::string> requested;
  for_each_leaf(*abstract, [&](const std::string& p, const AbstractLeaf&) { requested.insert(p); });
  std::vector<std::string> missing, extra;
  for (const auto& [name, e] : by_name)
    if (!requested.count(name)) missing.push_back(name);
  for (const auto& p : requested)
    if (!by_name.count(p)) extra.push_back(p);
  if (mode == LoadMode::strict && (!missing.empty() || !extra.empty()))
    fail(ErrorCode::structure_mismatch, "abstract tree does not match safetensors file: missing " + join_list(missing) +
                                            ", unexpected " + join_list(extra));
  return map_leaves(*abstract, [&](const std::string& p, const AbstractLeaf& want) -> Leaf {
    auto it = by_name.find(p);
    if (it == by_name.end()) return Placeholder{};
    const auto& e = *it->second;
    AbstractLeaf source = AbstractLeaf::array(e.shape, e.dtype);
    AbstractLeaf target = resolve_target(p, source, want);
    Leaf leaf = read_entry(e);
    return target.kind != LeafKind::dense_array || target.dtype != e.dtype ? cast_leaf(leaf, target) : leaf;
  });
}

}  // namespace shardckpt
