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

#include "shardckpt/save.hpp"

#include <atomic>
#include <condition_variable>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "shardckpt/error.hpp"

namespace shardckpt {

using nlohmann::json;

std::string_view save_phase_name(SavePhase phase) {
  switch (phase) {
    case SavePhase::validating: return "validating";
    case SavePhase::snapshotted: return "snapshotted";
    case SavePhase::writing: return "writing";
    case SavePhase::merging: return "merging";
    case SavePhase::finalized: return "finalized";
    case SavePhase::failed: return "failed";
  }
  return "?";
}

struct SaveState {
  std::string path;
  std::string temp_path;

  mutable std::mutex mu;
  SavePhase phase = SavePhase::validating;
  bool finished = false;
  std::exception_ptr error;
  bool error_reported = false;
  SaveDiagnostics diagnostics;

  std::mutex join_mu;
  std::thread worker;

  void set_phase(SavePhase p) {
    std::lock_guard lk(mu);
    if (phase != SavePhase::failed) phase = p;
  }

  ~SaveState() {
    if (worker.joinable()) {
      if (worker.get_id() == std::this_thread::get_id()) {
        worker.detach();
      } else {
        worker.join();
      }
    }
  }
};

void SaveHandle::wait() {
  if (!state_) return;
  {
    std::lock_guard lk(state_->join_mu);
    if (state_->worker.joinable()) state_->worker.join();
  }
  std::lock_guard lk(state_->mu);
  if (state_->error && !state_->error_reported) {
    state_->error_reported = true;
    std::rethrow_exception(state_->error);
  }
}

bool SaveHandle::done() const {
  if (!state_) return true;
  std::lock_guard lk(state_->mu);
  return state_->finished;
}

SavePhase SaveHandle::phase() const {
  if (!state_) return SavePhase::finalized;
  std::lock_guard lk(state_->mu);
  return state_->phase;
}

const std::string& SaveHandle::path() const {
  static const std::string empty;
  return state_ ? state_->path : empty;
}

SaveDiagnostics SaveHandle::diagnostics() const {
  if (!state_) return {};
  std::lock_guard lk(state_->mu);
  return state_->diagnostics;
}

bool uses_atomic_rename(const StorageBackend& backend) { return backend.supports_atomic_rename(); }

bool is_finalized(StorageBackend& backend, const std::string& path) {
  if (backend.exists(join_key(path, kCommitKey))) return true;
  std::string key = join_key(path, kGlobalMetadataKey);
  if (!backend.exists(key)) return false;
  try {
    json doc = json::parse(to_string(backend.get(key)));
    return doc.value("commit", "") == "rename";
  } catch (const json::exception&) {
    return false;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::not_found) return false;
    throw;
  }
}

Sharding default_sharding(const Shape& shape, int process_count) {
  Mesh mesh = Mesh::uniform({{"process", process_count}}, process_count, "process");
  return Sharding::replicated(std::move(mesh), shape);
}

ChunkGrid plan_chunk_grid(const Sharding& sharding, DType dtype, const SaveOptions& options) {
  Shape write = sharding.shard_shape();
  if (options.replica_parallel && !write.empty() && num_elements(write) > 0) {
    const auto replicas = static_cast<std::int64_t>(sharding.mesh().device_count()) /
                          num_elements(sharding.partition_counts());
    if (replicas > 1) {
      std::size_t d = segment_dimension(full_box(write));
      std::int64_t ext = write[d];
      std::int64_t seg = (ext + replicas - 1) / replicas;
      write[d] = std::gcd(seg, ext);
    }
  }
  Shape read = options.subchunk_target_bytes ? choose_chunk_shape(write, dtype, *options.subchunk_target_bytes) : write;
  return ChunkGrid{std::move(write), std::move(read)};
}

namespace {

struct ArrayPlan {
  std::string full_path;  // "<item>/<leaf>"
  DenseArray array;       // shares the caller's buffer until snapshotted
  ArrayStorageMetadata meta;
  json sharding;
  std::vector<std::vector<Box>> boxes;  // per process
};

struct Piece {
  Box box;
  Bytes bytes;
};

struct ArraySnapshot {
  const ArrayPlan* plan;
  std::vector<Piece> pieces;
};

struct SaveWork {
  std::vector<ArrayPlan> arrays;
  std::vector<std::vector<ArraySnapshot>> snapshots;  // per process
  json global_metadata;
  std::map<std::string, std::map<std::string, Bytes>> host_objects;  // item -> object -> bytes
  std::atomic<bool> committed{false};
};

std::string full_leaf_path(const std::string& item, const std::string& leaf) {
  return leaf.empty() ? item : item + "/" + leaf;
}

std::string make_nonce() {
  static std::atomic<std::uint64_t> counter{0};
  std::random_device rd;
  std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^ (counter.fetch_add(1) * 0x9E3779B97F4A7C15ull);
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

// Boxes process `p` writes for one array.
std::vector<std::vector<Box>> plan_boxes(const Sharding& s, bool replica_parallel, int process_count) {
  std::vector<std::vector<Box>> out(static_cast<std::size_t>(process_count));
  for (const Shard& shard : shards_of(s)) {
    if (volume(shard.ranges) == 0) continue;
    auto& mine = out[static_cast<std::size_t>(shard.process)];
    if (!replica_parallel) {
      if (shard.replica_ordinal == 0) mine.push_back(shard.ranges);
      continue;
    }
    if (auto seg = replica_segments(shard.ranges, shard.replica_count, shard.replica_ordinal)) mine.push_back(*seg);
  }
  return out;
}

void prepare(SimulatedRuntime& rt, const Checkpointables& items, const SaveOptions& options, SaveWork& work) {
  const int P = rt.process_count();
  if (items.empty()) fail(ErrorCode::invalid_argument, "nothing to save");
  if (options.target_file_bytes == 0) fail(ErrorCode::invalid_argument, "target_file_bytes must be positive");
  if (options.subchunk_target_bytes && *options.subchunk_target_bytes == 0)
    fail(ErrorCode::invalid_argument, "subchunk target must be positive");

  json descriptors = json::array();
  json trees = json::object();
  for (const auto& [name, item] : items) {
    validate_checkpointable_name(name);
    const std::string handler = handler_id_of(item);
    descriptors.push_back({{"name", name}, {"handler", handler}});
    if (handler != kTreeHandler) {
      if (const auto* obj = std::get_if<std::shared_ptr<StatefulCheckpointable>>(&item); obj && !*obj)
        fail(ErrorCode::invalid_argument, "checkpointable '" + name + "' is a null object");
      BufferScope buffer;
      host_handler(handler).save(item, buffer);
      work.host_objects[name] = buffer.objects();
      continue;
    }
    const auto& t = std::get<TreeItem>(item);
    AbstractTree abstract = abstract_of(t.tree, t.shardings);
    json inline_leaves = json::object();
    for_each_leaf(t.tree, [&](const std::string& path, const Leaf& leaf) {
      switch (leaf_kind(leaf)) {
        case LeafKind::placeholder:
          fail(ErrorCode::invalid_argument, "cannot save placeholder at '" + full_leaf_path(name, path) + "'");
        case LeafKind::scalar:
        case LeafKind::text:
          inline_leaves[path] = leaf_value_to_json(leaf);
          return;
        case LeafKind::dense_array:
          break;
      }
      const auto& array = std::get<DenseArray>(leaf);
      auto it = t.shardings.find(path);
      Sharding s = it != t.shardings.end() ? it->second : default_sharding(array.shape(), P);
      if (s.mesh().process_count() != P)
        fail(ErrorCode::topology_mismatch, "sharding of '" + full_leaf_path(name, path) + "' spans " +
                                               std::to_string(s.mesh().process_count()) + " processes, runtime has " +
                                               std::to_string(P));
      ChunkGrid grid = plan_chunk_grid(s, array.dtype(), options);
      ArrayPlan plan;
      plan.full_path = full_leaf_path(name, path);
      plan.array = array;
      plan.meta = ArrayStorageMetadata{array.shape(), array.dtype(), grid.write_chunk, grid.read_chunk, options.layout};
      plan.meta.validate();
      plan.sharding = to_json(s);
      plan.boxes = plan_boxes(s, options.replica_parallel, P);
      work.arrays.push_back(std::move(plan));
    });
    trees[name] = {{"structure", structure_to_json(abstract)}, {"inline", std::move(inline_leaves)}};
  }
  work.global_metadata = {{"format", kCheckpointFormat},
                          {"commit", rt.storage().supports_atomic_rename() ? "rename" : "indicator"},
                          {"process_count", P},
                          {"layout", layout_name(options.layout)},
                          {"checkpointables", std::move(descriptors)},
                          {"trees", std::move(trees)}};
  work.snapshots.assign(static_cast<std::size_t>(P), {});
}

void snapshot_process(SaveWork& work, int p) {
  auto& out = work.snapshots[static_cast<std::size_t>(p)];
  out.clear();
  for (const auto& plan : work.arrays) {
    ArraySnapshot snap{&plan, {}};
    const Box whole = full_box(plan.array.shape());
    const std::size_t width = dtype_width(plan.array.dtype());
    for (const Box& b : plan.boxes[static_cast<std::size_t>(p)]) {
      snap.pieces.push_back(Piece{b, extract_box(plan.array.bytes(), whole, b, width)});
    }
    out.push_back(std::move(snap));
  }
}

void existence_check(StorageBackend& backend, const std::string& path, const std::string& temp_path, bool& saw_temp) {
  if (is_finalized(backend, path)) fail(ErrorCode::already_exists, "a finalized checkpoint already exists at " + path);
  saw_temp = backend.exists(temp_path);
}

void create_temp(SimulatedRuntime& rt, const std::string& path, const std::string& temp_path, bool rename, int actor) {
  StorageBackend& backend = rt.storage();
  // Indicator-style saves reuse the final path; clear a stale attempt.
  if (!rename && backend.exists(path)) backend.remove(path);
  backend.create_dir(temp_path);
  rt.record_action(kActionCreateDir, actor);
}

void write_host_data(SimulatedRuntime& rt, SaveWork& work, const std::string& temp_path, int actor) {
  StorageBackend& backend = rt.storage();
  backend.put(join_key(temp_path, kGlobalMetadataKey), to_bytes(work.global_metadata.dump()));
  rt.record_action(kActionGlobalMetadata, actor);
  for (const auto& [name, objects] : work.host_objects) {
    for (const auto& [obj, bytes] : objects) backend.put(join_key(join_key(temp_path, name), obj), bytes);
  }
}

void write_process(StorageBackend& backend, SaveWork& work, const SaveOptions& options, const std::string& temp_path,
                   int p) {
  ChunkWriter writer(backend, temp_path, p, options.layout, options.target_file_bytes);
  for (auto& snap : work.snapshots[static_cast<std::size_t>(p)]) {
    if (snap.pieces.empty()) {
      writer.declare_array(snap.plan->full_path, snap.plan->meta, snap.plan->sharding);
      continue;
    }
    std::vector<ChunkWriter::ShardData> shards;
    for (const auto& piece : snap.pieces) shards.push_back({piece.box, piece.bytes});
    writer.write_array(snap.plan->full_path, shards, snap.plan->meta, snap.plan->sharding);
  }
  writer.finish();
  work.snapshots[static_cast<std::size_t>(p)].clear();
}

void finalize(SimulatedRuntime& rt, SaveState& state, SaveWork& work, bool rename, int actor) {
  StorageBackend& backend = rt.storage();
  state.set_phase(SavePhase::merging);
  MergedIndex merged = merge_process_indices(backend, state.temp_path, rt.process_count());
  backend.put(join_key(state.temp_path, kMergedIndexKey), to_bytes(merged.to_json().dump()));
  rt.record_action(kActionMerge, actor);
  if (rename) {
    backend.rename(state.temp_path, state.path);
  } else {
    backend.put(join_key(state.path, kCommitKey), to_bytes(json{{"format", kCheckpointFormat}}.dump()));
  }
  work.committed = true;
  rt.record_action(kActionCommit, actor);
  state.set_phase(SavePhase::finalized);
}

void cleanup_after_failure(StorageBackend& backend, const SaveState& state, const SaveWork& work,
                           const SaveOptions& options, bool temp_created) {
  if (options.retain_temp_on_failure || work.committed || !temp_created) return;
  try {
    backend.remove(state.temp_path);
  } catch (const Error&) {
    // The backend may be the thing that failed; leftovers are swept later.
  }
}

}  // namespace

SaveHandle save(SimulatedRuntime& rt, const std::string& path, const Checkpointables& items,
                const SaveOptions& options, std::function<void(bool ok)> on_complete) {
  if (path.empty() || path.back() == '/') fail(ErrorCode::invalid_argument, "bad checkpoint path '" + path + "'");
  auto state = std::make_shared<SaveState>();
  state->path = path;
  auto work = std::make_shared<SaveWork>();
  prepare(rt, items, options, *work);

  const int P = rt.process_count();
  const bool rename = rt.storage().supports_atomic_rename();
  const bool multi = rt.mode() == ControllerMode::multi_controller;
  state->diagnostics.saw_temp_at_check.assign(static_cast<std::size_t>(P), false);
  std::atomic<bool> temp_created{false};

  try {
    if (multi) {
      std::mutex diag_mu;
      rt.run("save-sync " + path, [&](ProcessContext& ctx) {
        Bytes nonce;
        if (ctx.is_leader()) {
          Bytes n = to_bytes(make_nonce());
          nonce = ctx.leader_broadcast(path + "/nonce", &n);
        } else {
          nonce = ctx.leader_broadcast(path + "/nonce");
        }
        const std::string temp = rename ? path + ".tmp." + to_string(nonce) : path;
        if (ctx.is_leader()) {
          std::lock_guard lk(state->mu);
          state->temp_path = temp;
          state->diagnostics.temp_path = temp;
        }
        ctx.maybe_yield();
        bool saw = false;
        existence_check(ctx.storage(), path, temp, saw);
        {
          std::lock_guard lk(diag_mu);
          state->diagnostics.saw_temp_at_check[static_cast<std::size_t>(ctx.index())] = saw;
        }
        if (!options.unsafe_skip_existence_barrier) ctx.sync(path + "/existence_check");
        if (ctx.is_leader()) {
          create_temp(rt, path, temp, rename, ctx.index());
          temp_created = true;
        }
        ctx.sync(path + "/dir_created");
        snapshot_process(*work, ctx.index());
      });
    } else {
      const std::string temp = rename ? path + ".tmp." + make_nonce() : path;
      state->temp_path = temp;
      state->diagnostics.temp_path = temp;
      bool saw = false;
      existence_check(rt.storage(), path, temp, saw);
      state->diagnostics.saw_temp_at_check.assign(static_cast<std::size_t>(P), saw);
      create_temp(rt, path, temp, rename, ActorScope::current());
      temp_created = true;
      for (int p = 0; p < P; ++p) snapshot_process(*work, p);
    }
  } catch (...) {
    cleanup_after_failure(rt.storage(), *state, *work, options, temp_created);
    throw;
  }
  state->set_phase(SavePhase::snapshotted);

  auto background = [&rt, state, work, options, rename, multi, on_complete = std::move(on_complete)] {
    bool ok = true;
    try {
      state->set_phase(SavePhase::writing);
      if (multi) {
        rt.run("save-async " + state->path, [&](ProcessContext& ctx) {
          if (ctx.is_leader()) write_host_data(rt, *work, state->temp_path, ctx.index());
          write_process(ctx.storage(), *work, options, state->temp_path, ctx.index());
          ctx.sync(state->path + "/writes_done");
          if (ctx.is_leader()) finalize(rt, *state, *work, rename, ctx.index());
          ctx.sync(state->path + "/finalized");
        });
      } else {
        const int controller = ActorScope::current();
        write_host_data(rt, *work, state->temp_path, controller);
        rt.run_on_workers(
            "save-write " + state->path,
            [&](ProcessContext& ctx) { write_process(ctx.storage(), *work, options, state->temp_path, ctx.index()); },
            rt.all_workers());
        finalize(rt, *state, *work, rename, controller);
      }
    } catch (...) {
      ok = false;
      cleanup_after_failure(rt.storage(), *state, *work, options, true);
      std::lock_guard lk(state->mu);
      state->error = std::current_exception();
      state->phase = SavePhase::failed;
    }
    if (on_complete) {
      try {
        on_complete(ok);
      } catch (...) {
      }
    }
    std::lock_guard lk(state->mu);
    state->finished = true;
  };

  if (options.async) {
    const int actor = ActorScope::current();
    state->worker = std::thread([background, actor] {
      ActorScope scope(actor);
      background();
    });
  } else {
    background();
  }
  return SaveHandle(state);
}

}  // namespace shardckpt
