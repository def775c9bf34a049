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

#pragma once

#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shardckpt/chunkstore.hpp"
#include "shardckpt/handlers.hpp"
#include "shardckpt/runtime.hpp"
#include "shardckpt/sharding.hpp"

namespace shardckpt {

inline constexpr const char* kCheckpointFormat = "shardckpt/1";
inline constexpr const char* kGlobalMetadataKey = "global_metadata.json";
inline constexpr const char* kMergedIndexKey = "merged_index.json";
inline constexpr const char* kCommitKey = "COMMIT";

/// Names of the actions only the leader (or controller) performs.
inline constexpr const char* kActionCreateDir = "create_temp_dir";
inline constexpr const char* kActionGlobalMetadata = "write_global_metadata";
inline constexpr const char* kActionMerge = "merge_index";
inline constexpr const char* kActionCommit = "commit";

struct SaveOptions {
  Layout layout = Layout::per_leaf;
  /// Read-subchunk target; nullopt disables subchunking.
  std::optional<std::uint64_t> subchunk_target_bytes;
  bool replica_parallel = false;
  bool async = true;
  std::uint64_t target_file_bytes = kDefaultTargetFileBytes;
  /// Keep the temporary directory of a failed save for inspection.
  bool retain_temp_on_failure = false;
  /// Test hook: skips the barrier between the existence check and temp
  /// directory creation, re-opening the race it guards against.
  bool unsafe_skip_existence_barrier = false;
};

enum class SavePhase { validating, snapshotted, writing, merging, finalized, failed };
std::string_view save_phase_name(SavePhase phase);

struct SaveDiagnostics {
  std::string temp_path;
  /// Per process: whether this save's temp directory was already visible
  /// when the process ran its existence check.
  std::vector<bool> saw_temp_at_check;
};

struct SaveState;

class SaveHandle {
 public:
  SaveHandle() = default;
  explicit SaveHandle(std::shared_ptr<SaveState> state) : state_(std::move(state)) {}

  /// Joins the background phase. A deferred failure is thrown by the first
  /// call only; later calls return immediately.
  void wait();
  bool done() const;
  SavePhase phase() const;
  const std::string& path() const;
  SaveDiagnostics diagnostics() const;

 private:
  std::shared_ptr<SaveState> state_;
};

/// Commit style of the backend: atomic rename of `<path>.tmp.<nonce>`, or
/// a COMMIT file written last into `<path>` itself.
bool uses_atomic_rename(const StorageBackend& backend);

/// True when `path` holds a committed checkpoint.
bool is_finalized(StorageBackend& backend, const std::string& path);

/// The per-leaf chunk grid a save uses for an array.
ChunkGrid plan_chunk_grid(const Sharding& sharding, DType dtype, const SaveOptions& options);

/// Default sharding for an array saved without one: replicated over a
/// one-device-per-process mesh whose single axis is the replica axis.
Sharding default_sharding(const Shape& shape, int process_count);

/// Saves `items` to `path`. Validation, the existence check, temp-dir
/// creation, and the snapshot run before this returns; writes, merge, and
/// commit run in the background when options.async is set. Synchronous
/// failures throw; background failures surface from SaveHandle::wait().
/// `on_complete` runs on the background context with the outcome.
SaveHandle save(SimulatedRuntime& runtime, const std::string& path, const Checkpointables& items,
                const SaveOptions& options = {}, std::function<void(bool ok)> on_complete = nullptr);

}  // namespace shardckpt
