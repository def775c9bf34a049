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

#include <future>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shardckpt/chunkstore.hpp"
#include "shardckpt/handlers.hpp"
#include "shardckpt/runtime.hpp"
#include "shardckpt/sharding.hpp"
#include "shardckpt/tree.hpp"

namespace shardckpt {

enum class LoadMode { strict, partial };
enum class LoadLayout { automatic, native, safetensors };

std::string_view load_layout_name(LoadLayout layout);  // "auto" | "native" | "safetensors"
LoadLayout parse_load_layout(std::string_view name);

/// A saved tree checkpointable as described by its metadata.
struct TreeMetadata {
  /// Structure with saved shapes, dtypes, and shardings on array leaves.
  AbstractTree structure;
  /// Inline scalar and text leaves by leaf path.
  std::map<std::string, Leaf> inline_leaves;
};

struct CheckpointMetadata {
  std::string path;
  nlohmann::json global;
  std::vector<CheckpointableDescriptor> checkpointables;
  std::map<std::string, TreeMetadata> trees;
  MergedIndex index;
  int process_count = 0;

  const CheckpointableDescriptor* descriptor(const std::string& name) const;
};

/// Reads global metadata and the merged index of the finalized checkpoint
/// at `path`. Reads no chunk payload. Throws Error(not_found) when nothing
/// is finalized there and Error(corruption) when the index does not cover
/// an array leaf of the structure.
CheckpointMetadata read_metadata(StorageBackend& backend, const std::string& path);

/// Abstract view of every checkpointable, as a handler's metadata() would
/// report it.
AbstractCheckpointables abstract_checkpointables(const CheckpointMetadata& meta);

struct LeafDirective {
  std::string path;       // leaf path inside the checkpointable
  AbstractLeaf target;    // what the loaded leaf must satisfy
  std::optional<AbstractLeaf> source;  // saved leaf; absent for placeholders
  bool placeholder = false;
  bool cast = false;
  /// Arrays: boxes each process reads, and boxes it receives from a
  /// replica group 0 process when broadcasting.
  std::map<int, std::vector<Box>> reads;
  std::map<int, std::vector<Box>> receives;
};

struct ItemPlan {
  std::string name;
  std::string handler;
  AbstractTree structure;  // trees: the shape of the loaded result
  std::vector<LeafDirective> directives;
};

struct LoadPlan {
  LoadMode mode = LoadMode::strict;
  bool broadcast = false;
  std::map<std::string, ItemPlan> items;

  std::size_t directive_count() const;
};

struct PlanOptions {
  LoadMode mode = LoadMode::strict;
  bool broadcast = false;
  /// Topology the caller runs on; when absent, a mesh with the runtime's
  /// process count is assumed for topology validation.
  std::optional<Mesh> mesh;
  int process_count = 1;
};

/// Builds the loading plan. With an abstract value, structure is validated
/// and the abstract leaves' dtypes, shapes, and shardings are applied;
/// without one the saved shardings are reused after a topology check.
/// `abstract` may name a subset of the checkpointables in partial mode.
LoadPlan plan_load(const CheckpointMetadata& meta, const AbstractCheckpointables* abstract, const PlanOptions& options);

struct LoadOptions {
  LoadMode mode = LoadMode::strict;
  LoadLayout layout = LoadLayout::automatic;
  bool broadcast = false;
  std::optional<Mesh> mesh;
};

struct LoadResult {
  Checkpointables items;
  LoadPlan plan;
  /// Per "<item>/<leaf>" read statistics summed over processes.
  std::map<std::string, ReadStats> leaf_stats;
  ReadStats total;
};

/// Loads the checkpoint (or safetensors file) at `path`. Every process
/// reads the ranges of its own devices; results are assembled only after
/// all processes finish.
LoadResult load(SimulatedRuntime& runtime, const std::string& path, const AbstractCheckpointables* abstract = nullptr,
                const LoadOptions& options = {});

std::future<LoadResult> load_async(SimulatedRuntime& runtime, const std::string& path,
                                   std::optional<AbstractCheckpointables> abstract, LoadOptions options = {});

/// Item name under which a safetensors file's tensors are returned.
inline constexpr const char* kSafetensorsItem = "tensors";

struct SafetensorsEntry {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::uint64_t begin = 0;  // offsets relative to the data section
  std::uint64_t end = 0;
};

struct SafetensorsHeader {
  std::uint64_t header_bytes = 0;
  std::uint64_t data_offset = 0;  // 8 + header_bytes
  std::vector<SafetensorsEntry> entries;  // sorted by name
  std::map<std::string, std::string> metadata;
};

/// Validates a safetensors header against the total file size. Throws
/// Error(parse) on any structural problem.
SafetensorsHeader parse_safetensors_header(std::span<const std::byte> prefix, std::uint64_t file_size);

/// Flat mapping tree of the file's tensors. With an abstract tree the same
/// structure and cast rules as native loads apply.
CheckpointTree load_safetensors(StorageBackend& backend, const std::string& key, const AbstractTree* abstract = nullptr,
                                LoadMode mode = LoadMode::strict);

bool looks_like_safetensors(StorageBackend& backend, const std::string& key);

}  // namespace shardckpt
