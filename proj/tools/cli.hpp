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
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shardckpt/load.hpp"
#include "shardckpt/save.hpp"
#include "shardckpt/storage.hpp"

namespace shardckpt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// One array of a synthetic benchmark model.
struct ModelLeafSpec {
  std::string path;
  Shape shape;
  DType dtype = DType::f32;
  /// Mesh axis per dimension ("fsdp", "replica") or none.
  std::vector<std::optional<std::string>> partition;
};

/// Parses `[{"path", "shape", "dtype", "partition"}, ...]`.
std::vector<ModelLeafSpec> parse_model_spec(const nlohmann::json& doc);
std::vector<ModelLeafSpec> default_model_spec();

struct InspectRow {
  std::string item;
  std::string path;
  std::string kind;
  std::string shape;
  std::string dtype;
  std::string sharding;
  std::string write_chunk;
  std::string read_chunk;
  std::string value;  // inline scalars and text
};

/// Rows for every leaf of every tree checkpointable; reads metadata only.
std::vector<InspectRow> inspect_rows(StorageBackend& backend, const std::string& path);
void print_inspect(const std::vector<InspectRow>& rows, std::ostream& out);

/// Empty when the checkpoint is intact; otherwise one line per problem.
/// Throws Error(not_found) when nothing exists at `path`.
std::vector<std::string> validate_checkpoint(StorageBackend& backend, const std::string& path);

/// Simulated-runtime settings shared by the commands that run one.
struct RuntimeFlags {
  ControllerMode mode = ControllerMode::multi_controller;
  std::optional<std::uint64_t> scheduler_seed;
  std::int64_t barrier_timeout_ms = 30000;
  /// "<process>:<label substring>" entries.
  std::vector<std::string> crash;
};

/// Parses "3:writes_done" into a crash point.
CrashPoint parse_crash_point(const std::string& text);
RuntimeOptions make_runtime_options(int processes, const RuntimeFlags& flags);

struct ReshardOptions {
  /// "[leaf=]c0,c1,..." partition counts per dimension. An entry without a
  /// leaf applies to every array of matching rank.
  std::vector<std::string> partitions;
  int processes = 1;
  Layout layout = Layout::per_leaf;
  std::optional<std::uint64_t> subchunk_target_bytes;
  bool replica_parallel = false;
  bool sync = false;
  RuntimeFlags runtime;
};

/// Sharding that splits dimension i into counts[i] parts over `processes`.
Sharding partition_sharding(const Shape& shape, const std::vector<std::int64_t>& counts, int processes);

/// Loads `src` onto the target partitioning and saves it to `dst`.
void reshard(const std::shared_ptr<StorageBackend>& backend, const std::string& src, const std::string& dst,
             const ReshardOptions& options);

struct BenchOptions {
  std::vector<ModelLeafSpec> model;
  int processes = 1;  // per replica group
  int replicas = 1;
  std::vector<std::string> strategies{"single-slice"};     // and/or "replica-parallel"
  std::vector<std::string> load_strategies{"direct"};      // and/or "broadcast"
  std::uint64_t seed = 0;
  Layout layout = Layout::per_leaf;
  std::optional<std::uint64_t> subchunk_target_bytes;
  std::string path = "bench";
  bool sync = false;
  RuntimeFlags runtime;
};

/// Runs the seeded save/load benchmark and returns the report document.
nlohmann::json run_bench(const std::shared_ptr<StorageBackend>& backend, const BenchOptions& options);
void print_bench_table(const nlohmann::json& report, std::ostream& out);

nlohmann::json counters_to_json(const IoCounters& c);

struct LoadCommandOptions {
  int processes = 1;
  LoadLayout layout = LoadLayout::automatic;
  bool partial = false;
  bool broadcast = false;
  /// Leaf-path prefixes ("<item>/<path>") to load; empty loads everything.
  /// Requires partial mode.
  std::vector<std::string> only;
  RuntimeFlags runtime;
};

struct LoadedLeaf {
  std::string path;  // "<item>/<leaf>"
  std::string kind;
  std::string dtype;
  std::string shape;
  std::string digest;  // FNV-1a 64 over the element bytes, or the value
};

struct LoadReport {
  std::vector<LoadedLeaf> leaves;
  ReadStats total;
  IoCounters counters;
};

/// Loads a checkpoint or safetensors file and summarizes every leaf.
LoadReport load_command(const std::shared_ptr<StorageBackend>& backend, const std::string& path,
                        const LoadCommandOptions& options);
void print_load_report(const LoadReport& report, std::ostream& out);

/// Entry point of the `shardckpt` tool.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace shardckpt::cli
