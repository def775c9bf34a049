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
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shardckpt/box.hpp"
#include "shardckpt/dtype.hpp"
#include "shardckpt/storage.hpp"

namespace shardckpt {

enum class Layout { per_leaf, aggregated };

std::string_view layout_name(Layout layout);  // "per-leaf" | "aggregated"
Layout parse_layout(std::string_view name);

inline constexpr std::uint64_t kDefaultTargetFileBytes = 64ull << 20;

struct ChunkGrid {
  Shape write_chunk;
  Shape read_chunk;
  friend bool operator==(const ChunkGrid&, const ChunkGrid&) = default;
};

struct ArrayStorageMetadata {
  Shape global_shape;
  DType dtype = DType::f32;
  Shape write_chunk;
  Shape read_chunk;
  Layout layout = Layout::per_leaf;

  /// Throws Error(invalid_argument) on rank mismatch or broken divisibility.
  void validate() const;
  /// Write chunks per dimension.
  Shape write_grid() const;
  std::uint64_t write_chunk_bytes() const;

  friend bool operator==(const ArrayStorageMetadata&, const ArrayStorageMetadata&) = default;
};

nlohmann::json to_json(const ArrayStorageMetadata& m);
ArrayStorageMetadata storage_metadata_from_json(const nlohmann::json& j);

/// Largest read chunk that evenly divides `shard_shape` and fits in
/// `target_bytes`: the outermost dimension with extent > 1 is divided by
/// its smallest prime factor until the chunk fits.
Shape choose_chunk_shape(const Shape& shard_shape, DType dtype, std::uint64_t target_bytes);

/// "0.3.1" for grid coordinate (0, 3, 1); "" for rank 0.
std::string coord_key(const std::vector<std::int64_t>& coords);
std::vector<std::int64_t> parse_coord_key(std::string_view key);
/// Per-leaf chunk object name: "c.0.3.1", or "c" for rank 0.
std::string chunk_object_name(const std::vector<std::int64_t>& coords);

/// Global index box covered by write chunk `coords`.
Box chunk_box(const ArrayStorageMetadata& meta, const std::vector<std::int64_t>& coords);

std::string process_dir(int process);  // "process_<i>"

struct FileSpan {
  std::string file_id;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  friend bool operator==(const FileSpan&, const FileSpan&) = default;
};

class AggregatedManifest {
 public:
  struct Entry {
    std::string key;  // "<leaf_path>/c.<coords>"
    FileSpan span;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  AggregatedManifest() = default;
  /// Sorts entries; throws Error(corruption) on duplicate keys or
  /// overlapping byte ranges within a file.
  AggregatedManifest(std::uint64_t target_file_bytes, std::vector<Entry> entries);

  /// Binary search; nullptr when absent.
  const FileSpan* find(std::string_view key) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::uint64_t target_file_bytes() const { return target_file_bytes_; }
  std::size_t file_count() const;

  nlohmann::json to_json() const;
  static AggregatedManifest from_json(const nlohmann::json& j);

 private:
  std::uint64_t target_file_bytes_ = kDefaultTargetFileBytes;
  std::vector<Entry> entries_;
};

/// Writes one process's chunks below `<ckpt>/process_<i>/`. In the
/// aggregated layout payloads are buffered and packed into data files by
/// finish(), in ascending chunk-key order; a new file starts whenever the
/// next chunk would push a nonempty file past the target.
class ChunkWriter {
 public:
  ChunkWriter(StorageBackend& backend, std::string checkpoint_prefix, int process, Layout layout,
              std::uint64_t target_file_bytes = kDefaultTargetFileBytes);

  struct ShardData {
    Box ranges;
    std::span<const std::byte> bytes;
  };

  /// Splits each shard into write chunks. Returns the keys written (per-leaf)
  /// or buffered chunk keys (aggregated). Throws on misalignment, size
  /// mismatch, or a chunk written twice.
  std::vector<std::string> write_array(const std::string& leaf_path, std::span<const ShardData> shards,
                                       const ArrayStorageMetadata& meta,
                                       const nlohmann::json& sharding = nullptr);

  /// Declares an array this process holds no chunks of, so its metadata is
  /// still recorded for cross-process agreement checks.
  void declare_array(const std::string& leaf_path, const ArrayStorageMetadata& meta,
                     const nlohmann::json& sharding = nullptr);

  /// Flushes aggregated data files and the manifest, then writes
  /// array_metadata.json. Returns every key written by finish().
  std::vector<std::string> finish();

  std::string prefix() const;

 private:
  struct ArrayRecord {
    ArrayStorageMetadata meta;
    nlohmann::json sharding;
    std::set<std::string> coords;
  };
  ArrayRecord& record_for(const std::string& leaf_path, const ArrayStorageMetadata& meta,
                          const nlohmann::json& sharding);

  StorageBackend& backend_;
  std::string checkpoint_prefix_;
  int process_;
  Layout layout_;
  std::uint64_t target_file_bytes_;
  std::map<std::string, ArrayRecord> arrays_;
  std::map<std::string, Bytes> pending_;  // aggregated: chunk key -> payload
  bool finished_ = false;
};

/// Greedy packing used by the aggregated layout: number of data files for
/// chunk lengths given in key order.
std::size_t packed_file_count(std::span<const std::uint64_t> lengths, std::uint64_t target_file_bytes);

struct ChunkLocation {
  int process = 0;
  std::optional<FileSpan> span;  // aggregated layout only
  friend bool operator==(const ChunkLocation&, const ChunkLocation&) = default;
};

struct ArrayIndex {
  ArrayStorageMetadata meta;
  nlohmann::json sharding;  // saved Sharding, or null
  std::map<std::string, ChunkLocation> chunks;  // coord_key -> location
};

struct MergedIndex {
  Layout layout = Layout::per_leaf;
  int process_count = 0;
  std::map<std::string, ArrayIndex> arrays;

  nlohmann::json to_json() const;
  static MergedIndex from_json(const nlohmann::json& j);
};

/// Builds the merged index from every process's array_metadata.json (and
/// manifest.json for aggregated checkpoints) under `checkpoint_prefix`.
/// Reads no chunk payload. Throws Error(not_found) for a missing process
/// document and Error(consistency) for disagreeing metadata, colliding
/// chunk claims, or incomplete chunk coverage.
MergedIndex merge_process_indices(StorageBackend& backend, const std::string& checkpoint_prefix,
                                  int process_count);

/// Storage key and byte span of a write chunk.
struct ChunkAddress {
  std::string key;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  bool whole_object = true;
};
ChunkAddress locate_chunk(const std::string& checkpoint_prefix, const std::string& leaf_path,
                          const ArrayIndex& index, const std::vector<std::int64_t>& coords);

struct ReadStats {
  std::uint64_t bytes_requested = 0;
  std::uint64_t bytes_loaded = 0;
  ReadStats& operator+=(const ReadStats& o) {
    bytes_requested += o.bytes_requested;
    bytes_loaded += o.bytes_loaded;
    return *this;
  }
  double overhead() const {
    return bytes_requested == 0 ? 1.0 : static_cast<double>(bytes_loaded) / static_cast<double>(bytes_requested);
  }
};

struct ReadResult {
  Bytes data;  // row-major over the requested box
  ReadStats stats;
};

/// Reads `range` of an array, fetching the minimal set of read chunks.
/// Subchunks that are contiguous inside their write chunk are fetched with
/// get_range (adjacent ones coalesced); otherwise the whole write chunk is
/// fetched once and sliced. Throws Error(corruption) for missing chunks.
ReadResult read_range(StorageBackend& backend, const std::string& checkpoint_prefix,
                      const std::string& leaf_path, const ArrayIndex& index, const Box& range);

/// Checks that every indexed chunk exists with the expected size. Returns
/// one message per problem.
std::vector<std::string> verify_chunks(StorageBackend& backend, const std::string& checkpoint_prefix,
                                       const MergedIndex& index);

}  // namespace shardckpt
