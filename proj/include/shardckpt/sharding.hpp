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
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "shardckpt/box.hpp"

namespace shardckpt {

using DeviceId = int;
using ProcessIndex = int;

struct MeshAxis {
  std::string name;
  std::int64_t size = 1;
  friend bool operator==(const MeshAxis&, const MeshAxis&) = default;
};

/// A named multi-axis grid of devices. Devices are laid out row-major over
/// the axis sizes; each device belongs to exactly one process.
class Mesh {
 public:
  Mesh(std::vector<MeshAxis> axes, std::vector<DeviceId> devices,
       std::map<DeviceId, ProcessIndex> process_of,
       std::optional<std::string> replica_axis = std::nullopt);

  /// Devices 0..N-1 split into `process_count` contiguous equal blocks.
  static Mesh uniform(std::vector<MeshAxis> axes, int process_count,
                      std::optional<std::string> replica_axis = std::nullopt);

  const std::vector<MeshAxis>& axes() const { return axes_; }
  const std::vector<DeviceId>& devices() const { return devices_; }
  const std::optional<std::string>& replica_axis() const { return replica_axis_; }
  const std::map<DeviceId, ProcessIndex>& process_map() const { return process_of_; }

  std::size_t device_count() const { return devices_.size(); }
  int process_count() const { return process_count_; }
  ProcessIndex process_of(DeviceId d) const;
  std::vector<DeviceId> devices_of_process(ProcessIndex p) const;

  /// Axis index by name, or nullopt.
  std::optional<std::size_t> axis_index(const std::string& name) const;
  /// Mesh coordinates of the device at `position` in devices().
  std::vector<std::int64_t> coords_at(std::size_t position) const;

  friend bool operator==(const Mesh&, const Mesh&) = default;

 private:
  std::vector<MeshAxis> axes_;
  std::vector<DeviceId> devices_;
  std::map<DeviceId, ProcessIndex> process_of_;
  std::optional<std::string> replica_axis_;
  int process_count_ = 0;
};

/// Per array dimension: the mesh axis it is partitioned over, or nullopt
/// when the dimension is replicated.
struct PartitionSpec {
  std::vector<std::optional<std::string>> dims;

  static PartitionSpec replicated(std::size_t rank) {
    return PartitionSpec{std::vector<std::optional<std::string>>(rank)};
  }
  friend bool operator==(const PartitionSpec&, const PartitionSpec&) = default;
};

class Sharding {
 public:
  /// Validates axis references and divisibility; throws Error otherwise.
  Sharding(Mesh mesh, PartitionSpec spec, Shape global_shape);

  /// Fully replicated over every device of `mesh`.
  static Sharding replicated(Mesh mesh, Shape global_shape);

  const Mesh& mesh() const { return mesh_; }
  const PartitionSpec& spec() const { return spec_; }
  const Shape& global_shape() const { return global_shape_; }

  /// Number of partitions along each array dimension.
  Shape partition_counts() const;
  Shape shard_shape() const;

  friend bool operator==(const Sharding&, const Sharding&) = default;

 private:
  Mesh mesh_;
  PartitionSpec spec_;
  Shape global_shape_;
};

struct Shard {
  DeviceId device = 0;
  ProcessIndex process = 0;
  Box ranges;
  /// Which copy of `ranges` this device holds, 0..replica_count-1.
  int replica_ordinal = 0;
  int replica_count = 1;
};

struct ReplicaGroup {
  int ordinal = 0;
  std::vector<DeviceId> devices;
};

/// One shard per device, in mesh device order.
std::vector<Shard> shards_of(const Sharding& s);

/// Shards on process `p` with replica_ordinal 0. Across all processes these
/// cover every global index exactly once.
std::vector<Shard> unique_shards_for_process(const Sharding& s, ProcessIndex p);

/// The dimension replica-parallel segments are cut along: the largest
/// extent, ties going to the lowest index.
std::size_t segment_dimension(const Box& shard);

/// Segment `ordinal` of `n` ceil-divided contiguous pieces of `shard`. The
/// last pieces may be short; nullopt when the segment is empty.
std::optional<Box> replica_segments(const Box& shard, int n_replicas, int ordinal);

std::vector<ReplicaGroup> replica_groups(const Mesh& mesh);

/// Throws Error(topology_mismatch) unless `current` has the same devices
/// and device-to-process layout as the mesh the checkpoint was saved on.
void validate_topology(const Sharding& saved, const Mesh& current);

nlohmann::json to_json(const Mesh& mesh);
Mesh mesh_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Sharding& s);
Sharding sharding_from_json(const nlohmann::json& j);

}  // namespace shardckpt
