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

#include "shardckpt/sharding.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "shardckpt/error.hpp"

namespace shardckpt {

Mesh::Mesh(std::vector<MeshAxis> axes, std::vector<DeviceId> devices,
           std::map<DeviceId, ProcessIndex> process_of,
           std::optional<std::string> replica_axis)
    : axes_(std::move(axes)),
      devices_(std::move(devices)),
      process_of_(std::move(process_of)),
      replica_axis_(std::move(replica_axis)) {
  std::int64_t expected = 1;
  std::set<std::string> names;
  for (const auto& a : axes_) {
    if (a.size < 1) fail(ErrorCode::invalid_argument, "mesh axis '" + a.name + "' has size < 1");
    if (!names.insert(a.name).second) {
      fail(ErrorCode::invalid_argument, "duplicate mesh axis '" + a.name + "'");
    }
    expected *= a.size;
  }
  if (static_cast<std::int64_t>(devices_.size()) != expected) {
    fail(ErrorCode::invalid_argument,
         "mesh has " + std::to_string(devices_.size()) + " devices but axis sizes multiply to " +
             std::to_string(expected));
  }
  std::set<DeviceId> unique(devices_.begin(), devices_.end());
  if (unique.size() != devices_.size()) fail(ErrorCode::invalid_argument, "duplicate device id in mesh");
  std::set<ProcessIndex> procs;
  for (auto d : devices_) {
    auto it = process_of_.find(d);
    if (it == process_of_.end()) {
      fail(ErrorCode::invalid_argument, "device " + std::to_string(d) + " has no process");
    }
    procs.insert(it->second);
  }
  process_count_ = static_cast<int>(procs.size());
  if (!procs.empty() && (*procs.begin() != 0 || *procs.rbegin() != process_count_ - 1)) {
    fail(ErrorCode::invalid_argument, "process indices must be contiguous from 0");
  }
  if (replica_axis_ && !axis_index(*replica_axis_)) {
    fail(ErrorCode::invalid_argument, "replica axis '" + *replica_axis_ + "' is not a mesh axis");
  }
}

Mesh Mesh::uniform(std::vector<MeshAxis> axes, int process_count,
                   std::optional<std::string> replica_axis) {
  std::int64_t n = 1;
  for (const auto& a : axes) n *= a.size;
  if (process_count < 1 || n % process_count != 0) {
    fail(ErrorCode::invalid_argument, std::to_string(n) + " devices cannot be split evenly over " +
                                          std::to_string(process_count) + " processes");
  }
  const auto per = n / process_count;
  std::vector<DeviceId> devices;
  std::map<DeviceId, ProcessIndex> process_of;
  for (std::int64_t i = 0; i < n; ++i) {
    devices.push_back(static_cast<DeviceId>(i));
    process_of[static_cast<DeviceId>(i)] = static_cast<ProcessIndex>(i / per);
  }
  return Mesh(std::move(axes), std::move(devices), std::move(process_of), std::move(replica_axis));
}

ProcessIndex Mesh::process_of(DeviceId d) const {
  auto it = process_of_.find(d);
  if (it == process_of_.end()) fail(ErrorCode::invalid_argument, "unknown device " + std::to_string(d));
  return it->second;
}

std::vector<DeviceId> Mesh::devices_of_process(ProcessIndex p) const {
  std::vector<DeviceId> out;
  for (auto d : devices_) {
    if (process_of(d) == p) out.push_back(d);
  }
  return out;
}

std::optional<std::size_t> Mesh::axis_index(const std::string& name) const {
  for (std::size_t i = 0; i < axes_.size(); ++i) {
    if (axes_[i].name == name) return i;
  }
  return std::nullopt;
}

std::vector<std::int64_t> Mesh::coords_at(std::size_t position) const {
  std::vector<std::int64_t> c(axes_.size(), 0);
  auto rem = static_cast<std::int64_t>(position);
  for (std::size_t i = axes_.size(); i-- > 0;) {
    c[i] = rem % axes_[i].size;
    rem /= axes_[i].size;
  }
  return c;
}

Sharding::Sharding(Mesh mesh, PartitionSpec spec, Shape global_shape)
    : mesh_(std::move(mesh)), spec_(std::move(spec)), global_shape_(std::move(global_shape)) {
  if (spec_.dims.size() != global_shape_.size()) {
    fail(ErrorCode::invalid_argument, "partition spec rank " + std::to_string(spec_.dims.size()) +
                                          " does not match array rank " +
                                          std::to_string(global_shape_.size()));
  }
  std::set<std::string> used;
  for (std::size_t d = 0; d < spec_.dims.size(); ++d) {
    if (global_shape_[d] < 0) fail(ErrorCode::invalid_argument, "negative extent");
    const auto& axis = spec_.dims[d];
    if (!axis) continue;
    auto idx = mesh_.axis_index(*axis);
    if (!idx) fail(ErrorCode::invalid_argument, "partition axis '" + *axis + "' is not in the mesh");
    if (!used.insert(*axis).second) {
      fail(ErrorCode::invalid_argument, "mesh axis '" + *axis + "' used more than once");
    }
    const auto k = mesh_.axes()[*idx].size;
    if (global_shape_[d] % k != 0) {
      fail(ErrorCode::invalid_argument,
           "dimension " + std::to_string(d) + " of extent " + std::to_string(global_shape_[d]) +
               " is not divisible by " + std::to_string(k) + " partitions (axis '" + *axis + "')");
    }
  }
}

Sharding Sharding::replicated(Mesh mesh, Shape global_shape) {
  auto spec = PartitionSpec::replicated(global_shape.size());
  return Sharding(std::move(mesh), std::move(spec), std::move(global_shape));
}

Shape Sharding::partition_counts() const {
  Shape counts(global_shape_.size(), 1);
  for (std::size_t d = 0; d < counts.size(); ++d) {
    if (spec_.dims[d]) counts[d] = mesh_.axes()[*mesh_.axis_index(*spec_.dims[d])].size;
  }
  return counts;
}

Shape Sharding::shard_shape() const {
  auto counts = partition_counts();
  Shape s(global_shape_.size());
  for (std::size_t d = 0; d < s.size(); ++d) s[d] = global_shape_[d] / counts[d];
  return s;
}

std::vector<Shard> shards_of(const Sharding& s) {
  const auto& mesh = s.mesh();
  const auto shard_shape = s.shard_shape();
  std::vector<std::optional<std::size_t>> dim_axis(shard_shape.size());
  for (std::size_t d = 0; d < dim_axis.size(); ++d) {
    if (s.spec().dims[d]) dim_axis[d] = mesh.axis_index(*s.spec().dims[d]);
  }
  std::vector<Shard> out;
  out.reserve(mesh.device_count());
  std::map<Box, int> seen;
  for (std::size_t pos = 0; pos < mesh.device_count(); ++pos) {
    const auto coords = mesh.coords_at(pos);
    Shard shard;
    shard.device = mesh.devices()[pos];
    shard.process = mesh.process_of(shard.device);
    shard.ranges.resize(shard_shape.size());
    for (std::size_t d = 0; d < shard_shape.size(); ++d) {
      const auto idx = dim_axis[d] ? coords[*dim_axis[d]] : 0;
      shard.ranges[d] = {idx * shard_shape[d], shard_shape[d]};
    }
    shard.replica_ordinal = seen[shard.ranges]++;
    out.push_back(std::move(shard));
  }
  for (auto& shard : out) shard.replica_count = seen[shard.ranges];
  return out;
}

std::vector<Shard> unique_shards_for_process(const Sharding& s, ProcessIndex p) {
  std::vector<Shard> out;
  for (auto& shard : shards_of(s)) {
    if (shard.process == p && shard.replica_ordinal == 0) out.push_back(std::move(shard));
  }
  return out;
}

std::size_t segment_dimension(const Box& shard) {
  std::size_t best = 0;
  for (std::size_t d = 1; d < shard.size(); ++d) {
    if (shard[d].extent > shard[best].extent) best = d;
  }
  return best;
}

std::optional<Box> replica_segments(const Box& shard, int n_replicas, int ordinal) {
  if (n_replicas < 1 || ordinal < 0 || ordinal >= n_replicas) {
    fail(ErrorCode::invalid_argument, "replica ordinal " + std::to_string(ordinal) +
                                          " out of range for " + std::to_string(n_replicas) +
                                          " replicas");
  }
  if (shard.empty()) {
    // A rank-0 array is a single element: replica 0 owns it.
    if (ordinal == 0) return shard;
    return std::nullopt;
  }
  const auto dim = segment_dimension(shard);
  const auto extent = shard[dim].extent;
  const auto seg = (extent + n_replicas - 1) / n_replicas;
  Box out = shard;
  const auto begin = std::min(extent, seg * ordinal);
  const auto end = std::min(extent, seg * (ordinal + 1));
  if (end <= begin || volume(shard) == 0) return std::nullopt;
  out[dim] = {shard[dim].offset + begin, end - begin};
  return out;
}

std::vector<ReplicaGroup> replica_groups(const Mesh& mesh) {
  if (!mesh.replica_axis()) fail(ErrorCode::invalid_argument, "mesh has no replica axis");
  const auto axis = *mesh.axis_index(*mesh.replica_axis());
  std::vector<ReplicaGroup> groups(static_cast<std::size_t>(mesh.axes()[axis].size));
  for (std::size_t g = 0; g < groups.size(); ++g) groups[g].ordinal = static_cast<int>(g);
  for (std::size_t pos = 0; pos < mesh.device_count(); ++pos) {
    groups[static_cast<std::size_t>(mesh.coords_at(pos)[axis])].devices.push_back(mesh.devices()[pos]);
  }
  return groups;
}

void validate_topology(const Sharding& saved, const Mesh& current) {
  const auto& prev = saved.mesh();
  if (prev.device_count() != current.device_count()) {
    fail(ErrorCode::topology_mismatch,
         "checkpoint was saved on " + std::to_string(prev.device_count()) +
             " devices but the current topology has " + std::to_string(current.device_count()) +
             "; supply an abstract state with target shardings");
  }
  if (prev.process_map() != current.process_map()) {
    fail(ErrorCode::topology_mismatch,
         "device-to-process layout differs from the one the checkpoint was saved with; supply an "
         "abstract state with target shardings");
  }
}

nlohmann::json to_json(const Mesh& mesh) {
  nlohmann::json axes = nlohmann::json::array();
  for (const auto& a : mesh.axes()) axes.push_back({{"name", a.name}, {"size", a.size}});
  nlohmann::json processes = nlohmann::json::array();
  for (auto d : mesh.devices()) processes.push_back(mesh.process_of(d));
  nlohmann::json j{{"axes", axes}, {"devices", mesh.devices()}, {"processes", processes}};
  j["replica_axis"] = mesh.replica_axis() ? nlohmann::json(*mesh.replica_axis()) : nlohmann::json();
  return j;
}

Mesh mesh_from_json(const nlohmann::json& j) {
  try {
    std::vector<MeshAxis> axes;
    for (const auto& a : j.at("axes")) axes.push_back({a.at("name").get<std::string>(), a.at("size").get<std::int64_t>()});
    auto devices = j.at("devices").get<std::vector<DeviceId>>();
    auto processes = j.at("processes").get<std::vector<ProcessIndex>>();
    if (processes.size() != devices.size()) fail(ErrorCode::parse, "mesh device/process lists differ in length");
    std::map<DeviceId, ProcessIndex> process_of;
    for (std::size_t i = 0; i < devices.size(); ++i) process_of[devices[i]] = processes[i];
    std::optional<std::string> replica;
    if (j.contains("replica_axis") && !j.at("replica_axis").is_null()) {
      replica = j.at("replica_axis").get<std::string>();
    }
    return Mesh(std::move(axes), std::move(devices), std::move(process_of), std::move(replica));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("malformed mesh descriptor: ") + e.what());
  }
}

nlohmann::json to_json(const Sharding& s) {
  nlohmann::json spec = nlohmann::json::array();
  for (const auto& d : s.spec().dims) spec.push_back(d ? nlohmann::json(*d) : nlohmann::json());
  return {{"mesh", to_json(s.mesh())}, {"spec", spec}, {"global_shape", s.global_shape()}};
}

Sharding sharding_from_json(const nlohmann::json& j) {
  try {
    PartitionSpec spec;
    for (const auto& d : j.at("spec")) {
      spec.dims.push_back(d.is_null() ? std::nullopt : std::optional<std::string>(d.get<std::string>()));
    }
    return Sharding(mesh_from_json(j.at("mesh")), std::move(spec), j.at("global_shape").get<Shape>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("malformed sharding descriptor: ") + e.what());
  }
}

}  // namespace shardckpt
