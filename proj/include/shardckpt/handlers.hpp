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
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "shardckpt/storage.hpp"
#include "shardckpt/tree.hpp"

namespace shardckpt {

/// Named small objects under one directory of a checkpoint.
class StorageScope {
 public:
  virtual ~StorageScope() = default;
  virtual void put(const std::string& name, const Bytes& data) = 0;
  virtual Bytes get(const std::string& name) = 0;
  virtual bool has(const std::string& name) = 0;

  void put_json(const std::string& name, const nlohmann::json& j);
  nlohmann::json get_json(const std::string& name);
};

/// Scope backed by `<prefix>/<name>` keys of a storage backend.
class BackendScope final : public StorageScope {
 public:
  BackendScope(StorageBackend& backend, std::string prefix) : backend_(backend), prefix_(std::move(prefix)) {}
  void put(const std::string& name, const Bytes& data) override;
  Bytes get(const std::string& name) override;
  bool has(const std::string& name) override;
  const std::string& prefix() const { return prefix_; }

 private:
  StorageBackend& backend_;
  std::string prefix_;
};

/// In-memory scope; saves capture state here before writing it out.
class BufferScope final : public StorageScope {
 public:
  void put(const std::string& name, const Bytes& data) override { objects_[name] = data; }
  Bytes get(const std::string& name) override;
  bool has(const std::string& name) override { return objects_.count(name) > 0; }
  const std::map<std::string, Bytes>& objects() const { return objects_; }

 private:
  std::map<std::string, Bytes> objects_;
};

/// An object that saves and restores itself.
class StatefulCheckpointable {
 public:
  virtual ~StatefulCheckpointable() = default;
  virtual void save(StorageScope& scope) const = 0;
  virtual void load(StorageScope& scope) = 0;
};

/// Data-pipeline position stored as a single integer.
class IteratorCheckpointable final : public StatefulCheckpointable {
 public:
  explicit IteratorCheckpointable(std::int64_t index = 0) : index_(index) {}
  std::int64_t index() const { return index_; }
  void advance(std::int64_t n = 1) { index_ += n; }
  void save(StorageScope& scope) const override;
  void load(StorageScope& scope) override;

 private:
  std::int64_t index_;
};

/// A tree of leaves plus optional per-leaf shardings; unsharded arrays are
/// treated as replicated across processes.
struct TreeItem {
  CheckpointTree tree;
  ShardingMap shardings;
};

struct Document {
  nlohmann::json value;
  friend bool operator==(const Document&, const Document&) = default;
};

using Checkpointable = std::variant<TreeItem, Document, std::shared_ptr<StatefulCheckpointable>>;
using Checkpointables = std::map<std::string, Checkpointable>;

struct AbstractDocument {};
/// Stateful objects are restored in place, so their abstract form is the
/// object itself.
using AbstractCheckpointable = std::variant<AbstractTree, AbstractDocument, std::shared_ptr<StatefulCheckpointable>>;
using AbstractCheckpointables = std::map<std::string, AbstractCheckpointable>;

inline constexpr const char* kTreeHandler = "tree";
inline constexpr const char* kJsonHandler = "json";
inline constexpr const char* kStatefulHandler = "stateful";

struct CheckpointableDescriptor {
  std::string name;
  std::string handler;
  friend bool operator==(const CheckpointableDescriptor&, const CheckpointableDescriptor&) = default;
};

std::string handler_id_of(const Checkpointable& item);

/// Throws Error(invalid_argument) unless `name` is usable as a checkpoint
/// subdirectory: nonempty, no '/', not "." or "..", and not clashing with
/// reserved entries.
void validate_checkpointable_name(const std::string& name);

/// save/load/metadata over a storage scope for host-resident checkpointables.
class Handler {
 public:
  virtual ~Handler() = default;
  virtual std::string id() const = 0;
  virtual void save(const Checkpointable& value, StorageScope& scope) const = 0;
  virtual Checkpointable load(const AbstractCheckpointable* abstract, StorageScope& scope) const = 0;
  virtual AbstractCheckpointable metadata(StorageScope& scope) const = 0;
};

class JsonHandler final : public Handler {
 public:
  std::string id() const override { return kJsonHandler; }
  void save(const Checkpointable& value, StorageScope& scope) const override;
  Checkpointable load(const AbstractCheckpointable* abstract, StorageScope& scope) const override;
  AbstractCheckpointable metadata(StorageScope& scope) const override;
};

class StatefulHandler final : public Handler {
 public:
  std::string id() const override { return kStatefulHandler; }
  void save(const Checkpointable& value, StorageScope& scope) const override;
  /// Requires the target object as the abstract value.
  Checkpointable load(const AbstractCheckpointable* abstract, StorageScope& scope) const override;
  AbstractCheckpointable metadata(StorageScope& scope) const override;
};

/// JSON and stateful handlers; trees go through the distributed pipeline.
const Handler& host_handler(const std::string& id);

Bytes to_bytes(const std::string& s);
std::string to_string(const Bytes& b);

}  // namespace shardckpt
