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

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shardckpt/dtype.hpp"

namespace shardckpt {

enum class OpKind : std::size_t { put, get, get_range, list, remove, rename, exists, create_dir, stat };
inline constexpr std::size_t kOpKindCount = 9;

std::string_view op_kind_name(OpKind kind);

/// Storage traffic is attributed to the actor installed on the calling
/// thread: a simulated process index, or kControllerActor.
inline constexpr int kControllerActor = -1;

class ActorScope {
 public:
  explicit ActorScope(int actor);
  ~ActorScope();
  ActorScope(const ActorScope&) = delete;
  ActorScope& operator=(const ActorScope&) = delete;

  static int current();

 private:
  int previous_;
};

struct IoCounters {
  std::uint64_t bytes_read = 0;
  std::uint64_t bytes_written = 0;
  /// Subset of the above for chunk payload keys (see is_payload_key).
  std::uint64_t payload_bytes_read = 0;
  std::uint64_t payload_bytes_written = 0;
  std::array<std::uint64_t, kOpKindCount> ops{};

  std::uint64_t op(OpKind k) const { return ops[static_cast<std::size_t>(k)]; }
  std::uint64_t total_ops() const;
  IoCounters& operator+=(const IoCounters& o);
  friend IoCounters operator-(IoCounters a, const IoCounters& b);
  friend bool operator==(const IoCounters&, const IoCounters&) = default;
};

struct CounterSnapshot {
  IoCounters total;
  std::map<int, IoCounters> per_actor;

  IoCounters actor(int a) const;
};

struct FaultPlan {
  /// The first `crash_after_ops` operations succeed; every later operation
  /// fails with ErrorCode::crash until faults are cleared.
  std::optional<std::uint64_t> crash_after_ops;
  /// put() to a key containing this substring fails with ErrorCode::storage.
  std::string fail_put_containing;
};

struct ObjectInfo {
  std::uint64_t size = 0;
  bool is_directory = false;
  std::chrono::system_clock::time_point modified;
};

/// True for chunk payload keys: per-leaf chunk objects (`.../c` or
/// `.../c.<i>...`) and aggregated data files (`.../process_<i>/d/<n>`).
bool is_payload_key(std::string_view key);

std::string join_key(std::string_view a, std::string_view b);

/// Key-value storage with '/'-separated hierarchical keys. Public methods
/// count traffic, apply the fault plan and the payload gate, then dispatch
/// to the do_* implementation.
class StorageBackend {
 public:
  virtual ~StorageBackend() = default;

  /// Atomic per key: readers see the old or new value, never a mix.
  void put(const std::string& key, std::span<const std::byte> data);
  Bytes get(const std::string& key);
  Bytes get_range(const std::string& key, std::uint64_t offset, std::uint64_t length);
  /// All object keys under directory `prefix` (recursive, sorted).
  std::vector<std::string> list(const std::string& prefix);
  /// Names of the immediate children (objects and directories) of `prefix`,
  /// sorted. Counted as a list op.
  std::vector<std::string> list_children(const std::string& prefix);
  /// Removes the object or directory tree at `key`.
  void remove(const std::string& key);
  /// Moves the directory tree `src` to `dst`; `dst` must not exist.
  void rename(const std::string& src, const std::string& dst);
  bool exists(const std::string& key);
  void create_dir(const std::string& key);
  std::optional<ObjectInfo> stat(const std::string& key);

  virtual bool supports_atomic_rename() const = 0;

  CounterSnapshot counters() const;
  void reset_counters();
  std::uint64_t op_count() const { return op_index_.load(); }

  void set_fault_plan(FaultPlan plan);
  void clear_faults();
  bool crashed() const { return crashed_.load(); }

  /// While closed, payload puts block until the gate opens again.
  void close_payload_gate();
  void open_payload_gate();

 protected:
  virtual void do_put(const std::string& key, std::span<const std::byte> data) = 0;
  virtual Bytes do_get(const std::string& key) = 0;
  virtual Bytes do_get_range(const std::string& key, std::uint64_t offset, std::uint64_t length) = 0;
  virtual std::vector<std::string> do_list(const std::string& prefix) = 0;
  virtual std::vector<std::string> do_list_children(const std::string& prefix) = 0;
  virtual void do_remove(const std::string& key) = 0;
  virtual void do_rename(const std::string& src, const std::string& dst) = 0;
  virtual bool do_exists(const std::string& key) = 0;
  virtual void do_create_dir(const std::string& key) = 0;
  virtual std::optional<ObjectInfo> do_stat(const std::string& key) = 0;

 private:
  void begin(OpKind kind, const std::string& key);
  void record(OpKind kind, const std::string& key, std::uint64_t read, std::uint64_t written);

  mutable std::mutex counters_mu_;
  CounterSnapshot counters_;

  std::mutex fault_mu_;
  FaultPlan plan_;
  std::atomic<std::uint64_t> op_index_{0};
  std::atomic<bool> crashed_{false};

  std::mutex gate_mu_;
  std::condition_variable gate_cv_;
  bool gate_closed_ = false;
};

/// Key -> bytes map with directory markers. Rename atomicity is a
/// construction-time property so both commit styles can be exercised.
class MemoryBackend final : public StorageBackend {
 public:
  explicit MemoryBackend(bool atomic_rename = true) : atomic_rename_(atomic_rename) {}

  bool supports_atomic_rename() const override { return atomic_rename_; }

  /// Uninstrumented access for tests and tooling.
  std::map<std::string, Bytes> contents() const;
  void raw_put(const std::string& key, Bytes data);
  void raw_erase(const std::string& key);

 protected:
  void do_put(const std::string& key, std::span<const std::byte> data) override;
  Bytes do_get(const std::string& key) override;
  Bytes do_get_range(const std::string& key, std::uint64_t offset, std::uint64_t length) override;
  std::vector<std::string> do_list(const std::string& prefix) override;
  std::vector<std::string> do_list_children(const std::string& prefix) override;
  void do_remove(const std::string& key) override;
  void do_rename(const std::string& src, const std::string& dst) override;
  bool do_exists(const std::string& key) override;
  void do_create_dir(const std::string& key) override;
  std::optional<ObjectInfo> do_stat(const std::string& key) override;

 private:
  struct Object {
    Bytes data;
    std::chrono::system_clock::time_point modified;
  };
  bool under(const std::string& key, const std::string& prefix) const;

  bool atomic_rename_;
  mutable std::mutex mu_;
  std::map<std::string, Object> objects_;
  std::map<std::string, std::chrono::system_clock::time_point> dirs_;
};

/// Keys map to paths under `root`. put() writes a sibling temp file and
/// renames it into place.
class FileSystemBackend final : public StorageBackend {
 public:
  explicit FileSystemBackend(std::filesystem::path root);

  bool supports_atomic_rename() const override { return true; }
  const std::filesystem::path& root() const { return root_; }

 protected:
  void do_put(const std::string& key, std::span<const std::byte> data) override;
  Bytes do_get(const std::string& key) override;
  Bytes do_get_range(const std::string& key, std::uint64_t offset, std::uint64_t length) override;
  std::vector<std::string> do_list(const std::string& prefix) override;
  std::vector<std::string> do_list_children(const std::string& prefix) override;
  void do_remove(const std::string& key) override;
  void do_rename(const std::string& src, const std::string& dst) override;
  bool do_exists(const std::string& key) override;
  void do_create_dir(const std::string& key) override;
  std::optional<ObjectInfo> do_stat(const std::string& key) override;

 private:
  std::filesystem::path path_of(const std::string& key) const;

  std::filesystem::path root_;
  std::atomic<std::uint64_t> tmp_counter_{0};
};

/// "mem" or "fs:<dir>".
std::shared_ptr<StorageBackend> make_backend(std::string_view spec);

}  // namespace shardckpt
