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

#include <chrono>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "shardckpt/dtype.hpp"
#include "shardckpt/storage.hpp"

namespace shardckpt {

enum class ControllerMode { multi_controller, single_controller };

std::string_view controller_mode_name(ControllerMode mode);
ControllerMode parse_controller_mode(std::string_view name);

/// Process `process` fails with ErrorCode::crash when it reaches a barrier
/// (or, in single-controller mode, a worker task label) containing `at`.
struct CrashPoint {
  int process = 0;
  std::string at;
};

struct RuntimeOptions {
  int process_count = 1;
  ControllerMode mode = ControllerMode::multi_controller;
  std::chrono::milliseconds barrier_timeout{30000};
  /// When set, processes sleep for short seeded random intervals at
  /// coordination points, exploring different interleavings.
  std::optional<std::uint64_t> scheduler_seed;
  /// Waiters give up as soon as a participant that has not arrived fails,
  /// instead of running out the full timeout.
  bool fail_fast = true;
  std::vector<CrashPoint> crash_schedule;
};

inline constexpr std::size_t kMaxBroadcastBytes = 1u << 20;

enum class BarrierStatus { ok, timeout };

class SimulatedRuntime;
struct OperationState;

/// Handle a simulated process uses to reach the runtime's cross-process
/// primitives during one operation.
class ProcessContext {
 public:
  int index() const { return index_; }
  int process_count() const;
  bool is_leader() const { return index_ == 0; }
  ControllerMode mode() const;
  StorageBackend& storage() const;
  SimulatedRuntime& runtime() const { return *runtime_; }

  /// Returns once every participant of the operation has arrived. Names
  /// are scoped to the operation and may not be reused within it.
  BarrierStatus barrier(const std::string& name);
  /// barrier() that throws Error(timeout) instead of returning timeout.
  void sync(const std::string& name);

  /// The leader passes `payload`; every participant returns the leader's
  /// bytes. Payloads are capped at kMaxBroadcastBytes. Touches no storage.
  Bytes leader_broadcast(const std::string& name, const Bytes* payload = nullptr);

  /// Point-to-point mailbox scoped to the operation; receive() blocks until
  /// the key is published.
  void publish(const std::string& key, Bytes data);
  Bytes receive(const std::string& key);

  /// Counts a named action against this process.
  void record_action(const std::string& action);
  /// Seeded random delay when the runtime has a scheduler seed.
  void maybe_yield();

 private:
  friend class SimulatedRuntime;
  ProcessContext(SimulatedRuntime* rt, std::shared_ptr<OperationState> op, int index);
  void check_crash(std::string_view point);

  SimulatedRuntime* runtime_;
  std::shared_ptr<OperationState> op_;
  int index_;
  std::mt19937_64 rng_;
};

/// In-process stand-in for a multi-host job: every simulated process runs
/// on its own thread against one shared storage backend, with storage
/// traffic attributed to the process index.
class SimulatedRuntime {
 public:
  SimulatedRuntime(std::shared_ptr<StorageBackend> storage, RuntimeOptions options = {});

  StorageBackend& storage() const { return *storage_; }
  const std::shared_ptr<StorageBackend>& storage_ptr() const { return storage_; }
  const RuntimeOptions& options() const { return options_; }
  int process_count() const { return options_.process_count; }
  ControllerMode mode() const { return options_.mode; }

  /// Multi-controller entry point: runs `fn` once per process concurrently.
  /// After all finish, rethrows the root-cause failure (non-timeout errors
  /// first, then lowest process index) prefixed with the process index.
  void run(const std::string& label, const std::function<void(ProcessContext&)>& fn);

  /// Single-controller entry point: the caller is the controller and
  /// dispatches `task` to the given workers. Returns results in worker
  /// order; a failure names the worker index.
  template <class R>
  std::vector<R> run_on_workers(const std::string& label, const std::function<R(ProcessContext&)>& task,
                                const std::vector<int>& workers);
  void run_on_workers(const std::string& label, const std::function<void(ProcessContext&)>& task,
                      const std::vector<int>& workers);
  std::vector<int> all_workers() const;

  /// Counts a named action against the calling thread's actor.
  void record_action(const std::string& action, int actor);
  void record_action(const std::string& action);
  /// action -> actor -> count
  std::map<std::string, std::map<int, std::uint64_t>> action_counts() const;
  std::uint64_t action_total(const std::string& action) const;
  void reset_action_counts();

 private:
  void execute(const std::string& label, const std::vector<int>& participants, bool workers,
               const std::function<void(ProcessContext&)>& fn);

  std::shared_ptr<StorageBackend> storage_;
  RuntimeOptions options_;
  mutable std::mutex actions_mu_;
  std::map<std::string, std::map<int, std::uint64_t>> actions_;
};

template <class R>
std::vector<R> SimulatedRuntime::run_on_workers(const std::string& label,
                                                const std::function<R(ProcessContext&)>& task,
                                                const std::vector<int>& workers) {
  std::vector<std::optional<R>> slots(workers.size());
  std::map<int, std::size_t> slot_of;
  for (std::size_t i = 0; i < workers.size(); ++i) slot_of[workers[i]] = i;
  std::mutex mu;
  run_on_workers(
      label,
      [&](ProcessContext& ctx) {
        R r = task(ctx);
        std::lock_guard lk(mu);
        slots[slot_of.at(ctx.index())] = std::move(r);
      },
      workers);
  std::vector<R> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace shardckpt
