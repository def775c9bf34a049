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
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shardckpt/load.hpp"
#include "shardckpt/save.hpp"

namespace shardckpt {

using Step = std::int64_t;

/// True iff `step` is a multiple of `interval` (interval >= 1).
bool should_save(Step step, Step interval);

struct RetentionPolicy {
  int keep_last = 1;
  /// Steps divisible by this are kept permanently.
  std::optional<Step> keep_period;

  void validate() const;
};

/// Which of the finalized steps the policy keeps, ascending. The latest
/// finalized step is always kept.
std::vector<Step> retained_steps(const std::vector<Step>& finalized, const RetentionPolicy& policy);

/// "step_00000042"
std::string step_dir_name(Step step);
std::optional<Step> parse_step_dir(std::string_view name);

struct StepEntry {
  Step step = 0;
  bool finalized = false;
  bool operator==(const StepEntry&) const = default;
};

struct StepCatalog {
  std::string root;
  std::vector<StepEntry> steps;  // strictly increasing
  RetentionPolicy policy;

  std::vector<Step> finalized_steps() const;
  std::optional<Step> latest_finalized() const;
  bool operator==(const StepCatalog& o) const { return root == o.root && steps == o.steps; }
};

/// Builds a catalog from the step directories present under `root`.
StepCatalog scan_steps(StorageBackend& backend, const std::string& root, const RetentionPolicy& policy = {});

struct CheckpointerOptions {
  RetentionPolicy retention;
  SaveOptions save;
  /// Run garbage collection after every finalized save.
  bool collect_after_save = true;
};

/// Manages a sequence of step checkpoints under one root. One save is in
/// flight at a time; starting another waits for the previous one.
class Checkpointer {
 public:
  Checkpointer(SimulatedRuntime& runtime, std::string root, CheckpointerOptions options = {});
  ~Checkpointer();
  Checkpointer(const Checkpointer&) = delete;
  Checkpointer& operator=(const Checkpointer&) = delete;

  std::string step_path(Step step) const;

  /// Saves to `<root>/step_<8 digits>`. Requires step > every finalized
  /// step. Retention runs after the save finalizes.
  SaveHandle save_step(Step step, const Checkpointables& items);

  /// Waits for the in-flight save and rethrows its failure, if not already
  /// reported through its handle.
  void wait_until_finished();

  /// Highest finalized step found in storage. In multi-controller mode only
  /// the leader lists and the answer is broadcast.
  std::optional<Step> latest_step();

  /// Deletes finalized steps the policy does not keep; returns them.
  std::vector<Step> garbage_collect();

  /// Removes leftovers of unfinished saves (temp directories and
  /// uncommitted step directories) older than `min_age`. Returns the
  /// removed directory names.
  std::vector<std::string> sweep_tmp(std::chrono::milliseconds min_age);

  StepCatalog catalog() const;
  /// Catalog as the storage listing shows it.
  StepCatalog rebuild_catalog() const;
  /// Replaces the in-memory catalog with the storage listing.
  void refresh();

  LoadResult load_step(Step step, const AbstractCheckpointables* abstract = nullptr, const LoadOptions& options = {});

  /// Last failure of automatic garbage collection, if any.
  std::optional<std::string> last_gc_error() const;

 private:
  void on_save_complete(Step step, bool ok);
  void as_leader(const std::string& label, const std::function<void()>& fn);

  SimulatedRuntime& rt_;
  std::string root_;
  CheckpointerOptions options_;

  mutable std::mutex mu_;
  StepCatalog catalog_;
  std::optional<std::string> gc_error_;
  std::mutex gc_mu_;

  SaveHandle in_flight_;
  std::optional<Step> in_flight_step_;
};

}  // namespace shardckpt
