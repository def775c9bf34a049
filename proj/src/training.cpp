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

#include "shardckpt/training.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <set>

#include "shardckpt/error.hpp"

namespace shardckpt {

bool should_save(Step step, Step interval) {
  if (interval < 1) fail(ErrorCode::invalid_argument, "save interval must be at least 1");
  return step % interval == 0;
}

void RetentionPolicy::validate() const {
  if (keep_last < 1) fail(ErrorCode::invalid_argument, "keep_last must be at least 1");
  if (keep_period && *keep_period < 1) fail(ErrorCode::invalid_argument, "keep_period must be at least 1");
}

std::vector<Step> retained_steps(const std::vector<Step>& finalized, const RetentionPolicy& policy) {
  policy.validate();
  std::vector<Step> sorted = finalized;
  std::sort(sorted.begin(), sorted.end());
  std::set<Step> keep;
  const std::size_t n = sorted.size();
  const std::size_t last = std::min<std::size_t>(n, static_cast<std::size_t>(policy.keep_last));
  keep.insert(sorted.end() - static_cast<std::ptrdiff_t>(last), sorted.end());
  if (policy.keep_period)
    for (Step s : sorted)
      if (s % *policy.keep_period == 0) keep.insert(s);
  return {keep.begin(), keep.end()};
}

std::string step_dir_name(Step step) {
  if (step < 0) fail(ErrorCode::invalid_argument, "negative step");
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%08lld", static_cast<long long>(step));
  return buf;
}

std::optional<Step> parse_step_dir(std::string_view name) {
  constexpr std::string_view prefix = "step_";
  if (!name.starts_with(prefix)) return std::nullopt;
  std::string_view digits = name.substr(prefix.size());
  if (digits.size() < 8) return std::nullopt;
  Step v = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || v < 0) return std::nullopt;
  if (step_dir_name(v) != name) return std::nullopt;
  return v;
}

std::vector<Step> StepCatalog::finalized_steps() const {
  std::vector<Step> out;
  for (const auto& e : steps)
    if (e.finalized) out.push_back(e.step);
  return out;
}

std::optional<Step> StepCatalog::latest_finalized() const {
  for (auto it = steps.rbegin(); it != steps.rend(); ++it)
    if (it->finalized) return it->step;
  return std::nullopt;
}

StepCatalog scan_steps(StorageBackend& backend, const std::string& root, const RetentionPolicy& policy) {
  StepCatalog c{root, {}, policy};
  for (const auto& name : backend.list_children(root))
    if (auto step = parse_step_dir(name)) c.steps.push_back({*step, is_finalized(backend, join_key(root, name))});
  std::sort(c.steps.begin(), c.steps.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  return c;
}

Checkpointer::Checkpointer(SimulatedRuntime& runtime, std::string root, CheckpointerOptions options)
    : rt_(runtime), root_(std::move(root)), options_(std::move(options)) {
  options_.retention.validate();
  catalog_ = rebuild_catalog();
}

Checkpointer::~Checkpointer() {
  try {
    in_flight_.wait();
  } catch (...) {
  }
}

std::string Checkpointer::step_path(Step step) const { return join_key(root_, step_dir_name(step)); }

void Checkpointer::as_leader(const std::string& label, const std::function<void()>& fn) {
  if (rt_.mode() == ControllerMode::multi_controller) {
    rt_.run(label, [&](ProcessContext& ctx) {
      if (ctx.is_leader()) fn();
    });
  } else {
    fn();
  }
}

SaveHandle Checkpointer::save_step(Step step, const Checkpointables& items) {
  if (step < 0) fail(ErrorCode::invalid_argument, "negative step");
  try {
    in_flight_.wait();
  } catch (...) {
  }
  {
    std::lock_guard lk(mu_);
    if (auto latest = catalog_.latest_finalized(); latest && step <= *latest)
      fail(ErrorCode::invalid_argument, "step " + std::to_string(step) + " is not after the latest step " +
                                            std::to_string(*latest));
    in_flight_step_ = step;
  }
  try {
    in_flight_ = save(rt_, step_path(step), items, options_.save, [this, step](bool ok) { on_save_complete(step, ok); });
  } catch (...) {
    on_save_complete(step, false);
    throw;
  }
  return in_flight_;
}

void Checkpointer::on_save_complete(Step step, bool ok) {
  bool present = ok;
  if (!ok) {
    try {
      present = rt_.storage().exists(step_path(step));
    } catch (...) {
      present = true;
    }
  }
  {
    std::lock_guard lk(mu_);
    in_flight_step_.reset();
    auto& steps = catalog_.steps;
    std::erase_if(steps, [&](const StepEntry& e) { return e.step == step; });
    if (present) {
      steps.push_back({step, ok});
      std::sort(steps.begin(), steps.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
    }
  }
  if (ok && options_.collect_after_save) {
    try {
      garbage_collect();
    } catch (const std::exception& e) {
      std::lock_guard lk(mu_);
      gc_error_ = e.what();
    }
  }
}

void Checkpointer::wait_until_finished() { in_flight_.wait(); }

std::optional<Step> Checkpointer::latest_step() {
  if (rt_.mode() == ControllerMode::single_controller) return scan_steps(rt_.storage(), root_).latest_finalized();
  std::optional<Step> result;
  std::mutex result_mu;
  rt_.run("latest_step " + root_, [&](ProcessContext& ctx) {
    Bytes payload;
    if (ctx.is_leader()) {
      auto latest = scan_steps(ctx.storage(), root_).latest_finalized();
      payload = to_bytes(latest ? std::to_string(*latest) : std::string("none"));
    }
    Bytes got = ctx.leader_broadcast(root_ + "/latest_step", ctx.is_leader() ? &payload : nullptr);
    std::string text = to_string(got);
    if (ctx.index() == 0) {
      std::lock_guard lk(result_mu);
      if (text != "none") result = std::stoll(text);
    }
  });
  return result;
}

std::vector<Step> Checkpointer::garbage_collect() {
  std::lock_guard gc(gc_mu_);
  std::vector<Step> finalized;
  {
    std::lock_guard lk(mu_);
    finalized = catalog_.finalized_steps();
  }
  std::vector<Step> keep = retained_steps(finalized, options_.retention);
  std::vector<Step> doomed;
  for (Step s : finalized)
    if (!std::binary_search(keep.begin(), keep.end(), s)) doomed.push_back(s);
  if (doomed.empty()) return {};

  std::vector<Step> deleted;
  std::optional<Error> first_error;
  as_leader("gc " + root_, [&] {
    StorageBackend& b = rt_.storage();
    const bool rename = uses_atomic_rename(b);
    for (Step s : doomed) {
      const std::string path = step_path(s);
      try {
        // Retract the commit marker first so a partial delete is never
        // mistaken for a finalized step.
        b.remove(join_key(path, rename ? kGlobalMetadataKey : kCommitKey));
        b.remove(path);
        deleted.push_back(s);
      } catch (const Error& e) {
        if (!first_error) first_error = e;
      }
    }
  });
  {
    std::lock_guard lk(mu_);
    std::erase_if(catalog_.steps, [&](const StepEntry& e) {
      return std::find(deleted.begin(), deleted.end(), e.step) != deleted.end();
    });
    for (Step s : doomed)
      if (std::find(deleted.begin(), deleted.end(), s) == deleted.end()) {
        bool still = true;
        try {
          still = is_finalized(rt_.storage(), step_path(s));
        } catch (...) {
        }
        for (auto& e : catalog_.steps)
          if (e.step == s) e.finalized = still;
      }
  }
  if (first_error) throw *first_error;
  return deleted;
}

std::vector<std::string> Checkpointer::sweep_tmp(std::chrono::milliseconds min_age) {
  std::optional<Step> busy;
  {
    std::lock_guard lk(mu_);
    busy = in_flight_step_;
  }
  std::vector<std::string> removed;
  as_leader("sweep_tmp " + root_, [&] {
    StorageBackend& b = rt_.storage();
    const auto now = std::chrono::system_clock::now();
    for (const auto& name : b.list_children(root_)) {
      std::optional<Step> step;
      bool leftover = false;
      if (auto pos = name.find(".tmp."); pos != std::string::npos) {
        step = parse_step_dir(std::string_view(name).substr(0, pos));
        leftover = step.has_value();
      } else if ((step = parse_step_dir(name))) {
        leftover = !is_finalized(b, join_key(root_, name));
      }
      if (!leftover || (busy && step == busy)) continue;
      auto info = b.stat(join_key(root_, name));
      if (!info || now - info->modified < min_age) continue;
      b.remove(join_key(root_, name));
      removed.push_back(name);
    }
  });
  refresh();
  return removed;
}

StepCatalog Checkpointer::catalog() const {
  std::lock_guard lk(mu_);
  return catalog_;
}

StepCatalog Checkpointer::rebuild_catalog() const { return scan_steps(rt_.storage(), root_, options_.retention); }

void Checkpointer::refresh() {
  StepCatalog fresh = rebuild_catalog();
  std::lock_guard lk(mu_);
  catalog_ = std::move(fresh);
}

LoadResult Checkpointer::load_step(Step step, const AbstractCheckpointables* abstract, const LoadOptions& options) {
  return load(rt_, step_path(step), abstract, options);
}

std::optional<std::string> Checkpointer::last_gc_error() const {
  std::lock_guard lk(mu_);
  return gc_error_;
}

}  // namespace shardckpt
