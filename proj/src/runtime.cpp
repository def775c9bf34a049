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

#include "shardckpt/runtime.hpp"

#include <algorithm>
#include <condition_variable>
#include <set>
#include <thread>

#include "shardckpt/error.hpp"

namespace shardckpt {

struct OperationState {
  std::string label;
  std::vector<int> participants;
  std::chrono::milliseconds timeout;
  bool fail_fast = true;

  std::mutex mu;
  std::condition_variable cv;
  std::map<std::string, std::set<int>> arrived;
  std::map<int, std::set<std::string>> used;
  std::set<int> failed;
  std::map<std::string, Bytes> mailbox;
  std::map<std::string, Bytes> broadcasts;

  bool unarrived_failure(const std::set<int>& a) const {
    return std::any_of(failed.begin(), failed.end(), [&](int p) { return !a.count(p); });
  }
};

std::string_view controller_mode_name(ControllerMode mode) {
  return mode == ControllerMode::multi_controller ? "multi" : "single";
}

ControllerMode parse_controller_mode(std::string_view name) {
  if (name == "multi" || name == "multi_controller") return ControllerMode::multi_controller;
  if (name == "single" || name == "single_controller") return ControllerMode::single_controller;
  fail(ErrorCode::invalid_argument, "unknown controller mode '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// ProcessContext

ProcessContext::ProcessContext(SimulatedRuntime* rt, std::shared_ptr<OperationState> op, int index)
    : runtime_(rt), op_(std::move(op)), index_(index) {
  if (rt->options().scheduler_seed) rng_.seed(*rt->options().scheduler_seed * 1000003u + static_cast<unsigned>(index));
}

int ProcessContext::process_count() const { return runtime_->process_count(); }
ControllerMode ProcessContext::mode() const { return runtime_->mode(); }
StorageBackend& ProcessContext::storage() const { return runtime_->storage(); }

void ProcessContext::check_crash(std::string_view point) {
  for (const auto& c : runtime_->options().crash_schedule) {
    if (c.process == index_ && point.find(c.at) != std::string_view::npos)
      fail(ErrorCode::crash, "process " + std::to_string(index_) + " crashed at " + std::string(point));
  }
}

void ProcessContext::maybe_yield() {
  if (!runtime_->options().scheduler_seed) return;
  auto us = std::uniform_int_distribution<int>(0, 300)(rng_);
  if (us < 100) {
    std::this_thread::yield();
  } else {
    std::this_thread::sleep_for(std::chrono::microseconds(us));
  }
}

BarrierStatus ProcessContext::barrier(const std::string& name) {
  maybe_yield();
  check_crash(name);
  OperationState& op = *op_;
  std::unique_lock lk(op.mu);
  if (!op.used[index_].insert(name).second)
    fail(ErrorCode::invalid_argument, "barrier '" + name + "' reused within one operation");
  auto& arrived = op.arrived[name];
  arrived.insert(index_);
  op.cv.notify_all();
  const std::size_t n = op.participants.size();
  auto deadline = std::chrono::steady_clock::now() + op.timeout;
  op.cv.wait_until(lk, deadline, [&] { return arrived.size() == n || (op.fail_fast && op.unarrived_failure(arrived)); });
  return arrived.size() == n ? BarrierStatus::ok : BarrierStatus::timeout;
}

void ProcessContext::sync(const std::string& name) {
  if (barrier(name) == BarrierStatus::timeout)
    fail(ErrorCode::timeout, "process " + std::to_string(index_) + " timed out at barrier " + name);
}

Bytes ProcessContext::leader_broadcast(const std::string& name, const Bytes* payload) {
  maybe_yield();
  OperationState& op = *op_;
  const int leader = op.participants.front();
  std::unique_lock lk(op.mu);
  if (index_ == leader) {
    if (!payload) fail(ErrorCode::invalid_argument, "leader must supply a broadcast payload");
    if (payload->size() > kMaxBroadcastBytes)
      fail(ErrorCode::invalid_argument, "broadcast payload of " + std::to_string(payload->size()) +
                                            " bytes exceeds " + std::to_string(kMaxBroadcastBytes));
    if (!op.broadcasts.emplace(name, *payload).second)
      fail(ErrorCode::invalid_argument, "broadcast '" + name + "' reused within one operation");
    op.cv.notify_all();
    return *payload;
  }
  auto deadline = std::chrono::steady_clock::now() + op.timeout;
  bool got = op.cv.wait_until(lk, deadline, [&] {
    return op.broadcasts.count(name) || (op.fail_fast && op.failed.count(leader));
  });
  if (!got || !op.broadcasts.count(name))
    fail(ErrorCode::timeout, "process " + std::to_string(index_) + " received no broadcast " + name);
  return op.broadcasts.at(name);
}

void ProcessContext::publish(const std::string& key, Bytes data) {
  OperationState& op = *op_;
  {
    std::lock_guard lk(op.mu);
    op.mailbox.emplace(key, std::move(data));
  }
  op.cv.notify_all();
}

Bytes ProcessContext::receive(const std::string& key) {
  OperationState& op = *op_;
  std::unique_lock lk(op.mu);
  auto deadline = std::chrono::steady_clock::now() + op.timeout;
  op.cv.wait_until(lk, deadline, [&] { return op.mailbox.count(key) || (op.fail_fast && !op.failed.empty()); });
  auto it = op.mailbox.find(key);
  if (it == op.mailbox.end())
    fail(ErrorCode::timeout, "process " + std::to_string(index_) + " received no message " + key);
  return it->second;
}

void ProcessContext::record_action(const std::string& action) { runtime_->record_action(action, index_); }

// ---------------------------------------------------------------------------
// SimulatedRuntime

SimulatedRuntime::SimulatedRuntime(std::shared_ptr<StorageBackend> storage, RuntimeOptions options)
    : storage_(std::move(storage)), options_(std::move(options)) {
  if (!storage_) fail(ErrorCode::invalid_argument, "runtime needs a storage backend");
  if (options_.process_count < 1) fail(ErrorCode::invalid_argument, "process_count must be at least 1");
  if (options_.barrier_timeout.count() <= 0) fail(ErrorCode::invalid_argument, "barrier timeout must be positive");
}

std::vector<int> SimulatedRuntime::all_workers() const {
  std::vector<int> w(static_cast<std::size_t>(options_.process_count));
  for (int i = 0; i < options_.process_count; ++i) w[static_cast<std::size_t>(i)] = i;
  return w;
}

void SimulatedRuntime::run(const std::string& label, const std::function<void(ProcessContext&)>& fn) {
  execute(label, all_workers(), false, fn);
}

void SimulatedRuntime::run_on_workers(const std::string& label, const std::function<void(ProcessContext&)>& task,
                                      const std::vector<int>& workers) {
  if (options_.mode != ControllerMode::single_controller)
    fail(ErrorCode::invalid_argument, "run_on_workers requires single-controller mode");
  execute(label, workers, true, task);
}

void SimulatedRuntime::execute(const std::string& label, const std::vector<int>& participants, bool workers,
                               const std::function<void(ProcessContext&)>& fn) {
  if (participants.empty()) fail(ErrorCode::invalid_argument, "no participants for " + label);
  for (int p : participants)
    if (p < 0 || p >= options_.process_count) fail(ErrorCode::invalid_argument, "no process " + std::to_string(p));
  auto op = std::make_shared<OperationState>();
  op->label = label;
  op->participants = participants;
  op->timeout = options_.barrier_timeout;
  op->fail_fast = options_.fail_fast;

  std::vector<std::exception_ptr> errors(participants.size());
  std::vector<std::thread> threads;
  threads.reserve(participants.size());
  for (std::size_t i = 0; i < participants.size(); ++i) {
    threads.emplace_back([&, i] {
      int p = participants[i];
      ActorScope actor(p);
      ProcessContext ctx(this, op, p);
      try {
        if (workers) ctx.check_crash(label);
        fn(ctx);
      } catch (...) {
        errors[i] = std::current_exception();
        {
          std::lock_guard lk(op->mu);
          op->failed.insert(p);
        }
        op->cv.notify_all();
      }
    });
  }
  for (auto& t : threads) t.join();

  std::optional<std::pair<int, Error>> root;
  for (std::size_t i = 0; i < participants.size(); ++i) {
    if (!errors[i]) continue;
    std::string who = (workers ? "worker " : "process ") + std::to_string(participants[i]);
    std::optional<Error> err;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      err.emplace(e.code(), who + ": " + e.what());
    } catch (const std::exception& e) {
      err.emplace(ErrorCode::storage, who + ": " + e.what());
    }
    bool better = !root || (root->second.code() == ErrorCode::timeout && err->code() != ErrorCode::timeout);
    if (better) root.emplace(participants[i], *err);
  }
  if (root) throw root->second;
}

void SimulatedRuntime::record_action(const std::string& action, int actor) {
  std::lock_guard lk(actions_mu_);
  actions_[action][actor] += 1;
}

void SimulatedRuntime::record_action(const std::string& action) { record_action(action, ActorScope::current()); }

std::map<std::string, std::map<int, std::uint64_t>> SimulatedRuntime::action_counts() const {
  std::lock_guard lk(actions_mu_);
  return actions_;
}

std::uint64_t SimulatedRuntime::action_total(const std::string& action) const {
  std::lock_guard lk(actions_mu_);
  auto it = actions_.find(action);
  if (it == actions_.end()) return 0;
  std::uint64_t n = 0;
  for (const auto& [a, c] : it->second) n += c;
  return n;
}

void SimulatedRuntime::reset_action_counts() {
  std::lock_guard lk(actions_mu_);
  actions_.clear();
}

}  // namespace shardckpt
