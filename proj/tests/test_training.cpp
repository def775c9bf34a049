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

#include <set>

#include <gtest/gtest.h>

#include "shardckpt/error.hpp"
#include "shardckpt/training.hpp"
#include "test_util.hpp"

namespace shardckpt {
namespace {

using namespace testing;

Checkpointables state_at(Step step, int P) {
  Sharding s(line_mesh("x", P), PartitionSpec{{"x"}}, Shape{2 * P});
  DenseArray w(DType::f32, {2 * P});
  for (std::int64_t i = 0; i < 2 * P; ++i) w.set<float>(static_cast<std::size_t>(i), static_cast<float>(step * 100 + i));
  return single_tree("params", tree_of({{"w", Leaf(w)}, {"step", Leaf(Scalar(std::int64_t{step}))}}), {{"w", s}});
}

// Policy evaluated element by element.
std::vector<Step> retained_oracle(const std::vector<Step>& finalized, const RetentionPolicy& p) {
  std::vector<Step> out;
  const std::size_t n = finalized.size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool recent = n - i <= static_cast<std::size_t>(p.keep_last);
    const bool periodic = p.keep_period && finalized[i] % *p.keep_period == 0;
    if (recent || periodic) out.push_back(finalized[i]);
  }
  return out;
}

TEST(Policy, ShouldSave) {
  EXPECT_TRUE(should_save(10, 5));
  EXPECT_FALSE(should_save(11, 5));
  EXPECT_TRUE(should_save(0, 1));
  EXPECT_THROW(should_save(3, 0), Error);
}

TEST(Policy, Examples) {
  std::vector<Step> s{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_EQ(retained_steps({1, 2, 3, 4, 5, 6, 7, 8, 9}, {3, std::nullopt}), (std::vector<Step>{7, 8, 9}));
  EXPECT_EQ(retained_steps(s, {3, 4}), (std::vector<Step>{0, 4, 7, 8, 9}));
  EXPECT_TRUE(retained_steps({}, {}).empty());
  EXPECT_THROW((RetentionPolicy{0, std::nullopt}.validate()), Error);
  EXPECT_THROW((RetentionPolicy{1, 0}.validate()), Error);
}

TEST(Policy, MatchesOracle) {
  Rng rng(81);
  for (int i = 0; i < 500; ++i) {
    std::set<Step> steps;
    for (auto n = uniform(rng, 0, 30); n > 0; --n) steps.insert(uniform(rng, 0, 100));
    std::vector<Step> sorted(steps.begin(), steps.end());
    RetentionPolicy p{static_cast<int>(uniform(rng, 1, 6)), std::nullopt};
    if (uniform(rng, 0, 1)) p.keep_period = uniform(rng, 1, 20);
    auto got = retained_steps(sorted, p);
    ASSERT_EQ(got, retained_oracle(sorted, p));
    if (!sorted.empty()) ASSERT_EQ(got.back(), sorted.back());
  }
}

TEST(StepDirs, NamingRoundTrip) {
  EXPECT_EQ(step_dir_name(42), "step_00000042");
  EXPECT_EQ(parse_step_dir("step_00000042"), 42);
  EXPECT_EQ(parse_step_dir("step_123456789"), 123456789);
  EXPECT_FALSE(parse_step_dir("step_42"));
  EXPECT_FALSE(parse_step_dir("step_00000042.tmp.abc"));
  EXPECT_FALSE(parse_step_dir("other"));
  EXPECT_THROW(step_dir_name(-1), Error);
}

class CheckpointerTest : public ::testing::TestWithParam<std::tuple<ControllerMode, bool>> {
 protected:
  ControllerMode mode() const { return std::get<0>(GetParam()); }
  bool rename() const { return std::get<1>(GetParam()); }
};

TEST_P(CheckpointerTest, KeepLastThree) {
  auto b = memory(rename());
  SimulatedRuntime rt(b, runtime_options(2, mode()));
  CheckpointerOptions o;
  o.retention = {3, std::nullopt};
  Checkpointer ck(rt, "run", o);
  for (Step s = 1; s <= 9; ++s) ck.save_step(s, state_at(s, 2));
  ck.wait_until_finished();
  EXPECT_EQ(ck.catalog().finalized_steps(), (std::vector<Step>{7, 8, 9}));
  EXPECT_EQ(ck.catalog(), ck.rebuild_catalog());
  EXPECT_EQ(ck.latest_step(), 9);
  EXPECT_EQ(tree_item(ck.load_step(8), "params"), std::get<TreeItem>(state_at(8, 2).at("params")).tree);
}

TEST_P(CheckpointerTest, KeepPeriodUnion) {
  auto b = memory(rename());
  SimulatedRuntime rt(b, runtime_options(2, mode()));
  CheckpointerOptions o;
  o.retention = {3, 4};
  Checkpointer ck(rt, "run", o);
  for (Step s = 0; s <= 9; ++s) ck.save_step(s, state_at(s, 2));
  ck.wait_until_finished();
  EXPECT_EQ(ck.catalog().finalized_steps(), (std::vector<Step>{0, 4, 7, 8, 9}));
  EXPECT_EQ(ck.catalog(), ck.rebuild_catalog());
  std::set<std::string> dirs;
  for (const auto& c : b->list_children("run")) dirs.insert(c);
  EXPECT_EQ(dirs, (std::set<std::string>{"step_00000000", "step_00000004", "step_00000007", "step_00000008",
                                         "step_00000009"}));
}

TEST_P(CheckpointerTest, GarbageCollectIsIdempotent) {
  auto b = memory(rename());
  SimulatedRuntime rt(b, runtime_options(2, mode()));
  CheckpointerOptions o;
  o.retention = {2, std::nullopt};
  o.collect_after_save = false;
  Checkpointer ck(rt, "run", o);
  for (Step s = 1; s <= 5; ++s) ck.save_step(s, state_at(s, 2));
  ck.wait_until_finished();
  EXPECT_EQ(ck.catalog().finalized_steps().size(), 5u);
  EXPECT_EQ(ck.garbage_collect(), (std::vector<Step>{1, 2, 3}));
  auto after = b->contents();
  EXPECT_TRUE(ck.garbage_collect().empty());
  EXPECT_EQ(b->contents(), after);
  EXPECT_EQ(ck.catalog(), ck.rebuild_catalog());
}

TEST_P(CheckpointerTest, RestartRebuildsCatalog) {
  auto b = memory(rename());
  SimulatedRuntime rt(b, runtime_options(2, mode()));
  CheckpointerOptions o;
  o.retention = {5, std::nullopt};
  {
    Checkpointer ck(rt, "run", o);
    for (Step s : {10, 20, 30}) ck.save_step(s, state_at(s, 2));
  }
  Checkpointer again(rt, "run", o);
  EXPECT_EQ(again.catalog().finalized_steps(), (std::vector<Step>{10, 20, 30}));
  EXPECT_EQ(again.latest_step(), 30);
  EXPECT_THROW(again.save_step(30, state_at(30, 2)), Error);
  EXPECT_THROW(again.save_step(25, state_at(25, 2)), Error);
  again.save_step(31, state_at(31, 2));
  again.wait_until_finished();
  EXPECT_EQ(again.latest_step(), 31);
}

TEST_P(CheckpointerTest, CrashedSaveIsNotLatestAndIsSwept) {
  auto b = memory(rename());
  auto opts = runtime_options(2, mode());
  SimulatedRuntime rt(b, opts);
  CheckpointerOptions o;
  o.retention = {2, std::nullopt};
  Checkpointer ck(rt, "run", o);
  ck.save_step(1, state_at(1, 2));
  ck.wait_until_finished();
  // Storage dies partway through the second save.
  b->set_fault_plan(FaultPlan{12, ""});
  EXPECT_THROW(ck.save_step(2, state_at(2, 2)).wait(), Error);
  b->clear_faults();
  ck.refresh();
  EXPECT_EQ(ck.latest_step(), 1);
  EXPECT_EQ(ck.catalog().finalized_steps(), (std::vector<Step>{1}));
  ck.sweep_tmp(std::chrono::milliseconds(0));
  for (const auto& c : b->list_children("run")) EXPECT_EQ(c, "step_00000001");
  ck.save_step(2, state_at(2, 2));
  ck.wait_until_finished();
  EXPECT_EQ(ck.latest_step(), 2);
}

INSTANTIATE_TEST_SUITE_P(Modes, CheckpointerTest,
                         ::testing::Combine(::testing::Values(ControllerMode::multi_controller,
                                                              ControllerMode::single_controller),
                                            ::testing::Bool()));

TEST(Checkpointer, LatestStepListsOnLeaderOnly) {
  auto b = memory();
  SimulatedRuntime rt(b, runtime_options(8));
  Checkpointer ck(rt, "run", {});
  for (Step s : {3, 6}) ck.save_step(s, state_at(s, 8));
  ck.wait_until_finished();
  b->reset_counters();
  EXPECT_EQ(ck.latest_step(), 6);
  auto c = b->counters();
  EXPECT_GT(c.actor(0).op(OpKind::list), 0u);
  for (int p = 1; p < 8; ++p) EXPECT_EQ(c.actor(p).total_ops(), 0u) << p;
  EXPECT_EQ(c.actor(kControllerActor).total_ops(), 0u);
}

TEST(Checkpointer, ScanIgnoresForeignEntries) {
  auto b = memory();
  b->put("run/notes.txt", to_bytes("x"));
  b->put("run/step_7/x", to_bytes("x"));
  b->put("run/step_00000005.tmp.1/x", to_bytes("x"));
  StepCatalog c = scan_steps(*b, "run");
  EXPECT_TRUE(c.steps.empty());
  EXPECT_FALSE(c.latest_finalized());
}

TEST(Checkpointer, SweepRespectsMinAge) {
  auto b = memory();
  SimulatedRuntime rt(b, runtime_options(1));
  Checkpointer ck(rt, "run", {});
  b->put("run/step_00000005.tmp.abc/x", to_bytes("x"));
  EXPECT_TRUE(ck.sweep_tmp(std::chrono::hours(1)).empty());
  EXPECT_EQ(ck.sweep_tmp(std::chrono::milliseconds(0)), (std::vector<std::string>{"step_00000005.tmp.abc"}));
  EXPECT_FALSE(b->exists("run/step_00000005.tmp.abc"));
}

}  // namespace
}  // namespace shardckpt
