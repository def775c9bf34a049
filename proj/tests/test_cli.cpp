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

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cli.hpp"
#include "shardckpt/error.hpp"
#include "shardckpt/training.hpp"
#include "test_util.hpp"

namespace shardckpt {
namespace {

namespace fs = std::filesystem;
using namespace testing;
using nlohmann::json;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("shardckpt_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    backend_ = std::make_shared<FileSystemBackend>(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), {"shardckpt", "--backend", "fs:" + dir_.string()});
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    out_.str("");
    err_.str("");
    return cli::run(static_cast<int>(argv.size()), argv.data(), out_, err_);
  }

  // (256, 64) f32 on a 16x4 grid over 8 processes plus a scalar.
  CheckpointTree save_grid(const std::string& path, int P = 8) {
    SimulatedRuntime rt(backend_, runtime_options(P));
    auto tree = tree_of({{"w", Leaf(iota_f32({256, 64}))}, {"step", Leaf(Scalar(std::int64_t{3}))}});
    Mesh mesh = Mesh::uniform({{"x", 16}, {"y", 4}}, P);
    save_now(rt, path, single_tree("params", tree, {{"w", Sharding(mesh, PartitionSpec{{"x", "y"}}, {256, 64})}}));
    return tree;
  }

  fs::path dir_;
  std::shared_ptr<FileSystemBackend> backend_;
  std::ostringstream out_, err_;
};

TEST_F(CliTest, InspectListsRowsWithoutPayload) {
  save_grid("ck");
  backend_->reset_counters();
  auto rows = cli::inspect_rows(*backend_, "ck");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(backend_->counters().total.payload_bytes_read, 0u);
  EXPECT_EQ(rows[0].path, "step");
  EXPECT_EQ(json::parse(rows[0].value).at("value"), 3);
  EXPECT_EQ(rows[1].path, "w");
  EXPECT_EQ(rows[1].shape, to_string(Shape{256, 64}));
  EXPECT_EQ(rows[1].write_chunk, to_string(Shape{16, 16}));
  EXPECT_EQ(run({"inspect", "ck"}), cli::kExitOk);
  EXPECT_NE(out_.str().find("WRITE_CHUNK"), std::string::npos);
  EXPECT_EQ(run({"inspect", "ck", "--json"}), cli::kExitOk);
  EXPECT_EQ(json::parse(out_.str()).size(), 2u);
  EXPECT_EQ(backend_->counters().total.bytes_written, 0u);
}

TEST_F(CliTest, MissingOrUnfinalizedIsExitTwo) {
  EXPECT_EQ(run({"inspect", "nope"}), cli::kExitUsage);
  EXPECT_EQ(run({"validate", "nope"}), cli::kExitUsage);
  backend_->put("half/process_0/array_metadata.json", to_bytes("{}"));
  EXPECT_EQ(run({"inspect", "half"}), cli::kExitUsage);
  EXPECT_NE(err_.str().find("error"), std::string::npos);
}

TEST_F(CliTest, ValidateIntactAndDeletedChunk) {
  save_grid("ck");
  EXPECT_EQ(run({"validate", "ck"}), cli::kExitOk);
  EXPECT_EQ(out_.str(), "ok\n");
  fs::remove(dir_ / "ck/process_5/params/w/c.10.3");
  EXPECT_EQ(run({"validate", "ck"}), cli::kExitFailure);
  EXPECT_NE(out_.str().find("ck/process_5/params/w/c.10.3"), std::string::npos) << out_.str();
}

TEST_F(CliTest, ValidateConflictingDtypeDocs) {
  save_grid("ck");
  auto key = "ck/process_1/array_metadata.json";
  json doc = json::parse(to_string(backend_->get(key)));
  std::string dumped = doc.dump();
  auto pos = dumped.find("\"f32\"");
  ASSERT_NE(pos, std::string::npos);
  dumped.replace(pos, 5, "\"i32\"");
  backend_->put(key, to_bytes(dumped));
  EXPECT_EQ(run({"validate", "ck"}), cli::kExitFailure);
  auto problems = cli::validate_checkpoint(*backend_, "ck");
  ASSERT_FALSE(problems.empty());
  EXPECT_NE(problems[0].find("params/w"), std::string::npos) << problems[0];
}

TEST_F(CliTest, ReshardSixtyFourByOne) {
  auto tree = save_grid("src");
  EXPECT_EQ(run({"reshard", "src", "dst", "--partitions", "64,1", "--processes", "8", "--subchunk-target-bytes",
                 "256"}),
            cli::kExitOk)
      << err_.str();
  EXPECT_EQ(run({"validate", "dst"}), cli::kExitOk) << out_.str();
  auto meta = read_metadata(*backend_, "dst");
  const auto& w = meta.index.arrays.at("params/w");
  EXPECT_EQ(w.meta.write_chunk, (Shape{4, 64}));
  SimulatedRuntime rt(backend_, runtime_options(8));
  EXPECT_EQ(tree_item(load(rt, "dst"), "params"), tree);
}

TEST_F(CliTest, ReshardIdentityAndLeafSpecific) {
  auto tree = save_grid("src");
  EXPECT_EQ(run({"reshard", "src", "same", "--partitions", "params/w=16,4", "--processes", "8", "--layout",
                 "aggregated", "--sync"}),
            cli::kExitOk)
      << err_.str();
  SimulatedRuntime rt(backend_, runtime_options(8));
  EXPECT_EQ(tree_item(load(rt, "same"), "params"), tree);
  EXPECT_TRUE(backend_->exists("same/process_0/manifest.json"));
}

TEST_F(CliTest, ReshardOntoFewerProcessesWithReplicas) {
  auto tree = save_grid("src");
  EXPECT_EQ(run({"reshard", "src", "dst", "--partitions", "2,1", "--processes", "4", "--replica-parallel"}),
            cli::kExitOk)
      << err_.str();
  SimulatedRuntime rt(backend_, runtime_options(4));
  EXPECT_EQ(tree_item(load(rt, "dst"), "params"), tree);
}

TEST_F(CliTest, ReshardIndivisibleIsExitOne) {
  save_grid("src");
  EXPECT_EQ(run({"reshard", "src", "dst", "--partitions", "7,1", "--processes", "7"}), cli::kExitFailure);
  EXPECT_FALSE(is_finalized(*backend_, "dst"));
  EXPECT_EQ(run({"reshard", "missing", "dst", "--partitions", "2,1"}), cli::kExitUsage);
}

TEST_F(CliTest, PartitionSharding) {
  Sharding s = cli::partition_sharding({8, 6}, {4, 1}, 2);
  EXPECT_EQ(s.partition_counts(), (Shape{4, 1}));
  EXPECT_EQ(s.mesh().process_count(), 2);
  Sharding r = cli::partition_sharding({8, 6}, {2, 1}, 8);
  EXPECT_EQ(r.mesh().replica_axis(), "r");
  EXPECT_EQ(r.mesh().device_count(), 8u);
  EXPECT_THROW(cli::partition_sharding({8, 6}, {3, 1}, 2), Error);
  EXPECT_THROW(cli::partition_sharding({8, 6}, {4, 1}, 3), Error);
  EXPECT_THROW(cli::partition_sharding({8, 6}, {4}, 2), Error);
}

TEST_F(CliTest, BenchReportRatios) {
  EXPECT_EQ(run({"bench", "--processes", "2", "--replicas", "4", "--seed", "5", "--format", "json"}), cli::kExitOk)
      << err_.str();
  json report = json::parse(out_.str());
  const auto& cmp = report.at("comparisons");
  EXPECT_NEAR(cmp.at("write_max_per_process_ratio").get<double>(), 0.25, 0.01);
  EXPECT_DOUBLE_EQ(cmp.at("payload_read_ratio").get<double>(), 0.25);
  for (const auto& l : report.at("load")) EXPECT_TRUE(l.at("equal").get<bool>());
  EXPECT_EQ(report.at("save").size(), 2u);
  EXPECT_EQ(report.at("load").size(), 4u);
  // Counter totals in the report equal the sum over actors.
  for (const auto& s : report.at("save")) {
    std::uint64_t sum = 0;
    for (const auto& [actor, c] : s.at("per_actor").items()) sum += c.at("bytes_written").get<std::uint64_t>();
    EXPECT_EQ(sum, s.at("counters").at("bytes_written").get<std::uint64_t>());
  }
}

TEST_F(CliTest, BenchSingleProcessStrategiesCoincide) {
  ASSERT_EQ(run({"bench", "--format", "json", "--sync", "--mode", "single"}), cli::kExitOk) << err_.str();
  json report = json::parse(out_.str());
  const auto& save = report.at("save");
  EXPECT_EQ(save[0].at("payload_written"), save[1].at("payload_written"));
  EXPECT_DOUBLE_EQ(report.at("comparisons").at("write_max_per_process_ratio").get<double>(), 1.0);
  EXPECT_EQ(report.at("config").at("mode"), "single");
}

TEST_F(CliTest, BenchModelSpecAndTable) {
  auto spec = dir_ / "model.json";
  std::ofstream(spec) << R"([{"path": "a/w", "shape": [8, 4], "dtype": "f64", "partition": ["fsdp", null]},
                             {"path": "b", "shape": [3], "dtype": "i32"}])";
  auto json_out = dir_ / "report.json";
  EXPECT_EQ(run({"bench", "--model-spec", spec.string(), "--processes", "2", "--replicas", "2", "--json-out",
                 json_out.string()}),
            cli::kExitOk)
      << err_.str();
  EXPECT_NE(out_.str().find("replica-parallel"), std::string::npos);
  std::ifstream in(json_out);
  EXPECT_EQ(json::parse(in).at("config").at("leaves"), 2);
  EXPECT_EQ(run({"bench", "--model-spec", (dir_ / "absent.json").string()}), cli::kExitUsage);
}

TEST_F(CliTest, ConfigFileMirrorsFlags) {
  auto cfg = dir_ / "cfg.json";
  std::ofstream(cfg) << R"({"bench": {"processes": 2, "replicas": 2, "format": "json", "strategy": "single-slice",
                                      "load-strategy": "direct", "seed": 9}})";
  EXPECT_EQ(run({"--config", cfg.string(), "bench"}), cli::kExitOk) << err_.str();
  json report = json::parse(out_.str());
  EXPECT_EQ(report.at("config").at("processes_per_replica"), 2);
  EXPECT_EQ(report.at("config").at("seed"), 9);
  EXPECT_EQ(report.at("save").size(), 1u);
  std::ofstream(cfg) << "not json";
  EXPECT_EQ(run({"--config", cfg.string(), "bench"}), cli::kExitUsage);
}

TEST_F(CliTest, LoadCommandPartialAndReadOnly) {
  save_grid("ck");
  backend_->reset_counters();
  EXPECT_EQ(run({"load", "ck", "--processes", "8", "--json"}), cli::kExitOk) << err_.str();
  json full = json::parse(out_.str());
  EXPECT_EQ(full.at("leaves").size(), 2u);
  EXPECT_EQ(full.at("counters").at("bytes_written"), 0);
  EXPECT_EQ(backend_->counters().total.bytes_written, 0u);
  EXPECT_EQ(run({"load", "ck", "--processes", "8", "--partial", "--only", "params/step", "--json"}), cli::kExitOk)
      << err_.str();
  json part = json::parse(out_.str());
  ASSERT_EQ(part.at("leaves").size(), 1u);
  EXPECT_EQ(part.at("counters").at("payload_bytes_read"), 0);
  EXPECT_EQ(run({"load", "ck", "--only", "params/step"}), cli::kExitFailure);
  EXPECT_EQ(run({"load", "ck", "--processes", "2"}), cli::kExitFailure);
}

TEST_F(CliTest, LoadCommandDigestsMatchAcrossLayouts) {
  save_grid("ck");
  ASSERT_EQ(run({"reshard", "ck", "agg", "--partitions", "8,1", "--processes", "8", "--layout", "aggregated"}),
            cli::kExitOk)
      << err_.str();
  ASSERT_EQ(run({"load", "ck", "--processes", "8", "--json"}), cli::kExitOk);
  json a = json::parse(out_.str()).at("leaves");
  ASSERT_EQ(run({"load", "agg", "--processes", "8", "--json", "--mode", "single"}), cli::kExitOk) << err_.str();
  json b = json::parse(out_.str()).at("leaves");
  EXPECT_EQ(a, b);
}

TEST_F(CliTest, LoadCommandSafetensors) {
  fs::copy_file(fs::path(SHARDCKPT_SAFETENSORS_DIR) / "simple.safetensors", dir_ / "m.safetensors");
  EXPECT_EQ(run({"load", "m.safetensors", "--layout", "safetensors"}), cli::kExitOk) << err_.str();
  EXPECT_NE(out_.str().find("tensors/t"), std::string::npos);
  EXPECT_EQ(run({"load", "m.safetensors", "--layout", "native"}), cli::kExitUsage);
  fs::copy_file(fs::path(SHARDCKPT_SAFETENSORS_DIR) / "overlap.safetensors", dir_ / "bad.safetensors");
  EXPECT_EQ(run({"load", "bad.safetensors", "--layout", "safetensors"}), cli::kExitFailure);
}

TEST_F(CliTest, CrashFlag) {
  save_grid("ck");
  EXPECT_EQ(run({"reshard", "ck", "dst", "--partitions", "8,1", "--processes", "8", "--crash", "3:writes_done"}),
            cli::kExitFailure);
  EXPECT_NE(err_.str().find("crash"), std::string::npos) << err_.str();
  EXPECT_FALSE(is_finalized(*backend_, "dst"));
  EXPECT_EQ(run({"reshard", "ck", "dst2", "--partitions", "8,1", "--crash", "x"}), cli::kExitFailure);
  EXPECT_EQ(cli::parse_crash_point("2:finalized").process, 2);
  EXPECT_THROW(cli::parse_crash_point(":a"), Error);
}

TEST_F(CliTest, GcAppliesRetention) {
  SimulatedRuntime rt(backend_, runtime_options(1));
  CheckpointerOptions o;
  o.retention = {10, std::nullopt};
  {
    Checkpointer ck(rt, "run", o);
    for (Step s = 1; s <= 6; ++s) ck.save_step(s, single_tree("p", tree_of({{"x", Leaf(iota_f32({2}))}})));
  }
  backend_->create_dir("run/step_00000007.tmp.dead");
  EXPECT_EQ(run({"gc", "run", "--keep-last", "2", "--keep-period", "3", "--sweep-tmp", "--min-age-seconds", "0"}),
            cli::kExitOk)
      << err_.str();
  std::vector<std::string> left = backend_->list_children("run");
  EXPECT_EQ(left, (std::vector<std::string>{"step_00000003", "step_00000005", "step_00000006"}));
  EXPECT_NE(out_.str().find("swept step_00000007.tmp.dead"), std::string::npos);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}), cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}), cli::kExitUsage);
  EXPECT_EQ(run({"bench", "--strategy", "nope"}), cli::kExitUsage);
  EXPECT_EQ(run({"--help"}), cli::kExitOk);
  EXPECT_EQ(run({"reshard", "a", "b", "--subchunk-target-bytes", "lots"}), cli::kExitFailure);
}

}  // namespace
}  // namespace shardckpt
