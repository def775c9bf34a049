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
#include <future>
#include <thread>

#include <gtest/gtest.h>

#include "shardckpt/error.hpp"
#include "test_util.hpp"

namespace shardckpt {
namespace {

namespace fs = std::filesystem;
using namespace testing;

Bytes bytes_of(std::string_view s) {
  Bytes b(s.size());
  std::memcpy(b.data(), s.data(), s.size());
  return b;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::parse;
}

class BackendTest : public ::testing::TestWithParam<std::string> {
 protected:
  void SetUp() override {
    if (GetParam() == "fs") {
      dir_ = fs::temp_directory_path() /
             ("shardckpt_storage_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
              ::testing::UnitTest::GetInstance()->current_test_info()->name());
      fs::remove_all(dir_);
      backend_ = std::make_shared<FileSystemBackend>(dir_);
    } else {
      backend_ = memory();
    }
  }
  void TearDown() override {
    if (!dir_.empty()) fs::remove_all(dir_);
  }

  std::shared_ptr<StorageBackend> backend_;
  fs::path dir_;
};

TEST_P(BackendTest, PutGetRange) {
  auto& b = *backend_;
  b.put("a/b/x", bytes_of("hello world"));
  EXPECT_EQ(b.get("a/b/x"), bytes_of("hello world"));
  EXPECT_EQ(b.get_range("a/b/x", 6, 5), bytes_of("world"));
  EXPECT_EQ(code_of([&] { b.get_range("a/b/x", 8, 5); }), ErrorCode::corruption);
  EXPECT_EQ(code_of([&] { b.get("a/missing"); }), ErrorCode::not_found);
  b.put("a/b/x", bytes_of("v2"));
  EXPECT_EQ(b.get("a/b/x"), bytes_of("v2"));
}

TEST_P(BackendTest, ListAndChildren) {
  auto& b = *backend_;
  b.put("r/z", bytes_of("1"));
  b.put("r/a/1", bytes_of("2"));
  b.put("r/a/2/deep", bytes_of("3"));
  b.create_dir("r/empty");
  b.put("other/q", bytes_of("4"));
  EXPECT_EQ(b.list("r"), (std::vector<std::string>{"r/a/1", "r/a/2/deep", "r/z"}));
  EXPECT_EQ(b.list_children("r"), (std::vector<std::string>{"a", "empty", "z"}));
  EXPECT_TRUE(b.list("nothing").empty());
  EXPECT_TRUE(b.list_children("nothing").empty());
}

TEST_P(BackendTest, ExistsStatRemove) {
  auto& b = *backend_;
  b.put("d/f", bytes_of("abc"));
  EXPECT_TRUE(b.exists("d"));
  EXPECT_TRUE(b.exists("d/f"));
  EXPECT_FALSE(b.exists("d/g"));
  auto st = b.stat("d/f");
  ASSERT_TRUE(st);
  EXPECT_EQ(st->size, 3u);
  EXPECT_FALSE(st->is_directory);
  auto sd = b.stat("d");
  ASSERT_TRUE(sd);
  EXPECT_TRUE(sd->is_directory);
  EXPECT_FALSE(b.stat("nope"));
  b.remove("d");
  EXPECT_FALSE(b.exists("d/f"));
  EXPECT_FALSE(b.exists("d"));
  EXPECT_NO_THROW(b.remove("d"));
}

TEST_P(BackendTest, RenameTree) {
  auto& b = *backend_;
  b.put("src/1", bytes_of("x"));
  b.put("src/s/2", bytes_of("y"));
  b.put("dst_taken/q", bytes_of("z"));
  EXPECT_EQ(code_of([&] { b.rename("src", "dst_taken"); }), ErrorCode::already_exists);
  EXPECT_EQ(code_of([&] { b.rename("absent", "elsewhere"); }), ErrorCode::not_found);
  b.rename("src", "dst");
  EXPECT_FALSE(b.exists("src"));
  EXPECT_EQ(b.list("dst"), (std::vector<std::string>{"dst/1", "dst/s/2"}));
  EXPECT_EQ(b.get("dst/s/2"), bytes_of("y"));
}

TEST_P(BackendTest, CountersPerActor) {
  auto& b = *backend_;
  b.reset_counters();
  {
    ActorScope scope(3);
    b.put("ck/process_3/item/leaf/c.0", Bytes(100));
    b.put("ck/process_3/array_metadata.json", Bytes(10));
    b.get("ck/process_3/item/leaf/c.0");
  }
  b.exists("ck");
  auto c = b.counters();
  EXPECT_EQ(c.total.bytes_written, 110u);
  EXPECT_EQ(c.total.payload_bytes_written, 100u);
  EXPECT_EQ(c.total.payload_bytes_read, 100u);
  EXPECT_EQ(c.total.op(OpKind::put), 2u);
  EXPECT_EQ(c.total.op(OpKind::exists), 1u);
  EXPECT_EQ(c.actor(3).op(OpKind::get), 1u);
  EXPECT_EQ(c.actor(kControllerActor).total_ops(), 1u);
  EXPECT_EQ(c.actor(7).total_ops(), 0u);
}

TEST_P(BackendTest, CrashAfterOps) {
  auto& b = *backend_;
  b.set_fault_plan(FaultPlan{2, ""});
  b.put("k/1", Bytes(1));
  b.put("k/2", Bytes(1));
  EXPECT_EQ(code_of([&] { b.put("k/3", Bytes(1)); }), ErrorCode::crash);
  EXPECT_EQ(code_of([&] { b.get("k/1"); }), ErrorCode::crash);
  EXPECT_TRUE(b.crashed());
  b.clear_faults();
  EXPECT_FALSE(b.crashed());
  EXPECT_FALSE(b.exists("k/3"));
  EXPECT_TRUE(b.exists("k/2"));
}

TEST_P(BackendTest, InjectedPutFailureNamesKey) {
  auto& b = *backend_;
  b.set_fault_plan(FaultPlan{std::nullopt, "leaf7"});
  b.put("x/leaf6/c.0", Bytes(1));
  try {
    b.put("x/leaf7/c.0", Bytes(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::storage);
    EXPECT_NE(std::string(e.what()).find("x/leaf7/c.0"), std::string::npos);
  }
  EXPECT_FALSE(b.exists("x/leaf7/c.0"));
}

TEST_P(BackendTest, PayloadGateBlocksOnlyPayload) {
  auto& b = *backend_;
  b.close_payload_gate();
  b.put("g/process_0/array_metadata.json", Bytes(2));
  auto fut = std::async(std::launch::async, [&] { b.put("g/process_0/i/l/c.0", Bytes(4)); });
  EXPECT_EQ(fut.wait_for(std::chrono::milliseconds(100)), std::future_status::timeout);
  EXPECT_FALSE(b.exists("g/process_0/i/l/c.0"));
  b.open_payload_gate();
  fut.get();
  EXPECT_TRUE(b.exists("g/process_0/i/l/c.0"));
}

TEST_P(BackendTest, ConcurrentPutsAreAtomic) {
  auto& b = *backend_;
  const Bytes a(4096, std::byte{0xaa}), z(4096, std::byte{0x55});
  b.put("atom", a);
  std::atomic<bool> stop{false};
  std::thread writer([&] {
    for (int i = 0; i < 200; ++i) b.put("atom", i % 2 ? a : z);
    stop = true;
  });
  while (!stop) {
    Bytes got = b.get("atom");
    ASSERT_TRUE(got == a || got == z);
  }
  writer.join();
}

INSTANTIATE_TEST_SUITE_P(Backends, BackendTest, ::testing::Values("mem", "fs"));

TEST(PayloadKeys, Classification) {
  EXPECT_TRUE(is_payload_key("ck/process_0/params/w/c.0.1"));
  EXPECT_TRUE(is_payload_key("ck/process_0/params/s/c"));
  EXPECT_TRUE(is_payload_key("ck/process_2/d/17"));
  EXPECT_FALSE(is_payload_key("ck/process_2/d/manifest.json"));
  EXPECT_FALSE(is_payload_key("ck/process_0/array_metadata.json"));
  EXPECT_FALSE(is_payload_key("ck/merged_index.json"));
  EXPECT_FALSE(is_payload_key("ck/x/d/17"));
}

TEST(PayloadKeys, JoinKey) {
  EXPECT_EQ(join_key("a", "b"), "a/b");
  EXPECT_EQ(join_key("", "b"), "b");
}

TEST(MakeBackend, Specs) {
  EXPECT_NE(make_backend("mem"), nullptr);
  EXPECT_THROW(make_backend("s3://x"), Error);
  EXPECT_THROW(make_backend("fs:"), Error);
}

TEST(MemoryBackendTest, NonAtomicRenameFlag) {
  EXPECT_TRUE(MemoryBackend(true).supports_atomic_rename());
  EXPECT_FALSE(MemoryBackend(false).supports_atomic_rename());
}

}  // namespace
}  // namespace shardckpt
