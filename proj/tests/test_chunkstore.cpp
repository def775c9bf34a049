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

#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "shardckpt/error.hpp"
#include "test_util.hpp"

namespace shardckpt {
namespace {

using namespace testing;

std::vector<std::int64_t> prime_factors(std::int64_t n) {
  std::vector<std::int64_t> out;
  for (std::int64_t p = 2; p * p <= n; ++p)
    while (n % p == 0) {
      out.push_back(p);
      n /= p;
    }
  if (n > 1) out.push_back(n);
  return out;
}

std::vector<std::int64_t> divisors(std::int64_t n) {
  std::vector<std::int64_t> out;
  for (std::int64_t d = 1; d <= n; ++d)
    if (n % d == 0) out.push_back(d);
  return out;
}

// Candidate chunk shapes in the order the rule visits them: the shard
// itself, then for each dimension from the outermost, the shard with all
// earlier dimensions at 1 and this one divided by growing prefixes of its
// ascending prime factorisation. The answer is the first that fits, or the
// last candidate when none does.
Shape chunk_shape_oracle(const Shape& shard, DType dtype, std::uint64_t target) {
  const auto w = dtype_width(dtype);
  auto fits = [&](const Shape& s) { return static_cast<std::uint64_t>(num_elements(s)) * w <= target; };
  std::vector<Shape> candidates{shard};
  Shape cur = shard;
  for (std::size_t d = 0; d < shard.size(); ++d) {
    std::int64_t div = 1;
    for (std::int64_t p : prime_factors(shard[d])) {
      div *= p;
      cur[d] = shard[d] / div;
      candidates.push_back(cur);
    }
  }
  for (const auto& c : candidates)
    if (fits(c)) return c;
  return candidates.back();
}

TEST(ChooseChunkShape, Examples) {
  EXPECT_EQ(choose_chunk_shape({64, 64}, DType::f32, 4096), (Shape{16, 64}));
  EXPECT_EQ(choose_chunk_shape({16, 16}, DType::f32, 32u << 20), (Shape{16, 16}));
  EXPECT_EQ(choose_chunk_shape({3, 5}, DType::f64, 1000), (Shape{3, 5}));
  EXPECT_EQ(choose_chunk_shape({16, 16}, DType::f32, 256), (Shape{4, 16}));
  EXPECT_EQ(choose_chunk_shape({}, DType::f32, 4), (Shape{}));
  EXPECT_EQ(choose_chunk_shape({7, 11}, DType::f32, 4), (Shape{1, 1}));
}

TEST(ChooseChunkShape, MatchesOracle) {
  Rng rng(31);
  const std::vector<DType> dtypes{DType::f32, DType::f64, DType::u8, DType::i32};
  for (int i = 0; i < 2000; ++i) {
    Shape shard;
    for (auto r = uniform(rng, 0, 3); r > 0; --r) shard.push_back(uniform(rng, 1, 96));
    DType dt = pick(rng, dtypes);
    std::uint64_t target = static_cast<std::uint64_t>(uniform(rng, static_cast<std::int64_t>(dtype_width(dt)), 1 << 16));
    Shape got = choose_chunk_shape(shard, dt, target);
    ASSERT_EQ(got, chunk_shape_oracle(shard, dt, target)) << to_string(shard) << " target " << target;
    for (std::size_t d = 0; d < shard.size(); ++d) ASSERT_EQ(shard[d] % got[d], 0);
  }
}

TEST(ChooseChunkShape, LargestFittingAmongCandidates) {
  // Brute force over every divisor grid: the result fits whenever any
  // even subdivision fits.
  Rng rng(32);
  for (int i = 0; i < 300; ++i) {
    Shape shard{uniform(rng, 1, 48), uniform(rng, 1, 48)};
    std::uint64_t target = static_cast<std::uint64_t>(uniform(rng, 4, 8192));
    Shape got = choose_chunk_shape(shard, DType::f32, target);
    bool any_fits = false;
    for (auto a : divisors(shard[0]))
      for (auto b : divisors(shard[1])) any_fits |= static_cast<std::uint64_t>(a * b * 4) <= target;
    if (any_fits) ASSERT_LE(static_cast<std::uint64_t>(num_elements(got) * 4), target);
  }
}

TEST(CoordKeys, RoundTrip) {
  EXPECT_EQ(coord_key({0, 3, 1}), "0.3.1");
  EXPECT_EQ(coord_key({}), "");
  EXPECT_EQ(chunk_object_name({0, 3, 1}), "c.0.3.1");
  EXPECT_EQ(chunk_object_name({}), "c");
  EXPECT_EQ(parse_coord_key("12.0.5"), (std::vector<std::int64_t>{12, 0, 5}));
  EXPECT_TRUE(parse_coord_key("").empty());
  EXPECT_THROW(parse_coord_key("1..2"), Error);
  EXPECT_EQ(process_dir(3), "process_3");
}

TEST(StorageMetadata, Validation) {
  ArrayStorageMetadata m{{256, 64}, DType::f32, {16, 16}, {4, 16}, Layout::per_leaf};
  EXPECT_NO_THROW(m.validate());
  EXPECT_EQ(m.write_grid(), (Shape{16, 4}));
  EXPECT_EQ(m.write_chunk_bytes(), 1024u);
  EXPECT_EQ(storage_metadata_from_json(to_json(m)), m);
  auto bad = m;
  bad.read_chunk = {3, 16};
  EXPECT_THROW(bad.validate(), Error);
  bad = m;
  bad.write_chunk = {24, 16};
  EXPECT_THROW(bad.validate(), Error);
  bad = m;
  bad.read_chunk = {16};
  EXPECT_THROW(bad.validate(), Error);
}

// Writes `global` split into `shard_shape` blocks; block b goes to process
// owner(b). Every process writes its metadata document.
MergedIndex write_blocks(StorageBackend& b, const std::string& ckpt, const std::string& leaf, const DenseArray& global,
                         const ArrayStorageMetadata& meta, const Shape& shard_shape, int processes,
                         const std::function<int(std::size_t)>& owner, std::uint64_t target_file_bytes = kDefaultTargetFileBytes) {
  const auto width = dtype_width(meta.dtype);
  Shape grid(meta.global_shape.size());
  for (std::size_t d = 0; d < grid.size(); ++d) grid[d] = meta.global_shape[d] / shard_shape[d];
  std::vector<std::vector<Box>> boxes(static_cast<std::size_t>(processes));
  std::size_t n = 0;
  for_each_coord(grid, [&](const std::vector<std::int64_t>& c) {
    Box box(c.size());
    for (std::size_t d = 0; d < c.size(); ++d) box[d] = {c[d] * shard_shape[d], shard_shape[d]};
    boxes[static_cast<std::size_t>(owner(n++))].push_back(box);
  });
  for (int p = 0; p < processes; ++p) {
    ChunkWriter w(b, ckpt, p, meta.layout, target_file_bytes);
    std::vector<Bytes> keep;
    std::vector<ChunkWriter::ShardData> shards;
    for (const Box& box : boxes[static_cast<std::size_t>(p)])
      keep.push_back(extract_box(global.bytes(), full_box(meta.global_shape), box, width));
    for (std::size_t i = 0; i < keep.size(); ++i) shards.push_back({boxes[static_cast<std::size_t>(p)][i], keep[i]});
    if (shards.empty())
      w.declare_array(leaf, meta);
    else
      w.write_array(leaf, shards, meta);
    w.finish();
  }
  return merge_process_indices(b, ckpt, processes);
}

Shape random_divisor_shape(Rng& rng, const Shape& of) {
  Shape out;
  for (auto e : of) out.push_back(pick(rng, divisors(e)));
  return out;
}

// Brute-force bytes_loaded: visits every element of the request and
// collects the read units it touches.
std::uint64_t overhead_oracle(const ArrayStorageMetadata& m, const Box& range) {
  const auto rank = m.global_shape.size();
  const auto width = dtype_width(m.dtype);
  bool contiguous = true;
  {
    std::size_t k = 0;
    while (k < rank && m.read_chunk[k] == 1) ++k;
    for (std::size_t d = k + 1; d < rank; ++d) contiguous &= m.read_chunk[d] == m.write_chunk[d];
  }
  const Shape& unit = (m.read_chunk != m.write_chunk && contiguous) ? m.read_chunk : m.write_chunk;
  std::set<std::vector<std::int64_t>> touched;
  for_each_coord(extents(range), [&](const std::vector<std::int64_t>& c) {
    std::vector<std::int64_t> u(rank);
    for (std::size_t d = 0; d < rank; ++d) u[d] = (range[d].offset + c[d]) / unit[d];
    touched.insert(u);
  });
  return touched.size() * static_cast<std::uint64_t>(num_elements(unit)) * width;
}

Box random_subbox(Rng& rng, const Shape& shape) {
  Box b;
  for (auto e : shape) {
    auto lo = uniform(rng, 0, e - 1);
    b.push_back({lo, uniform(rng, 1, e - lo)});
  }
  return b;
}

struct Case {
  ArrayStorageMetadata meta;
  Shape shard;
  int processes;
};

Case random_case(Rng& rng, Layout layout) {
  Shape shape;
  for (auto r = uniform(rng, 0, 3); r > 0; --r) shape.push_back(pick(rng, std::vector<std::int64_t>{1, 2, 4, 6, 8, 12, 16}));
  Shape shard = random_divisor_shape(rng, shape);
  Shape wc = random_divisor_shape(rng, shard);
  Shape rc = random_divisor_shape(rng, wc);
  const std::vector<DType> dtypes{DType::f32, DType::f64, DType::i32, DType::i64, DType::u8, DType::boolean};
  return {{shape, pick(rng, dtypes), wc, rc, layout}, shard, static_cast<int>(uniform(rng, 1, 4))};
}

class LayoutTest : public ::testing::TestWithParam<Layout> {};

TEST_P(LayoutTest, RoundTripAndOverheadLaw) {
  Rng rng(33 + static_cast<int>(GetParam()));
  for (int i = 0; i < 150; ++i) {
    auto b = memory();
    Case c = random_case(rng, GetParam());
    DenseArray global = random_array(rng, c.meta.dtype, c.meta.global_shape);
    auto owner = [&](std::size_t n) { return static_cast<int>(n % static_cast<std::size_t>(c.processes)); };
    MergedIndex idx = write_blocks(*b, "ck", "tree/a", global, c.meta, c.shard, c.processes, owner, 256);
    const ArrayIndex& ai = idx.arrays.at("tree/a");
    ReadResult all = read_range(*b, "ck", "tree/a", ai, full_box(c.meta.global_shape));
    ASSERT_TRUE(std::equal(all.data.begin(), all.data.end(), global.bytes().begin(), global.bytes().end()));
    for (int r = 0; r < 5; ++r) {
      Box range = random_subbox(rng, c.meta.global_shape);
      auto before = b->counters().total;
      ReadResult got = read_range(*b, "ck", "tree/a", ai, range);
      auto delta = b->counters().total - before;
      Bytes want = extract_box(global.bytes(), full_box(c.meta.global_shape), range, dtype_width(c.meta.dtype));
      ASSERT_EQ(got.data, want);
      ASSERT_EQ(got.stats.bytes_requested, want.size());
      ASSERT_EQ(got.stats.bytes_loaded, overhead_oracle(c.meta, range))
          << to_string(c.meta.write_chunk) << " " << to_string(c.meta.read_chunk) << " " << to_string(range);
      ASSERT_EQ(delta.payload_bytes_read, got.stats.bytes_loaded);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Layouts, LayoutTest, ::testing::Values(Layout::per_leaf, Layout::aggregated));

TEST(ReadRange, UnalignedRowsOverheadFour) {
  auto b = memory();
  DenseArray global = iota_f32({256, 64});
  ArrayStorageMetadata m{{256, 64}, DType::f32, {16, 16}, {16, 16}, Layout::per_leaf};
  auto idx = write_blocks(*b, "ck", "w", global, m, {16, 16}, 8, [](std::size_t n) { return static_cast<int>(n / 8); });
  ReadResult r = read_range(*b, "ck", "w", idx.arrays.at("w"), Box{{0, 4}, {0, 64}});
  EXPECT_EQ(r.stats.bytes_loaded, 4 * r.stats.bytes_requested);
  m.read_chunk = {4, 16};
  auto b2 = memory();
  auto idx2 = write_blocks(*b2, "ck", "w", global, m, {16, 16}, 8, [](std::size_t n) { return static_cast<int>(n / 8); });
  ReadResult r2 = read_range(*b2, "ck", "w", idx2.arrays.at("w"), Box{{0, 4}, {0, 64}});
  EXPECT_EQ(r2.stats.bytes_loaded, r2.stats.bytes_requested);
  EXPECT_EQ(r2.data, r.data);
}

TEST(ReadRange, MissingChunkIsCorruption) {
  auto b = memory();
  ArrayStorageMetadata m{{4, 4}, DType::f32, {2, 4}, {2, 4}, Layout::per_leaf};
  auto idx = write_blocks(*b, "ck", "x", iota_f32({4, 4}), m, {2, 4}, 1, [](std::size_t) { return 0; });
  b->raw_erase("ck/process_0/x/c.1.0");
  try {
    read_range(*b, "ck", "x", idx.arrays.at("x"), full_box({4, 4}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::corruption);
  }
}

TEST(ChunkWriterTest, SingleDeviceChunkName) {
  auto b = memory();
  ArrayStorageMetadata m{{3, 5}, DType::f32, {3, 5}, {3, 5}, Layout::per_leaf};
  write_blocks(*b, "ck", "p/w", iota_f32({3, 5}), m, {3, 5}, 1, [](std::size_t) { return 0; });
  EXPECT_TRUE(b->exists("ck/process_0/p/w/c.0.0"));
  EXPECT_TRUE(b->exists("ck/process_0/array_metadata.json"));
}

TEST(ChunkWriterTest, SubchunkAddressable) {
  auto b = memory();
  ArrayStorageMetadata m{{16, 16}, DType::f32, {16, 16}, {4, 16}, Layout::per_leaf};
  DenseArray g = iota_f32({16, 16});
  auto idx = write_blocks(*b, "ck", "w", g, m, {16, 16}, 1, [](std::size_t) { return 0; });
  EXPECT_EQ(b->list("ck/process_0/w").size(), 1u);
  for (int s = 0; s < 4; ++s) {
    ReadResult r = read_range(*b, "ck", "w", idx.arrays.at("w"), Box{{4 * s, 4}, {0, 16}});
    EXPECT_EQ(r.stats.bytes_loaded, 256u);
    EXPECT_EQ(r.data, extract_box(g.bytes(), full_box({16, 16}), Box{{4 * s, 4}, {0, 16}}, 4));
  }
}

TEST(ChunkWriterTest, RejectsMisalignedAndDuplicate) {
  auto b = memory();
  ArrayStorageMetadata m{{8}, DType::f32, {4}, {4}, Layout::per_leaf};
  Bytes data(16);
  ChunkWriter w(*b, "ck", 0, Layout::per_leaf);
  std::vector<ChunkWriter::ShardData> mis{{Box{{2, 4}}, data}};
  EXPECT_THROW(w.write_array("a", mis, m), Error);
  std::vector<ChunkWriter::ShardData> short_bytes{{Box{{0, 4}}, std::span<const std::byte>(data).first(8)}};
  EXPECT_THROW(w.write_array("b", short_bytes, m), Error);
  std::vector<ChunkWriter::ShardData> ok{{Box{{0, 4}}, data}};
  w.write_array("c", ok, m);
  EXPECT_THROW(w.write_array("c", ok, m), Error);
}

// Greedy packing, recomputed independently.
std::size_t simulate_packing(const std::vector<std::uint64_t>& lengths, std::uint64_t target) {
  std::size_t files = 0;
  std::uint64_t fill = 0;
  for (auto len : lengths) {
    if (files == 0 || (fill > 0 && fill + len > target)) {
      ++files;
      fill = 0;
    }
    fill += len;
  }
  return files;
}

TEST(Aggregated, SixtyFourShardsOneMiB) {
  auto b = memory();
  ArrayStorageMetadata m{{64, 1024}, DType::f32, {1, 1024}, {1, 1024}, Layout::aggregated};
  DenseArray g = iota_f32({64, 1024});
  auto idx = write_blocks(*b, "ck", "w", g, m, {1, 1024}, 1, [](std::size_t) { return 0; }, 1u << 20);
  auto manifest = AggregatedManifest::from_json(nlohmann::json::parse(
      [&] { auto raw = b->get("ck/process_0/manifest.json"); return std::string(reinterpret_cast<const char*>(raw.data()), raw.size()); }()));
  const std::size_t want = (64u * 4096u + (1u << 20) - 1) / (1u << 20);
  EXPECT_EQ(manifest.file_count(), want);
  EXPECT_EQ(manifest.entries().size(), 64u);
  for (int r = 0; r < 64; ++r) EXPECT_NE(manifest.find("w/c." + std::to_string(r) + ".0"), nullptr);
  std::size_t data_files = 0;
  for (const auto& k : b->list("ck/process_0/d")) data_files += is_payload_key(k);
  EXPECT_EQ(data_files, want);
}

TEST(Aggregated, FileCountMatchesSimulation) {
  Rng rng(34);
  for (int i = 0; i < 60; ++i) {
    auto b = memory();
    const std::uint64_t target = static_cast<std::uint64_t>(uniform(rng, 16, 2048));
    ChunkWriter w(*b, "ck", 0, Layout::aggregated, target);
    std::map<std::string, std::uint64_t> lengths;  // chunk key -> bytes, in key order
    const auto leaves = uniform(rng, 1, 6);
    for (std::int64_t l = 0; l < leaves; ++l) {
      Shape shape{uniform(rng, 1, 12), uniform(rng, 1, 9)};
      ArrayStorageMetadata m{shape, DType::f32, {1, shape[1]}, {1, shape[1]}, Layout::aggregated};
      DenseArray g = random_array(rng, DType::f32, shape);
      std::vector<ChunkWriter::ShardData> shards{{full_box(shape), g.bytes()}};
      std::string leaf = "leaf" + std::to_string(l);
      w.write_array(leaf, shards, m);
      for (std::int64_t r = 0; r < shape[0]; ++r)
        lengths[leaf + "/c." + std::to_string(r) + ".0"] = static_cast<std::uint64_t>(shape[1]) * 4;
    }
    w.finish();
    std::vector<std::uint64_t> in_order;
    for (const auto& [k, v] : lengths) in_order.push_back(v);
    std::size_t data_files = 0;
    for (const auto& k : b->list("ck/process_0/d")) data_files += is_payload_key(k);
    ASSERT_EQ(data_files, simulate_packing(in_order, target));
    ASSERT_EQ(packed_file_count(in_order, target), simulate_packing(in_order, target));
  }
}

TEST(Manifest, LookupAgreesWithLinearScan) {
  Rng rng(35);
  for (int i = 0; i < 50; ++i) {
    std::vector<AggregatedManifest::Entry> entries;
    std::set<std::string> keys;
    std::uint64_t off = 0;
    for (auto n = uniform(rng, 0, 80); n > 0; --n) {
      std::string k = "l" + std::to_string(uniform(rng, 0, 30)) + "/c." + std::to_string(uniform(rng, 0, 30));
      if (!keys.insert(k).second) continue;
      auto len = static_cast<std::uint64_t>(uniform(rng, 1, 100));
      entries.push_back({k, {"0", off, len}});
      off += len;
    }
    std::shuffle(entries.begin(), entries.end(), rng);
    AggregatedManifest m(1024, entries);
    ASSERT_TRUE(std::is_sorted(m.entries().begin(), m.entries().end(),
                               [](const auto& a, const auto& b) { return a.key < b.key; }));
    for (int q = 0; q < 60; ++q) {
      std::string k = "l" + std::to_string(uniform(rng, 0, 30)) + "/c." + std::to_string(uniform(rng, 0, 30));
      const FileSpan* linear = nullptr;
      for (const auto& e : entries)
        if (e.key == k) linear = &e.span;
      const FileSpan* found = m.find(k);
      ASSERT_EQ(found == nullptr, linear == nullptr);
      if (found) ASSERT_EQ(*found, *linear);
    }
    ASSERT_EQ(AggregatedManifest::from_json(m.to_json()).entries(), m.entries());
  }
}

TEST(Manifest, RejectsOverlapAndDuplicates) {
  EXPECT_THROW(AggregatedManifest(64, {{"a", {"0", 0, 10}}, {"b", {"0", 5, 10}}}), Error);
  EXPECT_THROW(AggregatedManifest(64, {{"a", {"0", 0, 10}}, {"a", {"1", 0, 10}}}), Error);
  EXPECT_NO_THROW(AggregatedManifest(64, {{"a", {"0", 0, 10}}, {"b", {"1", 5, 10}}}));
}

TEST(Merge, UnionOfDisjointProcessesReadsNoPayload) {
  auto b = memory();
  ArrayStorageMetadata m{{256, 64}, DType::f32, {16, 16}, {16, 16}, Layout::per_leaf};
  DenseArray g = iota_f32({256, 64});
  write_blocks(*b, "ck", "w", g, m, {16, 16}, 8, [](std::size_t n) { return static_cast<int>(n % 8); });
  b->reset_counters();
  MergedIndex idx = merge_process_indices(*b, "ck", 8);
  auto c = b->counters().total;
  EXPECT_EQ(c.payload_bytes_read, 0u);
  EXPECT_EQ(c.op(OpKind::get), 8u);
  const auto& chunks = idx.arrays.at("w").chunks;
  EXPECT_EQ(chunks.size(), 64u);
  std::size_t n = 0;
  for_each_coord({16, 4}, [&](const std::vector<std::int64_t>& co) {
    EXPECT_EQ(chunks.at(coord_key(co)).process, static_cast<int>(n++ % 8));
  });
  MergedIndex back = MergedIndex::from_json(idx.to_json());
  EXPECT_EQ(back.to_json(), idx.to_json());
  EXPECT_TRUE(verify_chunks(*b, "ck", idx).empty());
  b->raw_erase("ck/process_3/w/c.0.3");
  EXPECT_EQ(verify_chunks(*b, "ck", idx).size(), 1u);
}

TEST(Merge, SingleProcess) {
  auto b = memory();
  ArrayStorageMetadata m{{4}, DType::i32, {2}, {2}, Layout::aggregated};
  auto idx = write_blocks(*b, "ck", "v", DenseArray(DType::i32, {4}), m, {4}, 1, [](std::size_t) { return 0; });
  ASSERT_EQ(idx.arrays.size(), 1u);
  const auto& ai = idx.arrays.at("v");
  ASSERT_EQ(ai.chunks.size(), 2u);
  EXPECT_TRUE(ai.chunks.at("0").span.has_value());
  auto addr = locate_chunk("ck", "v", ai, {1});
  EXPECT_EQ(addr.length, 8u);
  EXPECT_FALSE(addr.whole_object);
}

ErrorCode merge_error(StorageBackend& b, int processes) {
  try {
    merge_process_indices(b, "ck", processes);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::parse;
}

TEST(Merge, CollisionIsConsistencyError) {
  auto b = memory();
  ArrayStorageMetadata m{{4}, DType::f32, {2}, {2}, Layout::per_leaf};
  Bytes data(8);
  for (int p = 0; p < 2; ++p) {
    ChunkWriter w(*b, "ck", p, Layout::per_leaf);
    std::vector<ChunkWriter::ShardData> shards{{Box{{0, 2}}, data}};
    if (p == 1) shards.push_back({Box{{2, 2}}, data});
    w.write_array("x", shards, m);
    w.finish();
  }
  EXPECT_EQ(merge_error(*b, 2), ErrorCode::consistency);
}

TEST(Merge, MissingDocIsNotFound) {
  auto b = memory();
  ArrayStorageMetadata m{{4}, DType::f32, {2}, {2}, Layout::per_leaf};
  write_blocks(*b, "ck", "x", DenseArray(DType::f32, {4}), m, {2}, 2, [](std::size_t n) { return static_cast<int>(n); });
  EXPECT_EQ(merge_error(*b, 3), ErrorCode::not_found);
}

TEST(Merge, ConflictingMetadataAndGaps) {
  auto b = memory();
  Bytes data(8);
  for (int p = 0; p < 2; ++p) {
    ArrayStorageMetadata m{{4}, p == 0 ? DType::f32 : DType::i32, {2}, {2}, Layout::per_leaf};
    ChunkWriter w(*b, "ck", p, Layout::per_leaf);
    std::vector<ChunkWriter::ShardData> shards{{Box{{2 * p, 2}}, data}};
    w.write_array("x", shards, m);
    w.finish();
  }
  EXPECT_EQ(merge_error(*b, 2), ErrorCode::consistency);

  auto g = memory();
  ArrayStorageMetadata m{{4}, DType::f32, {2}, {2}, Layout::per_leaf};
  ChunkWriter w(*g, "ck", 0, Layout::per_leaf);
  std::vector<ChunkWriter::ShardData> half{{Box{{0, 2}}, data}};
  w.write_array("x", half, m);
  w.finish();
  EXPECT_EQ(merge_error(*g, 1), ErrorCode::consistency);
}

TEST(PackedFileCount, Examples) {
  std::vector<std::uint64_t> l{4, 4, 4, 4};
  EXPECT_EQ(packed_file_count(l, 8), 2u);
  EXPECT_EQ(packed_file_count(l, 3), 4u);
  EXPECT_EQ(packed_file_count(l, 100), 1u);
  EXPECT_EQ(packed_file_count({}, 100), 0u);
}

}  // namespace
}  // namespace shardckpt
