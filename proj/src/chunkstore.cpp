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

#include "shardckpt/chunkstore.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>

#include "shardckpt/error.hpp"

namespace shardckpt {

using nlohmann::json;

namespace {

constexpr const char* kProcessFormat = "shardckpt.process/1";
constexpr const char* kIndexFormat = "shardckpt.index/1";

std::int64_t smallest_prime_factor(std::int64_t n) {
  for (std::int64_t f = 2; f * f <= n; ++f)
    if (n % f == 0) return f;
  return n;
}

Bytes dump_bytes(const json& j) {
  std::string s = j.dump();
  Bytes b(s.size());
  std::memcpy(b.data(), s.data(), s.size());
  return b;
}

json parse_bytes(const Bytes& b, const std::string& what) {
  try {
    return json::parse(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, what + ": " + e.what());
  }
}

// True when every subchunk of `sub` inside `chunk` occupies one contiguous
// byte run of the chunk's row-major buffer.
bool subchunks_contiguous(const Shape& sub, const Shape& chunk) {
  std::size_t k = 0;
  while (k < sub.size() && sub[k] == 1) ++k;
  for (std::size_t d = k + 1; d < sub.size(); ++d)
    if (sub[d] != chunk[d]) return false;
  return true;
}

Bytes fetch(StorageBackend& backend, const ChunkAddress& addr, std::uint64_t offset, std::uint64_t length) {
  Bytes b;
  try {
    if (addr.whole_object && offset == 0 && length == addr.length) {
      b = backend.get(addr.key);
    } else {
      b = backend.get_range(addr.key, addr.offset + offset, length);
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::not_found || e.code() == ErrorCode::corruption)
      fail(ErrorCode::corruption, "missing or truncated chunk " + addr.key + ": " + e.what());
    throw;
  }
  if (b.size() != length)
    fail(ErrorCode::corruption, "chunk " + addr.key + " has " + std::to_string(b.size()) +
                                    " bytes, expected " + std::to_string(length));
  return b;
}

}  // namespace

std::string_view layout_name(Layout layout) {
  return layout == Layout::per_leaf ? "per-leaf" : "aggregated";
}

Layout parse_layout(std::string_view name) {
  if (name == "per-leaf") return Layout::per_leaf;
  if (name == "aggregated") return Layout::aggregated;
  fail(ErrorCode::invalid_argument, "unknown layout '" + std::string(name) + "'");
}

void ArrayStorageMetadata::validate() const {
  std::size_t r = global_shape.size();
  if (write_chunk.size() != r || read_chunk.size() != r)
    fail(ErrorCode::invalid_argument, "chunk rank does not match array rank");
  for (std::size_t d = 0; d < r; ++d) {
    auto g = global_shape[d], w = write_chunk[d], c = read_chunk[d];
    if (g < 0 || w < 0 || c < 0) fail(ErrorCode::invalid_argument, "negative extent");
    if (w == 0) {
      if (g != 0 || c != 0) fail(ErrorCode::invalid_argument, "zero write chunk on nonempty dimension");
      continue;
    }
    if (g % w != 0 || c == 0 || w % c != 0)
      fail(ErrorCode::invalid_argument, "chunk grid " + to_string(write_chunk) + "/" + to_string(read_chunk) +
                                            " does not evenly divide " + to_string(global_shape));
  }
}

Shape ArrayStorageMetadata::write_grid() const {
  Shape g(global_shape.size());
  for (std::size_t d = 0; d < g.size(); ++d) g[d] = write_chunk[d] == 0 ? 0 : global_shape[d] / write_chunk[d];
  return g;
}

std::uint64_t ArrayStorageMetadata::write_chunk_bytes() const {
  return static_cast<std::uint64_t>(num_elements(write_chunk)) * dtype_width(dtype);
}

json to_json(const ArrayStorageMetadata& m) {
  return json{{"global_shape", m.global_shape},
              {"dtype", dtype_name(m.dtype)},
              {"write_chunk", m.write_chunk},
              {"read_chunk", m.read_chunk},
              {"layout", layout_name(m.layout)}};
}

ArrayStorageMetadata storage_metadata_from_json(const json& j) {
  try {
    ArrayStorageMetadata m;
    m.global_shape = j.at("global_shape").get<Shape>();
    auto dt = parse_dtype(j.at("dtype").get<std::string>());
    if (!dt) fail(ErrorCode::parse, "unknown dtype " + j.at("dtype").dump());
    m.dtype = *dt;
    m.write_chunk = j.at("write_chunk").get<Shape>();
    m.read_chunk = j.at("read_chunk").get<Shape>();
    m.layout = parse_layout(j.at("layout").get<std::string>());
    m.validate();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("array metadata: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::parse) throw;
    fail(ErrorCode::parse, std::string("array metadata: ") + e.what());
  }
}

Shape choose_chunk_shape(const Shape& shard_shape, DType dtype, std::uint64_t target_bytes) {
  Shape chunk = shard_shape;
  if (std::any_of(chunk.begin(), chunk.end(), [](auto e) { return e <= 0; })) return chunk;
  auto bytes = [&] { return static_cast<std::uint64_t>(num_elements(chunk)) * dtype_width(dtype); };
  for (std::size_t d = 0; d < chunk.size() && bytes() > target_bytes; ++d) {
    while (chunk[d] > 1 && bytes() > target_bytes) chunk[d] /= smallest_prime_factor(chunk[d]);
  }
  return chunk;
}

std::string coord_key(const std::vector<std::int64_t>& coords) {
  std::string out;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (i) out += '.';
    out += std::to_string(coords[i]);
  }
  return out;
}

std::vector<std::int64_t> parse_coord_key(std::string_view key) {
  std::vector<std::int64_t> out;
  if (key.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    auto dot = key.find('.', pos);
    auto part = key.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos);
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc{} || p != part.data() + part.size() || part.empty() || v < 0)
      fail(ErrorCode::parse, "bad chunk coordinate '" + std::string(key) + "'");
    out.push_back(v);
    if (dot == std::string_view::npos) break;
    pos = dot + 1;
  }
  return out;
}

std::string chunk_object_name(const std::vector<std::int64_t>& coords) {
  return coords.empty() ? "c" : "c." + coord_key(coords);
}

Box chunk_box(const ArrayStorageMetadata& meta, const std::vector<std::int64_t>& coords) {
  Box b(coords.size());
  for (std::size_t d = 0; d < coords.size(); ++d) b[d] = {coords[d] * meta.write_chunk[d], meta.write_chunk[d]};
  return b;
}

std::string process_dir(int process) { return "process_" + std::to_string(process); }

// ---------------------------------------------------------------------------
// AggregatedManifest

AggregatedManifest::AggregatedManifest(std::uint64_t target_file_bytes, std::vector<Entry> entries)
    : target_file_bytes_(target_file_bytes), entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) { return a.key < b.key; });
  for (std::size_t i = 1; i < entries_.size(); ++i)
    if (entries_[i].key == entries_[i - 1].key) fail(ErrorCode::corruption, "duplicate manifest key " + entries_[i].key);
  std::map<std::string, std::vector<std::pair<std::uint64_t, std::uint64_t>>> by_file;
  for (const auto& e : entries_) by_file[e.span.file_id].emplace_back(e.span.offset, e.span.offset + e.span.length);
  for (auto& [file, spans] : by_file) {
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i)
      if (spans[i].first < spans[i - 1].second) fail(ErrorCode::corruption, "overlapping spans in data file " + file);
  }
}

const FileSpan* AggregatedManifest::find(std::string_view key) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), key,
                             [](const Entry& e, std::string_view k) { return e.key < k; });
  if (it == entries_.end() || it->key != key) return nullptr;
  return &it->span;
}

std::size_t AggregatedManifest::file_count() const {
  std::set<std::string> files;
  for (const auto& e : entries_) files.insert(e.span.file_id);
  return files.size();
}

json AggregatedManifest::to_json() const {
  json entries = json::array();
  for (const auto& e : entries_) entries.push_back({e.key, e.span.file_id, e.span.offset, e.span.length});
  return json{{"target_file_bytes", target_file_bytes_}, {"entries", std::move(entries)}};
}

AggregatedManifest AggregatedManifest::from_json(const json& j) {
  try {
    std::vector<Entry> entries;
    for (const auto& e : j.at("entries")) {
      if (!e.is_array() || e.size() != 4) fail(ErrorCode::parse, "manifest entry must have 4 fields");
      entries.push_back(Entry{e[0].get<std::string>(),
                              FileSpan{e[1].get<std::string>(), e[2].get<std::uint64_t>(), e[3].get<std::uint64_t>()}});
    }
    return AggregatedManifest(j.at("target_file_bytes").get<std::uint64_t>(), std::move(entries));
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("manifest: ") + e.what());
  }
}

std::size_t packed_file_count(std::span<const std::uint64_t> lengths, std::uint64_t target_file_bytes) {
  std::size_t files = 0;
  std::uint64_t cur = 0;
  for (auto len : lengths) {
    if (files == 0 || (cur > 0 && cur + len > target_file_bytes)) {
      ++files;
      cur = 0;
    }
    cur += len;
  }
  return files;
}

// ---------------------------------------------------------------------------
// ChunkWriter

ChunkWriter::ChunkWriter(StorageBackend& backend, std::string checkpoint_prefix, int process, Layout layout,
                         std::uint64_t target_file_bytes)
    : backend_(backend),
      checkpoint_prefix_(std::move(checkpoint_prefix)),
      process_(process),
      layout_(layout),
      target_file_bytes_(target_file_bytes) {
  if (target_file_bytes_ == 0) fail(ErrorCode::invalid_argument, "target_file_bytes must be positive");
}

std::string ChunkWriter::prefix() const { return join_key(checkpoint_prefix_, process_dir(process_)); }

ChunkWriter::ArrayRecord& ChunkWriter::record_for(const std::string& leaf_path, const ArrayStorageMetadata& meta,
                                                  const json& sharding) {
  if (finished_) fail(ErrorCode::invalid_argument, "chunk writer already finished");
  if (meta.layout != layout_) fail(ErrorCode::invalid_argument, "array layout differs from writer layout");
  meta.validate();
  auto [it, inserted] = arrays_.try_emplace(leaf_path, ArrayRecord{meta, sharding, {}});
  if (!inserted && (it->second.meta != meta || it->second.sharding != sharding))
    fail(ErrorCode::consistency, "conflicting metadata for " + leaf_path);
  return it->second;
}

void ChunkWriter::declare_array(const std::string& leaf_path, const ArrayStorageMetadata& meta, const json& sharding) {
  record_for(leaf_path, meta, sharding);
}

std::vector<std::string> ChunkWriter::write_array(const std::string& leaf_path, std::span<const ShardData> shards,
                                                  const ArrayStorageMetadata& meta, const json& sharding) {
  ArrayRecord& rec = record_for(leaf_path, meta, sharding);
  const std::size_t width = dtype_width(meta.dtype);
  const std::size_t rank = meta.global_shape.size();
  const Box global = full_box(meta.global_shape);
  std::vector<std::string> keys;
  for (const auto& shard : shards) {
    if (shard.ranges.size() != rank) fail(ErrorCode::invalid_argument, "shard rank mismatch for " + leaf_path);
    if (!contains(global, shard.ranges))
      fail(ErrorCode::invalid_argument, "shard " + to_string(shard.ranges) + " outside " + leaf_path);
    if (shard.bytes.size() != static_cast<std::size_t>(volume(shard.ranges)) * width)
      fail(ErrorCode::invalid_argument, "shard byte length mismatch for " + leaf_path);
    if (volume(shard.ranges) == 0) continue;
    Shape counts(rank);
    std::vector<std::int64_t> base(rank);
    for (std::size_t d = 0; d < rank; ++d) {
      auto w = meta.write_chunk[d];
      if (shard.ranges[d].offset % w != 0 || shard.ranges[d].extent % w != 0)
        fail(ErrorCode::invalid_argument, "shard " + to_string(shard.ranges) + " of " + leaf_path +
                                              " is not aligned to write chunk " + to_string(meta.write_chunk));
      counts[d] = shard.ranges[d].extent / w;
      base[d] = shard.ranges[d].offset / w;
    }
    for_each_coord(counts, [&](const std::vector<std::int64_t>& local) {
      std::vector<std::int64_t> coords(rank);
      for (std::size_t d = 0; d < rank; ++d) coords[d] = base[d] + local[d];
      std::string ck = coord_key(coords);
      if (!rec.coords.insert(ck).second)
        fail(ErrorCode::already_exists, "chunk " + chunk_object_name(coords) + " of " + leaf_path + " written twice");
      Box cb = chunk_box(meta, coords);
      Bytes payload = cb == shard.ranges ? Bytes(shard.bytes.begin(), shard.bytes.end())
                                         : extract_box(shard.bytes, shard.ranges, cb, width);
      std::string rel = join_key(leaf_path, chunk_object_name(coords));
      if (layout_ == Layout::per_leaf) {
        std::string key = join_key(prefix(), rel);
        backend_.put(key, payload);
        keys.push_back(std::move(key));
      } else {
        pending_.emplace(rel, std::move(payload));
        keys.push_back(std::move(rel));
      }
    });
  }
  return keys;
}

std::vector<std::string> ChunkWriter::finish() {
  if (finished_) fail(ErrorCode::invalid_argument, "chunk writer already finished");
  finished_ = true;
  std::vector<std::string> keys;
  json doc{{"format", kProcessFormat}, {"process", process_}, {"layout", layout_name(layout_)}};
  if (layout_ == Layout::aggregated) {
    std::vector<AggregatedManifest::Entry> entries;
    Bytes file;
    int file_id = 0;
    auto flush = [&] {
      std::string key = join_key(prefix(), "d/" + std::to_string(file_id));
      backend_.put(key, file);
      keys.push_back(std::move(key));
      file.clear();
      ++file_id;
    };
    for (auto& [rel, payload] : pending_) {
      if (!file.empty() && file.size() + payload.size() > target_file_bytes_) flush();
      entries.push_back({rel, FileSpan{std::to_string(file_id), file.size(), payload.size()}});
      file.insert(file.end(), payload.begin(), payload.end());
    }
    if (!pending_.empty()) flush();
    pending_.clear();
    AggregatedManifest manifest(target_file_bytes_, std::move(entries));
    std::string mkey = join_key(prefix(), "manifest.json");
    backend_.put(mkey, dump_bytes(manifest.to_json()));
    keys.push_back(std::move(mkey));
  }
  json arrays = json::object();
  for (const auto& [path, rec] : arrays_) {
    arrays[path] = json{{"metadata", to_json(rec.meta)},
                        {"sharding", rec.sharding},
                        {"chunks", std::vector<std::string>(rec.coords.begin(), rec.coords.end())}};
  }
  doc["arrays"] = std::move(arrays);
  std::string key = join_key(prefix(), "array_metadata.json");
  backend_.put(key, dump_bytes(doc));
  keys.push_back(std::move(key));
  return keys;
}

// ---------------------------------------------------------------------------
// Merged index

json MergedIndex::to_json() const {
  json arrays = json::object();
  for (const auto& [path, a] : this->arrays) {
    json chunks = json::object();
    for (const auto& [ck, loc] : a.chunks) {
      json l{{"process", loc.process}};
      if (loc.span) {
        l["file"] = loc.span->file_id;
        l["offset"] = loc.span->offset;
        l["length"] = loc.span->length;
      }
      chunks[ck] = std::move(l);
    }
    arrays[path] = json{{"metadata", shardckpt::to_json(a.meta)}, {"sharding", a.sharding}, {"chunks", std::move(chunks)}};
  }
  return json{{"format", kIndexFormat},
              {"layout", layout_name(layout)},
              {"process_count", process_count},
              {"arrays", std::move(arrays)}};
}

MergedIndex MergedIndex::from_json(const json& j) {
  try {
    if (j.at("format") != kIndexFormat) fail(ErrorCode::parse, "unsupported index format " + j.at("format").dump());
    MergedIndex idx;
    idx.layout = parse_layout(j.at("layout").get<std::string>());
    idx.process_count = j.at("process_count").get<int>();
    for (const auto& [path, a] : j.at("arrays").items()) {
      ArrayIndex ai;
      ai.meta = storage_metadata_from_json(a.at("metadata"));
      ai.sharding = a.at("sharding");
      for (const auto& [ck, l] : a.at("chunks").items()) {
        parse_coord_key(ck);
        ChunkLocation loc{l.at("process").get<int>(), std::nullopt};
        if (l.contains("file"))
          loc.span = FileSpan{l.at("file").get<std::string>(), l.at("offset").get<std::uint64_t>(),
                              l.at("length").get<std::uint64_t>()};
        ai.chunks.emplace(ck, std::move(loc));
      }
      idx.arrays.emplace(path, std::move(ai));
    }
    return idx;
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("merged index: ") + e.what());
  }
}

MergedIndex merge_process_indices(StorageBackend& backend, const std::string& checkpoint_prefix, int process_count) {
  if (process_count < 1) fail(ErrorCode::invalid_argument, "process_count must be positive");
  MergedIndex merged;
  merged.process_count = process_count;
  for (int p = 0; p < process_count; ++p) {
    std::string dir = join_key(checkpoint_prefix, process_dir(p));
    Bytes raw;
    try {
      raw = backend.get(join_key(dir, "array_metadata.json"));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::not_found) throw;
      fail(ErrorCode::not_found, "missing array metadata for process " + std::to_string(p));
    }
    json doc = parse_bytes(raw, dir + "/array_metadata.json");
    Layout layout;
    try {
      layout = parse_layout(doc.at("layout").get<std::string>());
      if (doc.at("process").get<int>() != p)
        fail(ErrorCode::consistency, dir + " metadata claims process " + doc.at("process").dump());
    } catch (const json::exception& e) {
      fail(ErrorCode::parse, dir + "/array_metadata.json: " + e.what());
    }
    if (p == 0) {
      merged.layout = layout;
    } else if (layout != merged.layout) {
      fail(ErrorCode::consistency, "process " + std::to_string(p) + " used a different layout");
    }
    std::optional<AggregatedManifest> manifest;
    if (layout == Layout::aggregated)
      manifest = AggregatedManifest::from_json(parse_bytes(backend.get(join_key(dir, "manifest.json")), dir + "/manifest.json"));

    const json* arrays = nullptr;
    try {
      arrays = &doc.at("arrays");
    } catch (const json::exception& e) {
      fail(ErrorCode::parse, dir + "/array_metadata.json: " + e.what());
    }
    for (const auto& [path, a] : arrays->items()) {
      ArrayStorageMetadata meta;
      json sharding;
      std::vector<std::string> chunks;
      try {
        meta = storage_metadata_from_json(a.at("metadata"));
        sharding = a.at("sharding");
        chunks = a.at("chunks").get<std::vector<std::string>>();
      } catch (const json::exception& e) {
        fail(ErrorCode::parse, dir + " entry " + path + ": " + e.what());
      }
      auto [it, inserted] = merged.arrays.try_emplace(path, ArrayIndex{meta, sharding, {}});
      if (!inserted) {
        if (it->second.meta != meta)
          fail(ErrorCode::consistency, "process " + std::to_string(p) + " disagrees on metadata of " + path);
        if (it->second.sharding != sharding)
          fail(ErrorCode::consistency, "process " + std::to_string(p) + " disagrees on sharding of " + path);
      }
      for (const auto& ck : chunks) {
        ChunkLocation loc{p, std::nullopt};
        if (manifest) {
          std::string rel = join_key(path, chunk_object_name(parse_coord_key(ck)));
          const FileSpan* span = manifest->find(rel);
          if (!span) fail(ErrorCode::corruption, "manifest of process " + std::to_string(p) + " lacks " + rel);
          loc.span = *span;
        }
        auto [cit, fresh] = it->second.chunks.try_emplace(ck, loc);
        if (!fresh)
          fail(ErrorCode::consistency, "chunk " + ck + " of " + path + " claimed by processes " +
                                           std::to_string(cit->second.process) + " and " + std::to_string(p));
      }
    }
  }
  for (const auto& [path, a] : merged.arrays) {
    Shape grid = a.meta.write_grid();
    auto expected = static_cast<std::size_t>(num_elements(grid));
    if (a.chunks.size() != expected)
      fail(ErrorCode::consistency, path + " has " + std::to_string(a.chunks.size()) + " of " +
                                       std::to_string(expected) + " chunks");
    for (const auto& [ck, loc] : a.chunks) {
      auto c = parse_coord_key(ck);
      bool ok = c.size() == grid.size();
      for (std::size_t d = 0; ok && d < c.size(); ++d) ok = c[d] < grid[d];
      if (!ok) fail(ErrorCode::consistency, "chunk " + ck + " of " + path + " outside chunk grid");
    }
  }
  return merged;
}

ChunkAddress locate_chunk(const std::string& checkpoint_prefix, const std::string& leaf_path,
                          const ArrayIndex& index, const std::vector<std::int64_t>& coords) {
  auto it = index.chunks.find(coord_key(coords));
  if (it == index.chunks.end())
    fail(ErrorCode::corruption, "index has no chunk " + chunk_object_name(coords) + " for " + leaf_path);
  const ChunkLocation& loc = it->second;
  std::string dir = join_key(checkpoint_prefix, process_dir(loc.process));
  if (loc.span) {
    return ChunkAddress{join_key(dir, "d/" + loc.span->file_id), loc.span->offset, loc.span->length, false};
  }
  return ChunkAddress{join_key(dir, join_key(leaf_path, chunk_object_name(coords))), 0,
                      index.meta.write_chunk_bytes(), true};
}

ReadResult read_range(StorageBackend& backend, const std::string& checkpoint_prefix, const std::string& leaf_path,
                      const ArrayIndex& index, const Box& range) {
  const ArrayStorageMetadata& meta = index.meta;
  const std::size_t rank = meta.global_shape.size();
  const std::size_t width = dtype_width(meta.dtype);
  if (range.size() != rank || !contains(full_box(meta.global_shape), range))
    fail(ErrorCode::invalid_argument, "range " + to_string(range) + " outside " + leaf_path + " " +
                                          to_string(meta.global_shape));
  ReadResult out;
  out.data.resize(static_cast<std::size_t>(volume(range)) * width);
  out.stats.bytes_requested = out.data.size();
  if (out.data.empty()) return out;

  const Shape& wc = meta.write_chunk;
  const Shape& rc = meta.read_chunk;
  const bool subchunked = rc != wc;
  const bool contiguous = subchunks_contiguous(rc, wc);
  const std::uint64_t sub_bytes = static_cast<std::uint64_t>(num_elements(rc)) * width;

  Shape counts(rank);
  std::vector<std::int64_t> lo(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    lo[d] = range[d].offset / wc[d];
    counts[d] = (range[d].end() - 1) / wc[d] - lo[d] + 1;
  }

  auto place = [&](const Bytes& src, const Box& src_box) {
    auto part = intersect(src_box, range);
    if (!part) return;
    Bytes piece = extract_box(src, src_box, *part, width);
    insert_box(out.data, range, *part, piece, width);
  };

  for_each_coord(counts, [&](const std::vector<std::int64_t>& rel) {
    std::vector<std::int64_t> coords(rank);
    for (std::size_t d = 0; d < rank; ++d) coords[d] = lo[d] + rel[d];
    Box wbox = chunk_box(meta, coords);
    ChunkAddress addr = locate_chunk(checkpoint_prefix, leaf_path, index, coords);
    if (addr.length != meta.write_chunk_bytes())
      fail(ErrorCode::corruption, "index span for " + addr.key + " has wrong length");

    if (!subchunked || !contiguous) {
      Bytes chunk = fetch(backend, addr, 0, addr.length);
      out.stats.bytes_loaded += chunk.size();
      place(chunk, wbox);
      return;
    }

    Box need = *intersect(wbox, range);
    Shape sub_grid(rank), sub_lo(rank), sub_counts(rank);
    for (std::size_t d = 0; d < rank; ++d) {
      sub_grid[d] = wc[d] / rc[d];
      sub_lo[d] = (need[d].offset - wbox[d].offset) / rc[d];
      sub_counts[d] = (need[d].end() - 1 - wbox[d].offset) / rc[d] - sub_lo[d] + 1;
    }
    std::vector<std::int64_t> linear;
    for_each_coord(sub_counts, [&](const std::vector<std::int64_t>& s) {
      std::int64_t l = 0;
      for (std::size_t d = 0; d < rank; ++d) l = l * sub_grid[d] + sub_lo[d] + s[d];
      linear.push_back(l);
    });
    std::sort(linear.begin(), linear.end());
    auto sub_box = [&](std::int64_t l) {
      Box b(rank);
      for (std::size_t d = rank; d-- > 0;) {
        std::int64_t g = l % sub_grid[d];
        l /= sub_grid[d];
        b[d] = {wbox[d].offset + g * rc[d], rc[d]};
      }
      return b;
    };
    for (std::size_t i = 0; i < linear.size();) {
      std::size_t j = i + 1;
      while (j < linear.size() && linear[j] == linear[j - 1] + 1) ++j;
      std::uint64_t n = j - i;
      Bytes run = fetch(backend, addr, static_cast<std::uint64_t>(linear[i]) * sub_bytes, n * sub_bytes);
      out.stats.bytes_loaded += run.size();
      for (std::size_t k = i; k < j; ++k) {
        auto first = run.begin() + static_cast<std::ptrdiff_t>((k - i) * sub_bytes);
        Bytes piece(first, first + static_cast<std::ptrdiff_t>(sub_bytes));
        place(piece, sub_box(linear[k]));
      }
      i = j;
    }
  });
  return out;
}

std::vector<std::string> verify_chunks(StorageBackend& backend, const std::string& checkpoint_prefix,
                                       const MergedIndex& index) {
  std::vector<std::string> problems;
  std::map<std::string, std::uint64_t> file_sizes;
  for (const auto& [path, a] : index.arrays) {
    auto expected = static_cast<std::size_t>(num_elements(a.meta.write_grid()));
    if (a.chunks.size() != expected)
      problems.push_back(path + ": index lists " + std::to_string(a.chunks.size()) + " of " +
                         std::to_string(expected) + " chunks");
    for (const auto& [ck, loc] : a.chunks) {
      ChunkAddress addr = locate_chunk(checkpoint_prefix, path, a, parse_coord_key(ck));
      auto info = backend.stat(addr.key);
      if (!info || info->is_directory) {
        problems.push_back("missing chunk " + addr.key);
        continue;
      }
      if (addr.whole_object ? info->size != addr.length : info->size < addr.offset + addr.length)
        problems.push_back("chunk " + addr.key + " has " + std::to_string(info->size) + " bytes, expected " +
                           std::to_string(addr.whole_object ? addr.length : addr.offset + addr.length));
    }
  }
  return problems;
}

}  // namespace shardckpt
