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

#include "shardckpt/storage.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "shardckpt/error.hpp"

namespace shardckpt {

namespace fs = std::filesystem;

namespace {

thread_local int tls_actor = kControllerActor;

std::string normalize(const std::string& key) {
  std::string k = key;
  while (!k.empty() && k.back() == '/') k.pop_back();
  return k;
}

}  // namespace

std::string_view op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::put: return "put";
    case OpKind::get: return "get";
    case OpKind::get_range: return "get_range";
    case OpKind::list: return "list";
    case OpKind::remove: return "remove";
    case OpKind::rename: return "rename";
    case OpKind::exists: return "exists";
    case OpKind::create_dir: return "create_dir";
    case OpKind::stat: return "stat";
  }
  return "?";
}

ActorScope::ActorScope(int actor) : previous_(tls_actor) { tls_actor = actor; }
ActorScope::~ActorScope() { tls_actor = previous_; }
int ActorScope::current() { return tls_actor; }

std::uint64_t IoCounters::total_ops() const {
  std::uint64_t n = 0;
  for (auto v : ops) n += v;
  return n;
}

IoCounters& IoCounters::operator+=(const IoCounters& o) {
  bytes_read += o.bytes_read;
  bytes_written += o.bytes_written;
  payload_bytes_read += o.payload_bytes_read;
  payload_bytes_written += o.payload_bytes_written;
  for (std::size_t i = 0; i < kOpKindCount; ++i) ops[i] += o.ops[i];
  return *this;
}

IoCounters operator-(IoCounters a, const IoCounters& b) {
  a.bytes_read -= b.bytes_read;
  a.bytes_written -= b.bytes_written;
  a.payload_bytes_read -= b.payload_bytes_read;
  a.payload_bytes_written -= b.payload_bytes_written;
  for (std::size_t i = 0; i < kOpKindCount; ++i) a.ops[i] -= b.ops[i];
  return a;
}

IoCounters CounterSnapshot::actor(int a) const {
  auto it = per_actor.find(a);
  return it == per_actor.end() ? IoCounters{} : it->second;
}

bool is_payload_key(std::string_view key) {
  auto slash = key.rfind('/');
  std::string_view last = slash == std::string_view::npos ? key : key.substr(slash + 1);
  if (last == "c" || last.starts_with("c.")) return true;
  if (slash == std::string_view::npos || last.empty() ||
      !std::all_of(last.begin(), last.end(), [](char ch) { return ch >= '0' && ch <= '9'; }))
    return false;
  std::string_view dir = key.substr(0, slash);
  auto s2 = dir.rfind('/');
  if ((s2 == std::string_view::npos ? dir : dir.substr(s2 + 1)) != "d" || s2 == std::string_view::npos) return false;
  std::string_view parent = dir.substr(0, s2);
  auto s3 = parent.rfind('/');
  return (s3 == std::string_view::npos ? parent : parent.substr(s3 + 1)).starts_with("process_");
}

std::string join_key(std::string_view a, std::string_view b) {
  if (a.empty()) return std::string(b);
  if (b.empty()) return std::string(a);
  std::string out(a);
  if (out.back() != '/') out += '/';
  out += b;
  return out;
}

// ---------------------------------------------------------------------------
// StorageBackend

void StorageBackend::begin(OpKind kind, const std::string& key) {
  std::uint64_t index = op_index_.fetch_add(1);
  std::lock_guard lk(fault_mu_);
  if (plan_.crash_after_ops && index >= *plan_.crash_after_ops) {
    crashed_ = true;
    fail(ErrorCode::crash, "storage crashed before " + std::string(op_kind_name(kind)) + " " + key);
  }
  if (kind == OpKind::put && !plan_.fail_put_containing.empty() &&
      key.find(plan_.fail_put_containing) != std::string::npos) {
    fail(ErrorCode::storage, "injected write failure for " + key);
  }
}

void StorageBackend::record(OpKind kind, const std::string& key, std::uint64_t read,
                            std::uint64_t written) {
  bool payload = is_payload_key(key);
  auto apply = [&](IoCounters& c) {
    c.ops[static_cast<std::size_t>(kind)] += 1;
    c.bytes_read += read;
    c.bytes_written += written;
    if (payload) {
      c.payload_bytes_read += read;
      c.payload_bytes_written += written;
    }
  };
  std::lock_guard lk(counters_mu_);
  apply(counters_.total);
  apply(counters_.per_actor[ActorScope::current()]);
}

void StorageBackend::put(const std::string& key, std::span<const std::byte> data) {
  if (is_payload_key(key)) {
    std::unique_lock lk(gate_mu_);
    gate_cv_.wait(lk, [&] { return !gate_closed_; });
  }
  begin(OpKind::put, key);
  do_put(normalize(key), data);
  record(OpKind::put, key, 0, data.size());
}

Bytes StorageBackend::get(const std::string& key) {
  begin(OpKind::get, key);
  Bytes b = do_get(normalize(key));
  record(OpKind::get, key, b.size(), 0);
  return b;
}

Bytes StorageBackend::get_range(const std::string& key, std::uint64_t offset, std::uint64_t length) {
  begin(OpKind::get_range, key);
  Bytes b = do_get_range(normalize(key), offset, length);
  record(OpKind::get_range, key, b.size(), 0);
  return b;
}

std::vector<std::string> StorageBackend::list(const std::string& prefix) {
  begin(OpKind::list, prefix);
  auto out = do_list(normalize(prefix));
  record(OpKind::list, prefix, 0, 0);
  return out;
}

std::vector<std::string> StorageBackend::list_children(const std::string& prefix) {
  begin(OpKind::list, prefix);
  auto out = do_list_children(normalize(prefix));
  record(OpKind::list, prefix, 0, 0);
  return out;
}

void StorageBackend::remove(const std::string& key) {
  begin(OpKind::remove, key);
  do_remove(normalize(key));
  record(OpKind::remove, key, 0, 0);
}

void StorageBackend::rename(const std::string& src, const std::string& dst) {
  begin(OpKind::rename, src);
  do_rename(normalize(src), normalize(dst));
  record(OpKind::rename, src, 0, 0);
}

bool StorageBackend::exists(const std::string& key) {
  begin(OpKind::exists, key);
  bool e = do_exists(normalize(key));
  record(OpKind::exists, key, 0, 0);
  return e;
}

void StorageBackend::create_dir(const std::string& key) {
  begin(OpKind::create_dir, key);
  do_create_dir(normalize(key));
  record(OpKind::create_dir, key, 0, 0);
}

std::optional<ObjectInfo> StorageBackend::stat(const std::string& key) {
  begin(OpKind::stat, key);
  auto info = do_stat(normalize(key));
  record(OpKind::stat, key, 0, 0);
  return info;
}

CounterSnapshot StorageBackend::counters() const {
  std::lock_guard lk(counters_mu_);
  return counters_;
}

void StorageBackend::reset_counters() {
  std::lock_guard lk(counters_mu_);
  counters_ = CounterSnapshot{};
}

void StorageBackend::set_fault_plan(FaultPlan plan) {
  std::lock_guard lk(fault_mu_);
  plan_ = std::move(plan);
  if (plan_.crash_after_ops) *plan_.crash_after_ops += op_index_.load();
}

void StorageBackend::clear_faults() {
  std::lock_guard lk(fault_mu_);
  plan_ = FaultPlan{};
  crashed_ = false;
}

void StorageBackend::close_payload_gate() {
  std::lock_guard lk(gate_mu_);
  gate_closed_ = true;
}

void StorageBackend::open_payload_gate() {
  {
    std::lock_guard lk(gate_mu_);
    gate_closed_ = false;
  }
  gate_cv_.notify_all();
}

// ---------------------------------------------------------------------------
// MemoryBackend

bool MemoryBackend::under(const std::string& key, const std::string& prefix) const {
  if (prefix.empty()) return true;
  return key.size() > prefix.size() && key.compare(0, prefix.size(), prefix) == 0 &&
         key[prefix.size()] == '/';
}

std::map<std::string, Bytes> MemoryBackend::contents() const {
  std::lock_guard lk(mu_);
  std::map<std::string, Bytes> out;
  for (const auto& [k, v] : objects_) out.emplace(k, v.data);
  return out;
}

void MemoryBackend::raw_put(const std::string& key, Bytes data) {
  std::lock_guard lk(mu_);
  objects_[normalize(key)] = Object{std::move(data), std::chrono::system_clock::now()};
}

void MemoryBackend::raw_erase(const std::string& key) {
  std::lock_guard lk(mu_);
  objects_.erase(normalize(key));
}

void MemoryBackend::do_put(const std::string& key, std::span<const std::byte> data) {
  if (key.empty()) fail(ErrorCode::invalid_argument, "empty storage key");
  std::lock_guard lk(mu_);
  if (dirs_.count(key)) fail(ErrorCode::storage, "cannot overwrite directory " + key);
  objects_[key] = Object{Bytes(data.begin(), data.end()), std::chrono::system_clock::now()};
}

Bytes MemoryBackend::do_get(const std::string& key) {
  std::lock_guard lk(mu_);
  auto it = objects_.find(key);
  if (it == objects_.end()) fail(ErrorCode::not_found, "no object " + key);
  return it->second.data;
}

Bytes MemoryBackend::do_get_range(const std::string& key, std::uint64_t offset, std::uint64_t length) {
  std::lock_guard lk(mu_);
  auto it = objects_.find(key);
  if (it == objects_.end()) fail(ErrorCode::not_found, "no object " + key);
  const Bytes& d = it->second.data;
  if (offset > d.size() || length > d.size() - offset) {
    fail(ErrorCode::corruption, "range [" + std::to_string(offset) + ", +" + std::to_string(length) +
                                    ") beyond end of " + key);
  }
  return Bytes(d.begin() + static_cast<std::ptrdiff_t>(offset),
               d.begin() + static_cast<std::ptrdiff_t>(offset + length));
}

std::vector<std::string> MemoryBackend::do_list(const std::string& prefix) {
  std::lock_guard lk(mu_);
  std::vector<std::string> out;
  for (const auto& [k, v] : objects_)
    if (under(k, prefix)) out.push_back(k);
  return out;
}

std::vector<std::string> MemoryBackend::do_list_children(const std::string& prefix) {
  std::lock_guard lk(mu_);
  std::set<std::string> names;
  const std::size_t skip = prefix.empty() ? 0 : prefix.size() + 1;
  auto add = [&](const std::string& k) {
    if (!prefix.empty() && !under(k, prefix)) return;
    std::string rest = k.substr(skip);
    names.insert(rest.substr(0, rest.find('/')));
  };
  for (const auto& [k, v] : objects_) add(k);
  for (const auto& [k, v] : dirs_) add(k);
  return {names.begin(), names.end()};
}

void MemoryBackend::do_remove(const std::string& key) {
  std::lock_guard lk(mu_);
  objects_.erase(key);
  dirs_.erase(key);
  std::erase_if(objects_, [&](const auto& kv) { return under(kv.first, key); });
  std::erase_if(dirs_, [&](const auto& kv) { return under(kv.first, key); });
}

void MemoryBackend::do_rename(const std::string& src, const std::string& dst) {
  std::lock_guard lk(mu_);
  auto present = [&](const std::string& k) {
    if (objects_.count(k) || dirs_.count(k)) return true;
    for (const auto& [o, v] : objects_)
      if (under(o, k)) return true;
    return false;
  };
  if (!present(src)) fail(ErrorCode::not_found, "rename source missing: " + src);
  if (present(dst)) fail(ErrorCode::already_exists, "rename target exists: " + dst);
  auto move_key = [&](const std::string& k) { return dst + k.substr(src.size()); };
  std::map<std::string, Object> objs;
  std::map<std::string, std::chrono::system_clock::time_point> dirs;
  for (auto it = objects_.begin(); it != objects_.end();) {
    if (it->first == src || under(it->first, src)) {
      objs.emplace(move_key(it->first), std::move(it->second));
      it = objects_.erase(it);
    } else {
      ++it;
    }
  }
  for (auto it = dirs_.begin(); it != dirs_.end();) {
    if (it->first == src || under(it->first, src)) {
      dirs.emplace(move_key(it->first), it->second);
      it = dirs_.erase(it);
    } else {
      ++it;
    }
  }
  objects_.merge(objs);
  dirs_.merge(dirs);
  if (!objects_.count(dst)) dirs_.emplace(dst, std::chrono::system_clock::now());
}

bool MemoryBackend::do_exists(const std::string& key) {
  std::lock_guard lk(mu_);
  if (objects_.count(key) || dirs_.count(key)) return true;
  auto it = objects_.lower_bound(key + "/");
  return it != objects_.end() && under(it->first, key);
}

void MemoryBackend::do_create_dir(const std::string& key) {
  std::lock_guard lk(mu_);
  if (objects_.count(key)) fail(ErrorCode::already_exists, "object exists at " + key);
  std::string k = key;
  auto now = std::chrono::system_clock::now();
  while (!k.empty()) {
    dirs_.emplace(k, now);
    auto slash = k.rfind('/');
    if (slash == std::string::npos) break;
    k.resize(slash);
  }
}

std::optional<ObjectInfo> MemoryBackend::do_stat(const std::string& key) {
  std::lock_guard lk(mu_);
  if (auto it = objects_.find(key); it != objects_.end())
    return ObjectInfo{it->second.data.size(), false, it->second.modified};
  if (auto it = dirs_.find(key); it != dirs_.end()) return ObjectInfo{0, true, it->second};
  auto it = objects_.lower_bound(key + "/");
  if (it != objects_.end() && under(it->first, key)) return ObjectInfo{0, true, it->second.modified};
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// FileSystemBackend

FileSystemBackend::FileSystemBackend(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) fail(ErrorCode::storage, "cannot create root " + root_.string() + ": " + ec.message());
}

fs::path FileSystemBackend::path_of(const std::string& key) const {
  if (key.find("..") != std::string::npos) fail(ErrorCode::invalid_argument, "bad key " + key);
  return key.empty() ? root_ : root_ / key;
}

void FileSystemBackend::do_put(const std::string& key, std::span<const std::byte> data) {
  if (key.empty()) fail(ErrorCode::invalid_argument, "empty storage key");
  fs::path p = path_of(key);
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) fail(ErrorCode::storage, "mkdir " + p.parent_path().string() + ": " + ec.message());
  fs::path tmp = p;
  tmp += ".part" + std::to_string(tmp_counter_.fetch_add(1));
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCode::storage, "cannot open " + tmp.string());
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f) fail(ErrorCode::storage, "write failed for " + tmp.string());
  }
  fs::rename(tmp, p, ec);
  if (ec) {
    fs::remove(tmp);
    fail(ErrorCode::storage, "rename into " + p.string() + ": " + ec.message());
  }
}

Bytes FileSystemBackend::do_get(const std::string& key) {
  fs::path p = path_of(key);
  std::ifstream f(p, std::ios::binary);
  if (!f || fs::is_directory(p)) fail(ErrorCode::not_found, "no object " + key);
  f.seekg(0, std::ios::end);
  auto size = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  Bytes out(size);
  f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
  if (!f) fail(ErrorCode::storage, "read failed for " + key);
  return out;
}

Bytes FileSystemBackend::do_get_range(const std::string& key, std::uint64_t offset, std::uint64_t length) {
  fs::path p = path_of(key);
  std::ifstream f(p, std::ios::binary);
  if (!f || fs::is_directory(p)) fail(ErrorCode::not_found, "no object " + key);
  f.seekg(0, std::ios::end);
  auto size = static_cast<std::uint64_t>(f.tellg());
  if (offset > size || length > size - offset) {
    fail(ErrorCode::corruption, "range [" + std::to_string(offset) + ", +" + std::to_string(length) +
                                    ") beyond end of " + key);
  }
  f.seekg(static_cast<std::streamoff>(offset));
  Bytes out(length);
  f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(length));
  if (!f) fail(ErrorCode::storage, "read failed for " + key);
  return out;
}

std::vector<std::string> FileSystemBackend::do_list_children(const std::string& prefix) {
  fs::path p = path_of(prefix);
  std::vector<std::string> out;
  std::error_code ec;
  if (!fs::is_directory(p, ec)) return out;
  for (fs::directory_iterator it(p, ec), end; it != end; it.increment(ec)) {
    if (ec) break;
    std::string name = it->path().filename().string();
    if (name.find(".part") != std::string::npos) continue;
    out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> FileSystemBackend::do_list(const std::string& prefix) {
  fs::path p = path_of(prefix);
  std::vector<std::string> out;
  std::error_code ec;
  if (!fs::is_directory(p, ec)) return out;
  for (fs::recursive_directory_iterator it(p, ec), end; it != end; it.increment(ec)) {
    if (ec) break;
    if (!it->is_regular_file()) continue;
    std::string name = it->path().filename().string();
    if (name.find(".part") != std::string::npos) continue;
    out.push_back(fs::relative(it->path(), root_).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void FileSystemBackend::do_remove(const std::string& key) {
  std::error_code ec;
  fs::remove_all(path_of(key), ec);
  if (ec) fail(ErrorCode::storage, "remove " + key + ": " + ec.message());
}

void FileSystemBackend::do_rename(const std::string& src, const std::string& dst) {
  fs::path s = path_of(src), d = path_of(dst);
  std::error_code ec;
  if (!fs::exists(s, ec)) fail(ErrorCode::not_found, "rename source missing: " + src);
  if (fs::exists(d, ec)) fail(ErrorCode::already_exists, "rename target exists: " + dst);
  fs::create_directories(d.parent_path(), ec);
  fs::rename(s, d, ec);
  if (ec) fail(ErrorCode::storage, "rename " + src + " -> " + dst + ": " + ec.message());
}

bool FileSystemBackend::do_exists(const std::string& key) {
  std::error_code ec;
  return fs::exists(path_of(key), ec);
}

void FileSystemBackend::do_create_dir(const std::string& key) {
  std::error_code ec;
  fs::create_directories(path_of(key), ec);
  if (ec) fail(ErrorCode::storage, "mkdir " + key + ": " + ec.message());
}

std::optional<ObjectInfo> FileSystemBackend::do_stat(const std::string& key) {
  fs::path p = path_of(key);
  std::error_code ec;
  auto st = fs::status(p, ec);
  if (ec || !fs::exists(st)) return std::nullopt;
  ObjectInfo info;
  info.is_directory = fs::is_directory(st);
  if (!info.is_directory) info.size = fs::file_size(p, ec);
  auto ft = fs::last_write_time(p, ec);
  info.modified = std::chrono::time_point_cast<std::chrono::system_clock::duration>(
      ft - fs::file_time_type::clock::now() + std::chrono::system_clock::now());
  return info;
}

std::shared_ptr<StorageBackend> make_backend(std::string_view spec) {
  if (spec == "mem") return std::make_shared<MemoryBackend>();
  if (spec.starts_with("fs:") && spec.size() > 3)
    return std::make_shared<FileSystemBackend>(fs::path(std::string(spec.substr(3))));
  fail(ErrorCode::invalid_argument, "unknown backend '" + std::string(spec) + "'; expected mem or fs:<dir>");
}

}  // namespace shardckpt
