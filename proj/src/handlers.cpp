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

#include "shardckpt/handlers.hpp"

#include <cstring>

#include "shardckpt/error.hpp"

namespace shardckpt {

using nlohmann::json;

Bytes to_bytes(const std::string& s) {
  Bytes b(s.size());
  if (!s.empty()) std::memcpy(b.data(), s.data(), s.size());
  return b;
}

std::string to_string(const Bytes& b) { return std::string(reinterpret_cast<const char*>(b.data()), b.size()); }

void StorageScope::put_json(const std::string& name, const json& j) { put(name, to_bytes(j.dump())); }

json StorageScope::get_json(const std::string& name) {
  Bytes b = get(name);
  try {
    return json::parse(to_string(b));
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, name + ": " + e.what());
  }
}

void BackendScope::put(const std::string& name, const Bytes& data) { backend_.put(join_key(prefix_, name), data); }
Bytes BackendScope::get(const std::string& name) { return backend_.get(join_key(prefix_, name)); }
bool BackendScope::has(const std::string& name) { return backend_.exists(join_key(prefix_, name)); }

Bytes BufferScope::get(const std::string& name) {
  auto it = objects_.find(name);
  if (it == objects_.end()) fail(ErrorCode::not_found, "no object " + name);
  return it->second;
}

void IteratorCheckpointable::save(StorageScope& scope) const { scope.put_json("state.json", json{{"index", index_}}); }

void IteratorCheckpointable::load(StorageScope& scope) {
  json j = scope.get_json("state.json");
  try {
    index_ = j.at("index").get<std::int64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("iterator state: ") + e.what());
  }
}

std::string handler_id_of(const Checkpointable& item) {
  switch (item.index()) {
    case 0: return kTreeHandler;
    case 1: return kJsonHandler;
    default: return kStatefulHandler;
  }
}

void validate_checkpointable_name(const std::string& name) {
  if (name.empty() || name == "." || name == ".." || name.find('/') != std::string::npos)
    fail(ErrorCode::invalid_argument, "illegal checkpointable name '" + name + "'");
  if (name.starts_with("process_") || name == "global_metadata.json" || name == "merged_index.json" ||
      name == "COMMIT" || name.find(".tmp.") != std::string::npos)
    fail(ErrorCode::invalid_argument, "checkpointable name '" + name + "' is reserved");
}

void JsonHandler::save(const Checkpointable& value, StorageScope& scope) const {
  const auto* doc = std::get_if<Document>(&value);
  if (!doc) fail(ErrorCode::invalid_argument, "json handler expects a document");
  scope.put_json("data.json", doc->value);
}

Checkpointable JsonHandler::load(const AbstractCheckpointable* abstract, StorageScope& scope) const {
  if (abstract && !std::holds_alternative<AbstractDocument>(*abstract))
    fail(ErrorCode::structure_mismatch, "abstract value for a document must be a document");
  return Document{scope.get_json("data.json")};
}

AbstractCheckpointable JsonHandler::metadata(StorageScope& scope) const {
  if (!scope.has("data.json")) fail(ErrorCode::corruption, "document payload missing");
  return AbstractDocument{};
}

void StatefulHandler::save(const Checkpointable& value, StorageScope& scope) const {
  const auto* obj = std::get_if<std::shared_ptr<StatefulCheckpointable>>(&value);
  if (!obj || !*obj) fail(ErrorCode::invalid_argument, "stateful handler expects an object");
  (*obj)->save(scope);
}

Checkpointable StatefulHandler::load(const AbstractCheckpointable* abstract, StorageScope& scope) const {
  if (abstract) {
    if (const auto* obj = std::get_if<std::shared_ptr<StatefulCheckpointable>>(abstract)) {
      if (!*obj) fail(ErrorCode::invalid_argument, "null stateful target");
      (*obj)->load(scope);
      return *obj;
    }
    if (!std::holds_alternative<AbstractDocument>(*abstract))
      fail(ErrorCode::structure_mismatch, "abstract value for a stateful item must be an object or document");
  }
  // Without a target object the raw state document is returned.
  return Document{scope.has("state.json") ? scope.get_json("state.json") : json(nullptr)};
}

AbstractCheckpointable StatefulHandler::metadata(StorageScope&) const { return AbstractDocument{}; }

const Handler& host_handler(const std::string& id) {
  static const JsonHandler json_handler;
  static const StatefulHandler stateful_handler;
  if (id == kJsonHandler) return json_handler;
  if (id == kStatefulHandler) return stateful_handler;
  fail(ErrorCode::invalid_argument, "no host handler '" + id + "'");
}

}  // namespace shardckpt
