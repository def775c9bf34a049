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

#include "shardckpt/tree.hpp"

#include <cmath>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

namespace shardckpt {

using nlohmann::json;

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::already_exists: return "already_exists";
    case ErrorCode::corruption: return "corruption";
    case ErrorCode::consistency: return "consistency";
    case ErrorCode::overflow: return "overflow";
    case ErrorCode::topology_mismatch: return "topology_mismatch";
    case ErrorCode::structure_mismatch: return "structure_mismatch";
    case ErrorCode::storage: return "storage";
    case ErrorCode::crash: return "crash";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::parse: return "parse";
  }
  return "unknown";
}

std::string_view dtype_name(DType t) {
  switch (t) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::i32: return "i32";
    case DType::i64: return "i64";
    case DType::u8: return "u8";
    case DType::boolean: return "bool";
  }
  return "?";
}

std::optional<DType> parse_dtype(std::string_view name) {
  for (auto t : kAllDTypes) {
    if (dtype_name(t) == name) return t;
  }
  return std::nullopt;
}

DenseArray::DenseArray(DType dtype, Shape shape) : dtype_(dtype), shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d < 0) fail(ErrorCode::invalid_argument, "negative array extent");
  }
  data_ = std::make_shared<Bytes>(static_cast<std::size_t>(shardckpt::num_elements(shape_)) * dtype_width(dtype_));
}

DenseArray::DenseArray(DType dtype, Shape shape, Bytes data) : dtype_(dtype), shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d < 0) fail(ErrorCode::invalid_argument, "negative array extent");
  }
  const auto expected = static_cast<std::size_t>(shardckpt::num_elements(shape_)) * dtype_width(dtype_);
  if (data.size() != expected) {
    fail(ErrorCode::invalid_argument, "array buffer has " + std::to_string(data.size()) +
                                          " bytes, shape " + to_string(shape_) + " needs " +
                                          std::to_string(expected));
  }
  data_ = std::make_shared<Bytes>(std::move(data));
}

DenseArray DenseArray::deep_copy() const { return DenseArray(dtype_, shape_, *data_); }

bool operator==(const DenseArray& a, const DenseArray& b) {
  return a.dtype_ == b.dtype_ && a.shape_ == b.shape_ && *a.data_ == *b.data_;
}

Scalar::Scalar(DType dtype, std::span<const std::byte> raw) : dtype_(dtype) {
  if (raw.size() != dtype_width(dtype)) fail(ErrorCode::invalid_argument, "scalar byte width mismatch");
  std::memcpy(raw_.data(), raw.data(), raw.size());
}

namespace {

// Numeric element as read from a buffer: integers exactly, floats as double.
struct Element {
  bool floating = false;
  double f = 0;
  std::int64_t i = 0;
};

Element read_element(const std::byte* p, DType t) {
  Element e;
  switch (t) {
    case DType::f32: {
      float v;
      std::memcpy(&v, p, 4);
      e.floating = true;
      e.f = v;
      break;
    }
    case DType::f64:
      e.floating = true;
      std::memcpy(&e.f, p, 8);
      break;
    case DType::i32: {
      std::int32_t v;
      std::memcpy(&v, p, 4);
      e.i = v;
      break;
    }
    case DType::i64:
      std::memcpy(&e.i, p, 8);
      break;
    case DType::u8:
    case DType::boolean:
      e.i = static_cast<std::int64_t>(std::to_integer<std::uint8_t>(*p));
      break;
  }
  return e;
}

template <class T>
T checked_integer(const Element& e, DType to) {
  const auto overflow = [&] {
    fail(ErrorCode::overflow, "value does not fit in " + std::string(dtype_name(to)));
  };
  if (e.floating) {
    if (!std::isfinite(e.f)) overflow();
    const double lo = static_cast<double>(std::numeric_limits<T>::min());
    // 2^(digits) is exactly representable; values must be strictly below it.
    const double hi = std::ldexp(1.0, std::numeric_limits<T>::digits);
    if (e.f <= lo - 1.0 || e.f >= hi) overflow();
    return static_cast<T>(e.f);
  }
  if (e.i < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
      (std::numeric_limits<T>::max() < std::numeric_limits<std::int64_t>::max() &&
       e.i > static_cast<std::int64_t>(std::numeric_limits<T>::max()))) {
    overflow();
  }
  return static_cast<T>(e.i);
}

void write_element(std::byte* p, const Element& e, DType to) {
  switch (to) {
    case DType::f32: {
      // Conversion uses the default round-to-nearest-even mode.
      float v = e.floating ? static_cast<float>(e.f) : static_cast<float>(e.i);
      std::memcpy(p, &v, 4);
      break;
    }
    case DType::f64: {
      double v = e.floating ? e.f : static_cast<double>(e.i);
      std::memcpy(p, &v, 8);
      break;
    }
    case DType::i32: {
      auto v = checked_integer<std::int32_t>(e, to);
      std::memcpy(p, &v, 4);
      break;
    }
    case DType::i64: {
      auto v = checked_integer<std::int64_t>(e, to);
      std::memcpy(p, &v, 8);
      break;
    }
    case DType::u8: {
      auto v = checked_integer<std::uint8_t>(e, to);
      std::memcpy(p, &v, 1);
      break;
    }
    case DType::boolean: {
      const bool nonzero = e.floating ? e.f != 0.0 : e.i != 0;
      *p = std::byte{static_cast<unsigned char>(nonzero ? 1 : 0)};
      break;
    }
  }
}

Bytes convert_elements(std::span<const std::byte> src, DType from, DType to) {
  if (from == to) return Bytes(src.begin(), src.end());
  const auto wf = dtype_width(from);
  const auto wt = dtype_width(to);
  const auto n = src.size() / wf;
  Bytes out(n * wt);
  for (std::size_t i = 0; i < n; ++i) write_element(out.data() + i * wt, read_element(src.data() + i * wf, from), to);
  return out;
}

std::string to_hex(std::span<const std::byte> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  for (auto b : bytes) {
    auto v = std::to_integer<unsigned>(b);
    s.push_back(kDigits[v >> 4]);
    s.push_back(kDigits[v & 15]);
  }
  return s;
}

Bytes from_hex(const std::string& s) {
  if (s.size() % 2) fail(ErrorCode::parse, "odd-length hex string");
  Bytes out;
  for (std::size_t i = 0; i < s.size(); i += 2) {
    out.push_back(static_cast<std::byte>(std::stoi(s.substr(i, 2), nullptr, 16)));
  }
  return out;
}

}  // namespace

double Scalar::as_double() const {
  auto e = read_element(raw_.data(), dtype_);
  return e.floating ? e.f : static_cast<double>(e.i);
}

LeafKind leaf_kind(const Leaf& leaf) { return static_cast<LeafKind>(leaf.index()); }

std::string_view leaf_kind_name(LeafKind kind) {
  switch (kind) {
    case LeafKind::dense_array: return "array";
    case LeafKind::scalar: return "scalar";
    case LeafKind::text: return "text";
    case LeafKind::placeholder: return "placeholder";
  }
  return "?";
}

std::string_view node_kind_name(NodeKind kind) {
  switch (kind) {
    case NodeKind::mapping: return "mapping";
    case NodeKind::sequence: return "sequence";
    case NodeKind::tuple: return "tuple";
    case NodeKind::leaf: return "leaf";
    case NodeKind::empty: return "empty";
  }
  return "?";
}

AbstractLeaf abstract_leaf_of(const Leaf& leaf) {
  return std::visit(
      [](const auto& v) -> AbstractLeaf {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DenseArray>) {
          return AbstractLeaf::array(v.shape(), v.dtype());
        } else if constexpr (std::is_same_v<T, Scalar>) {
          return AbstractLeaf::scalar(v.dtype());
        } else if constexpr (std::is_same_v<T, Text>) {
          return AbstractLeaf::text();
        } else {
          AbstractLeaf a;
          a.kind = LeafKind::placeholder;
          a.placeholder = true;
          return a;
        }
      },
      leaf);
}

AbstractTree abstract_of(const CheckpointTree& tree, const ShardingMap& shardings) {
  std::set<std::string> used;
  auto out = map_leaves(tree, [&](const std::string& path, const Leaf& leaf) {
    auto a = abstract_leaf_of(leaf);
    if (auto it = shardings.find(path); it != shardings.end()) {
      if (a.kind != LeafKind::dense_array) {
        fail(ErrorCode::invalid_argument, "sharding given for non-array leaf '" + path + "'");
      }
      if (it->second.global_shape() != *a.shape) {
        fail(ErrorCode::invalid_argument, "sharding for '" + path + "' has shape " +
                                              to_string(it->second.global_shape()) + ", leaf has " +
                                              to_string(*a.shape));
      }
      a.sharding = it->second;
      used.insert(path);
    }
    return a;
  });
  for (const auto& [path, s] : shardings) {
    if (!used.count(path)) fail(ErrorCode::invalid_argument, "sharding map names unknown leaf '" + path + "'");
  }
  return out;
}

Leaf cast_leaf(const Leaf& leaf, const AbstractLeaf& target) {
  const auto kind = leaf_kind(leaf);
  if (kind == LeafKind::placeholder) fail(ErrorCode::invalid_argument, "cannot cast a placeholder");
  if (kind == LeafKind::text || target.kind == LeafKind::text) {
    if (kind != target.kind) {
      fail(ErrorCode::invalid_argument, std::string("cannot convert ") + std::string(leaf_kind_name(kind)) +
                                            " to " + std::string(leaf_kind_name(target.kind)));
    }
    return leaf;
  }
  // Numeric payload of the source, viewed as an array.
  DType from;
  Shape shape;
  std::span<const std::byte> src;
  if (const auto* a = std::get_if<DenseArray>(&leaf)) {
    from = a->dtype();
    shape = a->shape();
    src = a->bytes();
  } else {
    const auto& s = std::get<Scalar>(leaf);
    from = s.dtype();
    src = s.bytes();
  }
  const DType to = target.dtype.value_or(from);

  if (target.kind == LeafKind::scalar) {
    if (!shape.empty()) {
      fail(ErrorCode::structure_mismatch, "cannot convert array of shape " + to_string(shape) + " to a scalar");
    }
    auto raw = convert_elements(src, from, to);
    return Scalar(to, raw);
  }
  if (target.kind != LeafKind::dense_array) fail(ErrorCode::invalid_argument, "unsupported cast target");
  if (target.shape && *target.shape != shape) {
    fail(ErrorCode::structure_mismatch,
         "shape mismatch: stored " + to_string(shape) + ", requested " + to_string(*target.shape));
  }
  if (kind == LeafKind::dense_array && from == to) return leaf;
  return DenseArray(to, shape, convert_elements(src, from, to));
}

namespace {

json abstract_leaf_to_json(const AbstractLeaf& a) {
  json j{{"type", leaf_kind_name(a.kind)}};
  if (a.shape) j["shape"] = *a.shape;
  if (a.dtype) j["dtype"] = dtype_name(*a.dtype);
  return j;
}

AbstractLeaf abstract_leaf_from_json(const json& j) {
  AbstractLeaf a;
  const auto type = j.at("type").get<std::string>();
  if (type == "array") {
    a.kind = LeafKind::dense_array;
  } else if (type == "scalar") {
    a.kind = LeafKind::scalar;
  } else if (type == "text") {
    a.kind = LeafKind::text;
  } else if (type == "placeholder") {
    a.kind = LeafKind::placeholder;
    a.placeholder = true;
  } else {
    fail(ErrorCode::parse, "unknown leaf type '" + type + "'");
  }
  if (j.contains("shape")) a.shape = j.at("shape").get<Shape>();
  if (j.contains("dtype")) {
    auto t = parse_dtype(j.at("dtype").get<std::string>());
    if (!t) fail(ErrorCode::parse, "unknown dtype " + j.at("dtype").dump());
    a.dtype = *t;
  }
  return a;
}

json node_to_json(const AbstractTree& n) {
  switch (n.kind()) {
    case NodeKind::leaf:
      return {{"kind", "leaf"}, {"leaf", abstract_leaf_to_json(n.leaf())}};
    case NodeKind::empty:
      return {{"kind", "empty"}, {"container", node_kind_name(n.container_kind())}};
    case NodeKind::mapping: {
      json entries = json::object();
      for (const auto& [k, c] : n.children()) entries[k] = node_to_json(c);
      return {{"kind", "mapping"}, {"entries", entries}};
    }
    case NodeKind::sequence:
    case NodeKind::tuple: {
      json items = json::array();
      for (const auto& [k, c] : n.children()) items.push_back(node_to_json(c));
      return {{"kind", node_kind_name(n.kind())}, {"items", items}};
    }
  }
  return {};
}

NodeKind container_from_name(const std::string& s) {
  if (s == "mapping") return NodeKind::mapping;
  if (s == "sequence") return NodeKind::sequence;
  if (s == "tuple") return NodeKind::tuple;
  fail(ErrorCode::parse, "unknown container kind '" + s + "'");
}

AbstractTree node_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "leaf") return AbstractTree::leaf(abstract_leaf_from_json(j.at("leaf")));
  if (kind == "empty") return AbstractTree::empty(container_from_name(j.at("container").get<std::string>()));
  if (kind == "mapping") {
    std::vector<AbstractTree::Child> c;
    for (const auto& [k, v] : j.at("entries").items()) c.emplace_back(k, node_from_json(v));
    if (c.empty()) fail(ErrorCode::parse, "mapping node without entries");
    return AbstractTree::mapping(std::move(c));
  }
  const auto ck = container_from_name(kind);
  std::vector<AbstractTree> items;
  for (const auto& v : j.at("items")) items.push_back(node_from_json(v));
  if (items.empty()) fail(ErrorCode::parse, "sequence node without items");
  return ck == NodeKind::tuple ? AbstractTree::tuple(std::move(items)) : AbstractTree::sequence(std::move(items));
}

}  // namespace

json structure_to_json(const AbstractTree& tree) {
  return {{"format", "shardckpt.tree/1"}, {"root", node_to_json(tree)}};
}

AbstractTree structure_from_json(const json& doc) {
  try {
    if (doc.at("format") != "shardckpt.tree/1") fail(ErrorCode::parse, "unsupported tree format " + doc.at("format").dump());
    return node_from_json(doc.at("root"));
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("malformed tree structure document: ") + e.what());
  }
}

std::string tree_metadata(const CheckpointTree& tree) { return structure_to_json(abstract_of(tree)).dump(); }

AbstractTree parse_tree_metadata(const std::string& doc) {
  json j;
  try {
    j = json::parse(doc);
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("tree structure document is not JSON: ") + e.what());
  }
  return structure_from_json(j);
}

json leaf_value_to_json(const Leaf& leaf) {
  if (const auto* t = std::get_if<Text>(&leaf)) return {{"text", t->value}};
  const auto* s = std::get_if<Scalar>(&leaf);
  if (!s) fail(ErrorCode::invalid_argument, "only scalars and text are stored inline");
  json j{{"dtype", dtype_name(s->dtype())}, {"bits", to_hex(s->bytes())}};
  switch (s->dtype()) {
    case DType::boolean:
      j["value"] = s->get<bool>();
      break;
    case DType::f32:
    case DType::f64: {
      const double v = s->as_double();
      if (std::isfinite(v)) {
        j["value"] = v;
      } else {
        j["value"] = std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
      }
      break;
    }
    default:
      j["value"] = read_element(s->bytes().data(), s->dtype()).i;
  }
  return j;
}

Leaf leaf_value_from_json(const json& j) {
  try {
    if (j.contains("text")) return Text{j.at("text").get<std::string>()};
    auto t = parse_dtype(j.at("dtype").get<std::string>());
    if (!t) fail(ErrorCode::parse, "unknown dtype " + j.at("dtype").dump());
    return Scalar(*t, from_hex(j.at("bits").get<std::string>()));
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("malformed inline leaf: ") + e.what());
  } catch (const std::invalid_argument&) {
    fail(ErrorCode::parse, "malformed inline leaf bits");
  }
}

}  // namespace shardckpt
