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

#pragma once

#include <algorithm>
#include <array>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "shardckpt/box.hpp"
#include "shardckpt/dtype.hpp"
#include "shardckpt/error.hpp"
#include "shardckpt/sharding.hpp"

namespace shardckpt {

/// A host dense array. Copies share the element buffer the way array
/// handles share device memory; deep_copy() detaches.
class DenseArray {
 public:
  DenseArray() : DenseArray(DType::f32, Shape{0}) {}
  /// Zero-filled.
  DenseArray(DType dtype, Shape shape);
  DenseArray(DType dtype, Shape shape, Bytes data);

  template <class T>
  static DenseArray from_values(Shape shape, const std::vector<T>& values) {
    DenseArray a(dtype_of<T>(), std::move(shape));
    if (static_cast<std::int64_t>(values.size()) != a.num_elements()) {
      fail(ErrorCode::invalid_argument, "value count does not match shape");
    }
    for (std::size_t i = 0; i < values.size(); ++i) a.set<T>(i, values[i]);
    return a;
  }

  DType dtype() const { return dtype_; }
  const Shape& shape() const { return shape_; }
  std::int64_t num_elements() const { return shardckpt::num_elements(shape_); }
  std::size_t byte_size() const { return data_->size(); }

  std::span<const std::byte> bytes() const { return *data_; }
  /// In-place view of the shared buffer; writes are visible to every copy.
  std::span<std::byte> mutable_bytes() { return *data_; }

  template <class T>
  T get(std::size_t index) const {
    check_type<T>();
    T v;
    std::memcpy(&v, data_->data() + index * sizeof(T), sizeof(T));
    return v;
  }
  template <class T>
  void set(std::size_t index, T value) {
    check_type<T>();
    std::memcpy(data_->data() + index * sizeof(T), &value, sizeof(T));
  }

  DenseArray deep_copy() const;

  /// Value equality: dtype, shape, and bytes.
  friend bool operator==(const DenseArray& a, const DenseArray& b);

 private:
  template <class T>
  void check_type() const {
    if (dtype_of<T>() != dtype_) fail(ErrorCode::invalid_argument, "element type does not match dtype");
  }

  DType dtype_;
  Shape shape_;
  std::shared_ptr<Bytes> data_;
};

/// A single typed value, equivalent to a rank-0 DenseArray.
class Scalar {
 public:
  Scalar() : Scalar(0.0) {}
  template <class T>
  explicit Scalar(T value) : dtype_(dtype_of<T>()) {
    std::memcpy(raw_.data(), &value, sizeof(T));
  }
  Scalar(DType dtype, std::span<const std::byte> raw);

  DType dtype() const { return dtype_; }
  std::span<const std::byte> bytes() const { return {raw_.data(), dtype_width(dtype_)}; }

  template <class T>
  T get() const {
    if (dtype_of<T>() != dtype_) fail(ErrorCode::invalid_argument, "scalar type does not match dtype");
    T v;
    std::memcpy(&v, raw_.data(), sizeof(T));
    return v;
  }
  double as_double() const;

  friend bool operator==(const Scalar& a, const Scalar& b) {
    return a.dtype_ == b.dtype_ && std::ranges::equal(a.bytes(), b.bytes());
  }

 private:
  DType dtype_;
  std::array<std::byte, 8> raw_{};
};

struct Text {
  std::string value;
  friend bool operator==(const Text&, const Text&) = default;
};

/// Marks a position requested by a partial load that the checkpoint does
/// not contain. The caller is expected to fill it in.
struct Placeholder {
  friend bool operator==(const Placeholder&, const Placeholder&) = default;
};

using Leaf = std::variant<DenseArray, Scalar, Text, Placeholder>;

enum class LeafKind { dense_array, scalar, text, placeholder };

LeafKind leaf_kind(const Leaf& leaf);
std::string_view leaf_kind_name(LeafKind kind);

/// Structure-and-properties view of a leaf; never carries element data.
struct AbstractLeaf {
  LeafKind kind = LeafKind::dense_array;
  std::optional<Shape> shape;
  std::optional<DType> dtype;
  std::optional<Sharding> sharding;
  bool placeholder = false;

  static AbstractLeaf array(Shape shape, DType dtype,
                            std::optional<Sharding> sharding = std::nullopt) {
    return {LeafKind::dense_array, std::move(shape), dtype, std::move(sharding), false};
  }
  static AbstractLeaf scalar(DType dtype) { return {LeafKind::scalar, std::nullopt, dtype, std::nullopt, false}; }
  static AbstractLeaf text() { return {LeafKind::text, std::nullopt, std::nullopt, std::nullopt, false}; }

  friend bool operator==(const AbstractLeaf&, const AbstractLeaf&) = default;
};

enum class NodeKind { mapping, sequence, tuple, leaf, empty };

std::string_view node_kind_name(NodeKind kind);

/// A nested mapping/sequence/tuple structure with typed leaves. Mapping keys
/// are kept sorted; sequence and tuple children are keyed by their index.
template <class LeafT>
class TreeNode {
 public:
  using Child = std::pair<std::string, TreeNode>;

  TreeNode() : kind_(NodeKind::empty), container_(NodeKind::mapping) {}

  static TreeNode mapping(std::vector<Child> entries) {
    if (entries.empty()) return empty(NodeKind::mapping);
    std::sort(entries.begin(), entries.end(),
              [](const Child& a, const Child& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < entries.size(); ++i) {
      check_key(entries[i].first);
      if (i && entries[i].first == entries[i - 1].first) {
        fail(ErrorCode::invalid_argument, "duplicate mapping key '" + entries[i].first + "'");
      }
    }
    TreeNode n;
    n.kind_ = n.container_ = NodeKind::mapping;
    n.children_ = std::move(entries);
    return n;
  }
  static TreeNode sequence(std::vector<TreeNode> items) { return indexed(NodeKind::sequence, std::move(items)); }
  static TreeNode tuple(std::vector<TreeNode> items) { return indexed(NodeKind::tuple, std::move(items)); }
  static TreeNode leaf(LeafT value) {
    TreeNode n;
    n.kind_ = n.container_ = NodeKind::leaf;
    n.leaf_ = std::make_shared<const LeafT>(std::move(value));
    return n;
  }
  /// An empty container that remembers whether it was a mapping, sequence
  /// or tuple.
  static TreeNode empty(NodeKind container) {
    if (container != NodeKind::mapping && container != NodeKind::sequence && container != NodeKind::tuple) {
      fail(ErrorCode::invalid_argument, "empty node must be a container");
    }
    TreeNode n;
    n.kind_ = NodeKind::empty;
    n.container_ = container;
    return n;
  }

  NodeKind kind() const { return kind_; }
  /// For empty nodes, the container kind it stands for; otherwise kind().
  NodeKind container_kind() const { return container_; }
  bool is_leaf() const { return kind_ == NodeKind::leaf; }
  const std::vector<Child>& children() const { return children_; }
  const LeafT& leaf() const {
    if (!leaf_) fail(ErrorCode::invalid_argument, "node is not a leaf");
    return *leaf_;
  }

  friend bool operator==(const TreeNode& a, const TreeNode& b) {
    if (a.kind_ != b.kind_ || a.container_ != b.container_ || a.children_ != b.children_) return false;
    if (a.is_leaf()) return *a.leaf_ == *b.leaf_;
    return true;
  }

 private:
  static void check_key(const std::string& key) {
    if (key.empty() || key.find('/') != std::string::npos) {
      fail(ErrorCode::invalid_argument, "mapping key '" + key + "' must be nonempty and contain no '/'");
    }
  }
  static TreeNode indexed(NodeKind kind, std::vector<TreeNode> items) {
    if (items.empty()) return empty(kind);
    TreeNode n;
    n.kind_ = n.container_ = kind;
    n.children_.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) n.children_.emplace_back(std::to_string(i), std::move(items[i]));
    return n;
  }

  NodeKind kind_;
  NodeKind container_;
  std::vector<Child> children_;
  std::shared_ptr<const LeafT> leaf_;
};

using CheckpointTree = TreeNode<Leaf>;
using AbstractTree = TreeNode<AbstractLeaf>;
using ShardingMap = std::map<std::string, Sharding>;

inline std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "/" + key;
}

/// Depth-first visit of every leaf with its '/'-joined path.
template <class L, class Fn>
void for_each_leaf(const TreeNode<L>& node, Fn&& fn, const std::string& prefix = "") {
  if (node.is_leaf()) {
    fn(prefix, node.leaf());
    return;
  }
  for (const auto& [key, child] : node.children()) for_each_leaf(child, fn, join_path(prefix, key));
}

/// Leaves in deterministic order: depth-first, mapping keys sorted,
/// sequences by index.
template <class L>
std::vector<std::pair<std::string, L>> flatten(const TreeNode<L>& tree) {
  std::vector<std::pair<std::string, L>> out;
  for_each_leaf(tree, [&](const std::string& path, const L& leaf) { out.emplace_back(path, leaf); });
  return out;
}

template <class L>
std::vector<std::string> leaf_paths(const TreeNode<L>& tree) {
  std::vector<std::string> out;
  for_each_leaf(tree, [&](const std::string& path, const L&) { out.push_back(path); });
  return out;
}

/// Rebuilds a tree with the structure of `skeleton` and the given leaves,
/// which must be in flatten() order.
template <class L, class S>
TreeNode<L> unflatten(const TreeNode<S>& skeleton, std::vector<L> leaves) {
  std::size_t next = 0;
  std::function<TreeNode<L>(const TreeNode<S>&)> build = [&](const TreeNode<S>& n) -> TreeNode<L> {
    switch (n.kind()) {
      case NodeKind::leaf:
        if (next >= leaves.size()) fail(ErrorCode::structure_mismatch, "too few leaves for structure");
        return TreeNode<L>::leaf(std::move(leaves[next++]));
      case NodeKind::empty:
        return TreeNode<L>::empty(n.container_kind());
      case NodeKind::mapping: {
        std::vector<typename TreeNode<L>::Child> c;
        for (const auto& [k, child] : n.children()) c.emplace_back(k, build(child));
        return TreeNode<L>::mapping(std::move(c));
      }
      case NodeKind::sequence:
      case NodeKind::tuple: {
        std::vector<TreeNode<L>> c;
        for (const auto& [k, child] : n.children()) c.push_back(build(child));
        return n.kind() == NodeKind::tuple ? TreeNode<L>::tuple(std::move(c)) : TreeNode<L>::sequence(std::move(c));
      }
    }
    fail(ErrorCode::invalid_argument, "unknown node kind");
  };
  auto out = build(skeleton);
  if (next != leaves.size()) fail(ErrorCode::structure_mismatch, "too many leaves for structure");
  return out;
}

/// Same structure, each leaf transformed by fn(path, leaf).
template <class L, class Fn>
auto map_leaves(const TreeNode<L>& tree, Fn&& fn) {
  using R = std::decay_t<decltype(fn(std::string{}, std::declval<const L&>()))>;
  std::vector<R> mapped;
  for_each_leaf(tree, [&](const std::string& path, const L& leaf) { mapped.push_back(fn(path, leaf)); });
  return unflatten<R>(tree, std::move(mapped));
}

/// Node kinds, keys, and empty nodes agree; leaves are not compared.
template <class A, class B>
bool same_structure(const TreeNode<A>& a, const TreeNode<B>& b) {
  if (a.kind() != b.kind() || a.container_kind() != b.container_kind()) return false;
  if (a.children().size() != b.children().size()) return false;
  for (std::size_t i = 0; i < a.children().size(); ++i) {
    if (a.children()[i].first != b.children()[i].first) return false;
    if (!same_structure(a.children()[i].second, b.children()[i].second)) return false;
  }
  return true;
}

/// Builds a tree from (path, leaf) pairs, creating mappings for every
/// intermediate component. Useful for flat formats and for partial trees.
template <class L>
TreeNode<L> tree_from_paths(const std::vector<std::pair<std::string, L>>& entries);

AbstractLeaf abstract_leaf_of(const Leaf& leaf);

/// Replaces each leaf with its AbstractLeaf and attaches shardings by path.
/// Throws if `shardings` names a path that is not a dense-array leaf.
AbstractTree abstract_of(const CheckpointTree& tree, const ShardingMap& shardings = {});

/// Converts `leaf` to the kind/dtype described by `target`. Allowed: numeric
/// dtype casts (narrowing floats round to nearest even; integer overflow is
/// an error) and rank-0 array <-> scalar.
Leaf cast_leaf(const Leaf& leaf, const AbstractLeaf& target);

/// Structure document: node kinds, keys, empty nodes, and per-leaf
/// kind/shape/dtype. Shardings are not part of the document.
nlohmann::json structure_to_json(const AbstractTree& tree);
AbstractTree structure_from_json(const nlohmann::json& doc);
/// Canonical JSON text of tree_metadata(tree).
std::string tree_metadata(const CheckpointTree& tree);
AbstractTree parse_tree_metadata(const std::string& doc);

nlohmann::json leaf_value_to_json(const Leaf& leaf);
Leaf leaf_value_from_json(const nlohmann::json& j);

template <class L>
TreeNode<L> tree_from_paths(const std::vector<std::pair<std::string, L>>& entries) {
  struct Builder {
    std::optional<L> leaf;
    std::map<std::string, Builder> children;
  };
  Builder root;
  for (const auto& [path, leaf] : entries) {
    Builder* cur = &root;
    std::size_t start = 0;
    while (!path.empty()) {
      auto slash = path.find('/', start);
      auto key = path.substr(start, slash == std::string::npos ? std::string::npos : slash - start);
      if (cur->leaf) fail(ErrorCode::invalid_argument, "conflicting leaf path '" + path + "'");
      cur = &cur->children[key];
      if (slash == std::string::npos) break;
      start = slash + 1;
    }
    if (cur->leaf || !cur->children.empty()) fail(ErrorCode::invalid_argument, "conflicting leaf path '" + path + "'");
    cur->leaf = leaf;
  }
  std::function<TreeNode<L>(const Builder&)> build = [&](const Builder& b) -> TreeNode<L> {
    if (b.leaf) return TreeNode<L>::leaf(*b.leaf);
    std::vector<typename TreeNode<L>::Child> c;
    for (const auto& [k, child] : b.children) c.emplace_back(k, build(child));
    return TreeNode<L>::mapping(std::move(c));
  };
  return build(root);
}

}  // namespace shardckpt
