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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shardckpt/dtype.hpp"

namespace shardckpt {

using Shape = std::vector<std::int64_t>;

struct IndexRange {
  std::int64_t offset = 0;
  std::int64_t extent = 0;

  std::int64_t end() const { return offset + extent; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
  friend auto operator<=>(const IndexRange&, const IndexRange&) = default;
};

/// A hyper-rectangle of a global index space, one range per dimension.
using Box = std::vector<IndexRange>;

std::int64_t num_elements(const Shape& shape);
std::int64_t volume(const Box& box);
Shape extents(const Box& box);
Box full_box(const Shape& shape);
bool contains(const Box& outer, const Box& inner);
std::optional<Box> intersect(const Box& a, const Box& b);
std::string to_string(const Shape& shape);
std::string to_string(const Box& box);

/// Visits every coordinate of a grid with the given per-dim counts in
/// row-major order. A rank-0 grid has exactly one (empty) coordinate.
void for_each_coord(const Shape& counts,
                    const std::function<void(const std::vector<std::int64_t>&)>& fn);

/// Copies `sub` (expressed in the coordinates of `src_box`) out of a
/// row-major buffer laid out over `src_box`.
Bytes extract_box(std::span<const std::byte> src, const Box& src_box,
                  const Box& sub, std::size_t elem_width);

/// Writes `data` (row-major over `sub`) into a row-major buffer laid out
/// over `dst_box`. `sub` must lie within `dst_box`.
void insert_box(std::span<std::byte> dst, const Box& dst_box, const Box& sub,
                std::span<const std::byte> data, std::size_t elem_width);

}  // namespace shardckpt
