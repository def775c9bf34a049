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

#include "shardckpt/box.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "shardckpt/error.hpp"

namespace shardckpt {

std::int64_t num_elements(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::int64_t volume(const Box& box) {
  std::int64_t n = 1;
  for (const auto& r : box) n *= r.extent;
  return n;
}

Shape extents(const Box& box) {
  Shape s;
  s.reserve(box.size());
  for (const auto& r : box) s.push_back(r.extent);
  return s;
}

Box full_box(const Shape& shape) {
  Box b;
  b.reserve(shape.size());
  for (auto d : shape) b.push_back({0, d});
  return b;
}

bool contains(const Box& outer, const Box& inner) {
  if (outer.size() != inner.size()) return false;
  for (std::size_t d = 0; d < outer.size(); ++d) {
    if (inner[d].offset < outer[d].offset || inner[d].end() > outer[d].end()) return false;
  }
  return true;
}

std::optional<Box> intersect(const Box& a, const Box& b) {
  if (a.size() != b.size()) return std::nullopt;
  Box out(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    auto lo = std::max(a[d].offset, b[d].offset);
    auto hi = std::min(a[d].end(), b[d].end());
    if (hi <= lo) return std::nullopt;
    out[d] = {lo, hi - lo};
  }
  return out;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

std::string to_string(const Box& box) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < box.size(); ++i) {
    if (i) os << ", ";
    os << box[i].offset << ':' << box[i].end();
  }
  os << ']';
  return os.str();
}

void for_each_coord(const Shape& counts,
                    const std::function<void(const std::vector<std::int64_t>&)>& fn) {
  for (auto c : counts) {
    if (c <= 0) return;
  }
  std::vector<std::int64_t> coord(counts.size(), 0);
  while (true) {
    fn(coord);
    std::size_t d = counts.size();
    while (d > 0) {
      --d;
      if (++coord[d] < counts[d]) break;
      coord[d] = 0;
      if (d == 0) return;
    }
    if (counts.empty()) return;
  }
}

namespace {

// Row-major strides in elements.
std::vector<std::int64_t> strides_of(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (std::size_t d = shape.size(); d-- > 1;) s[d - 1] = s[d] * shape[d];
  return s;
}

// Calls fn(src_elem_offset, run_elems) for each contiguous innermost run of
// `sub` within the buffer over `outer`.
template <class Fn>
void for_each_run(const Box& outer, const Box& sub, Fn&& fn) {
  if (!contains(outer, sub)) {
    fail(ErrorCode::invalid_argument,
         "box " + to_string(sub) + " not within " + to_string(outer));
  }
  if (volume(sub) == 0) return;
  const std::size_t rank = sub.size();
  if (rank == 0) {
    fn(std::int64_t{0}, std::int64_t{1});
    return;
  }
  const auto strides = strides_of(extents(outer));
  Shape counts(rank - 1);
  for (std::size_t d = 0; d + 1 < rank; ++d) counts[d] = sub[d].extent;
  const std::int64_t run = sub[rank - 1].extent;
  const std::int64_t inner_off = sub[rank - 1].offset - outer[rank - 1].offset;
  for_each_coord(counts, [&](const std::vector<std::int64_t>& c) {
    std::int64_t off = inner_off;
    for (std::size_t d = 0; d + 1 < rank; ++d) {
      off += (c[d] + sub[d].offset - outer[d].offset) * strides[d];
    }
    fn(off, run);
  });
}

}  // namespace

Bytes extract_box(std::span<const std::byte> src, const Box& src_box, const Box& sub,
                  std::size_t elem_width) {
  if (src.size() != static_cast<std::size_t>(volume(src_box)) * elem_width) {
    fail(ErrorCode::invalid_argument, "source buffer size does not match its box");
  }
  Bytes out(static_cast<std::size_t>(volume(sub)) * elem_width);
  std::size_t pos = 0;
  for_each_run(src_box, sub, [&](std::int64_t off, std::int64_t run) {
    const auto n = static_cast<std::size_t>(run) * elem_width;
    std::memcpy(out.data() + pos, src.data() + static_cast<std::size_t>(off) * elem_width, n);
    pos += n;
  });
  return out;
}

void insert_box(std::span<std::byte> dst, const Box& dst_box, const Box& sub,
                std::span<const std::byte> data, std::size_t elem_width) {
  if (dst.size() != static_cast<std::size_t>(volume(dst_box)) * elem_width ||
      data.size() != static_cast<std::size_t>(volume(sub)) * elem_width) {
    fail(ErrorCode::invalid_argument, "buffer size does not match its box");
  }
  std::size_t pos = 0;
  for_each_run(dst_box, sub, [&](std::int64_t off, std::int64_t run) {
    const auto n = static_cast<std::size_t>(run) * elem_width;
    std::memcpy(dst.data() + static_cast<std::size_t>(off) * elem_width, data.data() + pos, n);
    pos += n;
  });
}

}  // namespace shardckpt
