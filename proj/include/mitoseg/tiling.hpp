// Copyright 2026 The mitoseg Authors. All Rights Reserved.
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

/// @file tiling.hpp
/// @brief Sliding-window tile planning and aggregation of per-tile
/// predictions into a slide-level probability map.
///
/// Per axis the origins are 0, s, 2s, ... while the window fits, plus a final
/// origin dim - tile when the last regular window stops short of the border.
/// Axes shorter than the tile get a single origin at 0 and the window is
/// filled by mirroring (edge pixel repeated).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mitoseg/core.hpp"

namespace mitoseg {

struct TilingConfig {
  int tile_size = 512;
  double overlap_fraction = 0.8;

  int stride() const {
    return std::max(1, static_cast<int>(std::lround(tile_size * (1.0 - overlap_fraction))));
  }

  void validate() const {
    if (tile_size < 1) throw InvalidArgument("TilingConfig: tile_size must be >= 1");
    if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
      throw InvalidArgument("TilingConfig: overlap_fraction must be in [0,1)");
    }
  }
};

struct TileOrigin {
  int x = 0;
  int y = 0;

  friend bool operator==(const TileOrigin&, const TileOrigin&) = default;
  friend auto operator<=>(const TileOrigin& a, const TileOrigin& b) {
    if (auto c = a.y <=> b.y; c != 0) return c;
    return a.x <=> b.x;
  }
};

struct TileGrid {
  int height = 0;
  int width = 0;
  int tile_size = 0;
  /// Row-major: y ascending, then x ascending.
  std::vector<TileOrigin> origins;
  bool pad_rows = false;
  bool pad_cols = false;

  std::size_t index_of(TileOrigin origin) const {
    auto it = std::lower_bound(origins.begin(), origins.end(), origin);
    if (it == origins.end() || *it != origin) {
      throw InvalidArgument("TileGrid: origin (" + std::to_string(origin.x) + "," +
                            std::to_string(origin.y) + ") is not part of the grid");
    }
    return static_cast<std::size_t>(it - origins.begin());
  }
};

inline std::vector<int> axis_origins(int dim, int tile_size, int stride) {
  if (dim <= tile_size) return {0};
  std::vector<int> out;
  int o = 0;
  for (; o + tile_size <= dim; o += stride) out.push_back(o);
  if (out.back() + tile_size < dim) out.push_back(dim - tile_size);
  return out;
}

inline TileGrid plan_tiles(int height, int width, const TilingConfig& config = {}) {
  detail::require_dims(height, width, "plan_tiles");
  config.validate();
  TileGrid grid;
  grid.height = height;
  grid.width = width;
  grid.tile_size = config.tile_size;
  grid.pad_rows = height < config.tile_size;
  grid.pad_cols = width < config.tile_size;
  const int stride = config.stride();
  const auto ys = axis_origins(height, config.tile_size, stride);
  const auto xs = axis_origins(width, config.tile_size, stride);
  grid.origins.reserve(ys.size() * xs.size());
  for (int y : ys)
    for (int x : xs) grid.origins.push_back({x, y});
  return grid;
}

/// Half-sample symmetric reflection into [0, n).
inline int reflect_index(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

inline RgbImage extract_tile(const RgbImage& image, const TileGrid& grid, TileOrigin origin) {
  if (image.height() != grid.height || image.width() != grid.width) {
    throw DimensionMismatch("extract_tile: image does not match grid dimensions");
  }
  grid.index_of(origin);
  const int t = grid.tile_size;
  RgbImage tile(t, t);
  for (int dy = 0; dy < t; ++dy) {
    const int sy = reflect_index(origin.y + dy, image.height());
    for (int dx = 0; dx < t; ++dx) {
      const int sx = reflect_index(origin.x + dx, image.width());
      for (int c = 0; c < 3; ++c) tile.at(dy, dx, c) = image.at(sy, sx, c);
    }
  }
  return tile;
}

/// Mean of all covering tile predictions; padded tile pixels are dropped.
inline ProbMap aggregate(std::span<const ProbMap> tile_maps, const TileGrid& grid) {
  if (tile_maps.size() != grid.origins.size()) {
    throw DimensionMismatch("aggregate: " + std::to_string(tile_maps.size()) +
                            " tile maps for " + std::to_string(grid.origins.size()) +
                            " grid origins");
  }
  const int t = grid.tile_size;
  std::vector<double> sum(detail::pixel_count(grid.height, grid.width), 0.0);
  std::vector<int> count(sum.size(), 0);
  for (std::size_t k = 0; k < tile_maps.size(); ++k) {
    const ProbMap& m = tile_maps[k];
    if (m.height() != t || m.width() != t) {
      throw DimensionMismatch("aggregate: tile map " + std::to_string(k) + " is not " +
                              std::to_string(t) + "x" + std::to_string(t));
    }
    const TileOrigin o = grid.origins[k];
    const int ylim = std::min(t, grid.height - o.y);
    const int xlim = std::min(t, grid.width - o.x);
    for (int dy = 0; dy < ylim; ++dy) {
      const std::size_t row = static_cast<std::size_t>(o.y + dy) * grid.width + o.x;
      for (int dx = 0; dx < xlim; ++dx) {
        sum[row + dx] += m.at(dy, dx);
        ++count[row + dx];
      }
    }
  }
  std::vector<float> out(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    out[i] = std::clamp(static_cast<float>(sum[i] / count[i]), 0.0f, 1.0f);
  }
  return ProbMap(grid.height, grid.width, std::move(out));
}

}  // namespace mitoseg
