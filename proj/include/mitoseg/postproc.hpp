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

/// @file postproc.hpp
/// @brief Probability map to point detections: threshold, disc dilation,
/// connected components, bounding-box centers. Also ensemble averaging.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mitoseg/core.hpp"

namespace mitoseg {

struct PostprocConfig {
  double binarize_threshold = 0.5;
  int dilation_radius = 15;
  int connectivity = 8;
  int min_component_area = 20;

  void validate() const {
    if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0)) {
      throw InvalidArgument("PostprocConfig: threshold must be in (0,1)");
    }
    if (dilation_radius < 0) throw InvalidArgument("PostprocConfig: dilation_radius must be >= 0");
    if (connectivity != 4 && connectivity != 8) {
      throw InvalidArgument("PostprocConfig: connectivity must be 4 or 8");
    }
    if (min_component_area < 0) throw InvalidArgument("PostprocConfig: min_component_area must be >= 0");
  }
};

inline BinaryMask binarize(const ProbMap& map, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("binarize: threshold must be in (0,1)");
  std::vector<std::uint8_t> bits(map.values().size());
  std::transform(map.values().begin(), map.values().end(), bits.begin(),
                 [&](float v) { return static_cast<std::uint8_t>(static_cast<double>(v) >= threshold); });
  return BinaryMask(map.height(), map.width(), std::move(bits));
}

/// Union of discs {dx^2 + dy^2 <= r^2} around every set pixel. Each run of
/// set pixels [a, b] on row y covers [a - w, b + w] on row y + dy, with
/// w = floor(sqrt(r^2 - dy^2)).
inline BinaryMask dilate(const BinaryMask& mask, int radius) {
  if (radius < 0) throw InvalidArgument("dilate: radius must be >= 0");
  if (radius == 0) return mask;
  const int h = mask.height(), w = mask.width();
  std::vector<int> half(2 * radius + 1);
  for (int dy = -radius; dy <= radius; ++dy) {
    int hw = static_cast<int>(std::floor(std::sqrt(static_cast<double>(radius * radius - dy * dy))));
    while ((hw + 1) * (hw + 1) + dy * dy <= radius * radius) ++hw;
    while (hw * hw + dy * dy > radius * radius) --hw;
    half[dy + radius] = hw;
  }
  std::vector<std::uint8_t> out(mask.bits().size(), 0);
  const auto& in = mask.bits();
  for (int y = 0; y < h; ++y) {
    int x = 0;
    while (x < w) {
      if (!in[static_cast<std::size_t>(y) * w + x]) {
        ++x;
        continue;
      }
      const int a = x;
      while (x < w && in[static_cast<std::size_t>(y) * w + x]) ++x;
      const int b = x - 1;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        const int lo = std::max(0, a - half[dy + radius]);
        const int hi = std::min(w - 1, b + half[dy + radius]);
        std::fill(out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(yy) * w + lo),
                  out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(yy) * w + hi + 1),
                  std::uint8_t{1});
      }
    }
  }
  return BinaryMask(h, w, std::move(out));
}

struct Component {
  int label = 0;
  int area = 0;
  int xmin = 0, ymin = 0, xmax = 0, ymax = 0;
};

struct Labeling {
  int height = 0;
  int width = 0;
  /// 0 for background, 1..K otherwise, numbered by first pixel in raster order.
  std::vector<int> labels;
  std::vector<Component> components;

  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

/// Two-pass labeling with union-find.
inline Labeling connected_components(const BinaryMask& mask, int connectivity = 8) {
  if (connectivity != 4 && connectivity != 8) {
    throw InvalidArgument("connected_components: connectivity must be 4 or 8");
  }
  const int h = mask.height(), w = mask.width();
  Labeling out{h, w, std::vector<int>(mask.bits().size(), 0), {}};
  std::vector<int> parent{0};
  auto find = [&](int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      int current = 0;
      auto visit = [&](int yy, int xx) {
        if (yy < 0 || xx < 0 || xx >= w) return;
        const int l = out.labels[static_cast<std::size_t>(yy) * w + xx];
        if (l == 0) return;
        if (current == 0) {
          current = l;
        } else {
          unite(current, l);
        }
      };
      visit(y, x - 1);
      visit(y - 1, x);
      if (connectivity == 8) {
        visit(y - 1, x - 1);
        visit(y - 1, x + 1);
      }
      if (current == 0) {
        current = static_cast<int>(parent.size());
        parent.push_back(current);
      }
      out.labels[static_cast<std::size_t>(y) * w + x] = current;
    }
  }

  std::vector<int> remap(parent.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int& l = out.labels[static_cast<std::size_t>(y) * w + x];
      if (l == 0) continue;
      const int root = find(l);
      if (remap[root] == 0) {
        remap[root] = static_cast<int>(out.components.size()) + 1;
        out.components.push_back({remap[root], 0, x, y, x, y});
      }
      l = remap[root];
      Component& c = out.components[l - 1];
      ++c.area;
      c.xmin = std::min(c.xmin, x);
      c.xmax = std::max(c.xmax, x);
      c.ymin = std::min(c.ymin, y);
      c.ymax = std::max(c.ymax, y);
    }
  }
  return out;
}

inline Point bbox_center(const Component& c) {
  return {(c.xmin + c.xmax) / 2.0, (c.ymin + c.ymax) / 2.0};
}

/// Centers of axis-aligned bounding boxes, dropping components smaller than
/// min_area.
inline std::vector<Point> component_centers(std::span<const Component> components, int min_area = 0) {
  std::vector<Point> out;
  for (const auto& c : components) {
    if (c.area >= min_area) out.push_back(bbox_center(c));
  }
  return out;
}

/// Scores are the maximum probability over the component's pixels before
/// dilation. Output is sorted by (y, x).
inline std::vector<Detection> detect(const ProbMap& map, const PostprocConfig& cfg = {},
                                     const std::string& slide_id = {}) {
  cfg.validate();
  const BinaryMask raw = binarize(map, cfg.binarize_threshold);
  const BinaryMask grown = dilate(raw, cfg.dilation_radius);
  const Labeling lab = connected_components(grown, cfg.connectivity);

  std::vector<double> score(lab.components.size(), 0.0);
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      if (!raw.at(y, x)) continue;
      double& s = score[lab.at(y, x) - 1];
      s = std::max(s, static_cast<double>(map.at(y, x)));
    }
  }
  std::vector<Detection> out;
  for (const auto& c : lab.components) {
    if (c.area < cfg.min_component_area) continue;
    out.push_back({bbox_center(c), score[c.label - 1], slide_id});
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.center.y != b.center.y) return a.center.y < b.center.y;
    return a.center.x < b.center.x;
  });
  return out;
}

/// Per-pixel mean accumulated in list order.
inline ProbMap ensemble_mean(std::span<const ProbMap> maps) {
  if (maps.empty()) throw InvalidArgument("ensemble_mean: no maps");
  const int h = maps[0].height(), w = maps[0].width();
  std::vector<double> sum(maps[0].values().size(), 0.0);
  for (const auto& m : maps) {
    if (m.height() != h || m.width() != w) throw DimensionMismatch("ensemble_mean: dimension mismatch");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += m.values()[i];
  }
  std::vector<float> out(sum.size());
  const double n = static_cast<double>(maps.size());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    out[i] = std::clamp(static_cast<float>(sum[i] / n), 0.0f, 1.0f);
  }
  return ProbMap(h, w, std::move(out));
}

}  // namespace mitoseg
