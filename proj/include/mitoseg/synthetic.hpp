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

/// @file synthetic.hpp
/// @brief Seeded synthetic point-annotated datasets: two-stain renderings
/// with dark nuclei at the annotated mitoses, a few distractor nuclei and a
/// per-domain stain shift.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mitoseg/core.hpp"
#include "mitoseg/stain.hpp"

namespace mitoseg {

struct SynthConfig {
  int slides = 5;
  int domains = 3;
  int size = 2048;
  int annotations_per_slide = 20;
  /// Minimum distance between two annotated centers.
  double min_separation = 64.0;
  /// Minimum distance from a center to the image border.
  int margin = 32;
  int distractors_per_slide = 10;
  std::uint64_t seed = 0;
};

/// Rejection-sampled centers honoring margin and separation.
inline std::vector<Point> sample_centers(int count, int height, int width, double min_separation, int margin,
                                         std::mt19937_64& rng) {
  if (2 * margin >= width || 2 * margin >= height) {
    throw InvalidArgument("sample_centers: margin leaves no room for centers");
  }
  std::uniform_int_distribution<int> ux(margin, width - 1 - margin);
  std::uniform_int_distribution<int> uy(margin, height - 1 - margin);
  std::vector<Point> out;
  constexpr int kMaxAttempts = 100000;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > kMaxAttempts) {
      throw InvalidArgument("sample_centers: cannot place " + std::to_string(count) +
                            " centers with the requested separation");
    }
    const Point p{static_cast<double>(ux(rng)), static_cast<double>(uy(rng))};
    bool ok = true;
    for (const auto& q : out) ok = ok && distance(p, q) >= min_separation;
    if (ok) out.push_back(p);
  }
  return out;
}

/// Hematoxylin-like and eosin-like unit OD vectors, tilted per domain.
inline StainMatrix domain_stains(int domain, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(domain + 1)));
  std::uniform_real_distribution<double> jitter(-0.08, 0.08);
  StainMatrix s;
  s.columns[0] = {0.65, 0.70, 0.29};
  s.columns[1] = {0.07, 0.99, 0.11};
  for (auto& col : s.columns) {
    for (double& v : col) v = std::max(0.01, v + jitter(rng));
    const double n = std::sqrt(col[0] * col[0] + col[1] * col[1] + col[2] * col[2]);
    for (double& v : col) v /= n;
  }
  return s;
}

inline RgbImage render_slide(int height, int width, const StainMatrix& stains, const std::vector<Point>& mitoses,
                             const std::vector<Point>& distractors, std::mt19937_64& rng) {
  std::vector<double> hema(detail::pixel_count(height, width), 0.05);
  std::vector<double> eosin(hema.size(), 0.0);
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  const double px = phase(rng), py = phase(rng);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      eosin[static_cast<std::size_t>(y) * width + x] =
          0.35 + 0.15 * std::sin(x * 0.021 + px) * std::cos(y * 0.017 + py);
    }
  auto stamp = [&](const Point& c, int radius, double amount) {
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        if (dx * dx + dy * dy > radius * radius) continue;
        const int y = static_cast<int>(c.y) + dy, x = static_cast<int>(c.x) + dx;
        if (y < 0 || x < 0 || y >= height || x >= width) continue;
        hema[static_cast<std::size_t>(y) * width + x] = amount;
      }
  };
  for (const auto& d : distractors) stamp(d, 5, 0.6);
  for (const auto& m : mitoses) stamp(m, 8, 1.3);

  std::normal_distribution<double> noise(0.0, 0.02);
  RgbImage img(height, width);
  auto& data = img.data();
  for (std::size_t i = 0; i < hema.size(); ++i) {
    const double h = std::max(0.0, hema[i] + noise(rng));
    const double e = std::max(0.0, eosin[i] + noise(rng));
    for (int k = 0; k < 3; ++k) {
      data[3 * i + k] = od_to_intensity(stains.columns[0][k] * h + stains.columns[1][k] * e, 255.0);
    }
  }
  return img;
}

/// Writes slide_<i>.ppm images and manifest.json into dir; returns the
/// manifest (paths relative to dir).
inline DatasetManifest write_synthetic_dataset(const std::filesystem::path& dir, const SynthConfig& cfg) {
  if (cfg.slides < 0 || cfg.domains < 1 || cfg.size < 1 || cfg.annotations_per_slide < 0) {
    throw InvalidArgument("write_synthetic_dataset: invalid configuration");
  }
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(cfg.seed);
  DatasetManifest manifest;
  manifest.base_dir = dir;
  for (int i = 0; i < cfg.slides; ++i) {
    const int domain = i % cfg.domains;
    auto centers = sample_centers(cfg.annotations_per_slide + cfg.distractors_per_slide, cfg.size, cfg.size,
                                  cfg.min_separation, cfg.margin, rng);
    std::vector<Point> mitoses(centers.begin(), centers.begin() + cfg.annotations_per_slide);
    std::vector<Point> distractors(centers.begin() + cfg.annotations_per_slide, centers.end());
    const RgbImage img = render_slide(cfg.size, cfg.size, domain_stains(domain, cfg.seed), mitoses, distractors, rng);

    SlideEntry slide;
    slide.slide_id = "slide_" + std::to_string(i);
    slide.image_path = slide.slide_id + ".ppm";
    slide.domain_id = "domain_" + std::to_string(domain);
    slide.width = cfg.size;
    slide.height = cfg.size;
    slide.annotations = std::move(mitoses);
    save_image(img, dir / slide.image_path);
    manifest.slides.push_back(std::move(slide));
  }
  save_manifest(manifest, dir / "manifest.json");
  return manifest;
}

}  // namespace mitoseg
