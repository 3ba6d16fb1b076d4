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

/// @file pipeline.hpp
/// @brief Slide-level inference: predictors, tiled prediction with ensemble
/// averaging, point-to-mask synthesis and class-balanced tile batches.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mitoseg/core.hpp"
#include "mitoseg/network.hpp"
#include "mitoseg/postproc.hpp"
#include "mitoseg/tiling.hpp"

namespace mitoseg {

/// Uniform probability everywhere.
struct ConstantPredictor {
  float probability = 0.0f;
};

/// Ground-truth discs around the slide's annotated centers.
struct OraclePredictor {
  int mask_radius = 10;
};

struct NetworkPredictor {
  std::filesystem::path weights;
};

using PredictorSpec = std::variant<NetworkPredictor, OraclePredictor, ConstantPredictor>;

/// "constant:<p>", "oracle[:<radius>]" or "network:<weights path>".
inline PredictorSpec parse_predictor(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? std::string{} : text.substr(colon + 1);
  auto number = [&](const char* what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(arg, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (arg.empty() || used != arg.size()) {
      throw InvalidArgument("predictor '" + text + "': " + what + " must be a number");
    }
    return v;
  };
  if (kind == "constant") {
    const double p = number("probability");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("predictor '" + text + "': probability outside [0,1]");
    return ConstantPredictor{static_cast<float>(p)};
  }
  if (kind == "oracle") {
    if (arg.empty()) return OraclePredictor{};
    const double r = number("mask radius");
    if (r < 1 || r != std::floor(r)) throw InvalidArgument("predictor '" + text + "': radius must be an integer >= 1");
    return OraclePredictor{static_cast<int>(r)};
  }
  if (kind == "network") {
    if (arg.empty()) throw InvalidArgument("predictor '" + text + "': missing weights path");
    return NetworkPredictor{arg};
  }
  throw InvalidArgument("unknown predictor kind '" + kind + "' (expected constant, oracle or network)");
}

/// Hyperparameters of the original training recipe. Recorded for reference;
/// nothing in this library trains.
struct TrainingRecipe {
  int epochs = 100;
  double learning_rate = 5e-4;
  int batch_size = 24;
};

struct RunConfig {
  TilingConfig tiling;
  PostprocConfig postproc;
  double eval_radius = 30.0;
  std::uint64_t seed = 0;
  std::vector<PredictorSpec> ensemble;
  TrainingRecipe training;

  void validate() const {
    tiling.validate();
    postproc.validate();
    if (!(eval_radius > 0.0)) throw InvalidArgument("RunConfig: eval radius must be > 0");
    if (ensemble.empty()) throw InvalidArgument("RunConfig: at least one predictor is required");
  }
};

/// Union of discs of the given radius at each (rounded) center, clipped.
inline BinaryMask synth_mask_from_points(std::span<const Point> centers, int height, int width, int radius) {
  if (radius < 1) throw InvalidArgument("synth_mask_from_points: radius must be >= 1");
  BinaryMask seeds(height, width);
  for (const auto& p : centers) {
    const auto x = std::llround(p.x);
    const auto y = std::llround(p.y);
    if (x >= 0 && y >= 0 && x < width && y < height) seeds.set(static_cast<int>(y), static_cast<int>(x), true);
  }
  BinaryMask out = dilate(seeds, radius);
  // Centers just outside the raster still contribute their clipped disc.
  for (const auto& p : centers) {
    const auto cx = std::llround(p.x);
    const auto cy = std::llround(p.y);
    if (cx >= 0 && cy >= 0 && cx < width && cy < height) continue;
    for (long long dy = -radius; dy <= radius; ++dy)
      for (long long dx = -radius; dx <= radius; ++dx) {
        if (dx * dx + dy * dy > static_cast<long long>(radius) * radius) continue;
        const auto y = cy + dy, x = cx + dx;
        if (y >= 0 && x >= 0 && y < height && x < width) out.set(static_cast<int>(y), static_cast<int>(x), true);
      }
  }
  return out;
}

/// A predictor with its resources loaded.
struct LoadedNetwork {
  WeightStore weights;
  VmUnetConfig config;
};

using LoadedPredictor = std::variant<LoadedNetwork, OraclePredictor, ConstantPredictor>;

inline LoadedPredictor load_predictor(const PredictorSpec& spec) {
  return std::visit(
      [](const auto& s) -> LoadedPredictor {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, NetworkPredictor>) {
          auto store = load_weights(s.weights);
          auto cfg = infer_config(store);
          return LoadedNetwork{std::move(store), cfg};
        } else {
          return s;
        }
      },
      spec);
}

/// One tile map per grid origin, in grid order.
inline std::vector<ProbMap> predict_tiles(const LoadedPredictor& predictor, const RgbImage& image,
                                          std::span<const Point> annotations, const TileGrid& grid) {
  const int t = grid.tile_size;
  std::vector<ProbMap> maps;
  maps.reserve(grid.origins.size());
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ConstantPredictor>) {
          for (std::size_t k = 0; k < grid.origins.size(); ++k) maps.emplace_back(t, t, p.probability);
        } else if constexpr (std::is_same_v<T, OraclePredictor>) {
          const BinaryMask mask = synth_mask_from_points(annotations, image.height(), image.width(), p.mask_radius);
          for (const auto& o : grid.origins) {
            std::vector<float> values(static_cast<std::size_t>(t) * t);
            for (int dy = 0; dy < t; ++dy) {
              const int sy = reflect_index(o.y + dy, image.height());
              for (int dx = 0; dx < t; ++dx) {
                const int sx = reflect_index(o.x + dx, image.width());
                values[static_cast<std::size_t>(dy) * t + dx] = mask.at(sy, sx) ? 1.0f : 0.0f;
              }
            }
            maps.emplace_back(t, t, std::move(values));
          }
        } else {
          for (const auto& o : grid.origins) {
            maps.push_back(vmunet_forward(extract_tile(image, grid, o), p.weights, p.config));
          }
        }
      },
      predictor);
  return maps;
}

/// Tiles, predicts and aggregates per predictor, then averages predictors.
inline ProbMap predict_slide(const RgbImage& image, std::span<const Point> annotations,
                             std::span<const LoadedPredictor> predictors, const TilingConfig& tiling) {
  if (predictors.empty()) throw InvalidArgument("predict_slide: no predictors");
  const TileGrid grid = plan_tiles(image.height(), image.width(), tiling);
  std::vector<ProbMap> per_model;
  per_model.reserve(predictors.size());
  for (const auto& p : predictors) {
    const auto tiles = predict_tiles(p, image, annotations, grid);
    per_model.push_back(aggregate(tiles, grid));
  }
  return per_model.size() == 1 ? per_model.front() : ensemble_mean(per_model);
}

// ---------------------------------------------------------------------------
// Balanced batches.

struct TileSample {
  std::string slide_id;
  TileOrigin origin;
  bool is_positive = false;

  friend bool operator==(const TileSample&, const TileSample&) = default;
};

/// A tile is positive iff at least one annotated center lies in its window.
inline std::vector<TileSample> label_tiles(const TileGrid& grid, std::span<const Point> annotations,
                                           const std::string& slide_id) {
  std::vector<TileSample> out;
  out.reserve(grid.origins.size());
  const double t = grid.tile_size;
  for (const auto& o : grid.origins) {
    const bool pos = std::any_of(annotations.begin(), annotations.end(), [&](const Point& p) {
      return p.x >= o.x && p.x < o.x + t && p.y >= o.y && p.y < o.y + t;
    });
    out.push_back({slide_id, o, pos});
  }
  return out;
}

using Batch = std::vector<TileSample>;

/// Every batch holds batch_size/2 positives and batch_size/2 negatives. The
/// larger class is shuffled and consumed once (the last batch is topped up
/// by uniform draws); the smaller class is drawn in successive shuffled
/// passes, repeating as often as needed.
inline std::vector<Batch> build_balanced_batches(std::span<const TileSample> tiles, int batch_size,
                                                 std::uint64_t seed) {
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw InvalidArgument("build_balanced_batches: batch_size must be even and >= 2");
  }
  std::vector<TileSample> pos, neg;
  for (const auto& t : tiles) (t.is_positive ? pos : neg).push_back(t);
  if (pos.empty() || neg.empty()) {
    throw InvalidArgument("build_balanced_batches: need at least one positive and one negative tile");
  }
  const bool pos_major = pos.size() > neg.size();
  std::vector<TileSample>& major = pos_major ? pos : neg;
  std::vector<TileSample>& minor = pos_major ? neg : pos;

  std::mt19937_64 rng(seed);
  const std::size_t half = static_cast<std::size_t>(batch_size / 2);
  const std::size_t nbatches = (major.size() + half - 1) / half;

  std::vector<TileSample> major_seq = major;
  std::shuffle(major_seq.begin(), major_seq.end(), rng);
  std::uniform_int_distribution<std::size_t> pick_major(0, major.size() - 1);
  while (major_seq.size() < nbatches * half) major_seq.push_back(major[pick_major(rng)]);

  std::vector<TileSample> minor_seq;
  minor_seq.reserve(nbatches * half);
  while (minor_seq.size() < nbatches * half) {
    std::vector<TileSample> pass = minor;
    std::shuffle(pass.begin(), pass.end(), rng);
    for (auto& s : pass) {
      if (minor_seq.size() == nbatches * half) break;
      minor_seq.push_back(std::move(s));
    }
  }

  std::vector<Batch> batches(nbatches);
  for (std::size_t b = 0; b < nbatches; ++b) {
    Batch& batch = batches[b];
    batch.reserve(2 * half);
    batch.insert(batch.end(), major_seq.begin() + static_cast<std::ptrdiff_t>(b * half),
                 major_seq.begin() + static_cast<std::ptrdiff_t>((b + 1) * half));
    batch.insert(batch.end(), minor_seq.begin() + static_cast<std::ptrdiff_t>(b * half),
                 minor_seq.begin() + static_cast<std::ptrdiff_t>((b + 1) * half));
    std::shuffle(batch.begin(), batch.end(), rng);
  }
  return batches;
}

}  // namespace mitoseg
