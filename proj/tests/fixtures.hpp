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

// Test fixtures built from known factors.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mitoseg/core.hpp"
#include "mitoseg/network.hpp"
#include "mitoseg/stain.hpp"

namespace fixture {

inline std::array<double, 3> unit(std::array<double, 3> v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

// Hematoxylin-like first (larger red OD), eosin-like second.
inline mitoseg::StainMatrix reference_stains() {
  mitoseg::StainMatrix s;
  s.columns[0] = unit({0.65, 0.70, 0.29});
  s.columns[1] = unit({0.07, 0.99, 0.11});
  return s;
}

struct TwoStainImage {
  mitoseg::RgbImage image;
  std::vector<double> conc;  // 2 per pixel
};

// Renders od = S c per pixel. A fraction of pixels carries a single stain,
// a fraction is blank background, the rest mixes both.
inline TwoStainImage two_stain_image(int h, int w, const mitoseg::StainMatrix& s, std::uint64_t seed,
                                     double single_fraction = 0.5, double blank_fraction = 0.1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0), amount(0.2, 1.2);
  TwoStainImage out{mitoseg::RgbImage(h, w), std::vector<double>(2 * static_cast<std::size_t>(h) * w, 0.0)};
  for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
    const double r = u(rng);
    double c0 = 0.0, c1 = 0.0;
    if (r < blank_fraction) {
    } else if (r < blank_fraction + single_fraction) {
      (u(rng) < 0.5 ? c0 : c1) = amount(rng);
    } else {
      c0 = amount(rng);
      c1 = amount(rng);
    }
    out.conc[2 * i] = c0;
    out.conc[2 * i + 1] = c1;
    for (int k = 0; k < 3; ++k) {
      const double od = s.columns[0][k] * c0 + s.columns[1][k] * c1;
      out.image.data()[3 * i + k] = static_cast<std::uint8_t>(std::clamp(std::round(255.0 * std::exp(-od)), 0.0, 255.0));
    }
  }
  return out;
}

inline mitoseg::RgbImage random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  mitoseg::RgbImage img(h, w);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(byte(rng));
  return img;
}

// Zeroes every output projection so each VSS block reduces to its residual.
inline void zero_branches(mitoseg::WeightStore& store) {
  std::vector<std::string> names;
  for (const auto& [name, arr] : store.arrays()) {
    if (name.ends_with("out_proj.weight")) names.push_back(name);
  }
  for (const auto& name : names) {
    auto& v = store.get(name).values;
    std::fill(v.begin(), v.end(), 0.0f);
  }
}

}  // namespace fixture
