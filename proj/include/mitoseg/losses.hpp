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

/// @file losses.hpp
/// @brief Soft Dice and binary focal losses with analytic gradients.
///
///   dice  = 1 - (2 sum p t + eps) / (sum p + sum t + eps)
///   focal = mean_i -alpha_t (1 - p_t)^gamma log p_t
///
/// with p_t = p, alpha_t = alpha on foreground and p_t = 1 - p,
/// alpha_t = 1 - alpha on background. Predictions are clamped to
/// [1e-7, 1 - 1e-7] inside the focal term; the gradient is that of the
/// clamped function (zero outside the clamp range).

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "mitoseg/core.hpp"

namespace mitoseg {

struct LossConfig {
  double dice_epsilon = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_weight = 1.0;
  double focal_weight = 1.0;

  void validate() const {
    if (!(dice_epsilon > 0.0)) throw InvalidArgument("LossConfig: dice_epsilon must be > 0");
    if (!(focal_gamma >= 0.0)) throw InvalidArgument("LossConfig: focal_gamma must be >= 0");
    if (!(focal_alpha > 0.0 && focal_alpha <= 1.0)) {
      throw InvalidArgument("LossConfig: focal_alpha must be in (0,1]");
    }
    if (dice_weight < 0.0 || focal_weight < 0.0 || (dice_weight == 0.0 && focal_weight == 0.0)) {
      throw InvalidArgument("LossConfig: weights must be nonnegative and not both zero");
    }
  }
};

inline constexpr double kFocalClamp = 1e-7;

namespace loss_detail {

inline void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw DimensionMismatch("loss: prediction and target sizes differ");
  if (a == 0) throw InvalidArgument("loss: empty input");
}

inline double focal_term(double p, bool fg, double alpha, double gamma) {
  p = std::clamp(p, kFocalClamp, 1.0 - kFocalClamp);
  const double pt = fg ? p : 1.0 - p;
  const double at = fg ? alpha : 1.0 - alpha;
  return -at * std::pow(1.0 - pt, gamma) * std::log(pt);
}

inline double focal_term_grad(double p, bool fg, double alpha, double gamma) {
  if (p < kFocalClamp || p > 1.0 - kFocalClamp) return 0.0;
  if (fg) {
    // d/dp [-alpha (1-p)^g log p]
    const double q = 1.0 - p;
    const double lead = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * std::log(p);
    return -alpha * (std::pow(q, gamma) / p - lead);
  }
  // d/dp [-(1-alpha) p^g log(1-p)]
  const double lead = gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p);
  return -(1.0 - alpha) * (lead - std::pow(p, gamma) / (1.0 - p));
}

}  // namespace loss_detail

/// Flat inputs: pred in [0,1], target in {0,1}.
inline double dice_loss(std::span<const double> pred, std::span<const double> target,
                        const LossConfig& cfg = {}) {
  loss_detail::check_sizes(pred.size(), target.size());
  double inter = 0.0, ps = 0.0, ts = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * target[i];
    ps += pred[i];
    ts += target[i];
  }
  return 1.0 - (2.0 * inter + cfg.dice_epsilon) / (ps + ts + cfg.dice_epsilon);
}

inline double focal_loss(std::span<const double> pred, std::span<const double> target,
                         const LossConfig& cfg = {}) {
  loss_detail::check_sizes(pred.size(), target.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sum += loss_detail::focal_term(pred[i], target[i] > 0.5, cfg.focal_alpha, cfg.focal_gamma);
  }
  return sum / static_cast<double>(pred.size());
}

inline double combined_loss(std::span<const double> pred, std::span<const double> target,
                            const LossConfig& cfg = {}) {
  cfg.validate();
  double v = 0.0;
  if (cfg.dice_weight != 0.0) v += cfg.dice_weight * dice_loss(pred, target, cfg);
  if (cfg.focal_weight != 0.0) v += cfg.focal_weight * focal_loss(pred, target, cfg);
  return v;
}

inline std::vector<double> combined_loss_grad(std::span<const double> pred,
                                              std::span<const double> target,
                                              const LossConfig& cfg = {}) {
  cfg.validate();
  loss_detail::check_sizes(pred.size(), target.size());
  const std::size_t n = pred.size();
  std::vector<double> grad(n, 0.0);
  if (cfg.dice_weight != 0.0) {
    double inter = 0.0, ps = 0.0, ts = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      inter += pred[i] * target[i];
      ps += pred[i];
      ts += target[i];
    }
    const double num = 2.0 * inter + cfg.dice_epsilon;
    const double den = ps + ts + cfg.dice_epsilon;
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] += cfg.dice_weight * -(2.0 * target[i] * den - num) / (den * den);
    }
  }
  if (cfg.focal_weight != 0.0) {
    const double scale = cfg.focal_weight / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] += scale * loss_detail::focal_term_grad(pred[i], target[i] > 0.5, cfg.focal_alpha,
                                                      cfg.focal_gamma);
    }
  }
  return grad;
}

// Raster overloads.

namespace loss_detail {

inline std::pair<std::vector<double>, std::vector<double>> flatten(const ProbMap& pred,
                                                                   const BinaryMask& target) {
  if (pred.height() != target.height() || pred.width() != target.width()) {
    throw DimensionMismatch("loss: prediction and target dimensions differ");
  }
  std::vector<double> p(pred.values().begin(), pred.values().end());
  std::vector<double> t(target.bits().begin(), target.bits().end());
  return {std::move(p), std::move(t)};
}

}  // namespace loss_detail

inline double dice_loss(const ProbMap& pred, const BinaryMask& target, const LossConfig& cfg = {}) {
  const auto [p, t] = loss_detail::flatten(pred, target);
  return dice_loss(std::span<const double>(p), std::span<const double>(t), cfg);
}

inline double focal_loss(const ProbMap& pred, const BinaryMask& target, const LossConfig& cfg = {}) {
  const auto [p, t] = loss_detail::flatten(pred, target);
  return focal_loss(std::span<const double>(p), std::span<const double>(t), cfg);
}

inline double combined_loss(const ProbMap& pred, const BinaryMask& target, const LossConfig& cfg = {}) {
  const auto [p, t] = loss_detail::flatten(pred, target);
  return combined_loss(std::span<const double>(p), std::span<const double>(t), cfg);
}

inline std::vector<double> combined_loss_grad(const ProbMap& pred, const BinaryMask& target,
                                              const LossConfig& cfg = {}) {
  const auto [p, t] = loss_detail::flatten(pred, target);
  return combined_loss_grad(std::span<const double>(p), std::span<const double>(t), cfg);
}

}  // namespace mitoseg
