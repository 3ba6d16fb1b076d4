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

/// @file stain.hpp
/// @brief Optical density conversion, two-stain sparse NMF estimation and
/// stain perturbation for augmentation.
///
/// ## Model
///
/// Under Beer-Lambert, the optical density of a pixel is linear in the dye
/// amounts: od = S c, with S a 3x2 nonnegative matrix of unit stain vectors
/// and c >= 0 the per-pixel concentrations. Estimation minimizes
///
///     ||V - S C||_F^2 + lambda ||C||_1,   S >= 0, C >= 0, ||S_j|| = 1
///
/// over the tissue pixels V by alternating minimization:
///  - C-step: per-pixel nonnegative lasso by coordinate descent;
///  - S-step: projected gradient on the stain matrix with backtracking, each
///    column renormalized onto the unit sphere after the step.
/// Both steps never increase the objective, so the recorded history is
/// monotone.
///
/// Augmentation rescales and shifts concentrations and re-renders:
///
///     I = I0 exp(-S (alpha C + beta))
///
/// with I0 the illumination white point.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mitoseg/core.hpp"

namespace mitoseg {

class InsufficientTissue : public Error {
 public:
  using Error::Error;
};

/// Per-pixel optical densities, 3 channels interleaved.
struct OdImage {
  int height = 0;
  int width = 0;
  std::vector<double> od;

  std::size_t pixels() const { return detail::pixel_count(height, width); }
  std::array<double, 3> at(std::size_t i) const { return {od[3 * i], od[3 * i + 1], od[3 * i + 2]}; }
};

/// 3x2 stain matrix stored as two unit columns.
struct StainMatrix {
  std::array<std::array<double, 3>, 2> columns{};

  double operator()(int row, int col) const { return columns[col][row]; }

  friend bool operator==(const StainMatrix&, const StainMatrix&) = default;
};

/// Per-pixel concentrations, 2 stains interleaved.
struct ConcentrationMap {
  int height = 0;
  int width = 0;
  std::vector<double> conc;

  std::size_t pixels() const { return detail::pixel_count(height, width); }
};

struct StainPerturbation {
  std::array<double, 2> alpha{1.0, 1.0};
  std::array<double, 2> beta{0.0, 0.0};
};

struct VahadaneParams {
  double sparsity_lambda = 0.1;
  /// Penalty of the final full-image concentration solve.
  double concentration_lambda = 0.01;
  double od_threshold = 0.15;
  int max_outer_iters = 50;
  /// Relative objective change that ends the alternation.
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  std::size_t max_pixels = 100000;
  double white_point = 255.0;
};

struct StainEstimate {
  StainMatrix stains;
  ConcentrationMap concentrations;
  /// Objective after initialization followed by one entry per outer iteration.
  std::vector<double> objective_history;
  /// ||V - S C||_F / ||V||_F over the sampled tissue pixels.
  double relative_residual = 0.0;
  std::size_t tissue_pixels = 0;
};

inline constexpr int kMinTissuePixels = 100;

// ---------------------------------------------------------------------------
// RGB <-> OD

inline double intensity_to_od(double intensity, double white_point) {
  return std::max(0.0, -std::log(std::max(intensity, 1.0) / white_point));
}

inline std::uint8_t od_to_intensity(double od, double white_point) {
  const double v = std::round(white_point * std::exp(-od));
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

inline OdImage rgb_to_od(const RgbImage& image, double white_point = 255.0) {
  if (!(white_point >= 1.0)) throw InvalidArgument("rgb_to_od: white point must be >= 1");
  OdImage out{image.height(), image.width(), {}};
  out.od.resize(image.data().size());
  // One log per intensity level.
  std::array<double, 256> lut{};
  for (int i = 0; i < 256; ++i) lut[i] = intensity_to_od(i, white_point);
  std::transform(image.data().begin(), image.data().end(), out.od.begin(),
                 [&](std::uint8_t v) { return lut[v]; });
  return out;
}

inline RgbImage od_to_rgb(const OdImage& od, double white_point = 255.0) {
  RgbImage out(od.height, od.width);
  std::transform(od.od.begin(), od.od.end(), out.data().begin(),
                 [&](double v) { return od_to_intensity(v, white_point); });
  return out;
}

// ---------------------------------------------------------------------------
// Nonnegative lasso, two dictionary atoms.

namespace detail {

struct Gram2 {
  double g11, g12, g22;
};

inline Gram2 gram(const StainMatrix& s) {
  auto dot = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  };
  return {dot(s.columns[0], s.columns[0]), dot(s.columns[0], s.columns[1]),
          dot(s.columns[1], s.columns[1])};
}

inline std::array<double, 2> project(const StainMatrix& s, const std::array<double, 3>& v) {
  return {s.columns[0][0] * v[0] + s.columns[0][1] * v[1] + s.columns[0][2] * v[2],
          s.columns[1][0] * v[0] + s.columns[1][1] * v[1] + s.columns[1][2] * v[2]};
}

/// Quadratic part minus the constant ||v||^2, plus the l1 penalty.
inline double lasso_value(const Gram2& g, const std::array<double, 2>& b, double lambda,
                          const std::array<double, 2>& c) {
  return g.g11 * c[0] * c[0] + 2.0 * g.g12 * c[0] * c[1] + g.g22 * c[1] * c[1] -
         2.0 * (b[0] * c[0] + b[1] * c[1]) + lambda * (c[0] + c[1]);
}

/// Exact minimizer: the optimum lies on one of the four faces of the
/// nonnegative quadrant, each of which has a closed-form minimizer.
inline std::array<double, 2> nonneg_lasso(const Gram2& g, const std::array<double, 2>& b,
                                          double lambda) {
  const double half = 0.5 * lambda;
  std::array<double, 2> best{0.0, 0.0};
  double best_value = 0.0;
  auto consider = [&](const std::array<double, 2>& c) {
    const double v = lasso_value(g, b, lambda, c);
    if (v < best_value) {
      best = c;
      best_value = v;
    }
  };
  if (g.g11 > 0.0) consider({std::max(0.0, (b[0] - half) / g.g11), 0.0});
  if (g.g22 > 0.0) consider({0.0, std::max(0.0, (b[1] - half) / g.g22)});
  const double det = g.g11 * g.g22 - g.g12 * g.g12;
  if (det > 1e-12 * g.g11 * g.g22) {
    const std::array<double, 2> face{((b[0] - half) * g.g22 - (b[1] - half) * g.g12) / det,
                                     ((b[1] - half) * g.g11 - (b[0] - half) * g.g12) / det};
    if (face[0] > 0.0 && face[1] > 0.0) consider(face);
  }
  return best;
}

inline void order_columns(StainMatrix& s, std::vector<double>* conc) {
  const auto& a = s.columns[0];
  const auto& b = s.columns[1];
  const bool swap = (b[0] > a[0]) || (b[0] == a[0] && b[1] > a[1]);
  if (!swap) return;
  std::swap(s.columns[0], s.columns[1]);
  if (conc) {
    for (std::size_t i = 0; i + 1 < conc->size(); i += 2) std::swap((*conc)[i], (*conc)[i + 1]);
  }
}

inline bool normalize_nonneg(std::array<double, 3>& v) {
  for (double& x : v) x = std::max(0.0, x);
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (n <= 1e-12) return false;
  for (double& x : v) x /= n;
  return true;
}

}  // namespace detail

/// Per-pixel nonnegative lasso: argmin_c>=0 ||v - S c||^2 + lambda ||c||_1.
inline ConcentrationMap solve_concentrations(const OdImage& od, const StainMatrix& stains,
                                             double sparsity_lambda) {
  if (sparsity_lambda < 0.0) throw InvalidArgument("solve_concentrations: lambda must be >= 0");
  const auto g = detail::gram(stains);
  ConcentrationMap out{od.height, od.width, std::vector<double>(2 * od.pixels(), 0.0)};
  for (std::size_t i = 0; i < od.pixels(); ++i) {
    const auto b = detail::project(stains, od.at(i));
    const auto c = detail::nonneg_lasso(g, b, sparsity_lambda);
    out.conc[2 * i] = c[0];
    out.conc[2 * i + 1] = c[1];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimation.

namespace detail {

struct NmfProblem {
  std::vector<std::array<double, 3>> v;
};

/// ||v - S c||^2 + lambda ||c||_1 evaluated directly.
inline double pixel_term(const StainMatrix& s, const std::array<double, 3>& v,
                         const std::array<double, 2>& c, double lambda) {
  double fit = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double e = v[k] - s.columns[0][k] * c[0] - s.columns[1][k] * c[1];
    fit += e * e;
  }
  return fit + lambda * (c[0] + c[1]);
}

inline double total_objective(const NmfProblem& p, const StainMatrix& s,
                              const std::vector<std::array<double, 2>>& c, double lambda) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.v.size(); ++i) sum += pixel_term(s, p.v[i], c[i], lambda);
  return sum;
}

inline StainMatrix initial_stains(const NmfProblem& p) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  for (const auto& v : p.v) {
    const Eigen::Vector3d e(v[0], v[1], v[2]);
    m += e * e.transpose();
  }
  m /= static_cast<double>(p.v.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(m);
  Eigen::Vector3d e1 = eig.eigenvectors().col(2);
  Eigen::Vector3d e2 = eig.eigenvectors().col(1);
  if (e1.sum() < 0) e1 = -e1;
  if (e2.sum() < 0) e2 = -e2;

  // Extreme angles within the principal plane bound the stain cone.
  std::vector<double> angles;
  angles.reserve(p.v.size());
  for (const auto& v : p.v) {
    const Eigen::Vector3d e(v[0], v[1], v[2]);
    angles.push_back(std::atan2(e.dot(e2), e.dot(e1)));
  }
  std::sort(angles.begin(), angles.end());
  const auto pick = [&](double q) {
    const auto idx = static_cast<std::size_t>(q * static_cast<double>(angles.size() - 1));
    return angles[idx];
  };
  const double lo = pick(0.01);
  const double hi = pick(0.99);

  StainMatrix s;
  for (int j = 0; j < 2; ++j) {
    const double phi = j == 0 ? lo : hi;
    const Eigen::Vector3d d = std::cos(phi) * e1 + std::sin(phi) * e2;
    s.columns[j] = {d[0], d[1], d[2]};
    if (!normalize_nonneg(s.columns[j])) {
      const Eigen::Vector3d f = j == 0 ? e1 : e2;
      s.columns[j] = {f[0], f[1], f[2]};
      if (!normalize_nonneg(s.columns[j])) {
        const double u = 1.0 / std::sqrt(3.0);
        s.columns[j] = {u, u, u};
      }
    }
  }
  return s;
}

}  // namespace detail

inline StainEstimate estimate_stains(const RgbImage& image, const VahadaneParams& params = {}) {
  if (params.max_outer_iters < 1) throw InvalidArgument("estimate_stains: max_outer_iters must be >= 1");
  if (!(params.tolerance > 0.0)) throw InvalidArgument("estimate_stains: tolerance must be > 0");
  if (params.sparsity_lambda < 0.0 || params.od_threshold < 0.0) {
    throw InvalidArgument("estimate_stains: lambda and od_threshold must be >= 0");
  }

  const OdImage od = rgb_to_od(image, params.white_point);
  std::vector<std::size_t> tissue;
  for (std::size_t i = 0; i < od.pixels(); ++i) {
    const auto v = od.at(i);
    if (std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) >= params.od_threshold) tissue.push_back(i);
  }
  if (tissue.size() < static_cast<std::size_t>(kMinTissuePixels)) {
    throw InsufficientTissue("estimate_stains: only " + std::to_string(tissue.size()) +
                             " tissue pixels above OD threshold, need " +
                             std::to_string(kMinTissuePixels));
  }
  if (tissue.size() > params.max_pixels) {
    std::vector<std::size_t> sampled;
    sampled.reserve(params.max_pixels);
    std::mt19937_64 rng(params.seed);
    std::sample(tissue.begin(), tissue.end(), std::back_inserter(sampled), params.max_pixels, rng);
    tissue = std::move(sampled);
  }

  detail::NmfProblem prob;
  prob.v.reserve(tissue.size());
  double v_norm2 = 0.0;
  for (auto i : tissue) {
    prob.v.push_back(od.at(i));
    const auto& v = prob.v.back();
    v_norm2 += v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
  }
  const std::size_t n = prob.v.size();
  const double lambda = params.sparsity_lambda;

  StainMatrix s = detail::initial_stains(prob);
  std::vector<std::array<double, 2>> c(n, {0.0, 0.0});

  // A pixel keeps its old concentrations unless the directly evaluated term
  // does not grow, which makes the recorded objective exactly monotone.
  auto c_step = [&]() {
    const auto gs = detail::gram(s);
    for (std::size_t i = 0; i < n; ++i) {
      const auto b = detail::project(s, prob.v[i]);
      const auto next = detail::nonneg_lasso(gs, b, lambda);
      if (detail::pixel_term(s, prob.v[i], next, lambda) <=
          detail::pixel_term(s, prob.v[i], c[i], lambda)) {
        c[i] = next;
      }
    }
  };

  auto s_step = [&](double current) {
    Eigen::Matrix<double, 3, 2> r = Eigen::Matrix<double, 3, 2>::Zero();
    Eigen::Matrix2d g = Eigen::Matrix2d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) {
        r(k, 0) += prob.v[i][k] * c[i][0];
        r(k, 1) += prob.v[i][k] * c[i][1];
      }
      g(0, 0) += c[i][0] * c[i][0];
      g(0, 1) += c[i][0] * c[i][1];
      g(1, 1) += c[i][1] * c[i][1];
    }
    g(1, 0) = g(0, 1);
    const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(g).eigenvalues().maxCoeff();
    if (!(lmax > 0.0)) return current;

    constexpr int kInnerSteps = 20;
    for (int inner = 0; inner < kInnerSteps; ++inner) {
      Eigen::Matrix<double, 3, 2> sm;
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 3; ++k) sm(k, j) = s.columns[j][k];
      const Eigen::Matrix<double, 3, 2> grad = 2.0 * (sm * g - r);
      double step = 1.0 / (2.0 * lmax);
      bool accepted = false;
      double gain = 0.0;
      for (int halving = 0; halving < 30 && !accepted; ++halving, step *= 0.5) {
        StainMatrix trial = s;
        bool ok = true;
        for (int j = 0; j < 2 && ok; ++j) {
          for (int k = 0; k < 3; ++k) trial.columns[j][k] = sm(k, j) - step * grad(k, j);
          ok = detail::normalize_nonneg(trial.columns[j]);
        }
        if (!ok) continue;
        const double value = detail::total_objective(prob, trial, c, lambda);
        if (value <= current) {
          gain = current - value;
          s = trial;
          current = value;
          accepted = true;
        }
      }
      if (!accepted || gain <= 1e-12 * std::max(1.0, current)) break;
    }
    return current;
  };

  StainEstimate est;
  c_step();
  double current = detail::total_objective(prob, s, c, lambda);
  est.objective_history.push_back(current);
  for (int iter = 0; iter < params.max_outer_iters; ++iter) {
    current = s_step(current);
    c_step();
    const double value = detail::total_objective(prob, s, c, lambda);
    const double prev = est.objective_history.back();
    est.objective_history.push_back(value);
    if (prev - value <= params.tolerance * std::max(std::abs(prev), 1e-300)) break;
    current = value;
  }

  double fit = 0.0;
  for (std::size_t i = 0; i < n; ++i) fit += detail::pixel_term(s, prob.v[i], c[i], 0.0);
  est.relative_residual = v_norm2 > 0.0 ? std::sqrt(fit / v_norm2) : 0.0;
  est.tissue_pixels = n;

  detail::order_columns(s, nullptr);
  est.stains = s;
  est.concentrations = solve_concentrations(od, s, params.concentration_lambda);
  return est;
}

// ---------------------------------------------------------------------------
// Augmentation.

/// Re-renders S (diag(alpha) C + beta) with each perturbed concentration
/// clamped at zero so the optical density stays nonnegative.
inline RgbImage perturb(const RgbImage& image, const StainMatrix& stains,
                        const ConcentrationMap& conc, const StainPerturbation& pert,
                        double white_point = 255.0) {
  if (conc.height != image.height() || conc.width != image.width() ||
      conc.conc.size() != 2 * conc.pixels()) {
    throw DimensionMismatch("perturb: concentration map does not match image");
  }
  if (!(pert.alpha[0] > 0.0 && pert.alpha[1] > 0.0)) {
    throw InvalidArgument("perturb: alpha must be positive");
  }
  RgbImage out(image.height(), image.width());
  auto& data = out.data();
  for (std::size_t i = 0; i < conc.pixels(); ++i) {
    const double c0 = std::max(0.0, pert.alpha[0] * conc.conc[2 * i] + pert.beta[0]);
    const double c1 = std::max(0.0, pert.alpha[1] * conc.conc[2 * i + 1] + pert.beta[1]);
    for (int k = 0; k < 3; ++k) {
      const double od = stains.columns[0][k] * c0 + stains.columns[1][k] * c1;
      data[3 * i + k] = od_to_intensity(od, white_point);
    }
  }
  return out;
}

/// alpha_i ~ U(1 - sigma_alpha, 1 + sigma_alpha), beta_i ~ U(-sigma_beta, sigma_beta).
inline StainPerturbation sample_perturbation(std::uint64_t seed, double sigma_alpha = 0.2,
                                             double sigma_beta = 0.2) {
  if (!(sigma_alpha >= 0.0 && sigma_alpha < 1.0)) {
    throw InvalidArgument("sample_perturbation: sigma_alpha must be in [0,1)");
  }
  if (!(sigma_beta >= 0.0)) throw InvalidArgument("sample_perturbation: sigma_beta must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  StainPerturbation p;
  for (int i = 0; i < 2; ++i) {
    p.alpha[i] = 1.0 + sigma_alpha * (2.0 * unit(rng) - 1.0);
    p.beta[i] = sigma_beta * (2.0 * unit(rng) - 1.0);
  }
  return p;
}

}  // namespace mitoseg
