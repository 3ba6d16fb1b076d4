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

/// @file cli.hpp
/// @brief Command implementations behind the mitoseg tool, plus the
/// detections file format:
///
///     slide_id<TAB>x<TAB>y<TAB>score
///
/// one record per line, sorted by (slide_id, y, x), coordinates with one
/// decimal, score with four.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mitoseg/core.hpp"
#include "mitoseg/eval.hpp"
#include "mitoseg/pipeline.hpp"
#include "mitoseg/stain.hpp"
#include "mitoseg/tiling.hpp"

namespace mitoseg {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitMissingFile = 3,
  kExitInvalidInput = 4,
};

inline std::string format_detection(const Detection& d) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "\t%.1f\t%.1f\t%.4f\n", d.center.x, d.center.y, d.score);
  return d.slide_id + buf;
}

inline void sort_detections(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.slide_id != b.slide_id) return a.slide_id < b.slide_id;
    if (a.center.y != b.center.y) return a.center.y < b.center.y;
    return a.center.x < b.center.x;
  });
}

inline void write_detections(std::vector<Detection> dets, const std::filesystem::path& path) {
  sort_detections(dets);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  for (const auto& d : dets) out << format_detection(d);
  if (!out) throw IoError(path, "write failed");
}

inline std::vector<Detection> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!std::filesystem::exists(path)) throw FileNotFound(path);
    throw IoError(path, "cannot open for reading");
  }
  std::vector<Detection> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 4) {
      throw IoError(path, "line " + std::to_string(lineno) + ": expected 4 tab-separated fields");
    }
    Detection d;
    d.slide_id = fields[0];
    try {
      d.center = {std::stod(fields[1]), std::stod(fields[2])};
      d.score = std::stod(fields[3]);
    } catch (const std::exception&) {
      throw IoError(path, "line " + std::to_string(lineno) + ": malformed number");
    }
    if (!(d.score >= 0.0 && d.score <= 1.0)) {
      throw IoError(path, "line " + std::to_string(lineno) + ": score outside [0,1]");
    }
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct DetectOptions {
  std::filesystem::path manifest;
  std::vector<std::string> predictors;
  std::filesystem::path out;
  std::uint64_t seed = 0;
  TilingConfig tiling;
  PostprocConfig postproc;
};

/// Runs every manifest slide through the predictor ensemble and post-processing.
inline std::vector<Detection> run_detect(const DetectOptions& opts) {
  RunConfig cfg;
  cfg.tiling = opts.tiling;
  cfg.postproc = opts.postproc;
  cfg.seed = opts.seed;
  for (const auto& p : opts.predictors) cfg.ensemble.push_back(parse_predictor(p));
  cfg.validate();

  const DatasetManifest manifest = parse_manifest(opts.manifest);
  std::vector<LoadedPredictor> loaded;
  for (const auto& spec : cfg.ensemble) loaded.push_back(load_predictor(spec));

  std::vector<Detection> all;
  for (const auto& slide : manifest.slides) {
    const RgbImage image = load_image(manifest.resolve(slide));
    if (image.width() != slide.width || image.height() != slide.height) {
      throw ManifestError(opts.manifest, "slide '" + slide.slide_id + "': image is " +
                                             std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                                             ", manifest declares " + std::to_string(slide.width) + "x" +
                                             std::to_string(slide.height));
    }
    const ProbMap map = predict_slide(image, slide.annotations, loaded, cfg.tiling);
    auto dets = detect(map, cfg.postproc, slide.slide_id);
    all.insert(all.end(), dets.begin(), dets.end());
  }
  sort_detections(all);
  if (!opts.out.empty()) write_detections(all, opts.out);
  return all;
}

struct EvalOptions {
  std::filesystem::path detections;
  std::filesystem::path manifest;
  double radius = kDefaultMatchRadius;
  std::filesystem::path out;
};

inline DomainReport run_eval(const EvalOptions& opts) {
  if (!(opts.radius > 0.0)) throw InvalidArgument("eval: radius must be > 0");
  const auto manifest = parse_manifest(opts.manifest);
  const auto dets = read_detections(opts.detections);

  std::map<std::string, std::vector<Detection>> by_slide;
  for (const auto& d : dets) {
    if (!manifest.find(d.slide_id)) {
      throw InvalidArgument("eval: detection for unknown slide '" + d.slide_id + "'");
    }
    by_slide[d.slide_id].push_back(d);
  }
  std::vector<std::pair<std::string, MatchResult>> results;
  for (const auto& slide : manifest.slides) {
    const auto gts = slide.annotation_records();
    const auto& sd = by_slide[slide.slide_id];
    results.emplace_back(slide.domain_id, match_detections(sd, gts, opts.radius));
  }
  const DomainReport rep = leave_one_domain_out_report(results);
  if (!opts.out.empty()) {
    std::ofstream out(opts.out, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(opts.out, "cannot open for writing");
    out << report_to_json(rep).dump(2) << '\n';
    if (!out) throw IoError(opts.out, "write failed");
  }
  return rep;
}

struct AugmentOptions {
  std::filesystem::path in;
  std::filesystem::path out;
  std::uint64_t seed = 0;
  double sigma_alpha = 0.2;
  double sigma_beta = 0.2;
  VahadaneParams vahadane;
};

struct AugmentResult {
  StainMatrix stains;
  StainPerturbation perturbation;
};

inline AugmentResult run_augment(const AugmentOptions& opts) {
  const RgbImage image = load_image(opts.in);
  VahadaneParams params = opts.vahadane;
  params.seed = opts.seed;
  const auto est = estimate_stains(image, params);
  const auto pert = sample_perturbation(opts.seed, opts.sigma_alpha, opts.sigma_beta);
  save_image(perturb(image, est.stains, est.concentrations, pert, params.white_point), opts.out);
  return {est.stains, pert};
}

/// One "x y" line per origin.
inline std::string tile_plan_text(int height, int width, const TilingConfig& cfg) {
  const auto grid = plan_tiles(height, width, cfg);
  std::string out;
  for (const auto& o : grid.origins) out += std::to_string(o.x) + " " + std::to_string(o.y) + "\n";
  return out;
}

}  // namespace mitoseg
