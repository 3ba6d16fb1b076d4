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

/// @file eval.hpp
/// @brief Point matching, precision/recall/F1 and per-domain reporting.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mitoseg/core.hpp"

namespace mitoseg {

inline constexpr double kDefaultMatchRadius = 30.0;

struct MatchedPair {
  std::size_t detection = 0;
  std::size_t annotation = 0;
  double distance = 0.0;
};

struct MatchResult {
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
  std::vector<MatchedPair> matched_pairs;
};

/// Greedy matching: all pairs within radius, ascending distance (ties by
/// detection then annotation index), accepted while both ends are free.
inline MatchResult match_points(std::span<const Point> dets, std::span<const Point> gts, double radius) {
  if (!(radius > 0.0)) throw InvalidArgument("match_detections: radius must be > 0");
  std::vector<MatchedPair> candidates;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double d = distance(dets[i], gts[j]);
      if (d <= radius) candidates.push_back({i, j, d});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const MatchedPair& a, const MatchedPair& b) {
    return std::tie(a.distance, a.detection, a.annotation) < std::tie(b.distance, b.detection, b.annotation);
  });
  std::vector<char> det_used(dets.size(), 0), gt_used(gts.size(), 0);
  MatchResult r;
  for (const auto& c : candidates) {
    if (det_used[c.detection] || gt_used[c.annotation]) continue;
    det_used[c.detection] = gt_used[c.annotation] = 1;
    r.matched_pairs.push_back(c);
  }
  r.true_positives = static_cast<int>(r.matched_pairs.size());
  r.false_positives = static_cast<int>(dets.size()) - r.true_positives;
  r.false_negatives = static_cast<int>(gts.size()) - r.true_positives;
  return r;
}

inline MatchResult match_detections(std::span<const Detection> dets, std::span<const Annotation> gts,
                                    double radius = kDefaultMatchRadius) {
  std::vector<Point> dp, gp;
  dp.reserve(dets.size());
  gp.reserve(gts.size());
  for (const auto& d : dets) dp.push_back(d.center);
  for (const auto& g : gts) gp.push_back(g.center);
  return match_points(dp, gp, radius);
}

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline Scores f1_from_counts(long tp, long fp, long fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw InvalidArgument("f1_from_counts: negative count");
  Scores s;
  s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

struct DomainMetrics {
  Scores scores;
  long tp = 0, fp = 0, fn = 0;
};

struct DomainReport {
  std::map<std::string, DomainMetrics> domains;
  double mean_f1 = 0.0;
  /// Population standard deviation across domains.
  double std_f1 = 0.0;
};

/// Counts are pooled over a domain's slides before computing its F1.
inline DomainReport leave_one_domain_out_report(
    std::span<const std::pair<std::string, MatchResult>> per_slide) {
  if (per_slide.empty()) throw InvalidArgument("leave_one_domain_out_report: no results");
  DomainReport rep;
  for (const auto& [domain, r] : per_slide) {
    auto& m = rep.domains[domain];
    m.tp += r.true_positives;
    m.fp += r.false_positives;
    m.fn += r.false_negatives;
  }
  double sum = 0.0;
  for (auto& [_, m] : rep.domains) {
    m.scores = f1_from_counts(m.tp, m.fp, m.fn);
    sum += m.scores.f1;
  }
  const double k = static_cast<double>(rep.domains.size());
  rep.mean_f1 = sum / k;
  double var = 0.0;
  for (const auto& [_, m] : rep.domains) var += (m.scores.f1 - rep.mean_f1) * (m.scores.f1 - rep.mean_f1);
  rep.std_f1 = std::sqrt(var / k);
  return rep;
}

inline std::string format_fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

/// "0.736 ± 0.063"
inline std::string format_mean_std(double mean, double sd) {
  return format_fixed3(mean) + " ± " + format_fixed3(sd);
}

inline std::string format_report(const DomainReport& rep) {
  std::string out = "domain\tprecision\trecall\tf1\ttp\tfp\tfn\n";
  for (const auto& [name, m] : rep.domains) {
    out += name + "\t" + format_fixed3(m.scores.precision) + "\t" + format_fixed3(m.scores.recall) + "\t" +
           format_fixed3(m.scores.f1) + "\t" + std::to_string(m.tp) + "\t" + std::to_string(m.fp) + "\t" +
           std::to_string(m.fn) + "\n";
  }
  out += "F1 " + format_mean_std(rep.mean_f1, rep.std_f1) + "\n";
  return out;
}

/// {domain_id: {precision, recall, f1, tp, fp, fn}, ..., "aggregate": {mean_f1, std_f1}}
inline nlohmann::json report_to_json(const DomainReport& rep) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, m] : rep.domains) {
    if (name == "aggregate") throw InvalidArgument("report_to_json: domain id 'aggregate' is reserved");
    j[name] = {{"precision", m.scores.precision}, {"recall", m.scores.recall}, {"f1", m.scores.f1},
               {"tp", m.tp},                      {"fp", m.fp},               {"fn", m.fn}};
  }
  j["aggregate"] = {{"mean_f1", rep.mean_f1}, {"std_f1", rep.std_f1}};
  return j;
}

}  // namespace mitoseg
