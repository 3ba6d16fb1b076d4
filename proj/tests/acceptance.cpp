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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "mitoseg/cli.hpp"
#include "mitoseg/losses.hpp"
#include "mitoseg/network.hpp"
#include "mitoseg/scan.hpp"
#include "mitoseg/synthetic.hpp"
#include "oracles.hpp"
#include "scratch_dir.hpp"

#ifndef MITOSEG_CLI_PATH
#error "MITOSEG_CLI_PATH must name the mitoseg executable"
#endif

namespace {

using namespace mitoseg;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome oracle_end_to_end() {
  ScratchDir dir("accept_e2e");
  SynthConfig sc;
  sc.slides = 5;
  sc.domains = 3;
  sc.size = 2048;
  sc.annotations_per_slide = 20;
  sc.seed = 2026;
  write_synthetic_dataset(dir.path(), sc);

  const auto t0 = Clock::now();
  DetectOptions d;
  d.manifest = dir / "manifest.json";
  d.predictors = {"oracle"};
  d.out = dir / "dets.tsv";
  run_detect(d);
  const DomainReport rep = run_eval({dir / "dets.tsv", dir / "manifest.json", kDefaultMatchRadius, {}});
  const double elapsed = seconds_since(t0);

  bool exact = rep.domains.size() == 3;
  for (const auto& [_, m] : rep.domains) {
    exact = exact && m.scores.precision == 1.0 && m.scores.recall == 1.0 && m.scores.f1 == 1.0;
  }
  std::string detail;
  for (const auto& [name, m] : rep.domains) detail += name + " f1=" + format_fixed3(m.scores.f1) + " ";
  detail += fmt("runtime %.1fs", elapsed);
  return {exact && elapsed < 60.0, detail};
}

Outcome stain_round_trip() {
  const VahadaneParams params;
  int worst = 0;
  bool monotone = true;
  std::size_t iters = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto fx = fixture::two_stain_image(64, 64, fixture::reference_stains(), seed);
    const auto est = estimate_stains(fx.image, params);
    const RgbImage out = perturb(fx.image, est.stains, est.concentrations, {});
    const OdImage od = rgb_to_od(fx.image);
    for (std::size_t i = 0; i < od.pixels(); ++i) {
      const auto v = od.at(i);
      if (std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) < params.od_threshold) continue;
      for (int k = 0; k < 3; ++k) {
        worst = std::max(worst, std::abs(int(out.data()[3 * i + k]) - int(fx.image.data()[3 * i + k])));
      }
    }
    const auto& h = est.objective_history;
    for (std::size_t k = 1; k < h.size(); ++k) monotone = monotone && h[k] <= h[k - 1];
    iters += h.size() - 1;
  }
  return {worst <= 1 && monotone, "max tissue error " + std::to_string(worst) + " levels at lambda " +
                                      fmt("%.2f", params.sparsity_lambda) + ", objective " +
                                      (monotone ? "nonincreasing" : "INCREASED") + " over " +
                                      std::to_string(iters) + " iterations"};
}

Outcome stain_recovery() {
  std::vector<StainMatrix> truths{fixture::reference_stains()};
  StainMatrix dab;
  dab.columns[0] = fixture::unit({0.65, 0.70, 0.29});
  dab.columns[1] = fixture::unit({0.27, 0.57, 0.78});
  truths.push_back(dab);
  double worst = 0.0, slowest = 0.0;
  for (std::size_t k = 0; k < truths.size(); ++k) {
    const auto fx = fixture::two_stain_image(256, 256, truths[k], 100 + k);
    const auto t0 = Clock::now();
    const auto est = estimate_stains(fx.image);
    slowest = std::max(slowest, seconds_since(t0));
    StainMatrix truth = truths[k];
    detail::order_columns(truth, nullptr);
    for (int j = 0; j < 2; ++j) worst = std::max(worst, oracle::angle(est.stains.columns[j], truth.columns[j]));
  }
  return {worst <= 0.05 && slowest < 10.0, fmt("max angle %.4f rad", worst) + fmt(", slowest %.2fs", slowest)};
}

Outcome scan_equivalence() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.01, 1.0), la(-1.0, 1.0);
  std::uniform_int_distribution<int> L(1, 128), D(1, 8), N(1, 8);
  double worst_scan = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    SsmParams<float> p;
    p.length = L(rng);
    p.channels = D(rng);
    p.state = N(rng);
    for (int i = 0; i < p.length * p.channels; ++i) p.delta.push_back(static_cast<float>(u(rng)));
    for (int i = 0; i < p.channels * p.state; ++i) p.A.push_back(static_cast<float>(-std::exp(la(rng))));
    for (int i = 0; i < p.length * p.state; ++i) p.B.push_back(static_cast<float>(g(rng)));
    for (int i = 0; i < p.length * p.state; ++i) p.C.push_back(static_cast<float>(g(rng)));
    for (int i = 0; i < p.channels; ++i) p.D.push_back(static_cast<float>(g(rng)));
    std::vector<float> x(static_cast<std::size_t>(p.length) * p.channels);
    for (auto& v : x) v = static_cast<float>(g(rng));
    const auto y = selective_scan_1d<float>(x, p);
    const auto ref = oracle::naive_scan<float>(x, p.delta, p.A, p.B, p.C, p.D, p.length, p.channels, p.state);
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      err = std::max(err, std::abs(double(y[i]) - ref[i]));
      scale = std::max(scale, std::abs(ref[i]));
    }
    worst_scan = std::max(worst_scan, scale > 0.0 ? err / scale : err);
  }

  double worst_2d = 0.0;
  std::uniform_int_distribution<int> side(4, 16), E(1, 8), S(1, 8), R(1, 4);
  std::normal_distribution<double> w(0.0, 0.5);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = side(rng), wd = side(rng), e = E(rng), n = S(rng), r = R(rng);
    std::array<oracle::DirectionWeights, 4> dirs;
    auto fill = [&](std::vector<float>& v, std::size_t size, bool alog) {
      v.resize(size);
      for (auto& x : v) x = static_cast<float>(alog ? la(rng) : w(rng));
    };
    Ss2dWeights weights;
    weights.channels = e;
    weights.state = n;
    weights.dt_rank = r;
    for (int k = 0; k < 4; ++k) {
      auto& d = dirs[k];
      fill(d.x_proj, static_cast<std::size_t>(r + 2 * n) * e, false);
      fill(d.dt_weight, static_cast<std::size_t>(e) * r, false);
      fill(d.dt_bias, e, false);
      fill(d.A_log, static_cast<std::size_t>(e) * n, true);
      fill(d.D, e, false);
      weights.paths[k] = {d.x_proj, d.dt_weight, d.dt_bias, d.A_log, d.D};
    }
    Tensor x(1, h, wd, e);
    for (auto& v : x.values()) v = static_cast<float>(g(rng));
    const Tensor y = ss2d(x, weights);
    const auto ref = oracle::ss2d(x.values(), h, wd, e, n, r, dirs);
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      err = std::max(err, std::abs(double(y.values()[i]) - ref[i]));
      scale = std::max(scale, std::abs(ref[i]));
    }
    worst_2d = std::max(worst_2d, scale > 0.0 ? err / scale : err);
  }
  return {worst_scan <= 1e-5 && worst_2d <= 1e-6,
          fmt("scan max rel %.2e", worst_scan) + fmt(", ss2d max rel %.2e", worst_2d)};
}

Outcome network_shapes() {
  const VmUnetConfig cfg = VmUnetConfig::desk_scale();
  const WeightStore store = init_weights(cfg, 5);
  bool ok = true;
  std::string detail;
  for (int size : {64, 128}) {
    ForwardTrace trace;
    const ProbMap out = vmunet_forward(fixture::random_image(size, size, size), store, cfg, &trace);
    ok = ok && out.height() == size && out.width() == size;
    ok = ok && trace.encoder.size() == 4 && trace.decoder.size() == 4;
    for (int k = 1; k <= 4 && ok; ++k) {
      const int hw = size >> (k + 1);
      const int c = 96 << (k - 1);
      ok = ok && trace.encoder[k - 1] == std::array<int, 4>{1, hw, hw, c};
    }
    // Decoder mirrors the encoder back up to the first stage.
    for (int k = 3; k >= 1 && ok; --k) {
      const int hw = size >> (k + 1);
      ok = ok && trace.decoder[3 - k] == std::array<int, 4>{1, hw, hw, 96 << (k - 1)};
    }
    ok = ok && trace.decoder[3] == std::array<int, 4>{1, size / 4, size / 4, 96};
    detail += std::to_string(size) + "px ok=" + (ok ? "1 " : "0 ");
  }

  WeightStore zeroed = init_weights(cfg, 6);
  fixture::zero_branches(zeroed);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  int identities = 0, blocks = 0;
  auto check_block = [&](const std::string& prefix, int dim, int side) {
    Tensor x(1, side, side, dim);
    for (auto& v : x.values()) v = static_cast<float>(g(rng));
    ++blocks;
    identities += vss_block(x, vss_block_weights(zeroed, prefix, dim, cfg)).values() == x.values();
  };
  for (int s = 0; s < 4; ++s)
    for (int b = 0; b < cfg.encoder_depths[s]; ++b) check_block(detail::encoder_block_prefix(s, b), cfg.encoder_dim(s), 4);
  for (int s = 0; s < 4; ++s)
    for (int b = 0; b < cfg.decoder_depths[s]; ++b) check_block(detail::decoder_block_prefix(s, b), cfg.decoder_dim(s), 4);
  detail += std::to_string(identities) + "/" + std::to_string(blocks) + " zero-branch blocks are identities";
  return {ok && blocks > 0 && identities == blocks, detail};
}

Outcome gradient_checks() {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.02, 0.98), coin(0.0, 1.0);
  double worst_fd = 0.0;
  const double h = 1e-4;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(16), t(16);
    for (int i = 0; i < 16; ++i) {
      p[i] = u(rng);
      t[i] = coin(rng) < 0.3 ? 1.0 : 0.0;
    }
    const auto grad = combined_loss_grad(p, t);
    double err = 0.0, scale = 0.0;
    for (int i = 0; i < 16; ++i) {
      auto hi = p, lo = p;
      hi[i] += h;
      lo[i] -= h;
      const double fd = (combined_loss(hi, t) - combined_loss(lo, t)) / (2.0 * h);
      err = std::max(err, std::abs(grad[i] - fd));
      scale = std::max(scale, std::abs(fd));
    }
    worst_fd = std::max(worst_fd, err / scale);
  }

  LossConfig cfg;
  cfg.focal_gamma = 0.0;
  cfg.focal_alpha = 0.5;
  double worst_bce = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(16), t(16);
    for (int i = 0; i < 16; ++i) {
      p[i] = u(rng);
      t[i] = coin(rng) < 0.4 ? 1.0 : 0.0;
    }
    worst_bce = std::max(worst_bce, std::abs(focal_loss(p, t, cfg) - 0.5 * oracle::bce(p, t)));
  }
  return {worst_fd <= 1e-4 && worst_bce <= 1e-10,
          fmt("fd max rel %.2e", worst_fd) + fmt(", focal-vs-bce max abs %.2e", worst_bce)};
}

Outcome tiling() {
  const TilingConfig cfg{64, 0.8};
  bool covered = true;
  // Origins depend on one axis only, so covering every (h, w) reduces to
  // covering every single-axis length.
  for (int dim = 1; dim <= 700 && covered; ++dim) {
    const TileGrid grid = plan_tiles(dim, 1, cfg);
    std::vector<char> hit(dim, 0);
    for (const auto& o : grid.origins)
      for (int y = o.y; y < std::min(dim, o.y + 64); ++y) hit[y] = 1;
    covered = std::all_of(hit.begin(), hit.end(), [](char c) { return c == 1; });
    const TileGrid row = plan_tiles(1, dim, cfg);
    std::vector<char> hx(dim, 0);
    for (const auto& o : row.origins)
      for (int x = o.x; x < std::min(dim, o.x + 64); ++x) hx[x] = 1;
    covered = covered && std::all_of(hx.begin(), hx.end(), [](char c) { return c == 1; });
  }
  // Spot-check the 2D grid is the product of the axis plans.
  for (int hgt : {1, 63, 64, 65, 333, 700})
    for (int wid : {1, 64, 129, 512, 699}) {
      const auto grid = plan_tiles(hgt, wid, cfg);
      covered = covered && grid.origins.size() == plan_tiles(hgt, 1, cfg).origins.size() *
                                                      plan_tiles(1, wid, cfg).origins.size();
    }

  bool constant = true;
  for (int hgt : {17, 64, 200})
    for (int wid : {5, 100, 301}) {
      const TileGrid grid = plan_tiles(hgt, wid, cfg);
      const std::vector<ProbMap> tiles(grid.origins.size(), ProbMap(64, 64, 0.3f));
      const ProbMap agg = aggregate(tiles, grid);
      for (float v : agg.values()) constant = constant && v == 0.3f;
    }

  std::vector<int> xs;
  for (const auto& o : plan_tiles(512, 1024, TilingConfig{512, 0.8}).origins) xs.push_back(o.x);
  const bool origins = xs == std::vector<int>{0, 102, 204, 306, 408, 510, 512};
  std::string got;
  for (int x : xs) got += std::to_string(x) + ",";
  return {covered && constant && origins, std::string("coverage ") + (covered ? "ok" : "GAP") + ", constant " +
                                              (constant ? "exact" : "WRONG") + ", origins [" + got + "]"};
}

Outcome postproc_oracles() {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> dens(0.1, 0.7), u(0.0, 1.0);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double d = dens(rng);
    std::vector<std::uint8_t> bits(256);
    for (auto& b : bits) b = u(rng) < d ? 1 : 0;
    const BinaryMask m(16, 16, bits);
    for (int conn : {4, 8}) {
      const Labeling lab = connected_components(m, conn);
      const auto ref = oracle::flood_fill(bits, 16, 16, conn);
      bool same = true;
      for (std::size_t i = 0; i < ref.size(); ++i) same = same && lab.labels[i] == ref[i] + 1;
      mismatches += !same;
    }
  }

  BinaryMask px(3, 3);
  px.set(1, 1, true);
  const std::size_t dil = dilate(px, 1).count();

  // Horizontal bars of extent e = 2a + 1 pixels, centers D apart. After
  // dilation by r they join iff D <= 2r + e.
  int geometry_errors = 0, cases = 0;
  for (int r : {2, 5, 15})
    for (int a : {0, 1, 3}) {
      const int e = 2 * a + 1;
      for (int dist = 2 * r + e - 3; dist <= 2 * r + e + 3; ++dist) {
        if (dist <= e) continue;
        const int w = dist + 2 * (a + r) + 10;
        ProbMap map(2 * r + 9, w, 0.0f);
        const int cy = r + 4, c0 = a + r + 4;
        for (int x = -a; x <= a; ++x) {
          map.set(cy, c0 + x, 0.9f);
          map.set(cy, c0 + dist + x, 0.9f);
        }
        PostprocConfig pc;
        pc.dilation_radius = r;
        pc.min_component_area = 1;
        const bool merged = detect(map, pc).size() == 1;
        geometry_errors += merged != (dist <= 2 * r + e);
        ++cases;
      }
    }
  return {mismatches == 0 && dil == 5 && geometry_errors == 0,
          std::to_string(mismatches) + " labeling mismatches over 2000 runs, r=1 dilation " + std::to_string(dil) +
              " px, " + std::to_string(geometry_errors) + "/" + std::to_string(cases) + " merge cases wrong"};
}

Outcome matcher() {
  // 1024x1024 field, up to 6 annotations; detections are jittered copies
  // (sigma 10, kept with probability 0.75) plus uniform false positives, at
  // most 6 in total; radius 30.
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> field(0.0, 1024.0), coin(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 10.0);
  std::uniform_int_distribution<int> count(0, 6), extra(0, 3);
  int disagreements = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Point> gts(count(rng)), dets;
    for (auto& g : gts) g = {field(rng), field(rng)};
    for (const auto& g : gts) {
      if (coin(rng) < 0.75) dets.push_back({g.x + jitter(rng), g.y + jitter(rng)});
    }
    for (int k = extra(rng); k > 0; --k) dets.push_back({field(rng), field(rng)});
    if (dets.size() > 6) dets.resize(6);
    std::vector<std::array<double, 2>> da, ga;
    for (const auto& d : dets) da.push_back({d.x, d.y});
    for (const auto& g : gts) ga.push_back({g.x, g.y});
    disagreements += match_points(dets, gts, 30.0).true_positives != oracle::max_matching(da, ga, 30.0);
  }
  const Scores s = f1_from_counts(2, 1, 1);
  const bool f1 = std::abs(s.precision - 2.0 / 3.0) < 1e-15 && std::abs(s.recall - 2.0 / 3.0) < 1e-15 &&
                  std::abs(s.f1 - 2.0 / 3.0) < 1e-15;
  return {disagreements == 0 && f1, std::to_string(disagreements) + "/1000 trials where greedy != optimum, f1(2,1,1) " +
                                        (f1 ? "= 2/3" : "WRONG")};
}

Outcome determinism() {
  ScratchDir dir("accept_det");
  SynthConfig sc;
  sc.slides = 2;
  sc.domains = 2;
  sc.size = 192;
  sc.annotations_per_slide = 3;
  sc.distractors_per_slide = 1;
  sc.seed = 77;
  const DatasetManifest manifest = write_synthetic_dataset(dir.path(), sc);
  save_weights(init_weights(VmUnetConfig::desk_scale(), 13), dir / "w.bin");

  auto run = [&](const std::string& out) {
    const std::string cmd = std::string("\"") + MITOSEG_CLI_PATH + "\" detect --manifest \"" +
                            (dir / "manifest.json").string() + "\" --predictor \"network:" +
                            (dir / "w.bin").string() + "\" --predictor oracle --tile-size 128 --overlap 0.5" +
                            " --seed 3 --out \"" + (dir / out).string() + "\"";
    return std::system(cmd.c_str());
  };
  const int rc_a = run("a.tsv"), rc_b = run("b.tsv");
  const std::string a = oracle::read_file(dir / "a.tsv");
  const bool files = rc_a == 0 && rc_b == 0 && !a.empty() && a == oracle::read_file(dir / "b.tsv");

  std::vector<TileSample> tiles;
  for (const auto& slide : manifest.slides) {
    const auto grid = plan_tiles(slide.height, slide.width, TilingConfig{64, 0.5});
    const auto labeled = label_tiles(grid, slide.annotations, slide.slide_id);
    tiles.insert(tiles.end(), labeled.begin(), labeled.end());
  }
  const auto b1 = build_balanced_batches(tiles, 8, 5);
  const auto b2 = build_balanced_batches(tiles, 8, 5);
  bool halves = !b1.empty();
  for (const auto& b : b1) {
    halves = halves && b.size() == 8 &&
             std::count_if(b.begin(), b.end(), [](const TileSample& s) { return s.is_positive; }) == 4;
  }
  return {files && b1 == b2 && halves, std::string("detect files ") + (files ? "identical" : "DIFFER") + ", " +
                                           std::to_string(b1.size()) + " batches " +
                                           (b1 == b2 ? "identical" : "DIFFER") + ", splits " +
                                           (halves ? "50/50" : "UNBALANCED")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"end-to-end oracle F1", oracle_end_to_end},
      {"stain identity round trip", stain_round_trip},
      {"stain recovery", stain_recovery},
      {"scan oracle equivalence", scan_equivalence},
      {"network shape algebra", network_shapes},
      {"gradient checks", gradient_checks},
      {"tiling", tiling},
      {"postproc oracles", postproc_oracles},
      {"matcher", matcher},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
