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

// mitoseg command-line entry point.
//
// Exit codes: 0 success, 1 unexpected failure, 2 bad flags, 3 missing or
// unreadable file, 4 invalid configuration or input data.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mitoseg/cli.hpp"
#include "mitoseg/synthetic.hpp"

namespace {

int report(const char* kind, const std::exception& e, int code) {
  std::cerr << "mitoseg: " << kind << ": " << e.what() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace mitoseg;

  CLI::App app{"Mitosis detection toolkit"};
  app.require_subcommand(1);

  DetectOptions det;
  auto* detect_cmd = app.add_subcommand("detect", "Run predictors over a manifest and write detections");
  detect_cmd->add_option("--manifest", det.manifest, "Dataset manifest (JSON)")->required();
  detect_cmd->add_option("--predictor", det.predictors,
                         "constant:<p>, oracle[:<radius>] or network:<weights>; repeat to ensemble")
      ->required();
  detect_cmd->add_option("--out", det.out, "Detections file")->required();
  detect_cmd->add_option("--seed", det.seed, "Random seed");
  detect_cmd->add_option("--tile-size", det.tiling.tile_size, "Tile edge in pixels");
  detect_cmd->add_option("--overlap", det.tiling.overlap_fraction, "Tile overlap fraction");
  detect_cmd->add_option("--threshold", det.postproc.binarize_threshold, "Binarization threshold");
  detect_cmd->add_option("--dilation", det.postproc.dilation_radius, "Dilation radius");
  detect_cmd->add_option("--min-area", det.postproc.min_component_area, "Minimum component area");

  EvalOptions ev;
  std::string report_path;
  auto* eval_cmd = app.add_subcommand("eval", "Score detections against manifest annotations");
  eval_cmd->add_option("--detections", ev.detections, "Detections file")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Dataset manifest (JSON)")->required();
  eval_cmd->add_option("--radius", ev.radius, "Matching radius in pixels");
  eval_cmd->add_option("--out", ev.out, "Metrics file (JSON)")->required();
  eval_cmd->add_option("--report", report_path, "Also write the text report here");

  AugmentOptions aug;
  auto* augment_cmd = app.add_subcommand("augment", "Stain-perturb one image");
  augment_cmd->add_option("--in", aug.in, "Input PPM")->required();
  augment_cmd->add_option("--out", aug.out, "Output PPM")->required();
  augment_cmd->add_option("--seed", aug.seed, "Random seed")->required();
  augment_cmd->add_option("--sigma-alpha", aug.sigma_alpha, "Scale spread");
  augment_cmd->add_option("--sigma-beta", aug.sigma_beta, "Shift spread");
  augment_cmd->add_option("--lambda", aug.vahadane.sparsity_lambda, "Sparsity weight");
  augment_cmd->add_option("--od-threshold", aug.vahadane.od_threshold, "Tissue OD threshold");

  int plan_h = 0, plan_w = 0;
  TilingConfig plan_cfg;
  auto* plan_cmd = app.add_subcommand("tile-plan", "Print tile origins as 'x y' lines");
  plan_cmd->add_option("--height", plan_h, "Image height")->required();
  plan_cmd->add_option("--width", plan_w, "Image width")->required();
  plan_cmd->add_option("--tile-size", plan_cfg.tile_size, "Tile edge in pixels");
  plan_cmd->add_option("--overlap", plan_cfg.overlap_fraction, "Tile overlap fraction");

  SynthConfig syn;
  std::filesystem::path synth_dir;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic point-annotated dataset");
  synth_cmd->add_option("--out-dir", synth_dir, "Output directory")->required();
  synth_cmd->add_option("--slides", syn.slides, "Number of slides");
  synth_cmd->add_option("--domains", syn.domains, "Number of domains");
  synth_cmd->add_option("--size", syn.size, "Slide edge in pixels");
  synth_cmd->add_option("--annotations", syn.annotations_per_slide, "Annotations per slide");
  synth_cmd->add_option("--seed", syn.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*detect_cmd) {
      const auto dets = run_detect(det);
      std::cerr << "mitoseg: wrote " << dets.size() << " detections to " << det.out.string() << '\n';
    } else if (*eval_cmd) {
      const auto rep = run_eval(ev);
      const std::string text = format_report(rep);
      std::cout << text;
      if (!report_path.empty()) {
        std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(report_path, "cannot open for writing");
        out << text;
      }
    } else if (*augment_cmd) {
      const auto r = run_augment(aug);
      std::fprintf(stderr, "mitoseg: alpha=(%.4f, %.4f) beta=(%.4f, %.4f)\n", r.perturbation.alpha[0],
                   r.perturbation.alpha[1], r.perturbation.beta[0], r.perturbation.beta[1]);
    } else if (*plan_cmd) {
      std::cout << tile_plan_text(plan_h, plan_w, plan_cfg);
    } else if (*synth_cmd) {
      const auto m = write_synthetic_dataset(synth_dir, syn);
      std::cerr << "mitoseg: wrote " << m.slides.size() << " slides to " << synth_dir.string() << '\n';
    }
  } catch (const FileNotFound& e) {
    return report("missing file", e, kExitMissingFile);
  } catch (const ManifestError& e) {
    return report("invalid manifest", e, kExitInvalidInput);
  } catch (const IoError& e) {
    return report("i/o error", e, kExitMissingFile);
  } catch (const InvalidArgument& e) {
    return report("invalid argument", e, kExitInvalidInput);
  } catch (const Error& e) {
    return report("invalid input", e, kExitInvalidInput);
  } catch (const std::exception& e) {
    return report("error", e, kExitFailure);
  }
  return kExitOk;
}
