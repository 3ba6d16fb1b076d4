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

#include <random>

#include <gtest/gtest.h>

#include "mitoseg/core.hpp"
#include "oracles.hpp"
#include "scratch_dir.hpp"

namespace mitoseg {
namespace {

TEST(ImageIo, DecodesSingleWhitePixel) {
  ScratchDir dir("core_white");
  oracle::write_ppm(dir / "w.ppm", "P6 1 1 255\n", {255, 255, 255});
  const RgbImage img = load_image(dir / "w.ppm");
  EXPECT_EQ(img.height(), 1);
  EXPECT_EQ(img.width(), 1);
  EXPECT_EQ(img.data(), (std::vector<std::uint8_t>{255, 255, 255}));
}

TEST(ImageIo, ResaveIsCanonicalAndStable) {
  ScratchDir dir("core_resave");
  oracle::write_ppm(dir / "a.ppm", "P6\n# comment line\n2 1\n255\n", {1, 2, 3, 4, 5, 6});
  save_image(load_image(dir / "a.ppm"), dir / "b.ppm");
  save_image(load_image(dir / "b.ppm"), dir / "c.ppm");
  const std::string b = oracle::read_file(dir / "b.ppm");
  EXPECT_EQ(b, std::string("P6\n2 1\n255\n") + std::string("\x01\x02\x03\x04\x05\x06", 6));
  EXPECT_EQ(b, oracle::read_file(dir / "c.ppm"));
}

TEST(ImageIo, GradientWrittenIndependentlyDecodesExactly) {
  ScratchDir dir("core_grad");
  const std::vector<std::uint8_t> raster{0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110};
  oracle::write_ppm(dir / "g.ppm", "P6 2 2 255 ", raster);
  const RgbImage img = load_image(dir / "g.ppm");
  ASSERT_EQ(img.data(), raster);
  EXPECT_EQ(img.at(1, 0, 2), 80);
  EXPECT_EQ(img.at(0, 1, 0), 30);
}

TEST(ImageIo, BlackPixelPayload) {
  ScratchDir dir("core_black");
  save_image(RgbImage(1, 1, {0, 0, 0}), dir / "k.ppm");
  const std::string s = oracle::read_file(dir / "k.ppm");
  ASSERT_GE(s.size(), 3u);
  EXPECT_EQ(s.substr(s.size() - 3), std::string(3, '\0'));
  EXPECT_EQ(s.size(), std::string("P6\n1 1\n255\n").size() + 3);
}

TEST(ImageIo, RandomRoundTripsAreBitExact) {
  ScratchDir dir("core_rand");
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> byte(0, 255), dim(1, 16);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = trial == 0 ? 16 : dim(rng), w = trial == 0 ? 16 : dim(rng);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(h) * w * 3);
    for (auto& v : data) v = static_cast<std::uint8_t>(byte(rng));
    const RgbImage img(h, w, data);
    save_image(img, dir / "r.ppm");
    EXPECT_EQ(load_image(dir / "r.ppm"), img);
  }
}

TEST(ImageIo, Errors) {
  ScratchDir dir("core_err");
  EXPECT_THROW(load_image(dir / "missing.ppm"), FileNotFound);
  oracle::write_ppm(dir / "p3.ppm", "P3 1 1 255\n", {});
  EXPECT_THROW(load_image(dir / "p3.ppm"), MalformedHeader);
  oracle::write_ppm(dir / "deep.ppm", "P6 1 1 65535\n", {0, 0, 0, 0, 0, 0});
  EXPECT_THROW(load_image(dir / "deep.ppm"), UnsupportedBitDepth);
  oracle::write_ppm(dir / "short.ppm", "P6 2 2 255\n", {1, 2, 3});
  EXPECT_THROW(load_image(dir / "short.ppm"), MalformedHeader);
  oracle::write_ppm(dir / "nodim.ppm", "P6 x\n", {});
  EXPECT_THROW(load_image(dir / "nodim.ppm"), MalformedHeader);
}

TEST(Rasters, ValidateContents) {
  EXPECT_THROW(RgbImage(0, 3), InvalidArgument);
  EXPECT_THROW(RgbImage(1, 1, {1, 2}), DimensionMismatch);
  EXPECT_THROW(ProbMap(2, 2, 1.5f), InvalidArgument);
  EXPECT_THROW(ProbMap(1, 2, std::vector<float>{0.1f, -0.1f}), InvalidArgument);
  EXPECT_THROW(BinaryMask(1, 2, {0, 2}), InvalidArgument);
  ProbMap m(2, 3, 0.25f);
  m.set(1, 2, 1.0f);
  EXPECT_FLOAT_EQ(m.at(1, 2), 1.0f);
  EXPECT_THROW(m.set(0, 0, 2.0f), InvalidArgument);
  BinaryMask b(3, 3);
  b.set(1, 1, true);
  EXPECT_EQ(b.count(), 1u);
  EXPECT_FALSE(b.contains(3, 0));
}

TEST(Manifest, EmptySlideList) {
  const auto m = parse_manifest_text(R"({"slides": []})", "m.json");
  EXPECT_TRUE(m.slides.empty());
  EXPECT_EQ(m.annotation_count(), 0u);
}

TEST(Manifest, AnnotationsBecomeRecords) {
  const auto m = parse_manifest_text(
      R"({"slides": [{"slide_id": "s1", "image_path": "a.ppm", "domain_id": "d0",
                       "width": 100, "height": 50, "annotations": [[10, 20], [99, 48.5]]}]})",
      "m.json", "/data");
  ASSERT_EQ(m.slides.size(), 1u);
  const auto recs = m.slides[0].annotation_records();
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].center, (Point{10, 20}));
  EXPECT_EQ(recs[1].center, (Point{99, 48.5}));
  EXPECT_EQ(recs[1].slide_id, "s1");
  EXPECT_EQ(recs[1].domain_id, "d0");
  EXPECT_EQ(m.resolve(m.slides[0]), std::filesystem::path("/data/a.ppm"));
  EXPECT_NE(m.find("s1"), nullptr);
  EXPECT_EQ(m.find("s2"), nullptr);
}

TEST(Manifest, Rejections) {
  const std::string slide =
      R"({"slide_id": "s", "image_path": "a.ppm", "domain_id": "d", "width": 8, "height": 8, "annotations": []})";
  EXPECT_THROW(parse_manifest_text("{\"slides\": [" + slide + "," + slide + "]}", "m"), ManifestError);
  EXPECT_THROW(parse_manifest_text("{not json", "m"), ManifestError);
  EXPECT_THROW(parse_manifest_text(R"({"slides": [{"slide_id": "s"}]})", "m"), ManifestError);
  EXPECT_THROW(parse_manifest_text(
                   R"({"slides": [{"slide_id": "s", "image_path": "a", "domain_id": "d", "width": 8,
                       "height": 8, "annotations": [[8, 0]]}]})",
                   "m"),
               ManifestError);
  try {
    parse_manifest_text("{\"slides\": [" + slide + "," + slide + "]}", "m.json");
    FAIL();
  } catch (const ManifestError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
    EXPECT_EQ(e.path(), std::filesystem::path("m.json"));
  }
}

TEST(Manifest, SaveParseRoundTrip) {
  ScratchDir dir("core_manifest");
  DatasetManifest m;
  m.slides.push_back({"a", "a.ppm", "d1", 64, 32, {{1.5, 2.0}, {63, 31}}});
  m.slides.push_back({"b", "sub/b.ppm", "d2", 10, 10, {}});
  save_manifest(m, dir / "m.json");
  const auto r = parse_manifest(dir / "m.json");
  ASSERT_EQ(r.slides.size(), 2u);
  EXPECT_EQ(r.slides[0].annotations, m.slides[0].annotations);
  EXPECT_EQ(r.slides[1].image_path, "sub/b.ppm");
  EXPECT_EQ(r.resolve(r.slides[1]), dir.path() / "sub/b.ppm");
  EXPECT_THROW(parse_manifest(dir / "none.json"), FileNotFound);
}

}  // namespace
}  // namespace mitoseg
