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

/// @file core.hpp
/// @brief Raster and annotation types shared by every stage of the detector,
/// plus binary PPM image I/O and the JSON dataset manifest.
///
/// Coordinates: x is the column, y is the row, the origin is the top-left
/// pixel and pixel centers sit on integer coordinates.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace mitoseg {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// I/O failures carry the offending path.
class IoError : public Error {
 public:
  IoError(std::filesystem::path path, const std::string& what)
      : Error(path.string() + ": " + what), path_(std::move(path)) {}
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

class FileNotFound : public IoError {
 public:
  explicit FileNotFound(std::filesystem::path path)
      : IoError(std::move(path), "no such file") {}
};

class MalformedHeader : public IoError {
 public:
  using IoError::IoError;
};

class UnsupportedBitDepth : public IoError {
 public:
  using IoError::IoError;
};

class ManifestError : public IoError {
 public:
  using IoError::IoError;
};

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

namespace detail {

inline void require_dims(int height, int width, const char* what) {
  if (height < 1 || width < 1) {
    throw InvalidArgument(std::string(what) + ": dimensions must be positive, got " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
}

inline std::size_t pixel_count(int height, int width) {
  return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
}

}  // namespace detail

/// 8-bit RGB raster, row-major, interleaved channels.
class RgbImage {
 public:
  RgbImage(int height, int width)
      : height_(height), width_(width) {
    detail::require_dims(height, width, "RgbImage");
    data_.assign(detail::pixel_count(height, width) * 3, 0);
  }

  RgbImage(int height, int width, std::vector<std::uint8_t> data)
      : height_(height), width_(width), data_(std::move(data)) {
    detail::require_dims(height, width, "RgbImage");
    if (data_.size() != detail::pixel_count(height, width) * 3) {
      throw DimensionMismatch("RgbImage: data length " + std::to_string(data_.size()) +
                              " does not match " + std::to_string(height) + "x" +
                              std::to_string(width) + "x3");
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  const std::vector<std::uint8_t>& data() const noexcept { return data_; }
  std::vector<std::uint8_t>& data() noexcept { return data_; }

  std::uint8_t at(int y, int x, int c) const { return data_[index(y, x, c)]; }
  std::uint8_t& at(int y, int x, int c) { return data_[index(y, x, c)]; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int height_;
  int width_;
  std::vector<std::uint8_t> data_;
};

/// Per-pixel probabilities in [0,1], row-major.
class ProbMap {
 public:
  ProbMap(int height, int width, float fill = 0.0f)
      : height_(height), width_(width) {
    detail::require_dims(height, width, "ProbMap");
    check_value(fill);
    values_.assign(detail::pixel_count(height, width), fill);
  }

  ProbMap(int height, int width, std::vector<float> values)
      : height_(height), width_(width), values_(std::move(values)) {
    detail::require_dims(height, width, "ProbMap");
    if (values_.size() != detail::pixel_count(height, width)) {
      throw DimensionMismatch("ProbMap: value count does not match dimensions");
    }
    for (float v : values_) check_value(v);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  const std::vector<float>& values() const noexcept { return values_; }

  float at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, float v) {
    check_value(v);
    values_[static_cast<std::size_t>(y) * width_ + x] = v;
  }

  friend bool operator==(const ProbMap&, const ProbMap&) = default;

 private:
  static void check_value(float v) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw InvalidArgument("ProbMap: value " + std::to_string(v) + " outside [0,1]");
    }
  }

  int height_;
  int width_;
  std::vector<float> values_;
};

/// Strictly binary raster.
class BinaryMask {
 public:
  BinaryMask(int height, int width)
      : height_(height), width_(width) {
    detail::require_dims(height, width, "BinaryMask");
    bits_.assign(detail::pixel_count(height, width), 0);
  }

  BinaryMask(int height, int width, std::vector<std::uint8_t> bits)
      : height_(height), width_(width), bits_(std::move(bits)) {
    detail::require_dims(height, width, "BinaryMask");
    if (bits_.size() != detail::pixel_count(height, width)) {
      throw DimensionMismatch("BinaryMask: bit count does not match dimensions");
    }
    for (auto b : bits_) {
      if (b > 1) throw InvalidArgument("BinaryMask: values must be 0 or 1");
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  bool contains(int y, int x) const { return y >= 0 && x >= 0 && y < height_ && x < width_; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> bits_;
};

struct Annotation {
  Point center;
  std::string slide_id;
  std::string domain_id;
};

struct Detection {
  Point center;
  double score = 0.0;
  std::string slide_id;
};

struct SlideEntry {
  std::string slide_id;
  std::string image_path;
  std::string domain_id;
  int width = 0;
  int height = 0;
  std::vector<Point> annotations;

  std::vector<Annotation> annotation_records() const {
    std::vector<Annotation> out;
    out.reserve(annotations.size());
    for (const auto& p : annotations) out.push_back({p, slide_id, domain_id});
    return out;
  }
};

struct DatasetManifest {
  std::vector<SlideEntry> slides;
  /// Directory that relative image paths are resolved against.
  std::filesystem::path base_dir;

  std::size_t annotation_count() const {
    std::size_t n = 0;
    for (const auto& s : slides) n += s.annotations.size();
    return n;
  }

  std::filesystem::path resolve(const SlideEntry& slide) const {
    std::filesystem::path p(slide.image_path);
    return p.is_absolute() ? p : base_dir / p;
  }

  const SlideEntry* find(const std::string& slide_id) const {
    for (const auto& s : slides) {
      if (s.slide_id == slide_id) return &s;
    }
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Binary PPM (P6) codec.

namespace detail {

inline void skip_ppm_space(const std::vector<char>& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
      ++pos;
    } else {
      break;
    }
  }
}

inline long read_ppm_int(const std::vector<char>& buf, std::size_t& pos,
                         const std::filesystem::path& path, const char* field) {
  skip_ppm_space(buf, pos);
  long value = 0;
  std::size_t digits = 0;
  while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
    value = value * 10 + (buf[pos] - '0');
    if (value > 1'000'000'000L) throw MalformedHeader(path, std::string(field) + " too large");
    ++pos;
    ++digits;
  }
  if (digits == 0) throw MalformedHeader(path, std::string("missing ") + field);
  return value;
}

}  // namespace detail

inline RgbImage load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!std::filesystem::exists(path)) throw FileNotFound(path);
    throw IoError(path, "cannot open for reading");
  }
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') {
    throw MalformedHeader(path, "not a binary PPM (expected magic P6)");
  }
  std::size_t pos = 2;
  const long width = detail::read_ppm_int(buf, pos, path, "width");
  const long height = detail::read_ppm_int(buf, pos, path, "height");
  const long maxval = detail::read_ppm_int(buf, pos, path, "maxval");
  if (width < 1 || height < 1) throw MalformedHeader(path, "dimensions must be positive");
  if (maxval != 255) {
    throw UnsupportedBitDepth(path, "maxval " + std::to_string(maxval) +
                                        " unsupported, only 8-bit (255) images are accepted");
  }
  if (pos >= buf.size()) throw MalformedHeader(path, "header not terminated");
  ++pos;  // single whitespace byte before the raster

  const std::size_t expected = static_cast<std::size_t>(width) * height * 3;
  if (buf.size() - pos < expected) {
    throw MalformedHeader(path, "truncated raster: expected " + std::to_string(expected) +
                                    " bytes, found " + std::to_string(buf.size() - pos));
  }
  std::vector<std::uint8_t> data(expected);
  std::copy_n(reinterpret_cast<const std::uint8_t*>(buf.data() + pos), expected, data.begin());
  return RgbImage(static_cast<int>(height), static_cast<int>(width), std::move(data));
}

/// Canonical encoding: "P6\n<w> <h>\n255\n" followed by the raster.
inline void save_image(const RgbImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data().data()),
            static_cast<std::streamsize>(image.data().size()));
  if (!out) throw IoError(path, "write failed");
}

// ---------------------------------------------------------------------------
// Manifest.

namespace detail {

template <class T>
T manifest_field(const nlohmann::json& obj, const char* key, const std::filesystem::path& path,
                 const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ManifestError(path, where + ": missing field '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ManifestError(path, where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline DatasetManifest parse_manifest_text(const std::string& text,
                                           const std::filesystem::path& path,
                                           std::filesystem::path base_dir = {}) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestError(path, std::string("invalid JSON: ") + e.what());
  }
  if (!root.is_object() || !root.contains("slides") || !root["slides"].is_array()) {
    throw ManifestError(path, "top level must be an object with a 'slides' array");
  }

  DatasetManifest manifest;
  manifest.base_dir = std::move(base_dir);
  std::set<std::string> seen;
  const auto& slides = root["slides"];
  for (std::size_t i = 0; i < slides.size(); ++i) {
    const std::string where = "slides[" + std::to_string(i) + "]";
    const auto& js = slides[i];
    SlideEntry slide;
    slide.slide_id = detail::manifest_field<std::string>(js, "slide_id", path, where);
    slide.image_path = detail::manifest_field<std::string>(js, "image_path", path, where);
    slide.domain_id = detail::manifest_field<std::string>(js, "domain_id", path, where);
    slide.width = detail::manifest_field<int>(js, "width", path, where);
    slide.height = detail::manifest_field<int>(js, "height", path, where);
    if (slide.width < 1 || slide.height < 1) {
      throw ManifestError(path, where + ": width and height must be positive");
    }
    if (!seen.insert(slide.slide_id).second) {
      throw ManifestError(path, where + ": duplicate slide_id '" + slide.slide_id + "'");
    }
    if (!js.contains("annotations") || !js["annotations"].is_array()) {
      throw ManifestError(path, where + ": missing field 'annotations'");
    }
    const auto& anns = js["annotations"];
    for (std::size_t k = 0; k < anns.size(); ++k) {
      const std::string at = where + ".annotations[" + std::to_string(k) + "]";
      const auto& a = anns[k];
      if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number()) {
        throw ManifestError(path, at + ": expected [x, y]");
      }
      const Point p{a[0].get<double>(), a[1].get<double>()};
      if (p.x < 0 || p.y < 0 || p.x > slide.width - 1 || p.y > slide.height - 1) {
        throw ManifestError(path, at + ": point outside slide bounds");
      }
      slide.annotations.push_back(p);
    }
    manifest.slides.push_back(std::move(slide));
  }
  return manifest;
}

inline DatasetManifest parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    if (!std::filesystem::exists(path)) throw FileNotFound(path);
    throw IoError(path, "cannot open for reading");
  }
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_manifest_text(text, path, path.parent_path());
}

inline nlohmann::json manifest_to_json(const DatasetManifest& manifest) {
  nlohmann::json slides = nlohmann::json::array();
  for (const auto& s : manifest.slides) {
    nlohmann::json anns = nlohmann::json::array();
    for (const auto& p : s.annotations) anns.push_back({p.x, p.y});
    slides.push_back({{"slide_id", s.slide_id},
                      {"image_path", s.image_path},
                      {"domain_id", s.domain_id},
                      {"width", s.width},
                      {"height", s.height},
                      {"annotations", std::move(anns)}});
  }
  return {{"slides", std::move(slides)}};
}

inline void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out << manifest_to_json(manifest).dump(2) << '\n';
  if (!out) throw IoError(path, "write failed");
}

}  // namespace mitoseg
