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

/// @file network.hpp
/// @brief Inference-only VM-UNet: patch embedding, visual state-space (VSS)
/// blocks built on a 2D cross-scan, patch merging and expanding, additive
/// skip connections and a full-resolution sigmoid head.
///
/// Topology for an H x W input and embedding width C:
///
///   embed 4x4          -> H/4  x W/4  x C
///   encoder stage k    -> H/2^(k+1) x W/2^(k+1) x C 2^(k-1), k = 1..4,
///                         merged 2x2 -> 2x channels between stages
///   decoder stage 1..3 -> expand 2x, add encoder stage 4-j output, VSS
///   decoder stage 4    -> VSS at H/4 x W/4 x C
///   head               -> expand 4x, 1x1 projection, sigmoid
///
/// All tensors are channel-last (N, H, W, C). Linear weights are stored
/// (out, in).

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mitoseg/core.hpp"
#include "mitoseg/scan.hpp"

namespace mitoseg {

class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int h, int w, int c, float fill = 0.0f) : n_(n), h_(h), w_(w), c_(c) {
    if (n < 1 || h < 1 || w < 1 || c < 1) {
      throw DimensionMismatch("Tensor: all dimensions must be >= 1");
    }
    values_.assign(static_cast<std::size_t>(n) * h * w * c, fill);
  }

  int n() const noexcept { return n_; }
  int h() const noexcept { return h_; }
  int w() const noexcept { return w_; }
  int c() const noexcept { return c_; }
  std::array<int, 4> shape() const { return {n_, h_, w_, c_}; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t positions() const { return static_cast<std::size_t>(n_) * h_ * w_; }

  std::vector<float>& values() noexcept { return values_; }
  const std::vector<float>& values() const noexcept { return values_; }

  std::size_t offset(int b, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(b) * h_ + y) * w_ + x) * c_ + ch;
  }
  float& at(int b, int y, int x, int ch) { return values_[offset(b, y, x, ch)]; }
  float at(int b, int y, int x, int ch) const { return values_[offset(b, y, x, ch)]; }

  /// Channel vector at a flat position (b, y, x).
  std::span<float> row(std::size_t pos) { return {values_.data() + pos * c_, static_cast<std::size_t>(c_)}; }
  std::span<const float> row(std::size_t pos) const {
    return {values_.data() + pos * c_, static_cast<std::size_t>(c_)};
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int n_ = 0, h_ = 0, w_ = 0, c_ = 0;
  std::vector<float> values_;
};

struct VmUnetConfig {
  int embed_dim = 96;
  std::array<int, 4> encoder_depths{2, 2, 2, 2};
  std::array<int, 4> decoder_depths{2, 2, 2, 1};
  int state_dim = 16;
  int patch_size = 4;
  /// Inner width of a VSS block relative to its input width.
  int ssm_ratio = 2;

  /// Full width, one block per stage and a small state; cheap enough for
  /// CPU tests while keeping the channel schedule.
  static VmUnetConfig desk_scale() {
    VmUnetConfig c;
    c.encoder_depths = {1, 1, 1, 1};
    c.decoder_depths = {1, 1, 1, 1};
    c.state_dim = 4;
    return c;
  }

  int encoder_dim(int stage) const { return embed_dim << stage; }
  int decoder_dim(int stage) const { return stage < 3 ? embed_dim << (2 - stage) : embed_dim; }
  static int dt_rank(int dim) { return (dim + 15) / 16; }
  /// Input sides must be divisible by this.
  int input_multiple() const { return patch_size * 8; }

  void validate() const {
    if (patch_size != 4) throw InvalidArgument("VmUnetConfig: patch_size must be 4");
    if (embed_dim < 1 || state_dim < 1 || ssm_ratio < 1) {
      throw InvalidArgument("VmUnetConfig: embed_dim, state_dim and ssm_ratio must be >= 1");
    }
    for (int d : encoder_depths)
      if (d < 0) throw InvalidArgument("VmUnetConfig: negative depth");
    for (int d : decoder_depths)
      if (d < 0) throw InvalidArgument("VmUnetConfig: negative depth");
  }

  friend bool operator==(const VmUnetConfig&, const VmUnetConfig&) = default;
};

// ---------------------------------------------------------------------------
// Weights.

class WeightError : public Error {
 public:
  WeightError(std::string parameter, const std::string& what)
      : Error("parameter '" + parameter + "': " + what), parameter_(std::move(parameter)) {}
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string parameter_;
};

class MissingParameter : public WeightError {
 public:
  explicit MissingParameter(std::string name) : WeightError(std::move(name), "missing") {}
};

class UnexpectedParameter : public WeightError {
 public:
  explicit UnexpectedParameter(std::string name)
      : WeightError(std::move(name), "not used by the network") {}
};

class ShapeMismatch : public WeightError {
 public:
  using WeightError::WeightError;
};

struct NamedArray {
  std::vector<std::uint32_t> shape;
  std::vector<float> values;

  std::size_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t b) { return a * b; });
  }
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct ParamSpec {
  std::string name;
  std::vector<std::uint32_t> shape;
  int fan_in = 1;
  int fan_out = 1;
};

class WeightStore {
 public:
  void set(const std::string& name, NamedArray array) {
    if (array.values.size() != array.numel()) {
      throw ShapeMismatch(name, "value count does not match shape");
    }
    arrays_[name] = std::move(array);
  }

  bool contains(const std::string& name) const { return arrays_.contains(name); }

  const NamedArray& get(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw MissingParameter(name);
    return it->second;
  }
  NamedArray& get(const std::string& name) {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw MissingParameter(name);
    return it->second;
  }

  std::span<const float> view(const std::string& name) const { return get(name).values; }

  const std::map<std::string, NamedArray>& arrays() const noexcept { return arrays_; }

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  std::map<std::string, NamedArray> arrays_;
};

namespace detail {

inline void vss_block_specs(std::vector<ParamSpec>& out, const std::string& prefix, int dim,
                            const VmUnetConfig& cfg) {
  const auto C = static_cast<std::uint32_t>(dim);
  const auto E = static_cast<std::uint32_t>(dim * cfg.ssm_ratio);
  const auto N = static_cast<std::uint32_t>(cfg.state_dim);
  const auto R = static_cast<std::uint32_t>(VmUnetConfig::dt_rank(dim));
  const int e = static_cast<int>(E);
  const int n = static_cast<int>(N);
  const int r = static_cast<int>(R);
  out.push_back({prefix + "norm.weight", {C}, dim, dim});
  out.push_back({prefix + "norm.bias", {C}, dim, dim});
  out.push_back({prefix + "in_proj.weight", {2 * E, C}, dim, 2 * e});
  out.push_back({prefix + "conv.weight", {E, 3, 3}, 9, 9});
  out.push_back({prefix + "conv.bias", {E}, 9, 9});
  out.push_back({prefix + "ss2d.x_proj.weight", {4, R + 2 * N, E}, e, r + 2 * n});
  out.push_back({prefix + "ss2d.dt_proj.weight", {4, E, R}, r, e});
  out.push_back({prefix + "ss2d.dt_proj.bias", {4, E}, r, e});
  out.push_back({prefix + "ss2d.A_log", {4, E, N}, n, n});
  out.push_back({prefix + "ss2d.D", {4, E}, e, e});
  out.push_back({prefix + "out_norm.weight", {E}, e, e});
  out.push_back({prefix + "out_norm.bias", {E}, e, e});
  out.push_back({prefix + "out_proj.weight", {C, E}, e, dim});
}

inline std::string encoder_block_prefix(int stage, int block) {
  return "encoder." + std::to_string(stage) + ".blocks." + std::to_string(block) + ".";
}
inline std::string decoder_block_prefix(int stage, int block) {
  return "decoder." + std::to_string(stage) + ".blocks." + std::to_string(block) + ".";
}

}  // namespace detail

/// Every parameter the forward graph reads, in a fixed order.
inline std::vector<ParamSpec> required_parameters(const VmUnetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  const int C0 = cfg.embed_dim;
  const auto uc0 = static_cast<std::uint32_t>(C0);
  const int patch_in = cfg.patch_size * cfg.patch_size * 3;
  specs.push_back({"patch_embed.weight", {uc0, static_cast<std::uint32_t>(patch_in)}, patch_in, C0});
  specs.push_back({"patch_embed.bias", {uc0}, patch_in, C0});
  for (int k = 0; k < 4; ++k) {
    const int dim = cfg.encoder_dim(k);
    for (int b = 0; b < cfg.encoder_depths[k]; ++b) {
      detail::vss_block_specs(specs, detail::encoder_block_prefix(k, b), dim, cfg);
    }
    if (k < 3) {
      const auto d = static_cast<std::uint32_t>(dim);
      specs.push_back({"encoder." + std::to_string(k) + ".merge.weight", {2 * d, 4 * d}, 4 * dim, 2 * dim});
    }
  }
  for (int j = 0; j < 4; ++j) {
    const int dim = cfg.decoder_dim(j);
    if (j < 3) {
      const auto in = static_cast<std::uint32_t>(2 * dim);
      specs.push_back({"decoder." + std::to_string(j) + ".expand.weight", {2 * in, in},
                       2 * dim, 4 * dim});
    }
    for (int b = 0; b < cfg.decoder_depths[j]; ++b) {
      detail::vss_block_specs(specs, detail::decoder_block_prefix(j, b), dim, cfg);
    }
  }
  specs.push_back({"final_expand.weight", {16 * uc0, uc0}, C0, 16 * C0});
  specs.push_back({"head.weight", {1, uc0}, C0, 1});
  specs.push_back({"head.bias", {1}, C0, 1});
  return specs;
}

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)), arrays drawn in
/// required_parameters order from one seeded stream.
inline WeightStore init_weights(const VmUnetConfig& cfg, std::uint64_t seed) {
  WeightStore store;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (auto& spec : required_parameters(cfg)) {
    NamedArray arr;
    arr.shape = spec.shape;
    const double a = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
    arr.values.resize(arr.numel());
    for (float& v : arr.values) v = static_cast<float>(a * unit(rng));
    store.set(spec.name, std::move(arr));
  }
  return store;
}

/// Throws on the first missing, mis-shaped or (unless allowed) extra array.
inline void validate_weights(const WeightStore& store, const VmUnetConfig& cfg,
                             bool allow_extra = false) {
  const auto specs = required_parameters(cfg);
  std::map<std::string, const ParamSpec*> wanted;
  for (const auto& s : specs) wanted[s.name] = &s;
  for (const auto& s : specs) {
    if (!store.contains(s.name)) throw MissingParameter(s.name);
    const auto& arr = store.get(s.name);
    if (arr.shape != s.shape) {
      auto fmt = [](const std::vector<std::uint32_t>& v) {
        std::string out = "(";
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
        return out + ")";
      };
      throw ShapeMismatch(s.name, "shape " + fmt(arr.shape) + " expected " + fmt(s.shape));
    }
  }
  if (!allow_extra) {
    for (const auto& [name, arr] : store.arrays()) {
      if (!wanted.contains(name)) throw UnexpectedParameter(name);
    }
  }
}

// Binary layout, little-endian:
//   "VMUW" | version u32 | count u32 |
//   count x ( name_len u16 | name | rank u8 | dims u32 x rank | f32 x prod(dims) )

inline constexpr std::uint32_t kWeightFileVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::uint64_t v = 0;
  if constexpr (std::is_same_v<T, float>) {
    v = std::bit_cast<std::uint32_t>(value);
  } else {
    v = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

class ByteReader {
 public:
  ByteReader(std::vector<char> buf, std::filesystem::path path)
      : buf_(std::move(buf)), path_(std::move(path)) {}

  bool has(std::size_t n) const { return buf_.size() - pos_ >= n; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  template <class T>
  T get(const std::string& context) {
    if (!has(sizeof(T))) throw IoError(path_, "unexpected end of file reading " + context);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, float>) {
      return std::bit_cast<float>(static_cast<std::uint32_t>(v));
    } else {
      return static_cast<T>(v);
    }
  }

  std::string bytes(std::size_t n, const std::string& context) {
    if (!has(n)) throw IoError(path_, "unexpected end of file reading " + context);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::filesystem::path path_;
};

}  // namespace detail

inline void save_weights(const WeightStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out.write("VMUW", 4);
  detail::put_le<std::uint32_t>(out, kWeightFileVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.arrays().size()));
  for (const auto& [name, arr] : store.arrays()) {
    if (name.size() > 0xFFFF) throw WeightError(name, "name too long");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(arr.shape.size()));
    for (auto d : arr.shape) detail::put_le<std::uint32_t>(out, d);
    for (float v : arr.values) detail::put_le<float>(out, v);
  }
  if (!out) throw IoError(path, "write failed");
}

inline WeightStore load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!std::filesystem::exists(path)) throw FileNotFound(path);
    throw IoError(path, "cannot open for reading");
  }
  detail::ByteReader rd(std::vector<char>((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>()),
                        path);
  if (rd.bytes(4, "magic") != "VMUW") throw MalformedHeader(path, "bad magic, expected VMUW");
  const auto version = rd.get<std::uint32_t>("version");
  if (version != kWeightFileVersion) {
    throw MalformedHeader(path, "unsupported weight file version " + std::to_string(version));
  }
  const auto count = rd.get<std::uint32_t>("array count");
  WeightStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = rd.get<std::uint16_t>("name length of array " + std::to_string(i));
    const std::string name = rd.bytes(len, "name of array " + std::to_string(i));
    NamedArray arr;
    const auto rank = rd.get<std::uint8_t>("rank of '" + name + "'");
    for (int r = 0; r < rank; ++r) arr.shape.push_back(rd.get<std::uint32_t>("dims of '" + name + "'"));
    const std::size_t numel = arr.numel();
    if (rd.remaining() / 4 < numel) {
      throw ShapeMismatch(name, "declared " + std::to_string(numel) + " values but only " +
                                    std::to_string(rd.remaining() / 4) + " remain in file");
    }
    arr.values.resize(numel);
    for (float& v : arr.values) v = rd.get<float>("values");
    if (store.contains(name)) throw WeightError(name, "duplicated in file");
    store.set(name, std::move(arr));
  }
  if (rd.remaining() != 0) throw MalformedHeader(path, "trailing bytes after last array");
  return store;
}

inline WeightStore load_weights(const std::filesystem::path& path, const VmUnetConfig& cfg) {
  auto store = load_weights(path);
  validate_weights(store, cfg);
  return store;
}

/// Recovers the architecture from array shapes and block names.
inline VmUnetConfig infer_config(const WeightStore& store) {
  VmUnetConfig cfg;
  const auto& pe = store.get("patch_embed.weight");
  if (pe.shape.size() != 2) throw ShapeMismatch("patch_embed.weight", "expected rank 2");
  cfg.embed_dim = static_cast<int>(pe.shape[0]);
  auto count_blocks = [&](const std::string& base) {
    int n = 0;
    while (store.contains(base + std::to_string(n) + ".norm.weight")) ++n;
    return n;
  };
  for (int k = 0; k < 4; ++k) {
    cfg.encoder_depths[k] = count_blocks("encoder." + std::to_string(k) + ".blocks.");
    cfg.decoder_depths[k] = count_blocks("decoder." + std::to_string(k) + ".blocks.");
  }
  for (const auto& [name, arr] : store.arrays()) {
    if (name.ends_with(".ss2d.A_log") && arr.shape.size() == 3) {
      cfg.state_dim = static_cast<int>(arr.shape[2]);
      const auto prefix = name.substr(0, name.size() - std::string("ss2d.A_log").size());
      const auto& norm = store.get(prefix + "norm.weight");
      cfg.ssm_ratio = static_cast<int>(arr.shape[1] / std::max<std::uint32_t>(1, norm.shape[0]));
      break;
    }
  }
  validate_weights(store, cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Layers.

namespace nn {

inline float silu(float v) { return v / (1.0f + std::exp(-v)); }
inline float softplus(float v) { return v > 20.0f ? v : std::log1p(std::exp(v)); }
inline float sigmoid(float v) { return 1.0f / (1.0f + std::exp(-v)); }

/// y = x W^T (+ b), W is (out, in).
inline Tensor linear(const Tensor& x, std::span<const float> weight, int out_dim,
                     std::span<const float> bias = {}) {
  const int in_dim = x.c();
  if (weight.size() != static_cast<std::size_t>(out_dim) * in_dim ||
      (!bias.empty() && bias.size() != static_cast<std::size_t>(out_dim))) {
    throw DimensionMismatch("linear: weight shape does not match input channels " +
                            std::to_string(in_dim));
  }
  Tensor y(x.n(), x.h(), x.w(), out_dim);
  for (std::size_t p = 0; p < x.positions(); ++p) {
    const auto xi = x.row(p);
    auto yo = y.row(p);
    for (int o = 0; o < out_dim; ++o) {
      const float* wr = weight.data() + static_cast<std::size_t>(o) * in_dim;
      float acc = bias.empty() ? 0.0f : bias[o];
      for (int i = 0; i < in_dim; ++i) acc += wr[i] * xi[i];
      yo[o] = acc;
    }
  }
  return y;
}

inline Tensor layer_norm(const Tensor& x, std::span<const float> gamma, std::span<const float> beta,
                         float eps = 1e-5f) {
  const int c = x.c();
  if (gamma.size() != static_cast<std::size_t>(c) || beta.size() != static_cast<std::size_t>(c)) {
    throw DimensionMismatch("layer_norm: parameter size does not match channels");
  }
  Tensor y(x.n(), x.h(), x.w(), c);
  for (std::size_t p = 0; p < x.positions(); ++p) {
    const auto xi = x.row(p);
    auto yo = y.row(p);
    double mean = 0.0;
    for (float v : xi) mean += v;
    mean /= c;
    double var = 0.0;
    for (float v : xi) var += (v - mean) * (v - mean);
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int k = 0; k < c; ++k) {
      yo[k] = static_cast<float>((xi[k] - mean) * inv) * gamma[k] + beta[k];
    }
  }
  return y;
}

/// 3x3 depthwise convolution, zero padding, weight (C, 3, 3).
inline Tensor depthwise_conv3x3(const Tensor& x, std::span<const float> weight,
                                std::span<const float> bias) {
  const int c = x.c();
  if (weight.size() != static_cast<std::size_t>(c) * 9 || bias.size() != static_cast<std::size_t>(c)) {
    throw DimensionMismatch("depthwise_conv3x3: parameter size does not match channels");
  }
  Tensor y(x.n(), x.h(), x.w(), c);
  for (int b = 0; b < x.n(); ++b)
    for (int i = 0; i < x.h(); ++i)
      for (int j = 0; j < x.w(); ++j)
        for (int k = 0; k < c; ++k) {
          float acc = bias[k];
          for (int di = -1; di <= 1; ++di) {
            const int yy = i + di;
            if (yy < 0 || yy >= x.h()) continue;
            for (int dj = -1; dj <= 1; ++dj) {
              const int xx = j + dj;
              if (xx < 0 || xx >= x.w()) continue;
              acc += weight[static_cast<std::size_t>(k) * 9 + (di + 1) * 3 + (dj + 1)] * x.at(b, yy, xx, k);
            }
          }
          y.at(b, i, j, k) = acc;
        }
  return y;
}

/// (N, h, w, r*r*c) -> (N, r*h, r*w, c); channel index (p1 * r + p2) * c + k
/// lands at row offset p1, column offset p2.
inline Tensor pixel_shuffle(const Tensor& x, int r) {
  if (x.c() % (r * r) != 0) throw DimensionMismatch("pixel_shuffle: channels not divisible by r^2");
  const int c = x.c() / (r * r);
  Tensor y(x.n(), x.h() * r, x.w() * r, c);
  for (int b = 0; b < x.n(); ++b)
    for (int i = 0; i < x.h(); ++i)
      for (int j = 0; j < x.w(); ++j)
        for (int p1 = 0; p1 < r; ++p1)
          for (int p2 = 0; p2 < r; ++p2)
            for (int k = 0; k < c; ++k) {
              y.at(b, i * r + p1, j * r + p2, k) = x.at(b, i, j, (p1 * r + p2) * c + k);
            }
  return y;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionMismatch("add: shape mismatch");
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y.values()[i] += b.values()[i];
  return y;
}

}  // namespace nn

/// Non-overlapping 4x4 patches projected to embed_dim channels; patch
/// vector order is (dy, dx, channel). weight (C, 48), bias (C).
inline Tensor patch_embed(const Tensor& image, std::span<const float> weight,
                          std::span<const float> bias, int embed_dim, int patch = 4) {
  if (image.c() != 3) throw DimensionMismatch("patch_embed: expected 3 input channels");
  if (image.h() % patch != 0 || image.w() % patch != 0) {
    throw DimensionMismatch("patch_embed: input " + std::to_string(image.h()) + "x" +
                            std::to_string(image.w()) + " not divisible by " + std::to_string(patch));
  }
  const int in = patch * patch * 3;
  if (weight.size() != static_cast<std::size_t>(embed_dim) * in || bias.size() != static_cast<std::size_t>(embed_dim)) {
    throw DimensionMismatch("patch_embed: weight shape mismatch");
  }
  Tensor patches(image.n(), image.h() / patch, image.w() / patch, in);
  for (int b = 0; b < image.n(); ++b)
    for (int i = 0; i < patches.h(); ++i)
      for (int j = 0; j < patches.w(); ++j)
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            for (int k = 0; k < 3; ++k) {
              patches.at(b, i, j, (dy * patch + dx) * 3 + k) = image.at(b, i * patch + dy, j * patch + dx, k);
            }
  return nn::linear(patches, weight, embed_dim, bias);
}

/// 2x2 neighborhoods concatenated in (dy, dx) order, then projected 4c -> 2c
/// without bias. weight (2c, 4c).
inline Tensor patch_merge(const Tensor& x, std::span<const float> weight) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw DimensionMismatch("patch_merge: spatial dims must be even, got " + std::to_string(x.h()) +
                            "x" + std::to_string(x.w()));
  }
  const int c = x.c();
  Tensor cat(x.n(), x.h() / 2, x.w() / 2, 4 * c);
  for (int b = 0; b < x.n(); ++b)
    for (int i = 0; i < cat.h(); ++i)
      for (int j = 0; j < cat.w(); ++j)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            for (int k = 0; k < c; ++k) {
              cat.at(b, i, j, (dy * 2 + dx) * c + k) = x.at(b, 2 * i + dy, 2 * j + dx, k);
            }
  return nn::linear(cat, weight, 2 * c);
}

/// Projection c -> 2c without bias, then 2x pixel shuffle to c/2 channels.
/// weight (2c, c).
inline Tensor patch_expand(const Tensor& x, std::span<const float> weight) {
  if (x.c() % 2 != 0) throw DimensionMismatch("patch_expand: channel count must be even");
  return nn::pixel_shuffle(nn::linear(x, weight, 2 * x.c()), 2);
}

// ---------------------------------------------------------------------------
// SS2D and VSS blocks.

/// Selective-scan projections for one traversal direction. Layouts:
/// x_proj (R + 2N, E), dt_weight (E, R), dt_bias (E), A_log (E, N), D (E).
struct ScanDirectionWeights {
  std::span<const float> x_proj;
  std::span<const float> dt_weight;
  std::span<const float> dt_bias;
  std::span<const float> A_log;
  std::span<const float> D;
};

struct Ss2dWeights {
  int channels = 0;
  int state = 0;
  int dt_rank = 0;
  std::array<ScanDirectionWeights, 4> paths;
};

/// Input-dependent SSM parameters of a sequence (L x E): delta from the
/// low-rank projection through softplus, B and C per position, A = -exp(A_log).
inline SsmParams<float> make_ssm_params(std::span<const float> seq, int length,
                                        const ScanDirectionWeights& w, int channels, int state,
                                        int dt_rank) {
  const int E = channels, N = state, R = dt_rank;
  const int P = R + 2 * N;
  if (seq.size() != static_cast<std::size_t>(length) * E || w.x_proj.size() != static_cast<std::size_t>(P) * E ||
      w.dt_weight.size() != static_cast<std::size_t>(E) * R || w.dt_bias.size() != static_cast<std::size_t>(E) ||
      w.A_log.size() != static_cast<std::size_t>(E) * N || w.D.size() != static_cast<std::size_t>(E)) {
    throw DimensionMismatch("make_ssm_params: weight shapes inconsistent with E/N/R");
  }
  SsmParams<float> p;
  p.length = length;
  p.channels = E;
  p.state = N;
  p.delta.resize(static_cast<std::size_t>(length) * E);
  p.B.resize(static_cast<std::size_t>(length) * N);
  p.C.resize(static_cast<std::size_t>(length) * N);
  p.A.resize(static_cast<std::size_t>(E) * N);
  p.D.assign(w.D.begin(), w.D.end());
  for (std::size_t i = 0; i < p.A.size(); ++i) p.A[i] = -std::exp(w.A_log[i]);

  std::vector<double> proj(P);
  for (int t = 0; t < length; ++t) {
    const float* xt = seq.data() + static_cast<std::size_t>(t) * E;
    for (int q = 0; q < P; ++q) {
      const float* wr = w.x_proj.data() + static_cast<std::size_t>(q) * E;
      double acc = 0.0;
      for (int e = 0; e < E; ++e) acc += static_cast<double>(wr[e]) * xt[e];
      proj[q] = acc;
    }
    for (int e = 0; e < E; ++e) {
      const float* wr = w.dt_weight.data() + static_cast<std::size_t>(e) * R;
      double acc = w.dt_bias[e];
      for (int r = 0; r < R; ++r) acc += static_cast<double>(wr[r]) * proj[r];
      const double sp = acc > 20.0 ? acc : std::log1p(std::exp(acc));
      p.delta[static_cast<std::size_t>(t) * E + e] = static_cast<float>(sp);
    }
    for (int n = 0; n < N; ++n) {
      p.B[static_cast<std::size_t>(t) * N + n] = static_cast<float>(proj[R + n]);
      p.C[static_cast<std::size_t>(t) * N + n] = static_cast<float>(proj[R + N + n]);
    }
  }
  return p;
}

/// Four cross-scan paths, each a selective scan over the flattened grid,
/// scattered back to image layout and summed.
inline Tensor ss2d(const Tensor& x, const Ss2dWeights& w) {
  if (x.c() != w.channels) throw DimensionMismatch("ss2d: channel count does not match weights");
  const int h = x.h(), wd = x.w(), E = x.c();
  const std::size_t L = static_cast<std::size_t>(h) * wd;
  Tensor y(x.n(), h, wd, E);
  std::vector<float> seq(L * E);
  for (int b = 0; b < x.n(); ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * L;
    for (int k = 0; k < 4; ++k) {
      const auto path = static_cast<ScanPath>(k);
      for (std::size_t t = 0; t < L; ++t) {
        const auto src = x.row(base + scan_path_index(path, h, wd, t));
        std::copy(src.begin(), src.end(), seq.begin() + static_cast<std::ptrdiff_t>(t * E));
      }
      const auto params = make_ssm_params(seq, static_cast<int>(L), w.paths[k], E, w.state, w.dt_rank);
      const auto out = selective_scan_1d<float>(seq, params);
      for (std::size_t t = 0; t < L; ++t) {
        auto dst = y.row(base + scan_path_index(path, h, wd, t));
        for (int e = 0; e < E; ++e) dst[e] += out[t * E + e];
      }
    }
  }
  return y;
}

struct VssBlockWeights {
  int dim = 0;
  int inner = 0;
  std::span<const float> norm_weight, norm_bias;
  std::span<const float> in_proj;
  std::span<const float> conv_weight, conv_bias;
  Ss2dWeights ss2d;
  std::span<const float> out_norm_weight, out_norm_bias;
  std::span<const float> out_proj;
};

inline VssBlockWeights vss_block_weights(const WeightStore& store, const std::string& prefix, int dim,
                                         const VmUnetConfig& cfg) {
  VssBlockWeights w;
  w.dim = dim;
  w.inner = dim * cfg.ssm_ratio;
  const int E = w.inner, N = cfg.state_dim, R = VmUnetConfig::dt_rank(dim);
  w.norm_weight = store.view(prefix + "norm.weight");
  w.norm_bias = store.view(prefix + "norm.bias");
  w.in_proj = store.view(prefix + "in_proj.weight");
  w.conv_weight = store.view(prefix + "conv.weight");
  w.conv_bias = store.view(prefix + "conv.bias");
  w.out_norm_weight = store.view(prefix + "out_norm.weight");
  w.out_norm_bias = store.view(prefix + "out_norm.bias");
  w.out_proj = store.view(prefix + "out_proj.weight");
  w.ss2d.channels = E;
  w.ss2d.state = N;
  w.ss2d.dt_rank = R;
  const auto xp = store.view(prefix + "ss2d.x_proj.weight");
  const auto dw = store.view(prefix + "ss2d.dt_proj.weight");
  const auto db = store.view(prefix + "ss2d.dt_proj.bias");
  const auto al = store.view(prefix + "ss2d.A_log");
  const auto dd = store.view(prefix + "ss2d.D");
  const std::size_t P = static_cast<std::size_t>(R + 2 * N);
  for (std::size_t k = 0; k < 4; ++k) {
    w.ss2d.paths[k] = {xp.subspan(k * P * E, P * E), dw.subspan(k * E * R, static_cast<std::size_t>(E) * R),
                       db.subspan(k * E, E), al.subspan(k * E * N, static_cast<std::size_t>(E) * N),
                       dd.subspan(k * E, E)};
  }
  return w;
}

/// x + out_proj(gate(out_norm(ss2d(silu(dwconv(in_x(norm(x))))))), with the
/// gate silu(in_z(norm(x))).
inline Tensor vss_block(const Tensor& x, const VssBlockWeights& w) {
  if (x.c() != w.dim) {
    throw DimensionMismatch("vss_block: input has " + std::to_string(x.c()) + " channels, block expects " +
                            std::to_string(w.dim));
  }
  const int E = w.inner;
  const Tensor normed = nn::layer_norm(x, w.norm_weight, w.norm_bias);
  const Tensor xz = nn::linear(normed, w.in_proj, 2 * E);
  Tensor xs(x.n(), x.h(), x.w(), E);
  Tensor z(x.n(), x.h(), x.w(), E);
  for (std::size_t p = 0; p < xz.positions(); ++p) {
    const auto src = xz.row(p);
    std::copy(src.begin(), src.begin() + E, xs.row(p).begin());
    std::copy(src.begin() + E, src.end(), z.row(p).begin());
  }
  Tensor conv = nn::depthwise_conv3x3(xs, w.conv_weight, w.conv_bias);
  for (float& v : conv.values()) v = nn::silu(v);
  Tensor y = nn::layer_norm(ss2d(conv, w.ss2d), w.out_norm_weight, w.out_norm_bias);
  for (std::size_t i = 0; i < y.size(); ++i) y.values()[i] *= nn::silu(z.values()[i]);
  return nn::add(x, nn::linear(y, w.out_proj, w.dim));
}

// ---------------------------------------------------------------------------
// Full network.

/// Shapes observed during a forward pass.
struct ForwardTrace {
  std::vector<std::array<int, 4>> encoder;
  std::vector<std::array<int, 4>> decoder;
  std::array<int, 4> embed{};
};

/// Returns per-pixel logits (N, H, W, 1).
inline Tensor vmunet_logits(const Tensor& input, const WeightStore& store, const VmUnetConfig& cfg,
                            ForwardTrace* trace = nullptr) {
  cfg.validate();
  const int m = cfg.input_multiple();
  if (input.h() % m != 0 || input.w() % m != 0) {
    throw DimensionMismatch("vmunet_forward: input " + std::to_string(input.h()) + "x" +
                            std::to_string(input.w()) + " not divisible by " + std::to_string(m));
  }
  Tensor x = patch_embed(input, store.view("patch_embed.weight"), store.view("patch_embed.bias"),
                         cfg.embed_dim, cfg.patch_size);
  if (trace) trace->embed = x.shape();

  std::array<Tensor, 4> skips;
  for (int k = 0; k < 4; ++k) {
    const int dim = cfg.encoder_dim(k);
    for (int b = 0; b < cfg.encoder_depths[k]; ++b) {
      x = vss_block(x, vss_block_weights(store, detail::encoder_block_prefix(k, b), dim, cfg));
    }
    skips[k] = x;
    if (trace) trace->encoder.push_back(x.shape());
    if (k < 3) x = patch_merge(x, store.view("encoder." + std::to_string(k) + ".merge.weight"));
  }

  for (int j = 0; j < 4; ++j) {
    const int dim = cfg.decoder_dim(j);
    if (j < 3) {
      x = patch_expand(x, store.view("decoder." + std::to_string(j) + ".expand.weight"));
      x = nn::add(x, skips[2 - j]);
    }
    for (int b = 0; b < cfg.decoder_depths[j]; ++b) {
      x = vss_block(x, vss_block_weights(store, detail::decoder_block_prefix(j, b), dim, cfg));
    }
    if (trace) trace->decoder.push_back(x.shape());
  }

  x = nn::pixel_shuffle(nn::linear(x, store.view("final_expand.weight"), 16 * cfg.embed_dim), 4);
  return nn::linear(x, store.view("head.weight"), 1, store.view("head.bias"));
}

inline Tensor image_to_tensor(const RgbImage& image) {
  Tensor t(1, image.height(), image.width(), 3);
  std::transform(image.data().begin(), image.data().end(), t.values().begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return t;
}

inline ProbMap vmunet_forward(const RgbImage& image, const WeightStore& store, const VmUnetConfig& cfg,
                              ForwardTrace* trace = nullptr) {
  const Tensor logits = vmunet_logits(image_to_tensor(image), store, cfg, trace);
  std::vector<float> probs(logits.size());
  std::transform(logits.values().begin(), logits.values().end(), probs.begin(), nn::sigmoid);
  return ProbMap(image.height(), image.width(), std::move(probs));
}

}  // namespace mitoseg
