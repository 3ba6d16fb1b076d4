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

/// @file scan.hpp
/// @brief Selective state-space scan.
///
/// For every channel d and state n, with per-position step sizes delta,
/// input projections B and output projections C:
///
///     h_t = exp(delta_t A) h_{t-1} + delta_t B_t x_t
///     y_t = <C_t, h_t> + D x_t
///
/// The recurrence is linear in h, so it is evaluated blockwise: each chunk is
/// scanned from a zero state while tracking the cumulative decay, the chunk
/// end states are chained sequentially, and every position is then corrected
/// by decay * incoming carry. Chunks are independent in the first and last
/// phase.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mitoseg/core.hpp"

namespace mitoseg {

/// Layouts: delta L x D, A D x N, B and C L x N, D D. Row-major.
template <class T>
struct SsmParams {
  int length = 0;
  int channels = 0;
  int state = 0;
  std::vector<T> delta;
  std::vector<T> A;
  std::vector<T> B;
  std::vector<T> C;
  std::vector<T> D;

  void validate() const {
    if (length < 1 || channels < 1 || state < 1) {
      throw DimensionMismatch("SsmParams: length, channels and state must be >= 1");
    }
    const auto l = static_cast<std::size_t>(length);
    const auto d = static_cast<std::size_t>(channels);
    const auto n = static_cast<std::size_t>(state);
    if (delta.size() != l * d || A.size() != d * n || B.size() != l * n || C.size() != l * n ||
        D.size() != d) {
      throw DimensionMismatch("SsmParams: array sizes inconsistent with (L=" +
                              std::to_string(length) + ", D=" + std::to_string(channels) +
                              ", N=" + std::to_string(state) + ")");
    }
  }
};

inline constexpr int kDefaultScanChunk = 32;

/// x is L x D row-major; returns y with the same layout.
template <class T>
std::vector<T> selective_scan_1d(std::span<const T> x, const SsmParams<T>& p,
                                 int chunk = kDefaultScanChunk) {
  using Acc = std::conditional_t<(sizeof(T) < sizeof(double)), double, T>;
  p.validate();
  const auto L = static_cast<std::size_t>(p.length);
  const auto Dn = static_cast<std::size_t>(p.channels);
  const auto N = static_cast<std::size_t>(p.state);
  if (x.size() != L * Dn) {
    throw DimensionMismatch("selective_scan_1d: input has " + std::to_string(x.size()) +
                            " values, expected " + std::to_string(L * Dn));
  }
  if (chunk < 1) throw InvalidArgument("selective_scan_1d: chunk must be >= 1");
  const auto K = static_cast<std::size_t>(chunk);
  const std::size_t nchunks = (L + K - 1) / K;

  std::vector<T> y(L * Dn);
  std::vector<Acc> local(L * N);
  std::vector<Acc> decay(L * N);
  std::vector<Acc> carry(nchunks * N);

  for (std::size_t d = 0; d < Dn; ++d) {
    // Chunk-local scans from a zero state.
    for (std::size_t k = 0; k < nchunks; ++k) {
      const std::size_t t0 = k * K;
      const std::size_t t1 = std::min(L, t0 + K);
      for (std::size_t n = 0; n < N; ++n) {
        const Acc a = static_cast<Acc>(p.A[d * N + n]);
        Acc h = 0;
        Acc prod = 1;
        for (std::size_t t = t0; t < t1; ++t) {
          const Acc dt = static_cast<Acc>(p.delta[t * Dn + d]);
          const Acc abar = std::exp(dt * a);
          prod *= abar;
          h = abar * h + dt * static_cast<Acc>(p.B[t * N + n]) * static_cast<Acc>(x[t * Dn + d]);
          local[t * N + n] = h;
          decay[t * N + n] = prod;
        }
      }
    }
    // State entering each chunk.
    for (std::size_t n = 0; n < N; ++n) {
      Acc h = 0;
      for (std::size_t k = 0; k < nchunks; ++k) {
        carry[k * N + n] = h;
        const std::size_t last = std::min(L, (k + 1) * K) - 1;
        h = local[last * N + n] + decay[last * N + n] * h;
      }
    }
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t k = t / K;
      Acc acc = static_cast<Acc>(p.D[d]) * static_cast<Acc>(x[t * Dn + d]);
      for (std::size_t n = 0; n < N; ++n) {
        const Acc h = local[t * N + n] + decay[t * N + n] * carry[k * N + n];
        acc += static_cast<Acc>(p.C[t * N + n]) * h;
      }
      y[t * Dn + d] = static_cast<T>(acc);
    }
  }
  return y;
}

/// The four cross-scan traversals of an h x w grid.
enum class ScanPath : int { kRowForward = 0, kRowBackward = 1, kColForward = 2, kColBackward = 3 };

/// Flat row-major grid index visited at step t of the given path.
inline std::size_t scan_path_index(ScanPath path, int h, int w, std::size_t t) {
  const std::size_t L = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const auto uw = static_cast<std::size_t>(w);
  const auto uh = static_cast<std::size_t>(h);
  switch (path) {
    case ScanPath::kRowForward:
      return t;
    case ScanPath::kRowBackward:
      return L - 1 - t;
    case ScanPath::kColForward:
      return (t % uh) * uw + t / uh;
    case ScanPath::kColBackward: {
      const std::size_t s = L - 1 - t;
      return (s % uh) * uw + s / uh;
    }
  }
  return t;
}

}  // namespace mitoseg
