// Copyright 2026 The kinoplan Authors
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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "kinoplan/rng.hpp"

namespace kinoplan {

/// Dense row-major f32 buffer with a shape. Reductions over its contents
/// accumulate in f64; outputs are written exactly once per element, so the
/// parallel loops below stay bit-deterministic for any thread count.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0f);
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  void zero() { std::fill(data.begin(), data.end(), 0.0f); }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (float& v : data) v = static_cast<float>(rng.uniform(lo, hi));
  }

  bool all_finite() const {
    for (float v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

namespace nn {

// ---------------------------------------------------------------------------
// Convolution (stride 1, no padding), NCHW
// ---------------------------------------------------------------------------

inline void conv2d_forward(const float* x, int B, int Cin, int H, int W, const float* w,
                           const float* bias, int Cout, int k, float* y) {
  const int Ho = H - k + 1, Wo = W - k + 1;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int oc = 0; oc < Cout; ++oc) {
      float* yp = y + (static_cast<std::size_t>(b) * Cout + oc) * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = bias[oc];
          for (int ic = 0; ic < Cin; ++ic) {
            const float* xp = x + ((static_cast<std::size_t>(b) * Cin + ic) * H + oy) * W + ox;
            const float* wp = w + ((static_cast<std::size_t>(oc) * Cin + ic) * k) * k;
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) acc += static_cast<double>(wp[kx]) * xp[kx];
              xp += W;
              wp += k;
            }
          }
          yp[static_cast<std::size_t>(oy) * Wo + ox] = static_cast<float>(acc);
        }
      }
    }
  }
}

/// Accumulates gw/gb and writes gx (gx may be null for the input layer).
inline void conv2d_backward(const float* x, const float* w, const float* gy, int B, int Cin,
                            int H, int W, int Cout, int k, float* gx, float* gw, float* gb) {
  const int Ho = H - k + 1, Wo = W - k + 1;
  if (gx != nullptr) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
      for (int ic = 0; ic < Cin; ++ic) {
        float* gxp = gx + (static_cast<std::size_t>(b) * Cin + ic) * H * W;
        for (int iy = 0; iy < H; ++iy) {
          for (int ix = 0; ix < W; ++ix) {
            double acc = 0.0;
            for (int oc = 0; oc < Cout; ++oc) {
              const float* gyp = gy + (static_cast<std::size_t>(b) * Cout + oc) * Ho * Wo;
              const float* wp = w + ((static_cast<std::size_t>(oc) * Cin + ic) * k) * k;
              const int ky_lo = std::max(0, iy - Ho + 1), ky_hi = std::min(k - 1, iy);
              for (int ky = ky_lo; ky <= ky_hi; ++ky) {
                const int oy = iy - ky;
                const int kx_lo = std::max(0, ix - Wo + 1), kx_hi = std::min(k - 1, ix);
                for (int kx = kx_lo; kx <= kx_hi; ++kx) {
                  acc += static_cast<double>(wp[static_cast<std::size_t>(ky) * k + kx]) *
                         gyp[static_cast<std::size_t>(oy) * Wo + (ix - kx)];
                }
              }
            }
            gxp[static_cast<std::size_t>(iy) * W + ix] = static_cast<float>(acc);
          }
        }
      }
    }
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < Cout; ++oc) {
    for (int ic = 0; ic < Cin; ++ic) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (int b = 0; b < B; ++b) {
            const float* gyp = gy + (static_cast<std::size_t>(b) * Cout + oc) * Ho * Wo;
            const float* xp = x + ((static_cast<std::size_t>(b) * Cin + ic) * H + ky) * W + kx;
            for (int oy = 0; oy < Ho; ++oy) {
              for (int ox = 0; ox < Wo; ++ox) {
                acc += static_cast<double>(gyp[static_cast<std::size_t>(oy) * Wo + ox]) *
                       xp[static_cast<std::size_t>(oy) * W + ox];
              }
            }
          }
          gw[((static_cast<std::size_t>(oc) * Cin + ic) * k + ky) * k + kx] +=
              static_cast<float>(acc);
        }
      }
    }
  }
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < Cout; ++oc) {
    double acc = 0.0;
    for (int b = 0; b < B; ++b) {
      const float* gyp = gy + (static_cast<std::size_t>(b) * Cout + oc) * Ho * Wo;
      for (int i = 0; i < Ho * Wo; ++i) acc += gyp[i];
    }
    gb[oc] += static_cast<float>(acc);
  }
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2
// ---------------------------------------------------------------------------

/// argmax holds the input-plane linear index that won each window; ties break
/// to the first index in (row, col) scan order so gradient routing is unique.
inline void maxpool2_forward(const float* x, int B, int C, int H, int W, float* y,
                             std::int32_t* argmax) {
  const int Ho = H / 2, Wo = W / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const float* xp = x + (static_cast<std::size_t>(b) * C + c) * H * W;
      float* yp = y + (static_cast<std::size_t>(b) * C + c) * Ho * Wo;
      std::int32_t* ap = argmax + (static_cast<std::size_t>(b) * C + c) * Ho * Wo;
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          std::int32_t best_i = 0;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::int32_t idx = (2 * oy + dy) * W + (2 * ox + dx);
              const float v = xp[idx];
              if (v > best) {
                best = v;
                best_i = idx;
              }
            }
          }
          yp[static_cast<std::size_t>(oy) * Wo + ox] = best;
          ap[static_cast<std::size_t>(oy) * Wo + ox] = best_i;
        }
      }
    }
  }
}

inline void maxpool2_backward(const float* gy, const std::int32_t* argmax, int B, int C, int H,
                              int W, float* gx) {
  const int Ho = H / 2, Wo = W / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const std::size_t plane = (static_cast<std::size_t>(b) * C + c);
      float* gxp = gx + plane * H * W;
      std::fill(gxp, gxp + static_cast<std::size_t>(H) * W, 0.0f);
      const float* gyp = gy + plane * Ho * Wo;
      const std::int32_t* ap = argmax + plane * Ho * Wo;
      for (int i = 0; i < Ho * Wo; ++i) gxp[ap[i]] += gyp[i];
    }
  }
}

// ---------------------------------------------------------------------------
// PReLU with one learnable slope per channel
// ---------------------------------------------------------------------------

/// Layout [B, C, S]: feature maps use S = H*W, fully connected layers S = 1
/// (every unit its own channel).
inline void prelu_forward(const float* x, int B, int C, int S, const float* slope, float* y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const float a = slope[c];
      const float* xp = x + (static_cast<std::size_t>(b) * C + c) * S;
      float* yp = y + (static_cast<std::size_t>(b) * C + c) * S;
      for (int s = 0; s < S; ++s) yp[s] = xp[s] > 0.0f ? xp[s] : a * xp[s];
    }
  }
}

inline void prelu_backward(const float* x, const float* gy, int B, int C, int S,
                           const float* slope, float* gx, float* gslope) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const float a = slope[c];
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * S;
      for (int s = 0; s < S; ++s) {
        gx[off + s] = x[off + s] > 0.0f ? gy[off + s] : a * gy[off + s];
      }
    }
  }
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int b = 0; b < B; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * S;
      for (int s = 0; s < S; ++s) {
        if (x[off + s] <= 0.0f) acc += static_cast<double>(gy[off + s]) * x[off + s];
      }
    }
    gslope[c] += static_cast<float>(acc);
  }
}

// ---------------------------------------------------------------------------
// Inverted dropout: mask entries are 0 or 1/(1-rate)
// ---------------------------------------------------------------------------

/// Masks are drawn single-threaded from the caller's rng so the stream is
/// independent of parallel scheduling.
inline void dropout_make_mask(Rng& rng, double rate, float* mask, std::size_t n) {
  if (rate <= 0.0) {
    std::fill(mask, mask + n, 1.0f);
    return;
  }
  const float keep_scale = static_cast<float>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng.next_double() < rate ? 0.0f : keep_scale;
}

inline void dropout_apply(const float* x, const float* mask, std::size_t n, float* y) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    y[i] = x[i] * mask[i];
  }
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

inline void linear_forward(const float* x, int B, int In, const float* w, const float* bias,
                           int Out, float* y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b) {
    for (int o = 0; o < Out; ++o) {
      const float* xp = x + static_cast<std::size_t>(b) * In;
      const float* wp = w + static_cast<std::size_t>(o) * In;
      double acc = bias[o];
      for (int i = 0; i < In; ++i) acc += static_cast<double>(wp[i]) * xp[i];
      y[static_cast<std::size_t>(b) * Out + o] = static_cast<float>(acc);
    }
  }
}

inline void linear_backward(const float* x, const float* w, const float* gy, int B, int In,
                            int Out, float* gx, float* gw, float* gb) {
  constexpr int kTile = 256;
  if (gx != nullptr) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
      const float* gyp = gy + static_cast<std::size_t>(b) * Out;
      float* gxp = gx + static_cast<std::size_t>(b) * In;
      double acc[kTile];
      for (int i0 = 0; i0 < In; i0 += kTile) {
        const int tile = std::min(kTile, In - i0);
        for (int t = 0; t < tile; ++t) acc[t] = 0.0;
        for (int o = 0; o < Out; ++o) {
          const double g = gyp[o];
          const float* wp = w + static_cast<std::size_t>(o) * In + i0;
          for (int t = 0; t < tile; ++t) acc[t] += g * wp[t];
        }
        for (int t = 0; t < tile; ++t) gxp[i0 + t] = static_cast<float>(acc[t]);
      }
    }
  }
#pragma omp parallel for schedule(static)
  for (int o = 0; o < Out; ++o) {
    float* gwp = gw + static_cast<std::size_t>(o) * In;
    double acc[kTile];
    for (int i0 = 0; i0 < In; i0 += kTile) {
      const int tile = std::min(kTile, In - i0);
      for (int t = 0; t < tile; ++t) acc[t] = 0.0;
      for (int b = 0; b < B; ++b) {
        const double g = gy[static_cast<std::size_t>(b) * Out + o];
        const float* xp = x + static_cast<std::size_t>(b) * In + i0;
        for (int t = 0; t < tile; ++t) acc[t] += g * xp[t];
      }
      for (int t = 0; t < tile; ++t) gwp[i0 + t] += static_cast<float>(acc[t]);
    }
    double bacc = 0.0;
    for (int b = 0; b < B; ++b) bacc += gy[static_cast<std::size_t>(b) * Out + o];
    gb[o] += static_cast<float>(bacc);
  }
}

// ---------------------------------------------------------------------------
// tanh
// ---------------------------------------------------------------------------

inline void tanh_forward(const float* x, std::size_t n, float* y) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    y[i] = std::tanh(x[i]);
  }
}

inline void tanh_backward(const float* y, const float* gy, std::size_t n, float* gx) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    gx[i] = gy[i] * (1.0f - y[i] * y[i]);
  }
}

}  // namespace nn
}  // namespace kinoplan
