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

#include <array>
#include <cassert>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kinoplan/dataset.hpp"
#include "kinoplan/rng.hpp"
#include "kinoplan/serial.hpp"
#include "kinoplan/tensor.hpp"

namespace kinoplan {

// Costmap encoder: conv5x5(->8) > maxpool > PReLU > conv3x3(->16) > maxpool >
// PReLU > conv3x3(->32) > PReLU > flatten. Planner head: six fully connected
// layers; PReLU+Dropout after the first four, PReLU after the fifth, tanh on
// the output. Dropout stays active at inference to give the planner its
// stochastic proposals; rate 0 makes both modes identical.

inline constexpr std::array<int, 3> kConvChannels = {8, 16, 32};
inline constexpr std::array<int, 3> kConvKernels = {5, 3, 3};

struct NetworkConfig {
  int patch_l = 40;  // source window size; network input is 2l x 2l
  double dropout_rate = 0.5;
  std::vector<int> fc_widths = {512, 384, 256, 128, 64};  // hidden; output 4

  struct EncoderDims {
    int in, c1, p1, c2, p2, c3;
  };

  EncoderDims encoder_dims() const {
    EncoderDims d{};
    d.in = 2 * patch_l;
    d.c1 = d.in - kConvKernels[0] + 1;
    d.p1 = d.c1 / 2;
    d.c2 = d.p1 - kConvKernels[1] + 1;
    d.p2 = d.c2 / 2;
    d.c3 = d.p2 - kConvKernels[2] + 1;
    if (d.c3 < 1 || d.c2 < 1 || d.c1 < 1) {
      throw std::invalid_argument(
          "NetworkConfig: encoder shapes collapse below patch_l=10 (2l=" +
          std::to_string(d.in) + ")");
    }
    return d;
  }

  int latent_dim() const {
    const auto d = encoder_dims();
    return kConvChannels[2] * d.c3 * d.c3;
  }
  int planner_input_dim() const { return latent_dim() + 8; }

  void validate() const {
    encoder_dims();
    if (fc_widths.size() != 5) {
      throw std::invalid_argument("NetworkConfig: planner takes five hidden widths");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw std::invalid_argument("NetworkConfig: dropout rate outside [0,1)");
    }
  }
};

struct NetworkParams {
  NetworkConfig config;
  Tensor conv_w[3], conv_b[3], conv_a[3];  // conv_a: per-channel PReLU slopes
  std::vector<Tensor> fc_w, fc_b;          // 6 layers
  std::vector<Tensor> fc_a;                // PReLU slopes, layers 0..4

  NetworkParams() = default;

  explicit NetworkParams(const NetworkConfig& cfg) : config(cfg) {
    config.validate();
    int in_ch = 1;
    for (int i = 0; i < 3; ++i) {
      conv_w[i] = Tensor({kConvChannels[static_cast<std::size_t>(i)], in_ch,
                          kConvKernels[static_cast<std::size_t>(i)], kConvKernels[static_cast<std::size_t>(i)]});
      conv_b[i] = Tensor({kConvChannels[static_cast<std::size_t>(i)]});
      conv_a[i] = Tensor({kConvChannels[static_cast<std::size_t>(i)]});
      in_ch = kConvChannels[static_cast<std::size_t>(i)];
    }
    int in = config.planner_input_dim();
    for (std::size_t i = 0; i < 6; ++i) {
      const int out = i < 5 ? config.fc_widths[i] : 4;
      fc_w.push_back(Tensor({out, in}));
      fc_b.push_back(Tensor({out}));
      if (i < 5) fc_a.push_back(Tensor({out}));
      in = out;
    }
  }

  /// Kaiming-uniform weights, zero biases, PReLU slopes 0.25.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (int i = 0; i < 3; ++i) {
      const auto& s = conv_w[i].shape;
      const double bound = std::sqrt(6.0 / (s[1] * s[2] * s[3]));
      conv_w[i].fill_uniform(rng, -bound, bound);
      conv_b[i].zero();
      std::fill(conv_a[i].data.begin(), conv_a[i].data.end(), 0.25f);
    }
    for (std::size_t i = 0; i < 6; ++i) {
      const double bound = std::sqrt(6.0 / fc_w[i].shape[1]);
      fc_w[i].fill_uniform(rng, -bound, bound);
      fc_b[i].zero();
      if (i < 5) std::fill(fc_a[i].data.begin(), fc_a[i].data.end(), 0.25f);
    }
  }

  /// Visits every parameter tensor in a fixed order shared by gradients,
  /// optimizer moments and serialization.
  template <typename F>
  void for_each(F&& f) {
    for (int i = 0; i < 3; ++i) {
      f("conv" + std::to_string(i + 1) + ".w", conv_w[i]);
      f("conv" + std::to_string(i + 1) + ".b", conv_b[i]);
      f("conv" + std::to_string(i + 1) + ".a", conv_a[i]);
    }
    for (std::size_t i = 0; i < 6; ++i) {
      f("fc" + std::to_string(i + 1) + ".w", fc_w[i]);
      f("fc" + std::to_string(i + 1) + ".b", fc_b[i]);
      if (i < 5) f("fc" + std::to_string(i + 1) + ".a", fc_a[i]);
    }
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<NetworkParams*>(this)->for_each(
        [&](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  void zero_all() {
    for_each([](const std::string&, Tensor& t) { t.zero(); });
  }
};

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// All per-batch buffers for one forward/backward sweep. Reused across
/// batches to keep allocations off the training loop.
struct Workspace {
  int batch = 0;
  NetworkConfig::EncoderDims dims{};
  Tensor patch;                         // [B,1,in,in], values already in [0,1]
  Tensor current, goal;                 // [B,4]
  Tensor conv1, pool1, act1, conv2, pool2, act2, conv3, latent;
  std::vector<std::int32_t> arg1, arg2;
  Tensor planner_in;
  std::array<Tensor, 6> fc_z;
  std::array<Tensor, 5> fc_act;
  std::array<Tensor, 4> fc_drop;
  std::array<Tensor, 4> mask;
  Tensor out;                           // [B,4]

  // gradient-side buffers (allocated lazily by backward)
  std::array<Tensor, 6> g_fc_z;   // d/d fc_z[i]
  std::array<Tensor, 6> g_fc_in;  // d/d (input of layer i); g_fc_in[0] is d/d planner_in

  Workspace(const NetworkConfig& cfg, int B) : batch(B), dims(cfg.encoder_dims()) {
    const auto& d = dims;
    patch = Tensor({B, 1, d.in, d.in});
    current = Tensor({B, 4});
    goal = Tensor({B, 4});
    conv1 = Tensor({B, kConvChannels[0], d.c1, d.c1});
    pool1 = Tensor({B, kConvChannels[0], d.p1, d.p1});
    act1 = Tensor({B, kConvChannels[0], d.p1, d.p1});
    conv2 = Tensor({B, kConvChannels[1], d.c2, d.c2});
    pool2 = Tensor({B, kConvChannels[1], d.p2, d.p2});
    act2 = Tensor({B, kConvChannels[1], d.p2, d.p2});
    conv3 = Tensor({B, kConvChannels[2], d.c3, d.c3});
    latent = Tensor({B, kConvChannels[2] * d.c3 * d.c3});
    arg1.resize(pool1.numel());
    arg2.resize(pool2.numel());
    planner_in = Tensor({B, cfg.planner_input_dim()});
    int in = cfg.planner_input_dim();
    for (std::size_t i = 0; i < 6; ++i) {
      const int out = i < 5 ? cfg.fc_widths[i] : 4;
      fc_z[i] = Tensor({B, out});
      if (i < 5) fc_act[i] = Tensor({B, out});
      if (i < 4) {
        fc_drop[i] = Tensor({B, out});
        mask[i] = Tensor({B, out});
      }
      in = out;
    }
    out = Tensor({B, 4});
  }
};

/// Runs the full costmap-encoder + planner network on the workspace batch.
/// Dropout masks are drawn from `mask_rng` whenever rate > 0 (training and
/// inference alike); pass rate 0 for deterministic output.
inline void net_forward(const NetworkParams& p, Workspace& ws, double dropout_rate,
                        Rng* mask_rng) {
  const int B = ws.batch;
  const auto& d = ws.dims;
  nn::conv2d_forward(ws.patch.data.data(), B, 1, d.in, d.in, p.conv_w[0].data.data(),
                     p.conv_b[0].data.data(), kConvChannels[0], kConvKernels[0],
                     ws.conv1.data.data());
  nn::maxpool2_forward(ws.conv1.data.data(), B, kConvChannels[0], d.c1, d.c1,
                       ws.pool1.data.data(), ws.arg1.data());
  nn::prelu_forward(ws.pool1.data.data(), B, kConvChannels[0], d.p1 * d.p1,
                    p.conv_a[0].data.data(), ws.act1.data.data());
  nn::conv2d_forward(ws.act1.data.data(), B, kConvChannels[0], d.p1, d.p1,
                     p.conv_w[1].data.data(), p.conv_b[1].data.data(), kConvChannels[1],
                     kConvKernels[1], ws.conv2.data.data());
  nn::maxpool2_forward(ws.conv2.data.data(), B, kConvChannels[1], d.c2, d.c2,
                       ws.pool2.data.data(), ws.arg2.data());
  nn::prelu_forward(ws.pool2.data.data(), B, kConvChannels[1], d.p2 * d.p2,
                    p.conv_a[1].data.data(), ws.act2.data.data());
  nn::conv2d_forward(ws.act2.data.data(), B, kConvChannels[1], d.p2, d.p2,
                     p.conv_w[2].data.data(), p.conv_b[2].data.data(), kConvChannels[2],
                     kConvKernels[2], ws.conv3.data.data());
  nn::prelu_forward(ws.conv3.data.data(), B, kConvChannels[2], d.c3 * d.c3,
                    p.conv_a[2].data.data(), ws.latent.data.data());

  // [latent | current | goal]
  const int latent_dim = ws.latent.shape[1];
  const int in_dim = latent_dim + 8;
  for (int b = 0; b < B; ++b) {
    float* row = ws.planner_in.data.data() + static_cast<std::size_t>(b) * in_dim;
    std::copy_n(ws.latent.data.data() + static_cast<std::size_t>(b) * latent_dim, latent_dim, row);
    std::copy_n(ws.current.data.data() + static_cast<std::size_t>(b) * 4, 4, row + latent_dim);
    std::copy_n(ws.goal.data.data() + static_cast<std::size_t>(b) * 4, 4, row + latent_dim + 4);
  }

  const float* in = ws.planner_in.data.data();
  int in_width = in_dim;
  for (std::size_t i = 0; i < 6; ++i) {
    const int out_width = ws.fc_z[i].shape[1];
    nn::linear_forward(in, B, in_width, p.fc_w[i].data.data(), p.fc_b[i].data.data(), out_width,
                       ws.fc_z[i].data.data());
    if (i < 5) {
      nn::prelu_forward(ws.fc_z[i].data.data(), B, out_width, 1, p.fc_a[i].data.data(),
                        ws.fc_act[i].data.data());
      if (i < 4) {
        if (dropout_rate > 0.0 && mask_rng != nullptr) {
          nn::dropout_make_mask(*mask_rng, dropout_rate, ws.mask[i].data.data(),
                                ws.mask[i].numel());
        } else {
          std::fill(ws.mask[i].data.begin(), ws.mask[i].data.end(), 1.0f);
        }
        nn::dropout_apply(ws.fc_act[i].data.data(), ws.mask[i].data.data(), ws.mask[i].numel(),
                          ws.fc_drop[i].data.data());
        in = ws.fc_drop[i].data.data();
      } else {
        in = ws.fc_act[i].data.data();
      }
    }
    in_width = out_width;
  }
  nn::tanh_forward(ws.fc_z[5].data.data(), ws.fc_z[5].numel(), ws.out.data.data());
#ifndef NDEBUG
  assert(ws.out.all_finite());
#endif
}

/// Reverse sweep; accumulates parameter gradients into `grads` (zero them
/// first for a fresh batch). `grad_out` is dL/d(out).
inline void net_backward(const NetworkParams& p, Workspace& ws, const Tensor& grad_out,
                         NetworkParams& grads) {
  const int B = ws.batch;
  const auto& d = ws.dims;
  for (std::size_t i = 0; i < 6; ++i) {
    if (ws.g_fc_z[i].shape != ws.fc_z[i].shape) ws.g_fc_z[i] = Tensor(ws.fc_z[i].shape);
  }
  if (ws.g_fc_in[0].shape != ws.planner_in.shape) ws.g_fc_in[0] = Tensor(ws.planner_in.shape);
  for (std::size_t i = 1; i < 6; ++i) {
    if (ws.g_fc_in[i].shape != ws.fc_z[i - 1].shape) ws.g_fc_in[i] = Tensor(ws.fc_z[i - 1].shape);
  }

  // Planner head, walked backwards.
  nn::tanh_backward(ws.out.data.data(), grad_out.data.data(), ws.out.numel(),
                    ws.g_fc_z[5].data.data());
  for (int i = 5; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    const int out_width = ws.fc_z[ui].shape[1];
    const float* layer_in = i == 0   ? ws.planner_in.data.data()
                            : i <= 4 ? ws.fc_drop[ui - 1].data.data()
                                     : ws.fc_act[4].data.data();
    const int in_width = i == 0 ? ws.planner_in.shape[1] : ws.fc_z[ui - 1].shape[1];
    nn::linear_backward(layer_in, p.fc_w[ui].data.data(), ws.g_fc_z[ui].data.data(), B, in_width,
                        out_width, ws.g_fc_in[ui].data.data(), grads.fc_w[ui].data.data(),
                        grads.fc_b[ui].data.data());
    if (i == 0) break;
    const auto prev = ui - 1;
    const int prev_width = ws.fc_z[prev].shape[1];
    float* g_post = ws.g_fc_in[ui].data.data();  // d/d(dropout or prelu output of prev)
    if (prev <= 3) {
      const float* m = ws.mask[prev].data.data();
      const auto n = static_cast<std::ptrdiff_t>(static_cast<std::size_t>(B) * prev_width);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t j = 0; j < n; ++j) g_post[j] *= m[j];
    }
    nn::prelu_backward(ws.fc_z[prev].data.data(), g_post, B, prev_width, 1,
                       p.fc_a[prev].data.data(), ws.g_fc_z[prev].data.data(),
                       grads.fc_a[prev].data.data());
  }

  // Split the planner-input gradient; only the latent part flows back.
  const int latent_dim = ws.latent.shape[1];
  Tensor g_latent({B, latent_dim});
  for (int b = 0; b < B; ++b) {
    std::copy_n(ws.g_fc_in[0].data.data() + static_cast<std::size_t>(b) * ws.planner_in.shape[1],
                latent_dim, g_latent.data.data() + static_cast<std::size_t>(b) * latent_dim);
  }

  // Encoder, mirrored.
  Tensor g_conv3({B, kConvChannels[2], d.c3, d.c3});
  nn::prelu_backward(ws.conv3.data.data(), g_latent.data.data(), B, kConvChannels[2], d.c3 * d.c3,
                     p.conv_a[2].data.data(), g_conv3.data.data(), grads.conv_a[2].data.data());
  Tensor g_act2({B, kConvChannels[1], d.p2, d.p2});
  nn::conv2d_backward(ws.act2.data.data(), p.conv_w[2].data.data(), g_conv3.data.data(), B,
                      kConvChannels[1], d.p2, d.p2, kConvChannels[2], kConvKernels[2],
                      g_act2.data.data(), grads.conv_w[2].data.data(),
                      grads.conv_b[2].data.data());
  Tensor g_pool2({B, kConvChannels[1], d.p2, d.p2});
  nn::prelu_backward(ws.pool2.data.data(), g_act2.data.data(), B, kConvChannels[1], d.p2 * d.p2,
                     p.conv_a[1].data.data(), g_pool2.data.data(), grads.conv_a[1].data.data());
  Tensor g_conv2({B, kConvChannels[1], d.c2, d.c2});
  nn::maxpool2_backward(g_pool2.data.data(), ws.arg2.data(), B, kConvChannels[1], d.c2, d.c2,
                        g_conv2.data.data());
  Tensor g_act1({B, kConvChannels[0], d.p1, d.p1});
  nn::conv2d_backward(ws.act1.data.data(), p.conv_w[1].data.data(), g_conv2.data.data(), B,
                      kConvChannels[0], d.p1, d.p1, kConvChannels[1], kConvKernels[1],
                      g_act1.data.data(), grads.conv_w[1].data.data(),
                      grads.conv_b[1].data.data());
  Tensor g_pool1({B, kConvChannels[0], d.p1, d.p1});
  nn::prelu_backward(ws.pool1.data.data(), g_act1.data.data(), B, kConvChannels[0], d.p1 * d.p1,
                     p.conv_a[0].data.data(), g_pool1.data.data(), grads.conv_a[0].data.data());
  Tensor g_conv1({B, kConvChannels[0], d.c1, d.c1});
  nn::maxpool2_backward(g_pool1.data.data(), ws.arg1.data(), B, kConvChannels[0], d.c1, d.c1,
                        g_conv1.data.data());
  nn::conv2d_backward(ws.patch.data.data(), p.conv_w[0].data.data(), g_conv1.data.data(), B, 1,
                      d.in, d.in, kConvChannels[0], kConvKernels[0], nullptr,
                      grads.conv_w[0].data.data(), grads.conv_b[0].data.data());
}

// ---------------------------------------------------------------------------
// Loss (mean squared error with per-trajectory step counts)
// ---------------------------------------------------------------------------

struct TrajGroup {
  std::size_t begin = 0;  // first row of this trajectory in the batch
  std::size_t rows = 0;   // number of (s_t -> s_{t+1}) terms present
  int traj_steps = 1;     // the trajectory's T, the normalizer
};

/// L = (1/N) * sum_j (1/T_j) * sum_t ||pred - target||^2 over the given
/// trajectory groups. `grad` (optional) receives dL/dpred.
inline double loss_mse(const Tensor& pred, const Tensor& target,
                       const std::vector<TrajGroup>& groups, Tensor* grad = nullptr) {
  if (pred.shape != target.shape || pred.shape.size() != 2) {
    throw std::invalid_argument("loss_mse: shape mismatch");
  }
  if (groups.empty()) throw std::invalid_argument("loss_mse: empty batch");
  const int dim = pred.shape[1];
  const double n_traj = static_cast<double>(groups.size());
  if (grad) {
    if (grad->shape != pred.shape) *grad = Tensor(pred.shape);
    grad->zero();
  }
  double total = 0.0;
  for (const TrajGroup& g : groups) {
    const double w = 1.0 / (n_traj * g.traj_steps);
    double acc = 0.0;
    for (std::size_t r = g.begin; r < g.begin + g.rows; ++r) {
      for (int k = 0; k < dim; ++k) {
        const std::size_t idx = r * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k);
        const double e = static_cast<double>(pred.data[idx]) - target.data[idx];
        acc += e * e;
        if (grad) grad->data[idx] = static_cast<float>(2.0 * e * w);
      }
    }
    total += w * acc;
  }
  return total;
}

/// Every row its own single-step trajectory: the plain batch mean of squared
/// errors used for minibatch training.
inline double loss_mse(const Tensor& pred, const Tensor& target, Tensor* grad = nullptr) {
  if (pred.shape.size() != 2 || pred.shape[0] <= 0) {
    throw std::invalid_argument("loss_mse: empty batch");
  }
  std::vector<TrajGroup> groups(static_cast<std::size_t>(pred.shape[0]));
  for (std::size_t r = 0; r < groups.size(); ++r) groups[r] = {r, 1, 1};
  return loss_mse(pred, target, groups, grad);
}

// ---------------------------------------------------------------------------
// Adam training
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  double dropout_rate = 0.5;
  std::string checkpoint_path;  // rolling checkpoint, written every epoch
};

struct TrainState {
  NetworkParams params;
  NetworkParams m, v;  // Adam moments, same tensor layout
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  AdamConfig adam;
  Rng dropout_rng{0};
  Rng shuffle_rng{0};
};

inline TrainState make_train_state(NetworkConfig ncfg, const TrainConfig& tcfg) {
  ncfg.dropout_rate = tcfg.dropout_rate;
  TrainState st;
  st.params = NetworkParams(ncfg);
  st.params.init(derive_seed(tcfg.seed, 0));
  st.m = NetworkParams(ncfg);
  st.v = NetworkParams(ncfg);
  st.m.zero_all();
  st.v.zero_all();
  st.adam.lr = tcfg.lr;
  st.dropout_rng = Rng(derive_seed(tcfg.seed, 1));
  st.shuffle_rng = Rng(derive_seed(tcfg.seed, 2));
  return st;
}

inline void adam_step(TrainState& st, NetworkParams& grads) {
  ++st.step;
  const double b1 = st.adam.beta1, b2 = st.adam.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  std::vector<Tensor*> ps, gs, ms, vs;
  st.params.for_each([&](const std::string&, Tensor& t) { ps.push_back(&t); });
  grads.for_each([&](const std::string&, Tensor& t) { gs.push_back(&t); });
  st.m.for_each([&](const std::string&, Tensor& t) { ms.push_back(&t); });
  st.v.for_each([&](const std::string&, Tensor& t) { vs.push_back(&t); });
  for (std::size_t k = 0; k < ps.size(); ++k) {
    float* p = ps[k]->data.data();
    const float* g = gs[k]->data.data();
    float* m = ms[k]->data.data();
    float* v = vs[k]->data.data();
    const auto n = static_cast<std::ptrdiff_t>(ps[k]->numel());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] = static_cast<float>(p[i] - st.adam.lr * (mi / bc1) / (std::sqrt(vi / bc2) + st.adam.eps));
    }
  }
}

/// Copies tuples [lo, hi) of the shuffled index list into the workspace.
inline void fill_batch(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t lo,
                       std::size_t hi, Workspace& ws, Tensor& targets) {
  const auto B = static_cast<int>(hi - lo);
  const std::size_t patch_n = ws.patch.numel() / static_cast<std::size_t>(ws.batch);
  for (int b = 0; b < B; ++b) {
    const TrainingTuple& t = ds.tuples[order[lo + static_cast<std::size_t>(b)]];
    float* pp = ws.patch.data.data() + static_cast<std::size_t>(b) * patch_n;
    for (std::size_t i = 0; i < patch_n; ++i) pp[i] = static_cast<float>(t.patch[i]) / 255.0f;
    for (int k = 0; k < 4; ++k) {
      ws.current.data[static_cast<std::size_t>(b) * 4 + static_cast<std::size_t>(k)] =
          static_cast<float>(t.current[static_cast<std::size_t>(k)]);
      ws.goal.data[static_cast<std::size_t>(b) * 4 + static_cast<std::size_t>(k)] =
          static_cast<float>(t.goal[static_cast<std::size_t>(k)]);
      targets.data[static_cast<std::size_t>(b) * 4 + static_cast<std::size_t>(k)] =
          static_cast<float>(t.target[static_cast<std::size_t>(k)]);
    }
  }
}

void save_train_state(const std::string& path, const TrainState& st);  // below

/// Runs `epochs` further epochs on the state (so checkpoints resume
/// step-for-step). Appends the mean training loss of each epoch to `losses`.
inline void train_epochs(TrainState& st, const Dataset& ds, int epochs, int batch_size,
                         std::vector<double>* losses = nullptr,
                         const std::string& checkpoint_path = "") {
  if (ds.tuples.empty()) throw std::invalid_argument("train: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be positive");
  const double rate = st.params.config.dropout_rate;
  std::vector<std::size_t> order(ds.tuples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  Workspace ws(st.params.config, std::min<int>(batch_size, static_cast<int>(ds.tuples.size())));
  Tensor targets({ws.batch, 4});
  Tensor grad_out;
  NetworkParams grads(st.params.config);

  for (int e = 0; e < epochs; ++e) {
    // Re-derive the permutation from identity so a resumed run shuffles
    // identically to an unbroken one.
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[st.shuffle_rng.next_below(i + 1)]);
    }
    double epoch_loss = 0.0;
    std::size_t rows = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(batch_size));
      const auto B = static_cast<int>(hi - lo);
      if (B != ws.batch) {
        ws = Workspace(st.params.config, B);
        targets = Tensor({B, 4});
      }
      fill_batch(ds, order, lo, hi, ws, targets);
      net_forward(st.params, ws, rate, &st.dropout_rng);
      const double loss = loss_mse(ws.out, targets, &grad_out);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(st.epoch + 1) + ", batch " +
                                 std::to_string(lo / static_cast<std::size_t>(batch_size)) +
                                 " (lr=" + std::to_string(st.adam.lr) + ")");
      }
      epoch_loss += loss * B;
      rows += static_cast<std::size_t>(B);
      grads.zero_all();
      net_backward(st.params, ws, grad_out, grads);
      adam_step(st, grads);
    }
    ++st.epoch;
    if (losses) losses->push_back(epoch_loss / static_cast<double>(rows));
    if (!checkpoint_path.empty()) save_train_state(checkpoint_path, st);
  }
}

/// Fresh training run: seeded init plus `cfg.epochs` epochs.
inline TrainState train(const Dataset& ds, NetworkConfig ncfg, const TrainConfig& cfg,
                        std::vector<double>* losses = nullptr) {
  ncfg.patch_l = ds.patch_l;
  TrainState st = make_train_state(ncfg, cfg);
  train_epochs(st, ds, cfg.epochs, cfg.batch_size, losses, cfg.checkpoint_path);
  return st;
}

// ---------------------------------------------------------------------------
// Weights file (KPNN v1)
// ---------------------------------------------------------------------------
//
// magic "KPNN" | u32 version=1 | u32 l | f32 dropout_rate | u32 n_hidden |
// hidden widths (u32 each) | u8 has_optimizer | u32 n_tensors | descriptor
// per tensor (u32 name_len, name bytes, u32 ndim, u32 dims...) | raw f32
// payload per tensor in descriptor order | optional optimizer section
// (m tensors, v tensors, u64 step, u64 epoch, f64 lr/beta1/beta2/eps,
// 4x u64 dropout rng state, 4x u64 shuffle rng state) | u32 CRC32.

namespace detail {

inline void write_params_descriptor(ByteWriter& w, const NetworkParams& p) {
  std::vector<std::pair<std::string, const Tensor*>> items;
  p.for_each([&](const std::string& name, const Tensor& t) { items.emplace_back(name, &t); });
  w.u32(static_cast<std::uint32_t>(items.size()));
  for (const auto& [name, t] : items) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t->shape.size()));
    for (int dim : t->shape) w.u32(static_cast<std::uint32_t>(dim));
  }
}

inline void write_params_data(ByteWriter& w, const NetworkParams& p) {
  p.for_each([&](const std::string&, const Tensor& t) {
    w.raw(t.data.data(), t.data.size() * sizeof(float));
  });
}

inline void read_params_data(ByteReader& r, NetworkParams& p) {
  p.for_each([&](const std::string&, Tensor& t) {
    r.raw(t.data.data(), t.data.size() * sizeof(float));
  });
}

/// Validates that the stored descriptor chains exactly like the architecture
/// implied by the header.
inline void check_descriptor(ByteReader& r, NetworkParams& p, const std::string& path) {
  std::vector<std::pair<std::string, const Tensor*>> items;
  p.for_each([&](const std::string& name, const Tensor& t) { items.emplace_back(name, &t); });
  const std::uint32_t n = r.u32();
  if (n != items.size()) {
    throw IoError(IoError::Kind::BadData, path + ": unexpected tensor count");
  }
  for (const auto& [name, t] : items) {
    const std::uint32_t name_len = r.u32();
    std::string got(name_len, '\0');
    r.raw(got.data(), name_len);
    const std::uint32_t ndim = r.u32();
    std::vector<int> dims(ndim);
    for (auto& dim : dims) dim = static_cast<int>(r.u32());
    if (got != name || dims != t->shape) {
      throw IoError(IoError::Kind::BadData,
                    path + ": tensor '" + got + "' does not match the declared architecture");
    }
  }
}

inline void write_header(ByteWriter& w, const NetworkConfig& cfg, bool with_optimizer) {
  w.magic("KPNN");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(cfg.patch_l));
  w.f32(static_cast<float>(cfg.dropout_rate));
  w.u32(static_cast<std::uint32_t>(cfg.fc_widths.size()));
  for (int width : cfg.fc_widths) w.u32(static_cast<std::uint32_t>(width));
  w.u8(with_optimizer ? 1 : 0);
}

inline NetworkConfig read_header(ByteReader& r, bool* has_optimizer, const std::string& path) {
  r.expect_magic("KPNN");
  const std::uint32_t version = r.u32();
  if (version != 1) {
    throw IoError(IoError::Kind::VersionMismatch,
                  path + ": unsupported weights version " + std::to_string(version));
  }
  NetworkConfig cfg;
  cfg.patch_l = static_cast<int>(r.u32());
  cfg.dropout_rate = r.f32();
  const std::uint32_t n_hidden = r.u32();
  if (n_hidden != 5) throw IoError(IoError::Kind::BadData, path + ": bad hidden layer count");
  cfg.fc_widths.resize(n_hidden);
  for (int& width : cfg.fc_widths) width = static_cast<int>(r.u32());
  *has_optimizer = r.u8() != 0;
  cfg.validate();
  return cfg;
}

}  // namespace detail

inline void save_network(const std::string& path, const NetworkParams& params) {
  ByteWriter w;
  detail::write_header(w, params.config, false);
  detail::write_params_descriptor(w, params);
  detail::write_params_data(w, params);
  w.finish_to_file(path);
}

inline NetworkParams load_network(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  bool has_optimizer = false;
  const NetworkConfig cfg = detail::read_header(r, &has_optimizer, path);
  NetworkParams params(cfg);
  detail::check_descriptor(r, params, path);
  detail::read_params_data(r, params);
  if (!has_optimizer) r.expect_done();
  return params;
}

inline void save_train_state(const std::string& path, const TrainState& st) {
  ByteWriter w;
  detail::write_header(w, st.params.config, true);
  detail::write_params_descriptor(w, st.params);
  detail::write_params_data(w, st.params);
  detail::write_params_data(w, st.m);
  detail::write_params_data(w, st.v);
  w.u64(static_cast<std::uint64_t>(st.step));
  w.u64(static_cast<std::uint64_t>(st.epoch));
  w.f64(st.adam.lr);
  w.f64(st.adam.beta1);
  w.f64(st.adam.beta2);
  w.f64(st.adam.eps);
  for (std::uint64_t s : st.dropout_rng.state()) w.u64(s);
  for (std::uint64_t s : st.shuffle_rng.state()) w.u64(s);
  w.finish_to_file(path);
}

inline TrainState load_train_state(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  bool has_optimizer = false;
  const NetworkConfig cfg = detail::read_header(r, &has_optimizer, path);
  if (!has_optimizer) {
    throw IoError(IoError::Kind::BadData, path + ": no optimizer state in this file");
  }
  TrainState st;
  st.params = NetworkParams(cfg);
  detail::check_descriptor(r, st.params, path);
  detail::read_params_data(r, st.params);
  st.m = NetworkParams(cfg);
  st.v = NetworkParams(cfg);
  detail::read_params_data(r, st.m);
  detail::read_params_data(r, st.v);
  st.step = static_cast<std::int64_t>(r.u64());
  st.epoch = static_cast<std::int64_t>(r.u64());
  st.adam.lr = r.f64();
  st.adam.beta1 = r.f64();
  st.adam.beta2 = r.f64();
  st.adam.eps = r.f64();
  std::array<std::uint64_t, 4> ds{}, ss{};
  for (auto& s : ds) s = r.u64();
  for (auto& s : ss) s = r.u64();
  st.dropout_rng.set_state(ds);
  st.shuffle_rng.set_state(ss);
  r.expect_done();
  return st;
}

// ---------------------------------------------------------------------------
// Single-sample inference (the planner's entry point)
// ---------------------------------------------------------------------------

/// Reusable batch-1 context so a planning loop does not reallocate per step.
class InferenceContext {
 public:
  explicit InferenceContext(const NetworkParams& params)
      : params_(&params), ws_(params.config, 1) {}

  /// patch: (2l)^2 raw costs; everything else normalized egocentric vectors.
  /// Applies dropout with the params' rate when `stochastic` (the intended
  /// planning mode); pass false for deterministic evaluation.
  std::array<double, 4> propose(const std::vector<std::uint8_t>& patch,
                                const std::array<double, 4>& current,
                                const std::array<double, 4>& goal, bool stochastic, Rng& rng) {
    if (patch.size() != ws_.patch.numel()) {
      throw std::invalid_argument("InferenceContext: patch size mismatch");
    }
    for (std::size_t i = 0; i < patch.size(); ++i) {
      ws_.patch.data[i] = static_cast<float>(patch[i]) / 255.0f;
    }
    for (int k = 0; k < 4; ++k) {
      ws_.current.data[static_cast<std::size_t>(k)] = static_cast<float>(current[static_cast<std::size_t>(k)]);
      ws_.goal.data[static_cast<std::size_t>(k)] = static_cast<float>(goal[static_cast<std::size_t>(k)]);
    }
    const double rate = stochastic ? params_->config.dropout_rate : 0.0;
    net_forward(*params_, ws_, rate, &rng);
    return {ws_.out.data[0], ws_.out.data[1], ws_.out.data[2], ws_.out.data[3]};
  }

 private:
  const NetworkParams* params_;
  Workspace ws_;
};

/// Encoder-only forward pass for a single patch (returns the latent vector).
inline std::vector<float> encoder_forward(const Tensor& patch, const NetworkParams& params) {
  const auto d = params.config.encoder_dims();
  if (patch.numel() != static_cast<std::size_t>(d.in) * static_cast<std::size_t>(d.in)) {
    throw std::invalid_argument("encoder_forward: patch shape mismatch");
  }
  Workspace ws(params.config, 1);
  std::copy(patch.data.begin(), patch.data.end(), ws.patch.data.begin());
  Rng rng(0);
  net_forward(params, ws, 0.0, &rng);
  return std::vector<float>(ws.latent.data.begin(), ws.latent.data.end());
}

enum class Mode { kTrain, kInfer };

/// Planner head on a precomputed latent. Dropout is applied in both modes
/// whenever the configured rate is positive; rate 0 is fully deterministic.
inline std::array<double, 4> planner_forward(const std::vector<float>& latent,
                                             const std::array<double, 4>& current,
                                             const std::array<double, 4>& goal,
                                             const NetworkParams& params, Mode mode, Rng& rng) {
  (void)mode;  // dropout is deliberately mode-independent
  const int latent_dim = params.config.latent_dim();
  if (static_cast<int>(latent.size()) != latent_dim) {
    throw std::invalid_argument("planner_forward: latent size mismatch");
  }
  const int B = 1;
  Tensor in({B, latent_dim + 8});
  std::copy(latent.begin(), latent.end(), in.data.begin());
  for (int k = 0; k < 4; ++k) {
    in.data[static_cast<std::size_t>(latent_dim + k)] = static_cast<float>(current[static_cast<std::size_t>(k)]);
    in.data[static_cast<std::size_t>(latent_dim + 4 + k)] = static_cast<float>(goal[static_cast<std::size_t>(k)]);
  }
  const double rate = params.config.dropout_rate;
  Tensor mask;
  const float* cur = in.data.data();
  int cur_w = latent_dim + 8;
  Tensor buf_z, buf_a, buf_d;
  for (std::size_t i = 0; i < 6; ++i) {
    const int out_w = i < 5 ? params.config.fc_widths[i] : 4;
    buf_z = Tensor({B, out_w});
    nn::linear_forward(cur, B, cur_w, params.fc_w[i].data.data(), params.fc_b[i].data.data(),
                       out_w, buf_z.data.data());
    if (i < 5) {
      buf_a = Tensor({B, out_w});
      nn::prelu_forward(buf_z.data.data(), B, out_w, 1, params.fc_a[i].data.data(),
                        buf_a.data.data());
      if (i < 4) {
        mask = Tensor({B, out_w});
        nn::dropout_make_mask(rng, rate, mask.data.data(), mask.numel());
        buf_d = Tensor({B, out_w});
        nn::dropout_apply(buf_a.data.data(), mask.data.data(), mask.numel(), buf_d.data.data());
        cur = buf_d.data.data();
      } else {
        cur = buf_a.data.data();
      }
    } else {
      cur = buf_z.data.data();
    }
    cur_w = out_w;
  }
  std::array<double, 4> out{};
  for (int k = 0; k < 4; ++k) out[static_cast<std::size_t>(k)] = std::tanh(cur[k]);
  return out;
}

}  // namespace kinoplan
