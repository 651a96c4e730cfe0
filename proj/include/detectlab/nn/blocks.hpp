// SPDX-License-Identifier: Apache-2.0
//
// Detection building blocks: CBS (conv + batch norm + SiLU), the receptive
// field block, the SPPCSPC baseline neck, and coordinate attention.
//
// Blocks register their tensors in a caller-owned ParamStore under a name
// prefix and keep handles to them, so the store is the single place where
// optimizers and checkpoints see the weights.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "detectlab/nn/param_store.hpp"
#include "detectlab/ops.hpp"

namespace detectlab::nn {

struct CbsSpec {
  Index in = 0;
  Index out = 0;
  Index kernel = 1;
  Index stride = 1;
  Index dilation = 1;
};

// Plain convolution with optional bias; padding keeps "same" size at stride 1.
template <typename T>
class Conv {
 public:
  Conv() = default;
  Conv(ParamStore<T>& store, const std::string& prefix, CbsSpec spec, bool bias, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  const CbsSpec& spec() const { return spec_; }

 private:
  CbsSpec spec_;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

template <typename T>
class Cbs {
 public:
  Cbs() = default;
  Cbs(ParamStore<T>& store, const std::string& prefix, CbsSpec spec, Rng& rng);
  // Batch statistics when training; running statistics otherwise.
  Tensor<T> forward(const Tensor<T>& x, bool training);
  const CbsSpec& spec() const { return spec_; }

 private:
  CbsSpec spec_;
  Conv<T> conv_;
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
};

struct RfbBranch {
  // Odd receptive size of the regular convolution stage, realised as
  // (pre_kernel - 1) / 2 stacked 3x3 convolutions after the 1x1 reduction.
  Index pre_kernel = 1;
  Index dilation = 1;
  Index width = 0;
};

struct RfbConfig {
  Index in_channels = 0;
  Index out_channels = 0;
  std::vector<RfbBranch> branches;
  double shortcut_scale = 1.0;

  // Three branches (1, d1), (3, d3), (5, d5); widths split out_channels.
  static RfbConfig make_default(Index in_channels, Index out_channels);
  void validate() const;  // throws ConfigError
};

template <typename T>
class Rfb {
 public:
  Rfb() = default;
  Rfb(ParamStore<T>& store, const std::string& prefix, RfbConfig config, Rng& rng);
  // ReLU(fuse(concat(branches)) + scale * shortcut(x))
  Tensor<T> forward(const Tensor<T>& x, bool training);
  const RfbConfig& config() const { return config_; }

 private:
  RfbConfig config_;
  std::vector<std::vector<Cbs<T>>> branches_;
  Conv<T> fuse_;
  Conv<T> shortcut_;
};

struct SppcspcConfig {
  Index in_channels = 0;
  Index out_channels = 0;
  Index hidden = 0;  // defaults to out_channels
  std::vector<Index> pool_kernels{5, 9, 13};
};

template <typename T>
class Sppcspc {
 public:
  Sppcspc() = default;
  Sppcspc(ParamStore<T>& store, const std::string& prefix, SppcspcConfig config, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, bool training);

 private:
  SppcspcConfig config_;
  Cbs<T> cv1_, cv2_, cv3_, cv4_, cv5_, cv6_, cv7_;
};

struct CaConfig {
  Index channels = 0;
  Index reduction = 8;
  Index min_intermediate = 4;
  // max(min_intermediate, channels / reduction)
  Index intermediate() const;
};

template <typename T>
struct CaOutput {
  Tensor<T> y;    // [N,C,H,W]
  Tensor<T> g_h;  // [N,C,H,1]
  Tensor<T> g_w;  // [N,C,1,W]
};

template <typename T>
class CoordAttention {
 public:
  CoordAttention() = default;
  CoordAttention(ParamStore<T>& store, const std::string& prefix, CaConfig config, Rng& rng);
  CaOutput<T> forward(const Tensor<T>& x, bool training);
  const CaConfig& config() const { return config_; }

 private:
  CaConfig config_;
  Cbs<T> shared_;
  Conv<T> to_h_;
  Conv<T> to_w_;
};

template <typename T>
struct AttentionMaps {
  Tensor<T> per_channel;  // [N,C,H,W], g_h(i) * g_w(j)
  Tensor<T> channel_mean; // [N,1,H,W]
};

template <typename T>
AttentionMaps<T> attention_maps(const Tensor<T>& g_h, const Tensor<T>& g_w);

/// Writes <dir>/ca_maps.tnsr and <dir>/ca_mean.tnsr.
template <typename T>
AttentionMaps<T> attention_maps_export(const Tensor<T>& g_h, const Tensor<T>& g_w,
                                       const std::filesystem::path& dir);

}  // namespace detectlab::nn
