// SPDX-License-Identifier: Apache-2.0
#include "detectlab/nn/blocks.hpp"

#include <algorithm>

#include "detectlab/log.hpp"
#include "detectlab/tensor_io.hpp"

namespace detectlab::nn {

template <typename T>
Conv<T>::Conv(ParamStore<T>& store, const std::string& prefix, CbsSpec spec, bool bias, Rng& rng)
    : spec_(spec) {
  if (spec.in < 1 || spec.out < 1 || spec.kernel < 1)
    throw ConfigError(prefix + ": channels and kernel must be positive");
  weight_ = store.add_param(prefix + ".weight", {spec.out, spec.in, spec.kernel, spec.kernel});
  he_uniform(weight_, spec.in * spec.kernel * spec.kernel, rng);
  if (bias) bias_ = store.add_param(prefix + ".bias", {spec.out});
}

template <typename T>
Tensor<T> Conv<T>::forward(const Tensor<T>& x) const {
  const Index pad = spec_.dilation * (spec_.kernel - 1) / 2;
  return conv2d(x, weight_, bias_, {spec_.stride, pad, spec_.dilation});
}

template <typename T>
Cbs<T>::Cbs(ParamStore<T>& store, const std::string& prefix, CbsSpec spec, Rng& rng)
    : spec_(spec), conv_(store, prefix + ".conv", spec, false, rng) {
  gamma_ = store.add_param(prefix + ".bn.gamma", {spec.out});
  std::fill(gamma_.data().begin(), gamma_.data().end(), T(1));
  beta_ = store.add_param(prefix + ".bn.beta", {spec.out});
  running_mean_ = store.add_buffer(prefix + ".bn.running_mean", {spec.out}, T(0));
  running_var_ = store.add_buffer(prefix + ".bn.running_var", {spec.out}, T(1));
}

template <typename T>
Tensor<T> Cbs<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> y = conv_.forward(x);
  y = batch_norm(y, gamma_, beta_, running_mean_, running_var_,
                 {.training = training, .momentum = 0.1, .eps = 1e-5});
  return silu(y);
}

RfbConfig RfbConfig::make_default(Index in_channels, Index out_channels) {
  RfbConfig c;
  c.in_channels = in_channels;
  c.out_channels = out_channels;
  const Index base = out_channels / 3;
  const Index rem = out_channels % 3;
  const Index pre[3] = {1, 3, 5};
  const Index dil[3] = {1, 3, 5};
  for (int i = 0; i < 3; ++i) c.branches.push_back({pre[i], dil[i], base + (i < rem ? 1 : 0)});
  return c;
}

void RfbConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ConfigError("rfb: channels must be positive");
  if (branches.size() < 2) throw ConfigError("rfb: at least two branches required");
  Index total = 0;
  for (const auto& b : branches) {
    if (b.dilation < 1) throw ConfigError("rfb: dilation rates must be positive");
    if (b.pre_kernel < 1 || b.pre_kernel % 2 == 0)
      throw ConfigError("rfb: pre_kernel must be a positive odd size");
    if (b.width < 1) throw ConfigError("rfb: branch width must be positive");
    total += b.width;
  }
  if (total != out_channels) {
    throw ConfigError("rfb: branch widths sum to " + std::to_string(total) +
                      " but the fuse convolution expects " + std::to_string(out_channels));
  }
}

template <typename T>
Rfb<T>::Rfb(ParamStore<T>& store, const std::string& prefix, RfbConfig config, Rng& rng)
    : config_(std::move(config)) {
  config_.validate();
  for (std::size_t i = 0; i < config_.branches.size(); ++i) {
    const RfbBranch& b = config_.branches[i];
    const std::string p = prefix + ".branch" + std::to_string(i);
    std::vector<Cbs<T>> stages;
    stages.emplace_back(store, p + ".reduce", CbsSpec{config_.in_channels, b.width, 1, 1, 1}, rng);
    for (Index k = 0; k < (b.pre_kernel - 1) / 2; ++k) {
      stages.emplace_back(store, p + ".pre" + std::to_string(k), CbsSpec{b.width, b.width, 3, 1, 1},
                          rng);
    }
    stages.emplace_back(store, p + ".dilated", CbsSpec{b.width, b.width, 3, 1, b.dilation}, rng);
    branches_.push_back(std::move(stages));
  }
  fuse_ = Conv<T>(store, prefix + ".fuse", {config_.out_channels, config_.out_channels, 1, 1, 1},
                  true, rng);
  shortcut_ = Conv<T>(store, prefix + ".shortcut",
                      {config_.in_channels, config_.out_channels, 1, 1, 1}, true, rng);
}

template <typename T>
Tensor<T> Rfb<T>::forward(const Tensor<T>& x, bool training) {
  std::vector<Tensor<T>> outs;
  for (auto& stages : branches_) {
    Tensor<T> h = x;
    for (auto& stage : stages) h = stage.forward(h, training);
    outs.push_back(h);
  }
  Tensor<T> fused = fuse_.forward(concat(outs, 1));
  Tensor<T> skip = shortcut_.forward(x);
  if (config_.shortcut_scale != 1.0) skip = scale(skip, static_cast<T>(config_.shortcut_scale));
  return relu(add(fused, skip));
}

template <typename T>
Sppcspc<T>::Sppcspc(ParamStore<T>& store, const std::string& prefix, SppcspcConfig config,
                    Rng& rng)
    : config_(std::move(config)) {
  const Index c1 = config_.in_channels;
  const Index c2 = config_.out_channels;
  if (c1 < 1 || c2 < 1) throw ConfigError("sppcspc: channels must be positive");
  if (config_.hidden == 0) config_.hidden = c2;
  const Index h = config_.hidden;
  const auto pools = static_cast<Index>(config_.pool_kernels.size());
  for (Index k : config_.pool_kernels) {
    if (k < 1 || k % 2 == 0) throw ConfigError("sppcspc: pool kernels must be odd");
  }
  cv1_ = Cbs<T>(store, prefix + ".cv1", {c1, h, 1, 1, 1}, rng);
  cv2_ = Cbs<T>(store, prefix + ".cv2", {c1, h, 1, 1, 1}, rng);
  cv3_ = Cbs<T>(store, prefix + ".cv3", {h, h, 3, 1, 1}, rng);
  cv4_ = Cbs<T>(store, prefix + ".cv4", {h, h, 1, 1, 1}, rng);
  cv5_ = Cbs<T>(store, prefix + ".cv5", {(pools + 1) * h, h, 1, 1, 1}, rng);
  cv6_ = Cbs<T>(store, prefix + ".cv6", {h, h, 3, 1, 1}, rng);
  cv7_ = Cbs<T>(store, prefix + ".cv7", {2 * h, c2, 1, 1, 1}, rng);
}

template <typename T>
Tensor<T> Sppcspc<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> x1 = cv4_.forward(cv3_.forward(cv1_.forward(x, training), training), training);
  std::vector<Tensor<T>> pyramid{x1};
  for (Index k : config_.pool_kernels) pyramid.push_back(max_pool2d(x1, k, 1, k / 2));
  Tensor<T> y1 = cv6_.forward(cv5_.forward(concat(pyramid, 1), training), training);
  Tensor<T> y2 = cv2_.forward(x, training);
  return cv7_.forward(concat<T>({y1, y2}, 1), training);
}

Index CaConfig::intermediate() const {
  if (reduction < 1) throw ConfigError("coordinate attention: reduction must be positive");
  return std::max(min_intermediate, channels / reduction);
}

template <typename T>
CoordAttention<T>::CoordAttention(ParamStore<T>& store, const std::string& prefix,
                                  CaConfig config, Rng& rng)
    : config_(config) {
  if (config_.channels < 1) throw ConfigError("coordinate attention: channels must be positive");
  if (config_.min_intermediate < 1) config_.min_intermediate = 1;
  const Index mid = config_.intermediate();
  if (config_.channels / config_.reduction < config_.min_intermediate) {
    log_warning("coordinate attention: channels/reduction = " +
                std::to_string(config_.channels / config_.reduction) + " clamped to " +
                std::to_string(mid));
  }
  shared_ = Cbs<T>(store, prefix + ".shared", {config_.channels, mid, 1, 1, 1}, rng);
  to_h_ = Conv<T>(store, prefix + ".f_h", {mid, config_.channels, 1, 1, 1}, true, rng);
  to_w_ = Conv<T>(store, prefix + ".f_w", {mid, config_.channels, 1, 1, 1}, true, rng);
}

template <typename T>
CaOutput<T> CoordAttention<T>::forward(const Tensor<T>& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != config_.channels)
    throw ShapeError("coordinate attention: expected [N," + std::to_string(config_.channels) +
                     ",H,W], got " + shape_str(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  // Directional embeddings laid out along one length axis: [N,C,H+W,1].
  Tensor<T> along_h = pool_avg_h(x);                                  // [N,C,H,1]
  Tensor<T> along_w = reshape(pool_avg_w(x), {n, c, w, 1});            // [N,C,W,1]
  Tensor<T> f = shared_.forward(concat<T>({along_h, along_w}, 2), training);
  auto parts = split(f, {h, w}, 2);
  const Index mid = f.dim(1);
  Tensor<T> f_w = reshape(parts[1], {n, mid, 1, w});
  CaOutput<T> out;
  out.g_h = sigmoid(to_h_.forward(parts[0]));
  out.g_w = sigmoid(to_w_.forward(f_w));
  out.y = mul(mul(x, out.g_h), out.g_w);
  return out;
}

template <typename T>
AttentionMaps<T> attention_maps(const Tensor<T>& g_h, const Tensor<T>& g_w) {
  if (g_h.rank() != 4 || g_w.rank() != 4 || g_h.dim(3) != 1 || g_w.dim(2) != 1 ||
      g_h.dim(0) != g_w.dim(0) || g_h.dim(1) != g_w.dim(1)) {
    throw ShapeError("attention maps: expected g_h [N,C,H,1] and g_w [N,C,1,W]");
  }
  NoGradGuard no_grad;
  AttentionMaps<T> maps;
  maps.per_channel = mul(g_h, g_w);
  const Index n = g_h.dim(0), c = g_h.dim(1), hw = g_h.dim(2) * g_w.dim(3);
  std::vector<T> avg(static_cast<std::size_t>(n * hw));
  for (Index b = 0; b < n; ++b)
    for (Index p = 0; p < hw; ++p) {
      double acc = 0.0;
      for (Index ch = 0; ch < c; ++ch) acc += static_cast<double>(maps.per_channel[(b * c + ch) * hw + p]);
      avg[b * hw + p] = static_cast<T>(acc / static_cast<double>(c));
    }
  maps.channel_mean = Tensor<T>::from({n, 1, g_h.dim(2), g_w.dim(3)}, std::move(avg));
  return maps;
}

template <typename T>
AttentionMaps<T> attention_maps_export(const Tensor<T>& g_h, const Tensor<T>& g_w,
                                       const std::filesystem::path& dir) {
  AttentionMaps<T> maps = attention_maps(g_h, g_w);
  std::filesystem::create_directories(dir);
  save_tnsr(dir / "ca_maps.tnsr", maps.per_channel);
  save_tnsr(dir / "ca_mean.tnsr", maps.channel_mean);
  return maps;
}

#define DETECTLAB_INSTANTIATE(T)                                                   \
  template class Conv<T>;                                                          \
  template class Cbs<T>;                                                           \
  template class Rfb<T>;                                                           \
  template class Sppcspc<T>;                                                       \
  template class CoordAttention<T>;                                                \
  template AttentionMaps<T> attention_maps(const Tensor<T>&, const Tensor<T>&);    \
  template AttentionMaps<T> attention_maps_export(const Tensor<T>&, const Tensor<T>&, \
                                                  const std::filesystem::path&);

DETECTLAB_INSTANTIATE(float)
DETECTLAB_INSTANTIATE(double)
#undef DETECTLAB_INSTANTIATE

}  // namespace detectlab::nn
