#pragma once

// "Bottom-up" branch: convolutional stem, SCPM encoder stages, weight-shared
// spatial/channel skip attention, and the mirrored upsampling decoder.

#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "salm2/conv.hpp"
#include "salm2/mamba.hpp"
#include "salm2/ops.hpp"

namespace salm2 {

// Flatten [B, C, H, W] row-major into a sequence [B, H*W, C] and back.
template <typename T>
Tensor<T> to_sequence(const Tensor<T>& x) {
  return permute021(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}));
}

template <typename T>
Tensor<T> from_sequence(const Tensor<T>& seq, int64_t h, int64_t w) {
  return reshape(permute021(seq), {seq.dim(0), seq.dim(2), h, w});
}

// ---------------------------------------------------------------------------
// Stem stage: 3x3 stride-2 convolution, 4-group normalization, smooth gating.

template <typename T>
class ConvStemStage {
 public:
  ConvStemStage(int64_t in_ch, int64_t out_ch, Rng& rng, int64_t norm_groups = 4)
      : in_ch_(in_ch), out_ch_(out_ch), groups_(norm_groups) {
    if (out_ch % norm_groups != 0)
      throw ConfigError("stem stage: " + std::to_string(out_ch) + " channels not divisible by " +
                        std::to_string(norm_groups) + " norm groups");
    w_ = Tensor<T>::param({out_ch, in_ch, 3, 3},
                          fan_in_uniform<T>(rng, static_cast<size_t>(out_ch * in_ch * 9), in_ch * 9));
    b_ = Tensor<T>::param({out_ch}, std::vector<T>(static_cast<size_t>(out_ch), T(0)));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.dim(1) != in_ch_)
      throw ContractViolation("stem stage: expected " + std::to_string(in_ch_) + " channels, got " +
                              std::to_string(x.dim(1)));
    if (x.dim(2) % 2 || x.dim(3) % 2)
      throw ContractViolation("stem stage: spatial size " + shape_str(x.shape()) +
                              " not divisible by the stride-2 step");
    return silu(group_norm(conv2d(x, w_, &b_, 2, 1), groups_));
  }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".conv.weight", w_);
    out.emplace_back(prefix + ".conv.bias", b_);
  }

  int64_t out_channels() const { return out_ch_; }

 private:
  int64_t in_ch_, out_ch_, groups_;
  Tensor<T> w_, b_;
};

// ---------------------------------------------------------------------------
// One SCPM branch: a separable 3x3 embedding to the branch width, plus a
// Mamba pass over the row-major flattened feature, joined by a learnable
// skip scale:  phi(x) = embed(x) + alpha * mamba(embed(x)).
// kernel == 1 switches the embedding to a plain pointwise map (test seam);
// a null mamba means the identity (semantic ablations, unit tests).

template <typename T>
struct ScpmBranch {
  int64_t in_ch, out_ch, stride, kernel;
  Tensor<T> dw_w;  // [in, 1, k, k], depthwise; absent when kernel == 1
  Tensor<T> pw_w;  // [out, in, 1, 1]
  Tensor<T> pw_b;  // [out]
  Tensor<T> alpha;
  std::unique_ptr<MambaBlock<T>> mamba;

  ScpmBranch(int64_t in, int64_t out, int64_t stride_, int64_t kernel_, int64_t state,
             int64_t expand, int64_t conv_kernel, Rng& rng, bool with_mamba)
      : in_ch(in), out_ch(out), stride(stride_), kernel(kernel_) {
    if (kernel > 1)
      dw_w = Tensor<T>::param({in, 1, kernel, kernel},
                              fan_in_uniform<T>(rng, static_cast<size_t>(in * kernel * kernel),
                                                kernel * kernel));
    pw_w = Tensor<T>::param({out, in, 1, 1}, fan_in_uniform<T>(rng, static_cast<size_t>(out * in), in));
    pw_b = Tensor<T>::param({out}, std::vector<T>(static_cast<size_t>(out), T(0)));
    alpha = Tensor<T>::param({1}, {T(1)});
    if (with_mamba) mamba = std::make_unique<MambaBlock<T>>(out, state, expand, conv_kernel, rng);
  }

  Tensor<T> embed(const Tensor<T>& x) const {
    if (kernel > 1) {
      auto y = conv2d(x, dw_w, nullptr, stride, kernel / 2, in_ch);
      return conv2d(y, pw_w, &pw_b, 1, 0);
    }
    return conv2d(x, pw_w, &pw_b, stride, 0);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto e = embed(x);
    if (!mamba) return gated_residual(e, e, alpha);
    auto m = from_sequence(mamba->forward(to_sequence(e)), e.dim(2), e.dim(3));
    return gated_residual(e, m, alpha);
  }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const {
    if (kernel > 1) out.emplace_back(prefix + ".embed.dw.weight", dw_w);
    out.emplace_back(prefix + ".embed.pw.weight", pw_w);
    out.emplace_back(prefix + ".embed.pw.bias", pw_b);
    out.emplace_back(prefix + ".alpha", alpha);
    if (mamba) mamba->collect_params(out, prefix + ".mamba");
  }
};

// ---------------------------------------------------------------------------
// SCPM layer: parallel branches over the full input, concatenated along the
// channel axis. Branch widths may differ; their sum is the output width.

template <typename T>
class ScpmLayer {
 public:
  ScpmLayer(int64_t in_ch, const std::vector<int64_t>& branch_out, bool downsample, int64_t state,
            int64_t expand, int64_t conv_kernel, Rng& rng, bool with_mamba = true,
            int64_t embed_kernel = 3)
      : in_ch_(in_ch) {
    if (branch_out.empty()) throw ConfigError("scpm layer: needs at least one branch");
    for (int64_t w : branch_out)
      if (w < 1) throw ConfigError("scpm layer: branch width must be >= 1");
    const int64_t stride = downsample ? 2 : 1;
    for (size_t i = 0; i < branch_out.size(); ++i)
      branches_.push_back(std::make_unique<ScpmBranch<T>>(in_ch, branch_out[i], stride, embed_kernel,
                                                          state, expand, conv_kernel, rng, with_mamba));
    out_ch_ = std::accumulate(branch_out.begin(), branch_out.end(), int64_t(0));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.dim(1) != in_ch_)
      throw ContractViolation("scpm layer: expected " + std::to_string(in_ch_) + " channels, got " +
                              std::to_string(x.dim(1)));
    std::vector<Tensor<T>> outs;
    outs.reserve(branches_.size());
    for (const auto& br : branches_) outs.push_back(br->forward(x));
    return concat_channels(outs);
  }

  int64_t out_channels() const { return out_ch_; }
  std::vector<std::unique_ptr<ScpmBranch<T>>>& branches() { return branches_; }
  const std::vector<std::unique_ptr<ScpmBranch<T>>>& branches() const { return branches_; }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const {
    for (size_t i = 0; i < branches_.size(); ++i)
      branches_[i]->collect_params(out, prefix + ".branch" + std::to_string(i));
  }

 private:
  int64_t in_ch_, out_ch_;
  std::vector<std::unique_ptr<ScpmBranch<T>>> branches_;
};

// ---------------------------------------------------------------------------
// Skip attention, channel-count independent so one instance serves every
// level. Spatial gate: sigmoid of a 7x7 convolution over the per-pixel
// [channel-mean, channel-max] pair. Channel gate: sigmoid of a length-3
// convolution over the global-average channel descriptor.

template <typename T>
class SkipAttention {
 public:
  explicit SkipAttention(Rng& rng) {
    spatial_w_ = Tensor<T>::param({1, 2, 7, 7}, fan_in_uniform<T>(rng, 2 * 49, 2 * 49));
    spatial_b_ = Tensor<T>::param({1}, {T(0)});
    channel_w_ = Tensor<T>::param({3}, fan_in_uniform<T>(rng, 3, 3));
    channel_b_ = Tensor<T>::param({1}, {T(0)});
  }

  Tensor<T> forward(const Tensor<T>& enc) const {
    check_finite(enc, "skip attention input");
    auto sg = sigmoid(conv2d(channel_mean_max(enc), spatial_w_, &spatial_b_, 1, 3));
    auto cg = sigmoid(conv1d_descriptor(global_avg_pool(enc), channel_w_, channel_b_));
    return mul_channel_gate(mul_spatial_gate(enc, sg), cg);
  }

  Tensor<T> spatial_gate(const Tensor<T>& enc) const {
    return sigmoid(conv2d(channel_mean_max(enc), spatial_w_, &spatial_b_, 1, 3));
  }
  Tensor<T> channel_gate(const Tensor<T>& enc) const {
    return sigmoid(conv1d_descriptor(global_avg_pool(enc), channel_w_, channel_b_));
  }

  Tensor<T>& spatial_weight() { return spatial_w_; }
  Tensor<T>& channel_weight() { return channel_w_; }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".spatial.weight", spatial_w_);
    out.emplace_back(prefix + ".spatial.bias", spatial_b_);
    out.emplace_back(prefix + ".channel.weight", channel_w_);
    out.emplace_back(prefix + ".channel.bias", channel_b_);
  }

 private:
  Tensor<T> spatial_w_, spatial_b_, channel_w_, channel_b_;
};

// ---------------------------------------------------------------------------
// Decoder: mirrors the encoder ladder. Each step doubles the spatial size,
// reduces channels to the next skip width with a 3x3 convolution, and adds
// the attention-gated skip. A final upsample and 1x1 convolution produce the
// one-channel logit map at input resolution.

template <typename T>
class Decoder {
 public:
  Decoder(int64_t deepest_ch, std::vector<int64_t> skip_channels,
          std::shared_ptr<SkipAttention<T>> skip_att, Rng& rng)
      : skip_channels_(std::move(skip_channels)), skip_att_(std::move(skip_att)) {
    if (!skip_att_) throw ConfigError("decoder: missing skip attention");
    int64_t cur = deepest_ch;
    for (size_t k = skip_channels_.size(); k-- > 0;) {
      const int64_t next = skip_channels_[k];
      conv_w_.push_back(Tensor<T>::param(
          {next, cur, 3, 3}, fan_in_uniform<T>(rng, static_cast<size_t>(next * cur * 9), cur * 9)));
      conv_b_.push_back(Tensor<T>::param({next}, std::vector<T>(static_cast<size_t>(next), T(0))));
      cur = next;
    }
    final_w_ = Tensor<T>::param({1, cur, 1, 1}, fan_in_uniform<T>(rng, static_cast<size_t>(cur), cur));
    final_b_ = Tensor<T>::param({1}, {T(0)});
  }

  // skips ordered shallow -> deep; consumed deepest-first.
  Tensor<T> forward(const Tensor<T>& deepest, const std::vector<Tensor<T>>& skips) const {
    if (skips.size() != skip_channels_.size())
      throw ContractViolation("decoder: expected " + std::to_string(skip_channels_.size()) +
                              " skips, got " + std::to_string(skips.size()));
    Tensor<T> x = deepest;
    for (size_t step = 0; step < conv_w_.size(); ++step) {
      const size_t k = skip_channels_.size() - 1 - step;
      x = upsample_bilinear_2x(x);
      x = silu(conv2d(x, conv_w_[step], &conv_b_[step], 1, 1));
      const auto& skip = skips[k];
      if (skip.dim(1) != skip_channels_[k] || skip.dim(2) != x.dim(2) || skip.dim(3) != x.dim(3))
        throw ContractViolation("decoder: skip " + std::to_string(k) + " shape " +
                                shape_str(skip.shape()) + " does not mirror decoder state " +
                                shape_str(x.shape()));
      x = add(x, skip_att_->forward(skip));
    }
    x = upsample_bilinear_2x(x);
    return conv2d(x, final_w_, &final_b_, 1, 0);
  }

  std::shared_ptr<SkipAttention<T>> skip_attention() const { return skip_att_; }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const {
    for (size_t i = 0; i < conv_w_.size(); ++i) {
      out.emplace_back(prefix + ".up" + std::to_string(i) + ".weight", conv_w_[i]);
      out.emplace_back(prefix + ".up" + std::to_string(i) + ".bias", conv_b_[i]);
    }
    out.emplace_back(prefix + ".head.weight", final_w_);
    out.emplace_back(prefix + ".head.bias", final_b_);
  }

 private:
  std::vector<int64_t> skip_channels_;
  std::shared_ptr<SkipAttention<T>> skip_att_;
  std::vector<Tensor<T>> conv_w_, conv_b_;
  Tensor<T> final_w_, final_b_;
};

}  // namespace salm2
