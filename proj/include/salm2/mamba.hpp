#pragma once

// Mamba-style sequence block: pointwise expansion, short causal depthwise
// smoothing, smooth gating, selective scan with input-dependent gates, gated
// pointwise contraction back to the model width. Stateless across calls.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "salm2/ops.hpp"
#include "salm2/conv.hpp"
#include "salm2/rng.hpp"
#include "salm2/scan.hpp"

namespace salm2 {

template <typename T>
class MambaBlock {
 public:
  MambaBlock(int64_t width, int64_t state_size, int64_t expand, int64_t conv_kernel, Rng& rng)
      : width_(width),
        state_(state_size),
        inner_(width * expand),
        kernel_(conv_kernel),
        dt_rank_(std::max<int64_t>(1, (width + 15) / 16)) {
    if (width < 1 || state_size < 1 || expand < 1 || conv_kernel < 1)
      throw ConfigError("mamba block: all sizes must be >= 1");
    in_proj_w_ = Tensor<T>::param({2 * inner_, width_},
                                  fan_in_uniform<T>(rng, static_cast<size_t>(2 * inner_ * width_), width_));
    dw_w_ = Tensor<T>::param({inner_, kernel_},
                             fan_in_uniform<T>(rng, static_cast<size_t>(inner_ * kernel_), kernel_));
    dw_b_ = Tensor<T>::param({inner_}, std::vector<T>(static_cast<size_t>(inner_), T(0)));
    x_proj_w_ = Tensor<T>::param(
        {dt_rank_ + 2 * state_, inner_},
        fan_in_uniform<T>(rng, static_cast<size_t>((dt_rank_ + 2 * state_) * inner_), inner_));
    dt_proj_w_ = Tensor<T>::param({inner_, dt_rank_},
                                  fan_in_uniform<T>(rng, static_cast<size_t>(inner_ * dt_rank_), dt_rank_));
    // Bias so that softplus(bias) lands log-uniformly in [1e-3, 1e-1].
    {
      std::vector<T> b(static_cast<size_t>(inner_));
      for (auto& v : b) {
        double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        v = static_cast<T>(std::log(std::expm1(dt)));
      }
      dt_proj_b_ = Tensor<T>::param({inner_}, std::move(b));
    }
    // softplus(a_log[d][s]) == s+1 at init, so decay rates span 1..S.
    {
      std::vector<T> a(static_cast<size_t>(inner_ * state_));
      for (int64_t d = 0; d < inner_; ++d)
        for (int64_t s = 0; s < state_; ++s)
          a[d * state_ + s] = static_cast<T>(std::log(std::expm1(static_cast<double>(s + 1))));
      a_log_ = Tensor<T>::param({inner_, state_}, std::move(a));
    }
    d_skip_ = Tensor<T>::param({inner_}, std::vector<T>(static_cast<size_t>(inner_), T(1)));
    out_proj_w_ = Tensor<T>::param({width_, inner_},
                                   fan_in_uniform<T>(rng, static_cast<size_t>(width_ * inner_), inner_));
  }

  // x: [B, L, D] -> [B, L, D]
  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.ndim() != 3 || x.dim(2) != width_)
      throw ContractViolation("mamba block: input width " +
                              (x.ndim() == 3 ? std::to_string(x.dim(2)) : shape_str(x.shape())) +
                              " != configured width " + std::to_string(width_));
    auto xz = linear(x, in_proj_w_);
    auto parts = split_last(xz, {inner_, inner_});
    auto u = silu(dwconv1d_causal(parts[0], dw_w_, dw_b_));
    auto proj = split_last(linear(u, x_proj_w_), {dt_rank_, state_, state_});
    auto delta = softplus(linear(proj[0], dt_proj_w_, &dt_proj_b_));
    auto a = neg_softplus(a_log_);
    auto y = selective_scan(delta, a, proj[1], proj[2], u, d_skip_);
    return linear(mul(y, silu(parts[1])), out_proj_w_);
  }

  int64_t width() const { return width_; }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".in_proj.weight", in_proj_w_);
    out.emplace_back(prefix + ".conv.weight", dw_w_);
    out.emplace_back(prefix + ".conv.bias", dw_b_);
    out.emplace_back(prefix + ".x_proj.weight", x_proj_w_);
    out.emplace_back(prefix + ".dt_proj.weight", dt_proj_w_);
    out.emplace_back(prefix + ".dt_proj.bias", dt_proj_b_);
    out.emplace_back(prefix + ".a_log", a_log_);
    out.emplace_back(prefix + ".d_skip", d_skip_);
    out.emplace_back(prefix + ".out_proj.weight", out_proj_w_);
  }

 private:
  int64_t width_, state_, inner_, kernel_, dt_rank_;
  Tensor<T> in_proj_w_, dw_w_, dw_b_, x_proj_w_, dt_proj_w_, dt_proj_b_, a_log_, d_skip_, out_proj_w_;
};

}  // namespace salm2
