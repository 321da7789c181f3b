#pragma once

// Differentiable convolution / pooling / normalization kernels.

#include <cmath>
#include <type_traits>
#include <vector>

#include "salm2/tensor.hpp"

namespace salm2 {

namespace detail {

inline int64_t ceil_div_nonneg(int64_t a, int64_t b) { return a <= 0 ? 0 : (a + b - 1) / b; }

}  // namespace detail

namespace detail {

// Geometry shared by the forward and backward passes.
struct ConvDims {
  int64_t B, Cin, H, W, Cout, Cpg, KH, KW, Ho, Wo, stride, pad, groups, copg;
};

// One output row for a 3x3 / stride 1 / pad 1 kernel. Interior unrolled over
// the kernel column; the two edge columns handled separately.
template <typename T>
inline void k3s1_row(const T* __restrict__ xrow, int64_t W, const T* wk, T* __restrict__ r,
                     int64_t kh_lo, int64_t kh_hi, int64_t row_stride) {
  for (int64_t kh = kh_lo; kh <= kh_hi; ++kh) {
    const T* x0 = xrow + kh * row_stride;
    const T w0 = wk[kh * 3], w1 = wk[kh * 3 + 1], w2 = wk[kh * 3 + 2];
    r[0] += w1 * x0[0] + w2 * x0[1];
    for (int64_t ox = 1; ox < W - 1; ++ox) r[ox] += w0 * x0[ox - 1] + w1 * x0[ox] + w2 * x0[ox + 1];
    r[W - 1] += w0 * x0[W - 2] + w1 * x0[W - 1];
  }
}

// Accumulates one output row at a time so the working set stays in L1.
template <typename T>
void conv2d_forward(const ConvDims& d, const T* x, const T* w, const T* bias, T* out) {
  const bool k3s1 = d.KH == 3 && d.KW == 3 && d.stride == 1 && d.pad == 1 && d.W >= 2;
  const bool k1 = d.KH == 1 && d.KW == 1 && d.pad == 0;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < d.B; ++b)
    for (int64_t co = 0; co < d.Cout; ++co) {
      const int64_t g = co / d.copg;
      T* oplane = out + (b * d.Cout + co) * d.Ho * d.Wo;
      const T bval = bias ? bias[co] : T(0);
      std::vector<T> row(static_cast<size_t>(d.Wo));
      for (int64_t oy = 0; oy < d.Ho; ++oy) {
        std::fill(row.begin(), row.end(), bval);
        T* __restrict__ r = row.data();
        for (int64_t cil = 0; cil < d.Cpg; ++cil) {
          const int64_t ci = g * d.Cpg + cil;
          const T* xplane = x + (b * d.Cin + ci) * d.H * d.W;
          if (k1) {
            const T wval = w[co * d.Cpg + cil];
            const T* xrow = xplane + oy * d.stride * d.W;
            if (d.stride == 1) {
              for (int64_t ox = 0; ox < d.Wo; ++ox) r[ox] += wval * xrow[ox];
            } else {
              for (int64_t ox = 0; ox < d.Wo; ++ox) r[ox] += wval * xrow[ox * d.stride];
            }
            continue;
          }
          const T* wk = w + (co * d.Cpg + cil) * d.KH * d.KW;
          if (k3s1) {
            const int64_t kh_lo = oy == 0 ? 1 : 0;
            const int64_t kh_hi = oy == d.H - 1 ? 1 : 2;
            k3s1_row(xplane + (oy - 1) * d.W, d.W, wk, r, kh_lo, kh_hi, d.W);
            continue;
          }
          for (int64_t kh = 0; kh < d.KH; ++kh) {
            const int64_t iy = oy * d.stride + kh - d.pad;
            if (iy < 0 || iy >= d.H) continue;
            const T* xrow = xplane + iy * d.W;
            for (int64_t kw = 0; kw < d.KW; ++kw) {
              const T wval = wk[kh * d.KW + kw];
              const int64_t ox_lo = ceil_div_nonneg(d.pad - kw, d.stride);
              const int64_t ox_hi = std::min(d.Wo - 1, (d.W - 1 - kw + d.pad) / d.stride);
              const T* xoff = xrow + (kw - d.pad);
              if (d.stride == 1) {
                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) r[ox] += wval * xoff[ox];
              } else {
                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) r[ox] += wval * xoff[ox * d.stride];
              }
            }
          }
        }
        std::copy(row.begin(), row.end(), oplane + oy * d.Wo);
      }
    }
}

// dx: one input row at a time, gathering from the output gradient. For the
// 3x3/stride-1 case this is the same row kernel with a flipped filter.
template <typename T>
void conv2d_backward_input(const ConvDims& d, const T* g, const T* w, T* gx) {
  const bool k3s1 = d.KH == 3 && d.KW == 3 && d.stride == 1 && d.pad == 1 && d.W >= 2;
  const bool k1 = d.KH == 1 && d.KW == 1 && d.pad == 0;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < d.B; ++b)
    for (int64_t ci = 0; ci < d.Cin; ++ci) {
      const int64_t gi = ci / d.Cpg;
      const int64_t cil = ci % d.Cpg;
      T* gxplane = gx + (b * d.Cin + ci) * d.H * d.W;
      std::vector<T> row(static_cast<size_t>(d.W));
      for (int64_t iy = 0; iy < d.H; ++iy) {
        std::fill(row.begin(), row.end(), T(0));
        T* __restrict__ r = row.data();
        for (int64_t col = 0; col < d.copg; ++col) {
          const int64_t co = gi * d.copg + col;
          const T* gplane = g + (b * d.Cout + co) * d.Ho * d.Wo;
          const T* wk = w + (co * d.Cpg + cil) * d.KH * d.KW;
          if (k1) {
            const T wval = wk[0];
            if (d.stride == 1) {
              const T* grow = gplane + iy * d.Wo;
              for (int64_t ox = 0; ox < d.Wo; ++ox) r[ox] += wval * grow[ox];
            } else if (iy % d.stride == 0 && iy / d.stride < d.Ho) {
              const T* grow = gplane + (iy / d.stride) * d.Wo;
              for (int64_t ox = 0; ox < d.Wo; ++ox) r[ox * d.stride] += wval * grow[ox];
            }
            continue;
          }
          if (k3s1) {
            const T flipped[9] = {wk[8], wk[7], wk[6], wk[5], wk[4], wk[3], wk[2], wk[1], wk[0]};
            const int64_t kh_lo = iy == 0 ? 1 : 0;
            const int64_t kh_hi = iy == d.H - 1 ? 1 : 2;
            k3s1_row(gplane + (iy - 1) * d.Wo, d.W, flipped, r, kh_lo, kh_hi, d.Wo);
            continue;
          }
          for (int64_t kh = 0; kh < d.KH; ++kh) {
            // oy * stride = iy + pad - kh
            const int64_t num = iy + d.pad - kh;
            if (num < 0 || num % d.stride) continue;
            const int64_t oy = num / d.stride;
            if (oy >= d.Ho) continue;
            const T* grow = gplane + oy * d.Wo;
            for (int64_t kw = 0; kw < d.KW; ++kw) {
              const T wval = wk[kh * d.KW + kw];
              // ix = ox * stride + kw - pad
              if (d.stride == 1) {
                const int64_t off = kw - d.pad;
                const int64_t ox_lo = std::max<int64_t>(0, -off);
                const int64_t ox_hi = std::min(d.Wo - 1, d.W - 1 - off);
                T* rr = r + off;
                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) rr[ox] += wval * grow[ox];
              } else {
                const int64_t ox_lo = ceil_div_nonneg(d.pad - kw, d.stride);
                const int64_t ox_hi = std::min(d.Wo - 1, (d.W - 1 - kw + d.pad) / d.stride);
                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                  r[ox * d.stride + kw - d.pad] += wval * grow[ox];
              }
            }
          }
        }
        T* gxrow = gxplane + iy * d.W;
        for (int64_t i = 0; i < d.W; ++i) gxrow[i] += row[i];
      }
    }
}

template <typename T>
void conv2d_backward_weight(const ConvDims& d, const T* g, const T* x, T* gw) {
  const bool k3s1 = d.KH == 3 && d.KW == 3 && d.stride == 1 && d.pad == 1 && d.W >= 2;
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < d.Cout; ++co) {
    const int64_t gi = co / d.copg;
    for (int64_t b = 0; b < d.B; ++b) {
      const T* gplane = g + (b * d.Cout + co) * d.Ho * d.Wo;
      for (int64_t cil = 0; cil < d.Cpg; ++cil) {
        const int64_t ci = gi * d.Cpg + cil;
        const T* xplane = x + (b * d.Cin + ci) * d.H * d.W;
        T* wk = gw + (co * d.Cpg + cil) * d.KH * d.KW;
        if (k3s1) {
          // single pass over rows, nine accumulators
          T acc[9] = {};
          for (int64_t oy = 0; oy < d.Ho; ++oy) {
            const T* __restrict__ grow = gplane + oy * d.Wo;
            const int64_t kh_lo = oy == 0 ? 1 : 0;
            const int64_t kh_hi = oy == d.H - 1 ? 1 : 2;
            for (int64_t kh = kh_lo; kh <= kh_hi; ++kh) {
              const T* __restrict__ xrow = xplane + (oy - 1 + kh) * d.W;
              T a0 = 0, a1 = 0, a2 = 0;
              for (int64_t ox = 1; ox < d.W; ++ox) a0 += grow[ox] * xrow[ox - 1];
              for (int64_t ox = 0; ox < d.W; ++ox) a1 += grow[ox] * xrow[ox];
              for (int64_t ox = 0; ox < d.W - 1; ++ox) a2 += grow[ox] * xrow[ox + 1];
              acc[kh * 3] += a0;
              acc[kh * 3 + 1] += a1;
              acc[kh * 3 + 2] += a2;
            }
          }
          for (int i = 0; i < 9; ++i) wk[i] += acc[i];
          continue;
        }
        for (int64_t kh = 0; kh < d.KH; ++kh)
          for (int64_t kw = 0; kw < d.KW; ++kw) {
            const int64_t oy_lo = ceil_div_nonneg(d.pad - kh, d.stride);
            const int64_t oy_hi = std::min(d.Ho - 1, (d.H - 1 - kh + d.pad) / d.stride);
            const int64_t ox_lo = ceil_div_nonneg(d.pad - kw, d.stride);
            const int64_t ox_hi = std::min(d.Wo - 1, (d.W - 1 - kw + d.pad) / d.stride);
            T acc = 0;
            for (int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
              const int64_t iy = oy * d.stride + kh - d.pad;
              const T* grow = gplane + oy * d.Wo;
              const T* xrow = xplane + iy * d.W + (kw - d.pad);
              if (d.stride == 1) {
                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) acc += grow[ox] * xrow[ox];
              } else {
                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) acc += grow[ox] * xrow[ox * d.stride];
              }
            }
            wk[kh * d.KW + kw] += acc;
          }
      }
    }
  }
}

}  // namespace detail

// 2-d convolution. x: [B, Cin, H, W]; w: [Cout, Cin/groups, K, K]; bias: [Cout] or null.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<std::type_identity_t<T>>* bias,
                 int64_t stride, int64_t pad, int64_t groups = 1) {
  if (x.ndim() != 4 || w.ndim() != 4) throw ContractViolation("conv2d expects 4-d input and weight");
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), Cpg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  if (Cin % groups != 0 || Cout % groups != 0 || Cpg != Cin / groups)
    throw ContractViolation("conv2d: channels " + std::to_string(Cin) + "->" + std::to_string(Cout) +
                            " incompatible with groups=" + std::to_string(groups));
  if (bias && bias->numel() != Cout) throw ContractViolation("conv2d: bias size mismatch");
  const int64_t Ho = (H + 2 * pad - KH) / stride + 1;
  const int64_t Wo = (W + 2 * pad - KW) / stride + 1;
  if (Ho < 1 || Wo < 1) throw ContractViolation("conv2d: output would be empty");
  const detail::ConvDims dims{B, Cin, H, W, Cout, Cpg, KH, KW, Ho, Wo, stride, pad, groups,
                              Cout / groups};

  std::vector<T> out(static_cast<size_t>(B * Cout * Ho * Wo));
  detail::conv2d_forward(dims, x.values().data(), w.values().data(),
                         bias ? bias->values().data() : nullptr, out.data());

  auto px = x.node(), pw = w.node();
  std::shared_ptr<Node<T>> pb = bias ? bias->node() : nullptr;
  std::vector<std::shared_ptr<Node<T>>> parents{px, pw};
  if (pb) parents.push_back(pb);
  return make_op_result<T>(
      {B, Cout, Ho, Wo}, std::move(out), std::move(parents), [px, pw, pb, dims](Node<T>& self) {
        const T* g = self.grad.data();
        if (px->requires_grad)
          detail::conv2d_backward_input(dims, g, pw->value.data(), px->ensure_grad().data());
        if (pw->requires_grad)
          detail::conv2d_backward_weight(dims, g, px->value.data(), pw->ensure_grad().data());
        if (pb && pb->requires_grad) {
          auto& gb = pb->ensure_grad();
          for (int64_t b = 0; b < dims.B; ++b)
            for (int64_t co = 0; co < dims.Cout; ++co) {
              const T* gplane = g + (b * dims.Cout + co) * dims.Ho * dims.Wo;
              T acc = 0;
              for (int64_t i = 0; i < dims.Ho * dims.Wo; ++i) acc += gplane[i];
              gb[co] += acc;
            }
        }
      });
}

// Causal depthwise 1-d convolution along the sequence axis.
// x: [B, L, C]; w: [C, K]; bias: [C]. out[t] uses x[t-K+1 .. t], zero-padded past.
template <typename T>
Tensor<T> dwconv1d_causal(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.ndim() != 3 || w.ndim() != 2) throw ContractViolation("dwconv1d_causal: bad ranks");
  const int64_t B = x.dim(0), L = x.dim(1), C = x.dim(2), K = w.dim(1);
  if (w.dim(0) != C || bias.numel() != C) throw ContractViolation("dwconv1d_causal: width mismatch");
  const auto& xv = x.values();
  const auto& wv = w.values();
  std::vector<T> out(xv.size());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < L; ++t)
      for (int64_t c = 0; c < C; ++c) {
        T acc = bias.values()[c];
        const int64_t kmax = std::min<int64_t>(K, t + 1);
        for (int64_t k = 0; k < kmax; ++k) acc += wv[c * K + k] * xv[(b * L + t - k) * C + c];
        out[(b * L + t) * C + c] = acc;
      }
  auto px = x.node(), pw = w.node(), pb = bias.node();
  return make_op_result<T>(x.shape(), std::move(out), {px, pw, pb},
                           [px, pw, pb, B, L, C, K](Node<T>& self) {
                             for (int64_t b = 0; b < B; ++b)
                               for (int64_t t = 0; t < L; ++t)
                                 for (int64_t c = 0; c < C; ++c) {
                                   const T g = self.grad[(b * L + t) * C + c];
                                   const int64_t kmax = std::min<int64_t>(K, t + 1);
                                   if (px->requires_grad) {
                                     auto& gx = px->ensure_grad();
                                     for (int64_t k = 0; k < kmax; ++k)
                                       gx[(b * L + t - k) * C + c] += g * pw->value[c * K + k];
                                   }
                                   if (pw->requires_grad) {
                                     auto& gw = pw->ensure_grad();
                                     for (int64_t k = 0; k < kmax; ++k)
                                       gw[c * K + k] += g * px->value[(b * L + t - k) * C + c];
                                   }
                                   if (pb->requires_grad) pb->ensure_grad()[c] += g;
                                 }
                           });
}

// 1-d convolution over the channel descriptor (ECA style): desc [B, C], w [K] (K odd), bias [1].
template <typename T>
Tensor<T> conv1d_descriptor(const Tensor<T>& desc, const Tensor<T>& w, const Tensor<T>& bias) {
  if (desc.ndim() != 2 || w.ndim() != 1 || w.dim(0) % 2 == 0)
    throw ContractViolation("conv1d_descriptor: bad shapes");
  const int64_t B = desc.dim(0), C = desc.dim(1), K = w.dim(0), R = K / 2;
  const auto& dv = desc.values();
  const auto& wv = w.values();
  std::vector<T> out(dv.size());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      T acc = bias.values()[0];
      for (int64_t k = -R; k <= R; ++k) {
        const int64_t j = c + k;
        if (j >= 0 && j < C) acc += wv[k + R] * dv[b * C + j];
      }
      out[b * C + c] = acc;
    }
  auto pd = desc.node(), pw = w.node(), pb = bias.node();
  return make_op_result<T>(desc.shape(), std::move(out), {pd, pw, pb},
                           [pd, pw, pb, B, C, K, R](Node<T>& self) {
                             for (int64_t b = 0; b < B; ++b)
                               for (int64_t c = 0; c < C; ++c) {
                                 const T g = self.grad[b * C + c];
                                 for (int64_t k = -R; k <= R; ++k) {
                                   const int64_t j = c + k;
                                   if (j < 0 || j >= C) continue;
                                   if (pd->requires_grad) pd->ensure_grad()[b * C + j] += g * pw->value[k + R];
                                   if (pw->requires_grad) pw->ensure_grad()[k + R] += g * pd->value[b * C + j];
                                 }
                                 if (pb->requires_grad) pb->ensure_grad()[0] += g;
                               }
                           });
}

// Non-affine group normalization over [B, C, H, W].
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int64_t groups, T eps = T(1e-5)) {
  if (x.ndim() != 4) throw ContractViolation("group_norm expects a 4-d tensor");
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (C % groups != 0)
    throw ConfigError("group_norm: channels " + std::to_string(C) + " not divisible by " +
                      std::to_string(groups) + " groups");
  const int64_t cpg = C / groups, n = cpg * HW;
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  auto stats = std::make_shared<std::vector<T>>(static_cast<size_t>(B * groups * 2));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t g = 0; g < groups; ++g) {
      const T* base = xv.data() + (b * C + g * cpg) * HW;
      T mean = 0;
      for (int64_t i = 0; i < n; ++i) mean += base[i];
      mean /= static_cast<T>(n);
      T var = 0;
      for (int64_t i = 0; i < n; ++i) {
        T d = base[i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(n);
      const T inv = T(1) / std::sqrt(var + eps);
      (*stats)[(b * groups + g) * 2] = mean;
      (*stats)[(b * groups + g) * 2 + 1] = inv;
      T* obase = out.data() + (b * C + g * cpg) * HW;
      for (int64_t i = 0; i < n; ++i) obase[i] = (base[i] - mean) * inv;
    }
  auto px = x.node();
  return make_op_result<T>(x.shape(), std::move(out), {px},
                           [px, stats, B, C, HW, groups, cpg, n](Node<T>& self) {
                             if (!px->requires_grad) return;
                             auto& gx = px->ensure_grad();
                             for (int64_t b = 0; b < B; ++b)
                               for (int64_t g = 0; g < groups; ++g) {
                                 const T mean = (*stats)[(b * groups + g) * 2];
                                 const T inv = (*stats)[(b * groups + g) * 2 + 1];
                                 const T* xbase = px->value.data() + (b * C + g * cpg) * HW;
                                 const T* gbase = self.grad.data() + (b * C + g * cpg) * HW;
                                 T gsum = 0, gxhat = 0;
                                 for (int64_t i = 0; i < n; ++i) {
                                   gsum += gbase[i];
                                   gxhat += gbase[i] * (xbase[i] - mean) * inv;
                                 }
                                 const T gmean = gsum / static_cast<T>(n);
                                 const T xmean = gxhat / static_cast<T>(n);
                                 T* gxbase = gx.data() + (b * C + g * cpg) * HW;
                                 for (int64_t i = 0; i < n; ++i) {
                                   const T xhat = (xbase[i] - mean) * inv;
                                   gxbase[i] += inv * (gbase[i] - gmean - xhat * xmean);
                                 }
                               }
                           });
}

// 2x2 average pooling with stride 2. Spatial dims must be even.
template <typename T>
Tensor<T> avg_pool_2x2(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ContractViolation("avg_pool_2x2 expects a 4-d tensor");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw ContractViolation("avg_pool_2x2: odd spatial size " + shape_str(x.shape()));
  const int64_t Ho = H / 2, Wo = W / 2;
  const auto& xv = x.values();
  std::vector<T> out(static_cast<size_t>(B * C * Ho * Wo));
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xp = xv.data() + bc * H * W;
    T* op = out.data() + bc * Ho * Wo;
    for (int64_t y = 0; y < Ho; ++y)
      for (int64_t x2 = 0; x2 < Wo; ++x2)
        op[y * Wo + x2] = (xp[(2 * y) * W + 2 * x2] + xp[(2 * y) * W + 2 * x2 + 1] +
                           xp[(2 * y + 1) * W + 2 * x2] + xp[(2 * y + 1) * W + 2 * x2 + 1]) /
                          T(4);
  }
  auto px = x.node();
  return make_op_result<T>({B, C, Ho, Wo}, std::move(out), {px}, [px, B, C, H, W, Ho, Wo](Node<T>& self) {
    if (!px->requires_grad) return;
    auto& gx = px->ensure_grad();
    for (int64_t bc = 0; bc < B * C; ++bc) {
      T* gp = gx.data() + bc * H * W;
      const T* og = self.grad.data() + bc * Ho * Wo;
      for (int64_t y = 0; y < Ho; ++y)
        for (int64_t x2 = 0; x2 < Wo; ++x2) {
          const T g = og[y * Wo + x2] / T(4);
          gp[(2 * y) * W + 2 * x2] += g;
          gp[(2 * y) * W + 2 * x2 + 1] += g;
          gp[(2 * y + 1) * W + 2 * x2] += g;
          gp[(2 * y + 1) * W + 2 * x2 + 1] += g;
        }
    }
  });
}

// Bilinear 2x upsampling, half-pixel centers, clamped borders.
template <typename T>
Tensor<T> upsample_bilinear_2x(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ContractViolation("upsample_bilinear_2x expects a 4-d tensor");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = H * 2, Wo = W * 2;

  // Per output index: source pair (i0, i1) and weight of i1.
  auto make_axis = [](int64_t n_in, int64_t n_out) {
    std::vector<int64_t> i0(n_out), i1(n_out);
    std::vector<T> w1(n_out);
    for (int64_t o = 0; o < n_out; ++o) {
      double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
      double f = std::floor(src);
      int64_t a = static_cast<int64_t>(f);
      double frac = src - f;
      i0[o] = std::clamp<int64_t>(a, 0, n_in - 1);
      i1[o] = std::clamp<int64_t>(a + 1, 0, n_in - 1);
      w1[o] = static_cast<T>(frac);
    }
    return std::tuple(i0, i1, w1);
  };
  auto [y0, y1, wy] = make_axis(H, Ho);
  auto [x0, x1, wx] = make_axis(W, Wo);

  const auto& xv = x.values();
  std::vector<T> out(static_cast<size_t>(B * C * Ho * Wo));
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xp = xv.data() + bc * H * W;
    T* op = out.data() + bc * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      const T* r0 = xp + y0[oy] * W;
      const T* r1 = xp + y1[oy] * W;
      const T fy = wy[oy];
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const T fx = wx[ox];
        const T top = r0[x0[ox]] * (T(1) - fx) + r0[x1[ox]] * fx;
        const T bot = r1[x0[ox]] * (T(1) - fx) + r1[x1[ox]] * fx;
        op[oy * Wo + ox] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  auto px = x.node();
  return make_op_result<T>(
      {B, C, Ho, Wo}, std::move(out), {px},
      [px, B, C, H, W, Ho, Wo, y0 = y0, y1 = y1, wy = wy, x0 = x0, x1 = x1, wx = wx](Node<T>& self) {
        if (!px->requires_grad) return;
        auto& gx = px->ensure_grad();
        for (int64_t bc = 0; bc < B * C; ++bc) {
          T* gp = gx.data() + bc * H * W;
          const T* og = self.grad.data() + bc * Ho * Wo;
          for (int64_t oy = 0; oy < Ho; ++oy) {
            const T fy = wy[oy];
            for (int64_t ox = 0; ox < Wo; ++ox) {
              const T fx = wx[ox];
              const T g = og[oy * Wo + ox];
              gp[y0[oy] * W + x0[ox]] += g * (T(1) - fy) * (T(1) - fx);
              gp[y0[oy] * W + x1[ox]] += g * (T(1) - fy) * fx;
              gp[y1[oy] * W + x0[ox]] += g * fy * (T(1) - fx);
              gp[y1[oy] * W + x1[ox]] += g * fy * fx;
            }
          }
        }
      });
}

}  // namespace salm2
