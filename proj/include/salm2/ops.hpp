#pragma once

// Differentiable primitive operations on Tensor<T>.

#include <cmath>
#include <type_traits>
#include <vector>

#include "salm2/tensor.hpp"

namespace salm2 {

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!same_shape(a.shape(), b.shape()))
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto pa = a.node(), pb = b.node();
  return make_op_result<T>(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto pa = a.node(), pb = b.node();
  return make_op_result<T>(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto pa = a.node(), pb = b.node();
  return make_op_result<T>(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.values());
  for (T& x : out) x *= c;
  auto pa = a.node();
  return make_op_result<T>(a.shape(), std::move(out), {pa}, [pa, c](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * c;
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.values().size());
  const auto& av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + detail::exp_impl(-av[i]));
  auto pa = a.node();
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_op_result<T>(a.shape(), std::move(out), {pa}, [pa, saved](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) {
      T s = (*saved)[i];
      ga[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) {
    T s = T(1) / (T(1) + detail::exp_impl(-av[i]));
    out[i] = av[i] * s;
  }
  auto pa = a.node();
  return make_op_result<T>(a.shape(), std::move(out), {pa}, [pa](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) {
      T x = pa->value[i];
      T s = T(1) / (T(1) + detail::exp_impl(-x));
      ga[i] += self.grad[i] * (s + x * s * (T(1) - s));
    }
  });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) {
    T x = av[i];
    // log1p(exp(x)) with overflow guard
    out[i] = x > T(30) ? x : std::log1p(detail::exp_impl(x));
  }
  auto pa = a.node();
  return make_op_result<T>(a.shape(), std::move(out), {pa}, [pa](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) {
      T s = T(1) / (T(1) + detail::exp_impl(-pa->value[i]));
      ga[i] += self.grad[i] * s;
    }
  });
}

template <typename T>
Tensor<T> neg_softplus(const Tensor<T>& a) {
  return scale(softplus(a), T(-1));
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  const auto& av = a.values();
  T acc = 0;
  for (T x : av) acc += x;
  T m = acc / static_cast<T>(av.size());
  auto pa = a.node();
  return make_op_result<T>({1}, {m}, {pa}, [pa](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    T g = self.grad[0] / static_cast<T>(ga.size());
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  const auto& av = a.values();
  T acc = 0;
  for (T x : av) acc += x;
  auto pa = a.node();
  return make_op_result<T>({1}, {acc}, {pa}, [pa](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Shape ops (contiguous copies; backward copies gradients back)

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape s) {
  if (shape_numel(s) != a.numel())
    throw ContractViolation("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
  auto pa = a.node();
  return make_op_result<T>(std::move(s), a.values(), {pa}, [pa](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

// [A, B, C] -> [A, C, B]
template <typename T>
Tensor<T> permute021(const Tensor<T>& a) {
  if (a.ndim() != 3) throw ContractViolation("permute021 expects a 3-d tensor, got " + shape_str(a.shape()));
  const int64_t A = a.dim(0), B = a.dim(1), C = a.dim(2);
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (int64_t n = 0; n < A; ++n)
    for (int64_t i = 0; i < B; ++i)
      for (int64_t j = 0; j < C; ++j) out[(n * C + j) * B + i] = av[(n * B + i) * C + j];
  auto pa = a.node();
  return make_op_result<T>({A, C, B}, std::move(out), {pa}, [pa, A, B, C](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    for (int64_t n = 0; n < A; ++n)
      for (int64_t i = 0; i < B; ++i)
        for (int64_t j = 0; j < C; ++j) ga[(n * B + i) * C + j] += self.grad[(n * C + j) * B + i];
  });
}

// Concatenate 4-d tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractViolation("concat_channels: no inputs");
  const int64_t B = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  int64_t ctotal = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 4 || p.dim(0) != B || p.dim(2) != H || p.dim(3) != W)
      throw ContractViolation("concat_channels: incompatible part shape " + shape_str(p.shape()));
    ctotal += p.dim(1);
  }
  std::vector<T> out(static_cast<size_t>(B * ctotal * H * W));
  const int64_t hw = H * W;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<int64_t> widths;
  for (const auto& p : parts) {
    parents.push_back(p.node());
    widths.push_back(p.dim(1));
  }
  for (int64_t b = 0; b < B; ++b) {
    int64_t coff = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
      const auto& pv = parts[k].values();
      const int64_t c = widths[k];
      std::copy(pv.begin() + b * c * hw, pv.begin() + (b + 1) * c * hw,
                out.begin() + (b * ctotal + coff) * hw);
      coff += c;
    }
  }
  auto parents_copy = parents;
  return make_op_result<T>({B, ctotal, H, W}, std::move(out), std::move(parents),
                           [parents_copy, widths, B, hw, ctotal](Node<T>& self) {
                             for (int64_t b = 0; b < B; ++b) {
                               int64_t coff = 0;
                               for (size_t k = 0; k < parents_copy.size(); ++k) {
                                 const int64_t c = widths[k];
                                 if (parents_copy[k]->requires_grad) {
                                   auto& g = parents_copy[k]->ensure_grad();
                                   const T* src = self.grad.data() + (b * ctotal + coff) * hw;
                                   T* dst = g.data() + b * c * hw;
                                   for (int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
                                 }
                                 coff += c;
                               }
                             }
                           });
}

// Split the last axis of a 3-d tensor into pieces of the given widths.
template <typename T>
std::vector<Tensor<T>> split_last(const Tensor<T>& a, const std::vector<int64_t>& widths) {
  if (a.ndim() != 3) throw ContractViolation("split_last expects a 3-d tensor");
  const int64_t M = a.dim(0) * a.dim(1), D = a.dim(2);
  int64_t total = 0;
  for (int64_t w : widths) total += w;
  if (total != D) throw ContractViolation("split_last: widths do not sum to last dim");
  std::vector<Tensor<T>> out;
  auto pa = a.node();
  int64_t off = 0;
  for (int64_t w : widths) {
    const auto& av = a.values();
    std::vector<T> v(static_cast<size_t>(M * w));
    for (int64_t m = 0; m < M; ++m)
      std::copy(av.begin() + m * D + off, av.begin() + m * D + off + w, v.begin() + m * w);
    const int64_t o = off;
    out.push_back(make_op_result<T>({a.dim(0), a.dim(1), w}, std::move(v), {pa},
                                    [pa, M, D, w, o](Node<T>& self) {
                                      if (!pa->requires_grad) return;
                                      auto& g = pa->ensure_grad();
                                      for (int64_t m = 0; m < M; ++m)
                                        for (int64_t i = 0; i < w; ++i)
                                          g[m * D + o + i] += self.grad[m * w + i];
                                    }));
    off += w;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

// x: [..., Din] treated as [M, Din]; w: [Dout, Din]; optional bias [Dout].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<std::type_identity_t<T>>* bias = nullptr) {
  if (w.ndim() != 2) throw ContractViolation("linear: weight must be 2-d");
  const int64_t din = w.dim(1), dout = w.dim(0);
  if (x.dim(x.ndim() - 1) != din)
    throw ContractViolation("linear: input width " + std::to_string(x.dim(x.ndim() - 1)) +
                            " != weight width " + std::to_string(din));
  if (bias && (bias->ndim() != 1 || bias->dim(0) != dout))
    throw ContractViolation("linear: bias shape mismatch");
  const int64_t M = x.numel() / din;
  const auto& xv = x.values();
  const auto& wv = w.values();
  std::vector<T> out(static_cast<size_t>(M * dout), T(0));
  for (int64_t m = 0; m < M; ++m) {
    const T* xr = xv.data() + m * din;
    T* orow = out.data() + m * dout;
    for (int64_t o = 0; o < dout; ++o) {
      const T* wr = wv.data() + o * din;
      T acc = bias ? bias->values()[o] : T(0);
      for (int64_t i = 0; i < din; ++i) acc += xr[i] * wr[i];
      orow[o] = acc;
    }
  }
  Shape oshape = x.shape();
  oshape.back() = dout;
  auto px = x.node(), pw = w.node();
  std::shared_ptr<Node<T>> pb = bias ? bias->node() : nullptr;
  std::vector<std::shared_ptr<Node<T>>> parents{px, pw};
  if (pb) parents.push_back(pb);
  return make_op_result<T>(std::move(oshape), std::move(out), std::move(parents),
                           [px, pw, pb, M, din, dout](Node<T>& self) {
                             const T* g = self.grad.data();
                             if (px->requires_grad) {
                               auto& gx = px->ensure_grad();
                               for (int64_t m = 0; m < M; ++m)
                                 for (int64_t o = 0; o < dout; ++o) {
                                   T gv = g[m * dout + o];
                                   const T* wr = pw->value.data() + o * din;
                                   T* gxr = gx.data() + m * din;
                                   for (int64_t i = 0; i < din; ++i) gxr[i] += gv * wr[i];
                                 }
                             }
                             if (pw->requires_grad) {
                               auto& gw = pw->ensure_grad();
                               for (int64_t m = 0; m < M; ++m)
                                 for (int64_t o = 0; o < dout; ++o) {
                                   T gv = g[m * dout + o];
                                   const T* xr = px->value.data() + m * din;
                                   T* gwr = gw.data() + o * din;
                                   for (int64_t i = 0; i < din; ++i) gwr[i] += gv * xr[i];
                                 }
                             }
                             if (pb && pb->requires_grad) {
                               auto& gb = pb->ensure_grad();
                               for (int64_t m = 0; m < M; ++m)
                                 for (int64_t o = 0; o < dout; ++o) gb[o] += g[m * dout + o];
                             }
                           });
}

// Batched matrix multiply: [B, M, K] x [B, K, N] -> [B, M, N].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ContractViolation("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
  const int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(static_cast<size_t>(B * M * N), T(0));
  for (int64_t n = 0; n < B; ++n)
    for (int64_t m = 0; m < M; ++m) {
      T* orow = out.data() + (n * M + m) * N;
      const T* arow = av.data() + (n * M + m) * K;
      for (int64_t k = 0; k < K; ++k) {
        T aval = arow[k];
        const T* brow = bv.data() + (n * K + k) * N;
        for (int64_t j = 0; j < N; ++j) orow[j] += aval * brow[j];
      }
    }
  auto pa = a.node(), pb = b.node();
  return make_op_result<T>({B, M, N}, std::move(out), {pa, pb},
                           [pa, pb, B, M, K, N](Node<T>& self) {
                             const T* g = self.grad.data();
                             if (pa->requires_grad) {
                               auto& ga = pa->ensure_grad();
                               for (int64_t n = 0; n < B; ++n)
                                 for (int64_t m = 0; m < M; ++m)
                                   for (int64_t k = 0; k < K; ++k) {
                                     T acc = 0;
                                     const T* grow = g + (n * M + m) * N;
                                     const T* brow = pb->value.data() + (n * K + k) * N;
                                     for (int64_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
                                     ga[(n * M + m) * K + k] += acc;
                                   }
                             }
                             if (pb->requires_grad) {
                               auto& gb = pb->ensure_grad();
                               for (int64_t n = 0; n < B; ++n)
                                 for (int64_t m = 0; m < M; ++m) {
                                   const T* grow = g + (n * M + m) * N;
                                   const T* arow = pa->value.data() + (n * M + m) * K;
                                   for (int64_t k = 0; k < K; ++k) {
                                     T aval = arow[k];
                                     T* gbrow = gb.data() + (n * K + k) * N;
                                     for (int64_t j = 0; j < N; ++j) gbrow[j] += aval * grow[j];
                                   }
                                 }
                             }
                           });
}

// Softmax over axis 1 of a [B, R, C] tensor, independently per (batch, column).
// Computed in max-shifted form.
template <typename T>
Tensor<T> softmax_dim1(const Tensor<T>& a) {
  if (a.ndim() != 3) throw ContractViolation("softmax_dim1 expects a 3-d tensor");
  const int64_t B = a.dim(0), R = a.dim(1), C = a.dim(2);
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      T mx = av[(b * R) * C + c];
      for (int64_t r = 1; r < R; ++r) mx = std::max(mx, av[(b * R + r) * C + c]);
      T z = 0;
      for (int64_t r = 0; r < R; ++r) {
        T e = detail::exp_impl(av[(b * R + r) * C + c] - mx);
        out[(b * R + r) * C + c] = e;
        z += e;
      }
      for (int64_t r = 0; r < R; ++r) out[(b * R + r) * C + c] /= z;
    }
  auto pa = a.node();
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_op_result<T>(a.shape(), std::move(out), {pa}, [pa, saved, B, R, C](Node<T>& self) {
    if (!pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    const auto& s = *saved;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        T dot = 0;
        for (int64_t r = 0; r < R; ++r) {
          int64_t idx = (b * R + r) * C + c;
          dot += self.grad[idx] * s[idx];
        }
        for (int64_t r = 0; r < R; ++r) {
          int64_t idx = (b * R + r) * C + c;
          ga[idx] += s[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Broadcast multiplies used by skip attention

// x: [B, C, H, W] * gate: [B, 1, H, W]
template <typename T>
Tensor<T> mul_spatial_gate(const Tensor<T>& x, const Tensor<T>& gate) {
  if (x.ndim() != 4 || gate.ndim() != 4 || gate.dim(1) != 1 || x.dim(0) != gate.dim(0) ||
      x.dim(2) != gate.dim(2) || x.dim(3) != gate.dim(3))
    throw ContractViolation("mul_spatial_gate: shapes " + shape_str(x.shape()) + " vs " +
                            shape_str(gate.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const auto& xv = x.values();
  const auto& gv = gate.values();
  std::vector<T> out(xv.size());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < HW; ++i)
        out[(b * C + c) * HW + i] = xv[(b * C + c) * HW + i] * gv[b * HW + i];
  auto px = x.node(), pg = gate.node();
  return make_op_result<T>(x.shape(), std::move(out), {px, pg}, [px, pg, B, C, HW](Node<T>& self) {
    if (px->requires_grad) {
      auto& gx = px->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t i = 0; i < HW; ++i)
            gx[(b * C + c) * HW + i] += self.grad[(b * C + c) * HW + i] * pg->value[b * HW + i];
    }
    if (pg->requires_grad) {
      auto& gg = pg->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t i = 0; i < HW; ++i)
            gg[b * HW + i] += self.grad[(b * C + c) * HW + i] * px->value[(b * C + c) * HW + i];
    }
  });
}

// x: [B, C, H, W] * gate: [B, C]
template <typename T>
Tensor<T> mul_channel_gate(const Tensor<T>& x, const Tensor<T>& gate) {
  if (x.ndim() != 4 || gate.ndim() != 2 || x.dim(0) != gate.dim(0) || x.dim(1) != gate.dim(1))
    throw ContractViolation("mul_channel_gate: shapes " + shape_str(x.shape()) + " vs " +
                            shape_str(gate.shape()));
  const int64_t BC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
  const auto& xv = x.values();
  const auto& gv = gate.values();
  std::vector<T> out(xv.size());
  for (int64_t bc = 0; bc < BC; ++bc)
    for (int64_t i = 0; i < HW; ++i) out[bc * HW + i] = xv[bc * HW + i] * gv[bc];
  auto px = x.node(), pg = gate.node();
  return make_op_result<T>(x.shape(), std::move(out), {px, pg}, [px, pg, BC, HW](Node<T>& self) {
    if (px->requires_grad) {
      auto& gx = px->ensure_grad();
      for (int64_t bc = 0; bc < BC; ++bc)
        for (int64_t i = 0; i < HW; ++i) gx[bc * HW + i] += self.grad[bc * HW + i] * pg->value[bc];
    }
    if (pg->requires_grad) {
      auto& gg = pg->ensure_grad();
      for (int64_t bc = 0; bc < BC; ++bc) {
        T acc = 0;
        for (int64_t i = 0; i < HW; ++i) acc += self.grad[bc * HW + i] * px->value[bc * HW + i];
        gg[bc] += acc;
      }
    }
  });
}

// Per-pixel channel statistics: [B, C, H, W] -> [B, 2, H, W] (mean, max).
template <typename T>
Tensor<T> channel_mean_max(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ContractViolation("channel_mean_max expects a 4-d tensor");
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const auto& xv = x.values();
  std::vector<T> out(static_cast<size_t>(B * 2 * HW));
  auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(B * HW));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      T acc = 0, mx = xv[(b * C) * HW + i];
      int32_t arg = 0;
      for (int64_t c = 0; c < C; ++c) {
        T v = xv[(b * C + c) * HW + i];
        acc += v;
        if (v > mx) { mx = v; arg = static_cast<int32_t>(c); }
      }
      out[(b * 2 + 0) * HW + i] = acc / static_cast<T>(C);
      out[(b * 2 + 1) * HW + i] = mx;
      (*argmax)[b * HW + i] = arg;
    }
  auto px = x.node();
  return make_op_result<T>({B, 2, x.dim(2), x.dim(3)}, std::move(out), {px},
                           [px, argmax, B, C, HW](Node<T>& self) {
                             if (!px->requires_grad) return;
                             auto& gx = px->ensure_grad();
                             for (int64_t b = 0; b < B; ++b)
                               for (int64_t i = 0; i < HW; ++i) {
                                 T gmean = self.grad[(b * 2 + 0) * HW + i] / static_cast<T>(C);
                                 for (int64_t c = 0; c < C; ++c) gx[(b * C + c) * HW + i] += gmean;
                                 gx[(b * C + (*argmax)[b * HW + i]) * HW + i] +=
                                     self.grad[(b * 2 + 1) * HW + i];
                               }
                           });
}

// Global average pool: [B, C, H, W] -> [B, C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ContractViolation("global_avg_pool expects a 4-d tensor");
  const int64_t BC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
  const auto& xv = x.values();
  std::vector<T> out(static_cast<size_t>(BC));
  for (int64_t bc = 0; bc < BC; ++bc) {
    T acc = 0;
    for (int64_t i = 0; i < HW; ++i) acc += xv[bc * HW + i];
    out[bc] = acc / static_cast<T>(HW);
  }
  auto px = x.node();
  return make_op_result<T>({x.dim(0), x.dim(1)}, std::move(out), {px}, [px, BC, HW](Node<T>& self) {
    if (!px->requires_grad) return;
    auto& gx = px->ensure_grad();
    for (int64_t bc = 0; bc < BC; ++bc) {
      T g = self.grad[bc] / static_cast<T>(HW);
      for (int64_t i = 0; i < HW; ++i) gx[bc * HW + i] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// Gated residual for cross-modal fusion: out = img + gamma * att.
// gamma is a scalar parameter tensor. When gamma == 0 the output copies img
// bit for bit; the gradient path through gamma stays intact either way.

template <typename T>
Tensor<T> gated_residual(const Tensor<T>& img, const Tensor<T>& att, const Tensor<T>& gamma) {
  detail::require_same_shape(img, att, "gated_residual");
  if (gamma.numel() != 1) throw ContractViolation("gated_residual: gamma must be a scalar");
  const T g = gamma.values()[0];
  const auto& iv = img.values();
  const auto& av = att.values();
  std::vector<T> out(iv.size());
  if (g == T(0)) {
    out = iv;
  } else {
    for (size_t i = 0; i < out.size(); ++i) out[i] = iv[i] + g * av[i];
  }
  auto pi = img.node(), pa = att.node(), pg = gamma.node();
  return make_op_result<T>(img.shape(), std::move(out), {pi, pa, pg}, [pi, pa, pg](Node<T>& self) {
    const T g = pg->value[0];
    if (pi->requires_grad) {
      auto& gi = pi->ensure_grad();
      for (size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
    }
    if (pa->requires_grad && g != T(0)) {
      auto& ga = pa->ensure_grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * g;
    }
    if (pg->requires_grad) {
      T acc = 0;
      for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa->value[i];
      pg->ensure_grad()[0] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Binary cross entropy over all elements, mean-reduced.
// Predictions are clamped to [eps, 1-eps] before the logs.

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& gt, T eps = T(1e-7)) {
  detail::require_same_shape(pred, gt, "bce_loss");
  check_finite(pred, "bce_loss predictions");
  check_finite(gt, "bce_loss targets");
  const auto& pv = pred.values();
  const auto& gv = gt.values();
  const int64_t N = pred.numel();
  T acc = 0;
  for (int64_t i = 0; i < N; ++i) {
    T p = std::min(std::max(pv[i], eps), T(1) - eps);
    acc -= gv[i] * std::log(p) + (T(1) - gv[i]) * std::log(T(1) - p);
  }
  T loss = acc / static_cast<T>(N);
  auto pp = pred.node(), pg = gt.node();
  return make_op_result<T>({1}, {loss}, {pp, pg}, [pp, pg, N, eps](Node<T>& self) {
    if (!pp->requires_grad) return;
    auto& gp = pp->ensure_grad();
    const T g = self.grad[0] / static_cast<T>(N);
    for (int64_t i = 0; i < N; ++i) {
      T p = pp->value[i];
      if (p <= eps || p >= T(1) - eps) continue;  // clamped region: zero slope
      gp[i] += g * (-(pg->value[i] / p) + (T(1) - pg->value[i]) / (T(1) - p));
    }
  });
}

}  // namespace salm2
