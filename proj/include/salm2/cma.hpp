#pragma once

// Cross-Modal Attention fusion. Semantic channels query image channels via a
// channel-affinity matrix; the attended value is folded back into the image
// feature through a single learnable scale, zero at initialization so the
// module starts as an exact identity.

#include <string>

#include "salm2/conv.hpp"
#include "salm2/ops.hpp"

namespace salm2 {

namespace detail {

template <typename T>
void check_cma_shapes(const Tensor<T>& sem, const Tensor<T>& img) {
  if (sem.ndim() != 4 || img.ndim() != 4)
    throw ContractViolation("cma: semantic and image features must be 4-d");
  if (sem.dim(0) != img.dim(0) || sem.dim(1) != img.dim(1))
    throw ContractViolation("cma: batch/channel mismatch " + shape_str(sem.shape()) + " vs " +
                            shape_str(img.shape()));
  if (img.dim(2) != 2 * sem.dim(2) || img.dim(3) != 2 * sem.dim(3))
    throw ContractViolation("cma: image spatial size " + shape_str(img.shape()) +
                            " must be exactly twice the semantic grid " + shape_str(sem.shape()));
}

}  // namespace detail

// Affinity S of shape [B, C, C] with S[b][j][i] = s_ji: the influence of
// image channel i on semantic channel j. Q is the flattened semantic grid;
// K is the 2x2-average-pooled image feature, transposed. Each score column is
// softmax-normalized over i in max-shifted form, so every row of S sums to 1.
template <typename T>
Tensor<T> channel_affinity(const Tensor<T>& sem, const Tensor<T>& img) {
  detail::check_cma_shapes(sem, img);
  const int64_t B = sem.dim(0), C = sem.dim(1), N1 = sem.dim(2) * sem.dim(3);
  auto q = reshape(sem, {B, C, N1});
  auto k = permute021(reshape(avg_pool_2x2(img), {B, C, N1}));
  auto scores = bmm(q, k);                    // scores[b][i][j] = <Q_i, K_j>
  return permute021(softmax_dim1(scores));    // normalize over i, store as [j][i]
}

template <typename T>
class CmaFusion {
 public:
  CmaFusion() { gamma_ = Tensor<T>::param({1}, {T(0)}); }

  // out_j = gamma * sum_i s_ji V_i + img_j, same shape as img.
  // At gamma == 0 the output is bit-for-bit the image feature.
  Tensor<T> forward(const Tensor<T>& sem, const Tensor<T>& img) const {
    detail::check_cma_shapes(sem, img);
    const int64_t B = img.dim(0), C = img.dim(1), N2 = img.dim(2) * img.dim(3);
    auto affinity = channel_affinity(sem, img);
    auto v = reshape(img, {B, C, N2});
    auto attended = reshape(bmm(affinity, v), img.shape());
    return gated_residual(img, attended, gamma_);
  }

  Tensor<T>& gamma() { return gamma_; }
  const Tensor<T>& gamma() const { return gamma_; }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma_);
  }

 private:
  Tensor<T> gamma_;
};

}  // namespace salm2
