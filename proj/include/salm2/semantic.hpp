#pragma once

// "Top-down" branch: frozen semantic encoders and the trainable projector
// that maps a token embedding into the deepest image-feature channel space.

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "salm2/archive.hpp"
#include "salm2/conv.hpp"
#include "salm2/ops.hpp"
#include "salm2/rng.hpp"

namespace salm2 {

// Frozen encoder interface. encode() returns a detached, gradient-free token
// of shape [B, dim], unit-normalized per sample. Implementations hold no
// trainable parameters.
template <typename T>
class SemanticProvider {
 public:
  virtual ~SemanticProvider() = default;
  virtual std::string name() const = 0;
  virtual int64_t dim() const = 0;
  virtual Tensor<T> encode(const Tensor<T>& image) const = 0;
};

namespace detail {

template <typename T>
void l2_normalize_rows(std::vector<T>& v, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    T* row = v.data() + r * cols;
    double norm = 0;
    for (int64_t c = 0; c < cols; ++c) norm += static_cast<double>(row[c]) * row[c];
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      row[0] = T(1);  // degenerate all-zero input
      continue;
    }
    for (int64_t c = 0; c < cols; ++c) row[c] = static_cast<T>(row[c] / norm);
  }
}

}  // namespace detail

// Deterministic stand-in encoder: fixed seeded random projection of the
// 16x16-average-pooled grayscale image, unit-normalized. Needs no external
// weights, so the full pipeline runs without any download.
template <typename T>
class StubEncoder : public SemanticProvider<T> {
 public:
  static constexpr int64_t kGrid = 16;

  explicit StubEncoder(uint64_t seed = 0, int64_t dim = 768) : dim_(dim) {
    Rng rng(seed ^ 0x5eed5a17c0deull);
    projection_.resize(static_cast<size_t>(dim_ * kGrid * kGrid));
    const double scale = 1.0 / std::sqrt(static_cast<double>(kGrid * kGrid));
    for (auto& w : projection_) w = static_cast<T>(rng.normal() * scale);
  }

  std::string name() const override { return "stub"; }
  int64_t dim() const override { return dim_; }

  Tensor<T> encode(const Tensor<T>& image) const override {
    if (image.ndim() != 4 || image.dim(1) != 3)
      throw ContractViolation("stub encoder expects [B, 3, H, W] input");
    const int64_t B = image.dim(0), H = image.dim(2), W = image.dim(3);
    const auto& iv = image.values();
    const int64_t cells = kGrid * kGrid;
    std::vector<T> pooled(static_cast<size_t>(B * cells), T(0));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t gy = 0; gy < kGrid; ++gy)
        for (int64_t gx = 0; gx < kGrid; ++gx) {
          const int64_t y0 = gy * H / kGrid, y1 = (gy + 1) * H / kGrid;
          const int64_t x0 = gx * W / kGrid, x1 = (gx + 1) * W / kGrid;
          double acc = 0;
          for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = y0; y < y1; ++y)
              for (int64_t x = x0; x < x1; ++x) acc += iv[((b * 3 + c) * H + y) * W + x];
          pooled[b * cells + gy * kGrid + gx] =
              static_cast<T>(acc / (3.0 * static_cast<double>((y1 - y0) * (x1 - x0))));
        }
    std::vector<T> tok(static_cast<size_t>(B * dim_), T(0));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t o = 0; o < dim_; ++o) {
        double acc = 0;
        const T* prow = projection_.data() + o * cells;
        const T* xrow = pooled.data() + b * cells;
        for (int64_t i = 0; i < cells; ++i) acc += static_cast<double>(prow[i]) * xrow[i];
        tok[b * dim_ + o] = static_cast<T>(acc);
      }
    detail::l2_normalize_rows(tok, B, dim_);
    return Tensor<T>::from({B, dim_}, std::move(tok));
  }

 private:
  int64_t dim_;
  std::vector<T> projection_;
};

// Frozen external image encoder loaded from a weight archive (same ustar
// container as checkpoints; see write_random_adapter for the layout). A small
// strided conv net with a linear head, output unit-normalized. Any problem
// with the weights raises AdapterUnavailableError; there is no silent
// fallback to the stub.
template <typename T>
class ClipAdapter : public SemanticProvider<T> {
 public:
  explicit ClipAdapter(const std::string& weights_path) {
    std::map<std::string, std::string> members;
    try {
      members = read_archive(weights_path);
    } catch (const Error& e) {
      throw AdapterUnavailableError(std::string(e.what()));
    }
    if (!members.count("manifest.json") || !members.count("weights.bin"))
      throw AdapterUnavailableError(weights_path + " lacks manifest.json/weights.bin");
    std::vector<float> blob;
    int64_t dim = 0;
    std::vector<std::tuple<std::string, Shape, int64_t>> entries;
    try {
      blob = le_bytes_to_floats(members.at("weights.bin"));
      auto manifest = nlohmann::json::parse(members.at("manifest.json"));
      if (manifest.at("kind").get<std::string>() != "semantic_encoder" ||
          manifest.at("format_version").get<int>() != 1)
        throw Error("wrong kind/format_version");
      dim = manifest.at("embed_dim").get<int64_t>();
      for (const auto& t : manifest.at("tensors")) {
        Shape shape = t.at("shape").get<Shape>();
        entries.emplace_back(t.at("name").get<std::string>(), shape, t.at("offset").get<int64_t>());
      }
    } catch (const std::exception& e) {
      throw AdapterUnavailableError(weights_path + ": " + e.what());
    }
    dim_ = dim;
    for (auto& [tname, shape, offset] : entries) {
      const int64_t n = shape_numel(shape);
      if (offset < 0 || offset + n > static_cast<int64_t>(blob.size()))
        throw AdapterUnavailableError(weights_path + ": tensor " + tname + " out of blob range");
      std::vector<T> v(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) v[i] = static_cast<T>(blob[offset + i]);
      tensors_[tname] = Tensor<T>::from(shape, std::move(v));
    }
    for (const char* req : {"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias",
                            "proj.weight", "proj.bias"})
      if (!tensors_.count(req)) throw AdapterUnavailableError(weights_path + ": missing tensor " + req);
  }

  std::string name() const override { return "clip_adapter"; }
  int64_t dim() const override { return dim_; }

  Tensor<T> encode(const Tensor<T>& image) const override {
    if (image.ndim() != 4 || image.dim(1) != 3)
      throw ContractViolation("clip adapter expects [B, 3, H, W] input");
    NoGradGuard ng;
    const auto& c1w = tensors_.at("conv1.weight");
    const auto& c1b = tensors_.at("conv1.bias");
    const auto& c2w = tensors_.at("conv2.weight");
    const auto& c2b = tensors_.at("conv2.bias");
    auto x = silu(conv2d(image, c1w, &c1b, 8, 0));
    x = silu(conv2d(x, c2w, &c2b, 8, 0));
    auto pooled = global_avg_pool(x);
    auto tok = linear(pooled, tensors_.at("proj.weight"), &tensors_.at("proj.bias"));
    std::vector<T> v = tok.values();
    detail::l2_normalize_rows(v, tok.dim(0), tok.dim(1));
    return Tensor<T>::from(tok.shape(), std::move(v));
  }

 private:
  int64_t dim_ = 0;
  std::map<std::string, Tensor<T>> tensors_;
};

// Writes a randomly initialized adapter weight archive. Used by tests and as
// the documented conversion target for real encoder weights.
void write_random_adapter(const std::string& path, uint64_t seed, int64_t embed_dim = 768);

// ---------------------------------------------------------------------------
// Trainable projector: reshape [B, T] -> [B, T/N1, H1, W1], then a pointwise
// convolution into the image channel space.

template <typename T>
class SemanticProjector {
 public:
  SemanticProjector(int64_t token_dim, int64_t h1, int64_t w1, int64_t out_channels, Rng& rng)
      : token_dim_(token_dim), h1_(h1), w1_(w1), out_ch_(out_channels) {
    const int64_t n1 = h1 * w1;
    if (token_dim % n1 != 0)
      throw ConfigError("projector: token dim " + std::to_string(token_dim) +
                        " not divisible by N1 = " + std::to_string(n1));
    in_ch_ = token_dim / n1;
    w_ = Tensor<T>::param({out_ch_, in_ch_, 1, 1},
                          fan_in_uniform<T>(rng, static_cast<size_t>(out_ch_ * in_ch_), in_ch_));
    b_ = Tensor<T>::param({out_ch_}, std::vector<T>(static_cast<size_t>(out_ch_), T(0)));
  }

  Tensor<T> forward(const Tensor<T>& token) const {
    if (token.ndim() != 2 || token.dim(1) != token_dim_)
      throw ContractViolation("projector: token shape " + shape_str(token.shape()) + " != [B, " +
                              std::to_string(token_dim_) + "]");
    auto grid = reshape(token, {token.dim(0), in_ch_, h1_, w1_});
    return conv2d(grid, w_, &b_, 1, 0);
  }

  int64_t out_channels() const { return out_ch_; }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", w_);
    out.emplace_back(prefix + ".bias", b_);
  }

 private:
  int64_t token_dim_, h1_, w1_, out_ch_, in_ch_;
  Tensor<T> w_, b_;
};

}  // namespace salm2
