#pragma once

// SalM2 assembly: stem -> SCPM encoder -> (semantic projector + CMA fusion)
// -> mirrored decoder -> sigmoid saliency map. Also the parameter / FLOP
// auditor used by `count-params`.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "salm2/backbone.hpp"
#include "salm2/cma.hpp"
#include "salm2/semantic.hpp"

namespace salm2 {

struct ModelConfig {
  int64_t input_size = 256;
  std::vector<int64_t> stem_channels = {8, 16, 24};
  std::vector<int64_t> scpm_channels = {32, 48, 64};
  std::vector<int64_t> scpm_strides = {2, 2, 1};
  std::vector<int64_t> branch_divisors = {2, 4, 8, 8};
  int64_t state_size = 8;
  int64_t expand = 2;
  int64_t conv_kernel = 4;  // mamba depthwise smoothing length
  int64_t semantic_dim = 768;
  uint64_t seed = 0;
  std::string provider = "stub";  // "stub" or "clip"
  std::string clip_weights;

  int64_t downsample_count() const {
    int64_t n = static_cast<int64_t>(stem_channels.size());
    for (int64_t s : scpm_strides)
      if (s == 2) ++n;
    return n;
  }
  int64_t deepest_channels() const { return scpm_channels.back(); }
  int64_t deepest_spatial() const { return input_size >> downsample_count(); }
  int64_t semantic_spatial() const { return deepest_spatial() / 2; }

  std::vector<int64_t> branch_widths(int64_t cprime) const {
    std::vector<int64_t> w;
    int64_t sum = 0;
    for (int64_t d : branch_divisors) {
      if (d < 1 || cprime % d != 0)
        throw ConfigError("branch divisor " + std::to_string(d) + " does not divide width " +
                          std::to_string(cprime));
      w.push_back(cprime / d);
      sum += cprime / d;
    }
    if (sum != cprime)
      throw ConfigError("branch widths sum to " + std::to_string(sum) + ", expected " +
                        std::to_string(cprime));
    return w;
  }

  void validate() const {
    if (stem_channels.empty() || scpm_channels.empty())
      throw ConfigError("channel ladder must have stem and scpm stages");
    if (scpm_strides.size() != scpm_channels.size())
      throw ConfigError("scpm_strides must match scpm_channels");
    for (int64_t c : stem_channels)
      if (c % 4 != 0) throw ConfigError("stem widths must be divisible by the 4 norm groups");
    for (int64_t s : scpm_strides)
      if (s != 1 && s != 2) throw ConfigError("scpm strides must be 1 or 2");
    if (branch_divisors.size() != 4) throw ConfigError("SCPM uses exactly four parallel branches");
    for (int64_t c : scpm_channels) branch_widths(c);
    const int64_t down = downsample_count();
    if (input_size < (int64_t(1) << down) || input_size % (int64_t(1) << down) != 0)
      throw ConfigError("input size " + std::to_string(input_size) + " is not divisible by 2^" +
                        std::to_string(down));
    if (deepest_spatial() % 2 != 0)
      throw ConfigError("deepest feature must pool 2x2 cleanly for the semantic grid");
    const int64_t n1 = semantic_spatial() * semantic_spatial();
    if (n1 < 1 || semantic_dim % n1 != 0)
      throw ConfigError("semantic dim " + std::to_string(semantic_dim) + " not divisible by N1 = " +
                        std::to_string(n1));
    if (provider != "stub" && provider != "clip")
      throw ConfigError("unknown semantic provider '" + provider + "'");
  }

  nlohmann::json to_json() const {
    return {{"input_size", input_size},
            {"stem_channels", stem_channels},
            {"scpm_channels", scpm_channels},
            {"scpm_strides", scpm_strides},
            {"branch_divisors", branch_divisors},
            {"state_size", state_size},
            {"expand", expand},
            {"conv_kernel", conv_kernel},
            {"semantic_dim", semantic_dim},
            {"seed", seed},
            {"provider", provider}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.input_size = j.at("input_size").get<int64_t>();
    c.stem_channels = j.at("stem_channels").get<std::vector<int64_t>>();
    c.scpm_channels = j.at("scpm_channels").get<std::vector<int64_t>>();
    c.scpm_strides = j.at("scpm_strides").get<std::vector<int64_t>>();
    c.branch_divisors = j.at("branch_divisors").get<std::vector<int64_t>>();
    c.state_size = j.at("state_size").get<int64_t>();
    c.expand = j.at("expand").get<int64_t>();
    c.conv_kernel = j.at("conv_kernel").get<int64_t>();
    c.semantic_dim = j.at("semantic_dim").get<int64_t>();
    c.seed = j.at("seed").get<uint64_t>();
    c.provider = j.value("provider", "stub");
    c.validate();
    return c;
  }
};

template <typename T>
class SalM2 {
 public:
  explicit SalM2(ModelConfig cfg, std::shared_ptr<SemanticProvider<T>> provider = nullptr)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    int64_t ch = 3;
    for (int64_t out : cfg_.stem_channels) {
      stems_.push_back(std::make_unique<ConvStemStage<T>>(ch, out, rng));
      ch = out;
    }
    for (size_t i = 0; i < cfg_.scpm_channels.size(); ++i) {
      scpms_.push_back(std::make_unique<ScpmLayer<T>>(ch, cfg_.branch_widths(cfg_.scpm_channels[i]),
                                                      cfg_.scpm_strides[i] == 2, cfg_.state_size,
                                                      cfg_.expand, cfg_.conv_kernel, rng));
      ch = cfg_.scpm_channels[i];
    }
    skip_att_ = std::make_shared<SkipAttention<T>>(rng);
    decoder_ = std::make_unique<Decoder<T>>(cfg_.deepest_channels(), skip_widths(), skip_att_, rng);
    const int64_t s1 = cfg_.semantic_spatial();
    projector_ = std::make_unique<SemanticProjector<T>>(cfg_.semantic_dim, s1, s1,
                                                        cfg_.deepest_channels(), rng);
    if (provider) {
      provider_ = std::move(provider);
    } else if (cfg_.provider == "clip") {
      provider_ = std::make_shared<ClipAdapter<T>>(cfg_.clip_weights);
    } else {
      provider_ = std::make_shared<StubEncoder<T>>(cfg_.seed, cfg_.semantic_dim);
    }
    if (provider_->dim() != cfg_.semantic_dim)
      throw ConfigError("semantic provider dim " + std::to_string(provider_->dim()) +
                        " != configured " + std::to_string(cfg_.semantic_dim));
  }

  const ModelConfig& config() const { return cfg_; }
  std::shared_ptr<SemanticProvider<T>> provider() const { return provider_; }
  void set_provider(std::shared_ptr<SemanticProvider<T>> p) { provider_ = std::move(p); }
  CmaFusion<T>& cma() { return cma_; }
  const CmaFusion<T>& cma() const { return cma_; }

  // Full forward pass: saliency in (0,1), shape [B, 1, H, W].
  Tensor<T> forward(const Tensor<T>& image) const { return run(image, true); }

  // Ablation seam: identical backbone, semantic branch and fusion skipped.
  Tensor<T> forward_without_semantics(const Tensor<T>& image) const { return run(image, false); }

  NamedParams<T> named_params() const {
    NamedParams<T> out;
    for (size_t i = 0; i < stems_.size(); ++i)
      stems_[i]->collect_params(out, "stem" + std::to_string(i));
    for (size_t i = 0; i < scpms_.size(); ++i)
      scpms_[i]->collect_params(out, "scpm" + std::to_string(i));
    skip_att_->collect_params(out, "skip_attention");
    decoder_->collect_params(out, "decoder");
    projector_->collect_params(out, "projector");
    cma_.collect_params(out, "cma");
    return out;
  }

  int64_t count_trainable_params() const {
    int64_t n = 0;
    for (const auto& [name, t] : named_params()) n += t.numel();
    return n;
  }

  // Module -> parameter count, keys in ladder order.
  std::vector<std::pair<std::string, int64_t>> param_breakdown() const {
    std::vector<std::pair<std::string, int64_t>> rows;
    auto bucket = [&](const std::string& name) -> int64_t& {
      std::string key = name.substr(0, name.find('.'));
      for (auto& [k, v] : rows)
        if (k == key) return v;
      rows.emplace_back(key, 0);
      return rows.back().second;
    };
    for (const auto& [name, t] : named_params()) bucket(name) += t.numel();
    return rows;
  }

  std::vector<std::unique_ptr<ConvStemStage<T>>>& stems() { return stems_; }
  std::vector<std::unique_ptr<ScpmLayer<T>>>& scpms() { return scpms_; }
  std::shared_ptr<SkipAttention<T>> skip_attention() const { return skip_att_; }
  SemanticProjector<T>& projector() { return *projector_; }

 private:
  std::vector<int64_t> skip_widths() const {
    // Encoder outputs at every resolution above the deepest one, shallow->deep.
    std::vector<int64_t> widths;
    int64_t spatial = cfg_.input_size;
    const int64_t deepest = cfg_.deepest_spatial();
    for (int64_t c : cfg_.stem_channels) {
      spatial /= 2;
      if (spatial > deepest) widths.push_back(c);
    }
    for (size_t i = 0; i < cfg_.scpm_channels.size(); ++i) {
      spatial /= cfg_.scpm_strides[i];
      if (spatial > deepest) widths.push_back(cfg_.scpm_channels[i]);
    }
    return widths;
  }

  Tensor<T> run(const Tensor<T>& image, bool with_semantics) const {
    if (image.ndim() != 4 || image.dim(1) != 3 || image.dim(2) != cfg_.input_size ||
        image.dim(3) != cfg_.input_size)
      throw ContractViolation("model expects input [B, 3, " + std::to_string(cfg_.input_size) +
                              ", " + std::to_string(cfg_.input_size) + "], got " +
                              shape_str(image.shape()));
    check_finite(image, "model input");
    const int64_t deepest = cfg_.deepest_spatial();
    std::vector<Tensor<T>> skips;
    Tensor<T> x = image;
    for (const auto& stem : stems_) {
      x = stem->forward(x);
      if (x.dim(2) > deepest) skips.push_back(x);
    }
    for (const auto& scpm : scpms_) {
      x = scpm->forward(x);
      if (x.dim(2) > deepest) skips.push_back(x);
    }
    if (with_semantics) {
      auto token = provider_->encode(image);
      auto sem = projector_->forward(token);
      x = cma_.forward(sem, x);
    }
    return sigmoid(decoder_->forward(x, skips));
  }

  ModelConfig cfg_;
  std::vector<std::unique_ptr<ConvStemStage<T>>> stems_;
  std::vector<std::unique_ptr<ScpmLayer<T>>> scpms_;
  std::shared_ptr<SkipAttention<T>> skip_att_;
  std::unique_ptr<Decoder<T>> decoder_;
  std::unique_ptr<SemanticProjector<T>> projector_;
  CmaFusion<T> cma_;
  std::shared_ptr<SemanticProvider<T>> provider_;
};

// ---------------------------------------------------------------------------
// Analytic FLOP audit. Counts convolutions, pointwise maps, scan steps
// (4 MACs per step/channel/state) and the attention matmuls, per sample;
// FLOPs = 2 * MACs. Elementwise gates, normalizations and resampling are
// excluded, as is the frozen semantic encoder.

struct FlopReport {
  uint64_t total = 0;  // FLOPs at batch size 1
  std::vector<std::pair<std::string, uint64_t>> parts;
};

inline FlopReport estimate_flops(const ModelConfig& cfg, int64_t input_size) {
  ModelConfig at = cfg;
  at.input_size = input_size;
  at.validate();
  FlopReport rep;
  auto addpart = [&](const std::string& name, uint64_t macs) {
    rep.parts.emplace_back(name, 2 * macs);
    rep.total += 2 * macs;
  };
  int64_t spatial = input_size, ch = 3;
  for (size_t i = 0; i < at.stem_channels.size(); ++i) {
    spatial /= 2;
    const int64_t out = at.stem_channels[i];
    addpart("stem" + std::to_string(i),
            static_cast<uint64_t>(spatial) * spatial * out * ch * 9);
    ch = out;
  }
  const int64_t S = at.state_size, K = at.conv_kernel;
  for (size_t i = 0; i < at.scpm_channels.size(); ++i) {
    spatial /= at.scpm_strides[i];
    const int64_t L = spatial * spatial;
    uint64_t macs = 0;
    for (int64_t bw : at.branch_widths(at.scpm_channels[i])) {
      macs += static_cast<uint64_t>(L) * ch * 9;        // depthwise 3x3 embed
      macs += static_cast<uint64_t>(L) * ch * bw;       // pointwise embed
      const int64_t inner = bw * at.expand;
      const int64_t rank = std::max<int64_t>(1, (bw + 15) / 16);
      macs += static_cast<uint64_t>(L) * bw * 2 * inner;            // in_proj
      macs += static_cast<uint64_t>(L) * inner * K;                 // causal smoothing
      macs += static_cast<uint64_t>(L) * inner * (rank + 2 * S);    // x_proj
      macs += static_cast<uint64_t>(L) * rank * inner;              // dt_proj
      macs += static_cast<uint64_t>(4 * L) * inner * S;             // selective scan
      macs += static_cast<uint64_t>(L) * inner * bw;                // out_proj
    }
    addpart("scpm" + std::to_string(i), macs);
    ch = at.scpm_channels[i];
  }
  const int64_t c = at.deepest_channels();
  const int64_t n1 = at.semantic_spatial() * at.semantic_spatial();
  const int64_t n2 = at.deepest_spatial() * at.deepest_spatial();
  addpart("projector", static_cast<uint64_t>(at.semantic_dim) * c);
  addpart("cma", static_cast<uint64_t>(c) * c * (n1 + n2));
  // decoder mirror
  {
    std::vector<int64_t> skips;
    int64_t sp = at.input_size;
    for (int64_t sc : at.stem_channels) {
      sp /= 2;
      if (sp > at.deepest_spatial()) skips.push_back(sc);
    }
    for (size_t i = 0; i < at.scpm_channels.size(); ++i) {
      sp /= at.scpm_strides[i];
      if (sp > at.deepest_spatial()) skips.push_back(at.scpm_channels[i]);
    }
    uint64_t macs = 0;
    int64_t cur = c, res = at.deepest_spatial();
    for (size_t k = skips.size(); k-- > 0;) {
      res *= 2;
      macs += static_cast<uint64_t>(res) * res * skips[k] * cur * 9;
      // skip attention at this level
      macs += static_cast<uint64_t>(res) * res * 2 * 49;
      macs += static_cast<uint64_t>(skips[k]) * 3;
      cur = skips[k];
    }
    res *= 2;
    macs += static_cast<uint64_t>(res) * res * cur;  // 1x1 head
    addpart("decoder", macs);
  }
  return rep;
}

}  // namespace salm2
