#pragma once

// BCE objective and the training recipe: Adam with first-moment coefficient
// 0.9, fixed learning rate 1e-3, decoupled weight decay 1e-4 (the fusion
// scale gamma is exempt so the identity-at-init property is not eroded by
// decay alone). Deterministic single-threaded loops; per-epoch shuffling and
// every other random draw flow from explicit seeds.

#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "salm2/checkpoint.hpp"
#include "salm2/dataset.hpp"
#include "salm2/metrics.hpp"
#include "salm2/model.hpp"

namespace salm2 {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double clamp_eps = 1e-7;
  double adam_eps = 1e-8;
  int64_t epochs = 40;
  int64_t batch_size = 16;
  uint64_t seed = 0;

  void validate() const {
    if (learning_rate <= 0 || beta1 <= 0 || beta2 <= 0 || weight_decay < 0 || clamp_eps <= 0 ||
        adam_eps <= 0 || epochs < 1 || batch_size < 1)
      throw ConfigError("train config: all values must be positive");
    if (clamp_eps >= 1e-3) throw ConfigError("train config: clamp_eps must be below 1e-3");
    if (beta1 >= 1 || beta2 >= 1) throw ConfigError("train config: betas must be below 1");
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate}, {"beta1", beta1},
            {"beta2", beta2},                 {"weight_decay", weight_decay},
            {"clamp_eps", clamp_eps},         {"epochs", epochs},
            {"batch_size", batch_size},       {"seed", seed}};
  }
};

// Adaptive-moment optimizer with decoupled weight decay.
template <typename T>
class AdamW {
 public:
  AdamW(NamedParams<T> params, const TrainConfig& cfg,
        std::set<std::string> no_decay = {"cma.gamma"})
      : params_(std::move(params)), cfg_(cfg), no_decay_(std::move(no_decay)) {
    cfg_.validate();
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi].second;
      const bool decay = cfg_.weight_decay > 0 && !no_decay_.count(params_[pi].first);
      const auto& grad = p.grad();
      auto& vals = p.values();
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
        m_[pi][i] = cfg_.beta1 * m_[pi][i] + (1.0 - cfg_.beta1) * g;
        v_[pi][i] = cfg_.beta2 * v_[pi][i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[pi][i] / bc1;
        const double vhat = v_[pi][i] / bc2;
        const double prev = static_cast<double>(vals[i]);
        double next = prev - cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
        if (decay) next -= cfg_.learning_rate * cfg_.weight_decay * prev;
        vals[i] = static_cast<T>(next);
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  int64_t steps() const { return t_; }

 private:
  NamedParams<T> params_;
  TrainConfig cfg_;
  std::set<std::string> no_decay_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Batch assembly

struct PreparedSample {
  std::string id;
  std::vector<float> input;   // [3, S, S] standardized
  std::vector<float> target;  // [S, S] in [0, 1]
};

inline std::vector<PreparedSample> prepare_samples(const Dataset& ds, int64_t size) {
  std::vector<PreparedSample> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    PreparedSample p;
    p.id = s.id;
    RawImage raw{s.height, s.width, s.image};
    p.input = preprocess(raw, size);
    p.target = (s.height == size && s.width == size)
                   ? s.saliency_gt
                   : resize_map(s.saliency_gt, s.height, s.width, size, size);
    for (auto& v : p.target) v = std::clamp(v, 0.0f, 1.0f);
    out.push_back(std::move(p));
  }
  return out;
}

template <typename T>
Tensor<T> batch_inputs(const std::vector<PreparedSample>& prep, const std::vector<size_t>& idx,
                       int64_t size) {
  std::vector<T> data;
  data.reserve(idx.size() * 3 * size * size);
  for (size_t i : idx)
    for (float v : prep[i].input) data.push_back(static_cast<T>(v));
  return Tensor<T>::from({static_cast<int64_t>(idx.size()), 3, size, size}, std::move(data));
}

template <typename T>
Tensor<T> batch_targets(const std::vector<PreparedSample>& prep, const std::vector<size_t>& idx,
                        int64_t size) {
  std::vector<T> data;
  data.reserve(idx.size() * size * size);
  for (size_t i : idx)
    for (float v : prep[i].target) data.push_back(static_cast<T>(v));
  return Tensor<T>::from({static_cast<int64_t>(idx.size()), 1, size, size}, std::move(data));
}

// ---------------------------------------------------------------------------

struct EpochRecord {
  int64_t epoch = 0;
  double train_loss = 0;
  double val_cc = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int64_t best_epoch = 0;
  double best_val_cc = -2.0;

  nlohmann::json history_json(const TrainConfig& cfg) const {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& r : history)
      epochs.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_cc", r.val_cc}});
    return {{"format_version", 1},
            {"config", cfg.to_json()},
            {"epochs", epochs},
            {"best_epoch", best_epoch},
            {"best_val_cc", best_val_cc}};
  }
};

// Mean per-sample correlation at model resolution; used as the per-epoch
// validation signal.
template <typename T>
double mean_cc(const SalM2<T>& model, const std::vector<PreparedSample>& prep, int64_t batch) {
  NoGradGuard ng;
  const int64_t size = model.config().input_size;
  double acc = 0;
  std::vector<size_t> idx;
  for (size_t start = 0; start < prep.size(); start += batch) {
    idx.clear();
    for (size_t i = start; i < std::min(prep.size(), start + batch); ++i) idx.push_back(i);
    auto pred = model.forward(batch_inputs<T>(prep, idx, size));
    const int64_t hw = size * size;
    for (size_t k = 0; k < idx.size(); ++k) {
      std::vector<float> p(hw), g(hw);
      for (int64_t i = 0; i < hw; ++i) {
        p[i] = static_cast<float>(pred.values()[k * hw + i]);
        g[i] = prep[idx[k]].target[i];
      }
      acc += metrics::cc(p, g);
    }
  }
  return acc / static_cast<double>(prep.size());
}

// Deterministic training loop. Retains the best-validation parameters in the
// model on return.
template <typename T>
TrainResult train_model(SalM2<T>& model, const Dataset& train_ds, const Dataset& val_ds,
                        const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (train_ds.samples.empty()) throw DataError("training dataset is empty");
  const int64_t size = model.config().input_size;
  auto train_prep = prepare_samples(train_ds, size);
  auto val_prep = prepare_samples(val_ds, size);

  auto params = model.named_params();
  AdamW<T> opt(params, cfg);
  Rng shuffle_rng(cfg.seed);

  TrainResult result;
  std::vector<std::vector<T>> best_params;
  std::vector<size_t> order(train_prep.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  int64_t step = 0;
  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<size_t> idx(order.begin() + start,
                              order.begin() + std::min(order.size(), start + cfg.batch_size));
      auto x = batch_inputs<T>(train_prep, idx, size);
      auto gt = batch_targets<T>(train_prep, idx, size);
      ++step;
      Tensor<T> loss;
      try {
        loss = bce_loss(model.forward(x), gt, static_cast<T>(cfg.clamp_eps));
      } catch (const NonFiniteError& e) {
        throw Error("training diverged at step " + std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(static_cast<double>(loss.item())))
        throw Error("training diverged at step " + std::to_string(step) + ": loss is not finite");
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_prep.size());
    rec.val_cc = val_prep.empty() ? 0.0 : mean_cc(model, val_prep, cfg.batch_size);
    result.history.push_back(rec);
    if (rec.val_cc > result.best_val_cc) {
      result.best_val_cc = rec.val_cc;
      result.best_epoch = epoch;
      best_params.clear();
      for (auto& [name, p] : params) best_params.push_back(p.values());
    }
    if (log)
      (*log) << "epoch " << epoch << "/" << cfg.epochs << "  loss " << rec.train_loss << "  val_cc "
             << rec.val_cc << "\n";
  }
  if (!best_params.empty())
    for (size_t i = 0; i < params.size(); ++i) params[i].second.values() = best_params[i];
  return result;
}

// Full six-metric evaluation at native ground-truth resolution. Read-only.
template <typename T>
metrics::MetricReport validate(const SalM2<T>& model, const Dataset& ds,
                               const metrics::MetricConfig& mcfg = {}, int64_t batch = 16) {
  NoGradGuard ng;
  if (ds.samples.empty()) throw DataError("validation dataset is empty");
  const int64_t size = model.config().input_size;
  std::map<std::string, std::vector<float>> predictions;
  std::vector<PreparedSample> prep = prepare_samples(ds, size);
  std::vector<size_t> idx;
  for (size_t start = 0; start < prep.size(); start += batch) {
    idx.clear();
    for (size_t i = start; i < std::min(prep.size(), start + batch); ++i) idx.push_back(i);
    auto pred = model.forward(batch_inputs<T>(prep, idx, size));
    const int64_t hw = size * size;
    for (size_t k = 0; k < idx.size(); ++k) {
      const auto& sample = ds.samples[idx[k]];
      std::vector<float> p(hw);
      for (int64_t i = 0; i < hw; ++i) p[i] = static_cast<float>(pred.values()[k * hw + i]);
      if (sample.height != size || sample.width != size)
        p = resize_map(p, size, size, sample.height, sample.width);
      predictions[sample.id] = std::move(p);
    }
  }
  return metrics::evaluate_all(ds.samples, predictions, mcfg);
}

}  // namespace salm2
