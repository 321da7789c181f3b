#pragma once

// The six-metric saliency evaluation protocol: AUC_Borji, AUC_Judd, NSS, CC,
// SIM, KLD. All functions are pure; AUC_Borji is deterministic under its
// seed. Conventions pinned here and echoed in every report: KLD epsilon
// 1e-7, 100 Borji splits, exhaustive-threshold trapezoidal ROC, population
// standard deviation in NSS, per-sample-then-average aggregation.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "salm2/dataset.hpp"

namespace salm2::metrics {

struct MetricConfig {
  double kld_eps = 1e-7;
  int borji_splits = 100;
  uint64_t borji_seed = 7;
  nlohmann::json to_json() const {
    return {{"kld_eps", kld_eps},
            {"borji_splits", borji_splits},
            {"borji_seed", borji_seed},
            {"aggregation", "per_sample_mean"},
            {"nss_std", "population"},
            {"roc", "exhaustive_thresholds_trapezoid"}};
  }
};

// Pearson correlation over pixels. Errors on constant maps.
double cc(const std::vector<float>& pred, const std::vector<float>& gt);

// Histogram intersection of the sum-normalized maps. Errors on zero mass.
double sim(const std::vector<float>& pred, const std::vector<float>& gt);

// sum_i G_i * log(G_i / (P_i + eps) + eps) over sum-normalized maps.
double kld(const std::vector<float>& pred, const std::vector<float>& gt, double eps = 1e-7);

// Mean z-scored saliency at fixated pixels (population std). Errors on a
// constant prediction or an empty fixation set.
double nss(const std::vector<float>& pred, const std::vector<uint8_t>& fixation);

// ROC area with fixations as positives and all non-fixated pixels as
// negatives; thresholds at every distinct saliency value, trapezoidal
// integration with the (0,0) and (1,1) endpoints.
double auc_judd(const std::vector<float>& pred, const std::vector<uint8_t>& fixation);

// Mean over n_splits ROC areas where each split samples |fixations| negatives
// uniformly with replacement from the non-fixated pixels.
double auc_borji(const std::vector<float>& pred, const std::vector<uint8_t>& fixation,
                 int n_splits = 100, uint64_t seed = 7);

struct MetricReport {
  std::optional<double> auc_borji, auc_judd, nss;
  double cc = 0, sim = 0, kld = 0;
  int64_t sample_count = 0;
  bool fixations_available = false;
  MetricConfig config;
  nlohmann::json to_json() const;
};

// Per-sample metrics averaged over the dataset. When any sample lacks
// fixations, the fixation-based metrics are skipped dataset-wide and
// reported as unavailable. Predictions are keyed by sample id and must be at
// the sample's native resolution.
MetricReport evaluate_all(const std::vector<FrameSample>& samples,
                          const std::map<std::string, std::vector<float>>& predictions,
                          const MetricConfig& config = {});

}  // namespace salm2::metrics
