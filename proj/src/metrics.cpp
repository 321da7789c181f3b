#include "salm2/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "salm2/errors.hpp"
#include "salm2/rng.hpp"

namespace salm2::metrics {

namespace {

void require_same_size(const std::vector<float>& a, const std::vector<float>& b, const char* op) {
  if (a.size() != b.size() || a.empty())
    throw ContractViolation(std::string(op) + ": map sizes " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
}

// Exact area under the ROC as swept over every distinct threshold, which for
// a trapezoidal integration equals the Mann-Whitney statistic with half
// credit for ties.
double roc_auc(std::vector<double> pos, std::vector<double> neg) {
  if (pos.empty() || neg.empty()) throw MetricError("roc: needs positives and negatives");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  double wins = 0;
  size_t lo = 0, hi = 0;  // negatives strictly below / at-or-below the current positive
  for (double p : pos) {
    while (lo < neg.size() && neg[lo] < p) ++lo;
    while (hi < neg.size() && neg[hi] <= p) ++hi;
    wins += static_cast<double>(lo) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

void split_by_fixation(const std::vector<float>& pred, const std::vector<uint8_t>& fixation,
                       std::vector<double>& pos, std::vector<double>& neg) {
  if (pred.size() != fixation.size() || pred.empty())
    throw ContractViolation("auc: prediction and fixation sizes differ");
  for (size_t i = 0; i < pred.size(); ++i)
    (fixation[i] ? pos : neg).push_back(pred[i]);
  if (pos.empty()) throw MetricError("auc: no fixated pixels");
  if (neg.empty()) throw MetricError("auc: no non-fixated pixels");
}

}  // namespace

double cc(const std::vector<float>& pred, const std::vector<float>& gt) {
  require_same_size(pred, gt, "cc");
  const double n = static_cast<double>(pred.size());
  double mp = 0, mg = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mg += gt[i];
  }
  mp /= n;
  mg /= n;
  double cov = 0, vp = 0, vg = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double dp = pred[i] - mp, dg = gt[i] - mg;
    cov += dp * dg;
    vp += dp * dp;
    vg += dg * dg;
  }
  if (vp == 0 || vg == 0) throw MetricError("cc needs non-constant maps");
  return cov / std::sqrt(vp * vg);
}

double sim(const std::vector<float>& pred, const std::vector<float>& gt) {
  require_same_size(pred, gt, "sim");
  double sp = 0, sg = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    sp += pred[i];
    sg += gt[i];
  }
  if (sp <= 0 || sg <= 0) throw MetricError("sim needs positive-mass maps");
  double inter = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    inter += std::min(static_cast<double>(pred[i]) / sp, static_cast<double>(gt[i]) / sg);
  return inter;
}

double kld(const std::vector<float>& pred, const std::vector<float>& gt, double eps) {
  require_same_size(pred, gt, "kld");
  double sp = 0, sg = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    sp += pred[i];
    sg += gt[i];
  }
  if (sp <= 0 || sg <= 0) throw MetricError("kld needs positive-mass maps");
  double acc = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double g = gt[i] / sg;
    if (g == 0) continue;
    acc += g * std::log(g / (pred[i] / sp + eps) + eps);
  }
  return acc;
}

double nss(const std::vector<float>& pred, const std::vector<uint8_t>& fixation) {
  if (pred.size() != fixation.size() || pred.empty())
    throw ContractViolation("nss: prediction and fixation sizes differ");
  const double n = static_cast<double>(pred.size());
  double mean = 0;
  for (float v : pred) mean += v;
  mean /= n;
  double var = 0;
  for (float v : pred) var += (v - mean) * (v - mean);
  var /= n;  // population
  if (var == 0) throw MetricError("nss needs a non-constant prediction");
  const double sd = std::sqrt(var);
  double acc = 0;
  int64_t count = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (fixation[i]) {
      acc += (pred[i] - mean) / sd;
      ++count;
    }
  if (count == 0) throw MetricError("nss: no fixated pixels");
  return acc / static_cast<double>(count);
}

double auc_judd(const std::vector<float>& pred, const std::vector<uint8_t>& fixation) {
  std::vector<double> pos, neg;
  split_by_fixation(pred, fixation, pos, neg);
  return roc_auc(std::move(pos), std::move(neg));
}

double auc_borji(const std::vector<float>& pred, const std::vector<uint8_t>& fixation,
                 int n_splits, uint64_t seed) {
  std::vector<double> pos, nonfix;
  split_by_fixation(pred, fixation, pos, nonfix);
  if (n_splits < 1) throw ContractViolation("auc_borji: n_splits must be >= 1");
  Rng rng(seed);
  double acc = 0;
  std::vector<double> neg(pos.size());
  for (int s = 0; s < n_splits; ++s) {
    for (auto& v : neg) v = nonfix[rng.uniform_int(nonfix.size())];
    acc += roc_auc(pos, neg);
  }
  return acc / n_splits;
}

nlohmann::json MetricReport::to_json() const {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"format_version", 1},
          {"sample_count", sample_count},
          {"metrics",
           {{"AUC_Borji", opt(auc_borji)},
            {"AUC_Judd", opt(auc_judd)},
            {"NSS", opt(nss)},
            {"CC", cc},
            {"SIM", sim},
            {"KLD", kld}}},
          {"available",
           {{"AUC_Borji", auc_borji.has_value()},
            {"AUC_Judd", auc_judd.has_value()},
            {"NSS", nss.has_value()},
            {"CC", true},
            {"SIM", true},
            {"KLD", true}}},
          {"config", config.to_json()}};
}

MetricReport evaluate_all(const std::vector<FrameSample>& samples,
                          const std::map<std::string, std::vector<float>>& predictions,
                          const MetricConfig& config) {
  if (samples.empty()) throw ContractViolation("evaluate_all: no samples");
  if (predictions.empty()) throw ContractViolation("evaluate_all: no predictions");
  std::vector<std::string> missing;
  for (const auto& s : samples)
    if (!predictions.count(s.id)) missing.push_back(s.id);
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw ContractViolation("evaluate_all: missing predictions for ids: " + list);
  }

  bool all_fix = true;
  for (const auto& s : samples) all_fix = all_fix && s.has_fixation();

  MetricReport rep;
  rep.config = config;
  rep.sample_count = static_cast<int64_t>(samples.size());
  rep.fixations_available = all_fix;
  double acc_cc = 0, acc_sim = 0, acc_kld = 0, acc_nss = 0, acc_judd = 0, acc_borji = 0;
  for (const auto& s : samples) {
    const auto& pred = predictions.at(s.id);
    if (pred.size() != s.saliency_gt.size())
      throw ContractViolation("evaluate_all: prediction for id " + s.id +
                              " does not match the ground-truth resolution");
    acc_cc += cc(pred, s.saliency_gt);
    acc_sim += sim(pred, s.saliency_gt);
    acc_kld += kld(pred, s.saliency_gt, config.kld_eps);
    if (all_fix) {
      acc_nss += nss(pred, s.fixation);
      acc_judd += auc_judd(pred, s.fixation);
      acc_borji += auc_borji(pred, s.fixation, config.borji_splits, config.borji_seed);
    }
  }
  const double n = static_cast<double>(samples.size());
  rep.cc = acc_cc / n;
  rep.sim = acc_sim / n;
  rep.kld = acc_kld / n;
  if (all_fix) {
    rep.nss = acc_nss / n;
    rep.auc_judd = acc_judd / n;
    rep.auc_borji = acc_borji / n;
  }
  return rep;
}

}  // namespace salm2::metrics
