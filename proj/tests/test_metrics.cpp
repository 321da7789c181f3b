#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "salm2/metrics.hpp"
#include "testutil.hpp"

using namespace salm2;
using namespace salm2::metrics;

namespace {

// Brute-force ROC oracle: literal threshold sweep over every distinct
// saliency value with direct counting, trapezoidal integration between the
// (0,0) and (1,1) endpoints. Written independently of the library path.
double brute_force_auc(const std::vector<float>& pred, const std::vector<uint8_t>& fix) {
  std::vector<double> thresholds(pred.begin(), pred.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double npos = 0, nneg = 0;
  for (uint8_t f : fix) (f ? npos : nneg) += 1;
  std::vector<std::pair<double, double>> points{{0.0, 0.0}};
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] >= t) {
        if (fix[i]) tp += 1;
        else fp += 1;
      }
    }
    points.emplace_back(fp / nneg, tp / npos);
  }
  points.emplace_back(1.0, 1.0);
  double area = 0;
  for (size_t k = 0; k + 1 < points.size(); ++k)
    area += (points[k + 1].first - points[k].first) * (points[k].second + points[k + 1].second) / 2.0;
  return area;
}

std::vector<FrameSample> synthetic_eval_samples(int n, bool with_fixations) {
  std::vector<FrameSample> samples;
  Rng rng(5);
  for (int i = 0; i < n; ++i) {
    FrameSample s;
    s.id = "s" + std::to_string(i);
    s.height = 8;
    s.width = 8;
    s.image.assign(3 * 64, 0.5f);
    s.saliency_gt.resize(64);
    for (auto& v : s.saliency_gt) v = static_cast<float>(rng.uniform(0.01, 1.0));
    if (with_fixations) {
      s.fixation.assign(64, 0);
      s.fixation[rng.uniform_int(64)] = 1;
      s.fixation[rng.uniform_int(64)] = 1;
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace

TEST_CASE("cc: hand values and error contracts") {
  std::vector<float> p{1, 2, 3, 4}, g{1, 3, 2, 4};
  CHECK(cc(p, g) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(cc(p, p) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<float> anti(p.size());
  for (size_t i = 0; i < p.size(); ++i) anti[i] = 5.0f - p[i];
  CHECK(cc(p, anti) == doctest::Approx(-1.0).epsilon(1e-12));
  std::vector<float> constant(4, 0.7f);
  CHECK_THROWS_AS(cc(constant, g), MetricError);
  CHECK_THROWS_AS(cc(p, constant), MetricError);
}

TEST_CASE("sim: hand values and error contracts") {
  std::vector<float> p{0.5f, 0.5f}, g{0.25f, 0.75f};
  CHECK(sim(p, g) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(sim(p, p) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<float> a{1, 0}, b{0, 1};
  CHECK(sim(a, b) == doctest::Approx(0.0).epsilon(1e-12));
  std::vector<float> zero{0, 0};
  CHECK_THROWS_AS(sim(zero, g), MetricError);
}

TEST_CASE("kld: hand value, self-divergence bound, non-negativity, asymmetry") {
  std::vector<float> g{0.5f, 0.5f}, p{0.25f, 0.75f};
  const double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  CHECK(std::abs(kld(p, g) - expect) <= 1e-4);
  CHECK(kld(g, g) <= 1e-5);
  Rng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<float> a(16), b(16);
    for (auto& v : a) v = static_cast<float>(rng.uniform(0.0, 1.0));
    for (auto& v : b) v = static_cast<float>(rng.uniform(0.01, 1.0));
    CHECK(kld(a, b) >= -1e-6);
  }
  CHECK(kld(p, g) != kld(g, p));
}

TEST_CASE("nss: hand value and invariances") {
  std::vector<float> p{1, 2, 3, 4};
  std::vector<uint8_t> all(4, 1);
  CHECK(nss(p, all) == doctest::Approx(0.0).epsilon(1e-12));
  std::vector<uint8_t> at4{0, 0, 0, 1};
  CHECK(nss(p, at4) == doctest::Approx((4.0 - 2.5) / std::sqrt(1.25)).epsilon(1e-9));  // 1.341641
  std::vector<float> shifted(p.size());
  for (size_t i = 0; i < p.size(); ++i) shifted[i] = p[i] + 17.5f;
  CHECK(nss(shifted, at4) == doctest::Approx(nss(p, at4)).epsilon(1e-9));
  std::vector<float> constant(4, 0.2f);
  CHECK_THROWS_AS(nss(constant, at4), MetricError);
}

TEST_CASE("auc_judd: perfect separation, chance level") {
  std::vector<uint8_t> fix{0, 1, 0, 0, 1, 0, 0, 0};
  std::vector<float> indicator(fix.size());
  for (size_t i = 0; i < fix.size(); ++i) indicator[i] = fix[i];
  CHECK(auc_judd(indicator, fix) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<float> constant(fix.size(), 0.4f);
  CHECK(auc_judd(constant, fix) == doctest::Approx(0.5).epsilon(1e-12));
  std::vector<uint8_t> none(fix.size(), 0);
  CHECK_THROWS_AS(auc_judd(indicator, none), MetricError);
  std::vector<uint8_t> full(fix.size(), 1);
  CHECK_THROWS_AS(auc_judd(indicator, full), MetricError);
}

TEST_CASE("auc_judd matches the brute-force exhaustive-threshold oracle") {
  Rng rng(77);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<float> pred(64);
    for (auto& v : pred) v = static_cast<float>(rng.uniform(0.0, 1.0));
    if (rep % 3 == 0)  // quantized maps exercise threshold ties
      for (auto& v : pred) v = std::floor(v * 5.0f) / 5.0f;
    std::vector<uint8_t> fix(64, 0);
    const int nfix = 1 + static_cast<int>(rng.uniform_int(12));
    for (int k = 0; k < nfix; ++k) fix[rng.uniform_int(64)] = 1;
    int set = 0;
    for (uint8_t f : fix) set += f;
    if (set == 0 || set == 64) continue;
    const double lib = auc_judd(pred, fix);
    const double ref = brute_force_auc(pred, fix);
    CHECK(std::abs(lib - ref) <= 1e-9);
  }
}

TEST_CASE("auc_judd is exactly invariant under monotone transforms") {
  Rng rng(78);
  std::vector<float> pred(64);
  for (auto& v : pred) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  std::vector<uint8_t> fix(64, 0);
  for (int k = 0; k < 9; ++k) fix[rng.uniform_int(64)] = 1;
  std::vector<float> mono(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) mono[i] = pred[i] * pred[i] * pred[i] + pred[i];
  CHECK(auc_judd(pred, fix) == auc_judd(mono, fix));  // exact
}

TEST_CASE("auc_borji: perfect separation, chance, seeded determinism") {
  std::vector<uint8_t> fix(64, 0);
  fix[3] = fix[17] = fix[40] = 1;
  std::vector<float> indicator(64, 0.0f);
  for (size_t i = 0; i < 64; ++i) indicator[i] = fix[i];
  for (uint64_t seed : {1ull, 2ull, 99ull})
    CHECK(auc_borji(indicator, fix, 25, seed) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<float> constant(64, 0.2f);
  CHECK(auc_borji(constant, fix, 25, 3) == doctest::Approx(0.5).epsilon(1e-12));
  Rng rng(79);
  std::vector<float> pred(64);
  for (auto& v : pred) v = static_cast<float>(rng.uniform(0.0, 1.0));
  CHECK(auc_borji(pred, fix, 100, 7) == auc_borji(pred, fix, 100, 7));
}

TEST_CASE("evaluate_all: self-evaluation and availability protocol") {
  auto samples = synthetic_eval_samples(3, true);
  std::map<std::string, std::vector<float>> preds;
  for (const auto& s : samples) preds[s.id] = s.saliency_gt;
  auto rep = evaluate_all(samples, preds);
  CHECK(rep.cc == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rep.sim == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rep.kld <= 1e-5);
  CHECK(rep.auc_judd.has_value());
  CHECK(rep.sample_count == 3);

  auto doc = rep.to_json();
  CHECK(doc["metrics"].contains("AUC_Borji"));
  CHECK(doc["available"]["NSS"].get<bool>());

  // fixation-absent protocol: AUC/NSS unavailable, CC/SIM/KLD present
  auto nofix = synthetic_eval_samples(3, false);
  std::map<std::string, std::vector<float>> preds2;
  for (const auto& s : nofix) preds2[s.id] = s.saliency_gt;
  auto rep2 = evaluate_all(nofix, preds2);
  CHECK_FALSE(rep2.auc_borji.has_value());
  CHECK_FALSE(rep2.auc_judd.has_value());
  CHECK_FALSE(rep2.nss.has_value());
  auto doc2 = rep2.to_json();
  CHECK(doc2["metrics"]["AUC_Judd"].is_null());
  CHECK_FALSE(doc2["metrics"]["CC"].is_null());

  // one sample without fixations disables the fixation metrics dataset-wide
  auto mixed = synthetic_eval_samples(3, true);
  mixed[1].fixation.clear();
  std::map<std::string, std::vector<float>> preds3;
  for (const auto& s : mixed) preds3[s.id] = s.saliency_gt;
  CHECK_FALSE(evaluate_all(mixed, preds3).nss.has_value());
}

TEST_CASE("evaluate_all: fail-fast contracts") {
  auto samples = synthetic_eval_samples(2, true);
  std::map<std::string, std::vector<float>> empty;
  CHECK_THROWS_AS(evaluate_all(samples, empty), ContractViolation);
  std::map<std::string, std::vector<float>> partial{{"s0", samples[0].saliency_gt}};
  try {
    evaluate_all(samples, partial);
    FAIL("expected missing-id error");
  } catch (const ContractViolation& e) {
    CHECK(std::string(e.what()).find("s1") != std::string::npos);
  }
}
