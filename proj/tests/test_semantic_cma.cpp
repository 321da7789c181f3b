#include <cmath>

#include "doctest.h"
#include "salm2/cma.hpp"
#include "salm2/semantic.hpp"
#include "testutil.hpp"

using namespace salm2;

TEST_CASE("stub encoder is deterministic and unit-normalized") {
  StubEncoder<float> enc(0);
  Rng data(1);
  auto img = testutil::random_tensor<float>(data, {2, 3, 64, 64});
  auto t1 = enc.encode(img);
  auto t2 = enc.encode(img);
  CHECK(t1.shape() == Shape{2, 768});
  CHECK(t1.values() == t2.values());  // bitwise
  for (int64_t b = 0; b < 2; ++b) {
    double norm = 0;
    for (int64_t i = 0; i < 768; ++i) {
      double v = t1.values()[b * 768 + i];
      norm += v * v;
    }
    CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-6);
  }
  CHECK_FALSE(t1.requires_grad());
}

TEST_CASE("stub encoders with the same seed agree, different seeds differ") {
  StubEncoder<float> a(3), b(3), c(4);
  Rng data(2);
  auto img = testutil::random_tensor<float>(data, {1, 3, 32, 32});
  CHECK(a.encode(img).values() == b.encode(img).values());
  CHECK(a.encode(img).values() != c.encode(img).values());
}

TEST_CASE("clip adapter: loads archive weights, frozen and unit-normalized") {
  testutil::TempDir tmp("adapter");
  const std::string path = tmp.str() + "/encoder.salm2";
  write_random_adapter(path, 99);
  ClipAdapter<float> enc(path);
  CHECK(enc.dim() == 768);
  Rng data(3);
  auto img = testutil::random_tensor<float>(data, {2, 3, 256, 256});
  auto t1 = enc.encode(img);
  CHECK(t1.shape() == Shape{2, 768});
  CHECK_FALSE(t1.requires_grad());
  for (int64_t b = 0; b < 2; ++b) {
    double norm = 0;
    for (int64_t i = 0; i < 768; ++i) {
      double v = t1.values()[b * 768 + i];
      norm += v * v;
    }
    CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-6);
  }
}

TEST_CASE("clip adapter: unusable weights raise, never silently substitute") {
  CHECK_THROWS_AS(ClipAdapter<float>{"/nonexistent/weights.salm2"}, AdapterUnavailableError);
  testutil::TempDir tmp("adapter_bad");
  const std::string path = tmp.str() + "/garbage.salm2";
  atomic_write_file(path, "this is not an archive at all, definitely not ustar");
  CHECK_THROWS_AS(ClipAdapter<float>{path}, AdapterUnavailableError);
}

TEST_CASE("projector shapes, zero map and parameter count") {
  Rng rng(4);
  SemanticProjector<float> proj(768, 4, 4, 64, rng);
  NamedParams<float> params;
  proj.collect_params(params, "projector");
  int64_t total = 0;
  for (auto& [n, p] : params) total += p.numel();
  CHECK(total == 48 * 64 + 64);  // 3136
  auto tok = Tensor<float>::zeros({2, 768});
  NoGradGuard ng;
  auto sem = proj.forward(tok);
  CHECK(sem.shape() == Shape{2, 64, 4, 4});
  for (float v : sem.values()) CHECK(v == 0.0f);  // zero token, zero bias
  // T not divisible by N1
  CHECK_THROWS_AS(SemanticProjector<float>(770, 4, 4, 64, rng), ConfigError);
}

TEST_CASE("channel affinity: uniform for zero queries, rows sum to one") {
  Rng rng(5);
  auto sem = Tensor<float>::zeros({1, 4, 2, 2});
  auto img = testutil::random_tensor<float>(rng, {1, 4, 4, 4});
  NoGradGuard ng;
  auto s = channel_affinity(sem, img);
  CHECK(s.shape() == Shape{1, 4, 4});
  for (float v : s.values()) CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));

  for (int rep = 0; rep < 50; ++rep) {
    Rng r(100 + rep);
    auto se = testutil::random_tensor<float>(r, {2, 8, 2, 2}, -3.0, 3.0);
    auto im = testutil::random_tensor<float>(r, {2, 8, 4, 4}, -3.0, 3.0);
    auto aff = channel_affinity(se, im);
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t j = 0; j < 8; ++j) {
        double sum = 0;
        for (int64_t i = 0; i < 8; ++i) sum += aff.values()[(b * 8 + j) * 8 + i];
        CHECK(std::abs(sum - 1.0) <= 1e-6);
        for (int64_t i = 0; i < 8; ++i) {
          float v = aff.values()[(b * 8 + j) * 8 + i];
          CHECK(v > 0.0f);
          CHECK(v < 1.0f);
        }
      }
  }
}

TEST_CASE("channel affinity hand case: M = [[ln2, 0], [0, 0]]") {
  // C = 2 channels, semantic grid 1x1 (N1 = 1), image 2x2.
  // Q = (ln 2, 0); pooled image channels = (1, 0)  =>  M[i][j] = Q_i * K_j.
  auto sem = Tensor<double>::from({1, 2, 1, 1}, {std::log(2.0), 0.0});
  auto img = Tensor<double>::from({1, 2, 2, 2}, {1, 1, 1, 1, 0, 0, 0, 0});
  NoGradGuard ng;
  auto s = channel_affinity(sem, img);
  // row j=1: (s_11, s_12) from column softmax (2/3, 1/3); row j=2: (1/2, 1/2)
  CHECK(std::abs(s.values()[0] - 2.0 / 3.0) <= 1e-9);
  CHECK(std::abs(s.values()[1] - 1.0 / 3.0) <= 1e-9);
  CHECK(std::abs(s.values()[2] - 0.5) <= 1e-9);
  CHECK(std::abs(s.values()[3] - 0.5) <= 1e-9);
}

TEST_CASE("channel affinity is invariant to a constant score shift") {
  Rng rng(6);
  auto m = testutil::random_tensor<double>(rng, {1, 5, 5}, -2.0, 2.0);
  std::vector<double> shifted = m.values();
  for (auto& v : shifted) v += 10.0;
  auto m10 = Tensor<double>::from({1, 5, 5}, shifted);
  auto s1 = softmax_dim1(m);
  auto s2 = softmax_dim1(m10);
  for (size_t i = 0; i < s1.values().size(); ++i)
    CHECK(std::abs(s1.values()[i] - s2.values()[i]) <= 1e-12);
}

TEST_CASE("cma spatial contract: image must be exactly twice the semantic grid") {
  Rng rng(7);
  auto sem = testutil::random_tensor<float>(rng, {1, 4, 2, 2});
  auto img = testutil::random_tensor<float>(rng, {1, 4, 6, 6});
  CHECK_THROWS_AS(channel_affinity(sem, img), ContractViolation);
  CmaFusion<float> cma;
  CHECK_THROWS_AS(cma.forward(sem, img), ContractViolation);
}

TEST_CASE("cma fuse: exact identity at initialization") {
  CmaFusion<float> cma;
  CHECK(cma.gamma().values()[0] == 0.0f);
  Rng rng(8);
  auto sem = testutil::random_tensor<float>(rng, {2, 8, 2, 2});
  auto img = testutil::random_tensor<float>(rng, {2, 8, 4, 4});
  NoGradGuard ng;
  auto out = cma.forward(sem, img);
  CHECK(out.shape() == img.shape());
  CHECK(out.values() == img.values());  // bitwise
}

TEST_CASE("cma fuse hand case: gamma=1, uniform affinity, constant channels") {
  CmaFusion<double> cma;
  cma.gamma().values()[0] = 1.0;
  auto sem = Tensor<double>::zeros({1, 2, 1, 1});  // uniform affinity 1/2
  std::vector<double> iv(2 * 4);
  for (int i = 0; i < 4; ++i) iv[i] = 2.0;      // channel 1 constant 2
  for (int i = 4; i < 8; ++i) iv[i] = 4.0;      // channel 2 constant 4
  auto img = Tensor<double>::from({1, 2, 2, 2}, iv);
  NoGradGuard ng;
  auto out = cma.forward(sem, img);
  for (int i = 0; i < 8; ++i)
    CHECK(out.values()[i] == doctest::Approx(iv[i] + 3.0).epsilon(1e-12));
}

TEST_CASE("cma has exactly one trainable parameter and its gradient checks out") {
  CmaFusion<double> cma;
  NamedParams<double> params;
  cma.collect_params(params, "cma");
  REQUIRE(params.size() == 1);
  CHECK(params[0].second.numel() == 1);

  Rng rng(9);
  auto sem = testutil::random_tensor<double>(rng, {1, 3, 2, 2});
  auto img = testutil::random_tensor<double>(rng, {1, 3, 4, 4});
  sem.set_requires_grad(true);
  img.set_requires_grad(true);
  params.emplace_back("sem", sem);
  params.emplace_back("img", img);
  auto w = testutil::random_tensor<double>(rng, {1, 3, 4, 4});
  // check at a nonzero gamma so the attention path also receives gradient
  cma.gamma().values()[0] = 0.37;
  auto loss_fn = [&]() { return mean_all(mul(cma.forward(sem, img), w)); };
  auto res = testutil::finite_difference_check(params, loss_fn);
  INFO("worst: ", res.worst);
  CHECK(res.max_rel_err <= 1e-4);

  // gradient w.r.t. gamma is alive at gamma = 0 as well
  cma.gamma().values()[0] = 0.0;
  cma.gamma().zero_grad();
  auto loss = loss_fn();
  backward(loss);
  REQUIRE_FALSE(cma.gamma().grad().empty());
  CHECK(std::abs(cma.gamma().grad()[0]) > 1e-8);
}
