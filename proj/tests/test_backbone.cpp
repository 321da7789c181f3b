#include <cmath>

#include "doctest.h"
#include "salm2/backbone.hpp"
#include "testutil.hpp"

using namespace salm2;

TEST_CASE("stem stage halves spatial dims and maps the ladder") {
  Rng rng(1);
  ConvStemStage<float> stage(3, 8, rng);
  Rng data(2);
  auto x = testutil::random_tensor<float>(data, {1, 3, 256, 256});
  NoGradGuard ng;
  auto y = stage.forward(x);
  CHECK(y.shape() == Shape{1, 8, 128, 128});
  auto odd = testutil::random_tensor<float>(data, {1, 3, 7, 7});
  CHECK_THROWS_AS(stage.forward(odd), ContractViolation);
  CHECK_THROWS_AS(stage.forward(y), ContractViolation);  // wrong channel count
}

TEST_CASE("stem stage: zero input with zero bias stays zero") {
  Rng rng(3);
  ConvStemStage<float> stage(3, 8, rng);  // bias is zero-initialized
  auto x = Tensor<float>::zeros({2, 3, 16, 16});
  NoGradGuard ng;
  auto y = stage.forward(x);
  for (float v : y.values()) CHECK(v == 0.0f);
}

TEST_CASE("stem stage parameter count: 3->8 conv with bias") {
  Rng rng(4);
  ConvStemStage<float> stage(3, 8, rng);
  NamedParams<float> params;
  stage.collect_params(params, "stem");
  int64_t total = 0;
  for (auto& [n, p] : params) total += p.numel();
  CHECK(total == 3 * 8 * 9 + 8);  // 224
}

TEST_CASE("scpm layer: alpha = 0 reduces to the concatenated embeddings") {
  Rng rng(5);
  ScpmLayer<float> layer(6, {4, 2, 1, 1}, true, 4, 2, 4, rng);
  for (auto& br : layer.branches()) br->alpha.values()[0] = 0.0f;
  Rng data(6);
  auto x = testutil::random_tensor<float>(data, {2, 6, 8, 8});
  NoGradGuard ng;
  auto y = layer.forward(x);
  std::vector<Tensor<float>> embeds;
  for (auto& br : layer.branches()) embeds.push_back(br->embed(x));
  auto ref = concat_channels(embeds);
  CHECK(y.values() == ref.values());  // bitwise
}

TEST_CASE("scpm layer: output width is the branch sum") {
  Rng rng(7);
  ScpmLayer<float> layer(24, {32, 16, 8, 8}, false, 8, 2, 4, rng);
  CHECK(layer.out_channels() == 64);
  Rng data(8);
  auto x = testutil::random_tensor<float>(data, {1, 24, 4, 4});
  NoGradGuard ng;
  CHECK(layer.forward(x).shape() == Shape{1, 64, 4, 4});
}

TEST_CASE("scpm branch seam: identity embedding and identity mamba double the input") {
  Rng rng(9);
  // one branch, pointwise embedding, no mamba
  ScpmLayer<float> layer(3, {3}, false, 4, 2, 4, rng, /*with_mamba=*/false, /*embed_kernel=*/1);
  auto& br = layer.branches()[0];
  // hand-set the pointwise map to the identity
  std::fill(br->pw_w.values().begin(), br->pw_w.values().end(), 0.0f);
  for (int64_t c = 0; c < 3; ++c) br->pw_w.values()[c * 3 + c] = 1.0f;
  std::fill(br->pw_b.values().begin(), br->pw_b.values().end(), 0.0f);
  br->alpha.values()[0] = 1.0f;
  Rng data(10);
  auto x = testutil::random_tensor<float>(data, {2, 3, 5, 5});
  NoGradGuard ng;
  auto y = layer.forward(x);
  for (size_t i = 0; i < y.values().size(); ++i)
    CHECK(y.values()[i] == 2.0f * x.values()[i]);  // exact
}

TEST_CASE("scpm layer gradients match finite differences") {
  Rng rng(11);
  ScpmLayer<double> layer(2, {2, 1, 1, 1}, true, 2, 2, 3, rng);
  Rng data(12);
  auto x = testutil::random_tensor<double>(data, {1, 2, 6, 6});
  x.set_requires_grad(true);
  NamedParams<double> params;
  layer.collect_params(params, "scpm");
  params.emplace_back("input", x);
  auto w = testutil::random_tensor<double>(data, {1, 5, 3, 3});
  auto loss_fn = [&]() { return mean_all(mul(layer.forward(x), w)); };
  auto res = testutil::finite_difference_check(params, loss_fn);
  INFO("worst: ", res.worst);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("skip attention gates stay in (0,1) and preserve shape") {
  Rng rng(13);
  SkipAttention<float> att(rng);
  Rng data(14);
  auto x = testutil::random_tensor<float>(data, {2, 5, 6, 6}, -4.0, 4.0);
  NoGradGuard ng;
  auto sg = att.spatial_gate(x);
  auto cg = att.channel_gate(x);
  for (float v : sg.values()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  for (float v : cg.values()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  CHECK(att.forward(x).shape() == x.shape());
}

TEST_CASE("skip attention is channel-count independent, one instance for all levels") {
  Rng rng(15);
  auto att = std::make_shared<SkipAttention<float>>(rng);
  Rng data(16);
  auto lvl2 = testutil::random_tensor<float>(data, {1, 8, 8, 8});
  auto lvl4 = testutil::random_tensor<float>(data, {1, 32, 4, 4});
  NoGradGuard ng;
  auto before2 = att->forward(lvl2).values();
  auto before4 = att->forward(lvl4).values();
  // mutating the single parameter object changes every level
  att->spatial_weight().values()[0] += 0.5f;
  CHECK(att->forward(lvl2).values() != before2);
  CHECK(att->forward(lvl4).values() != before4);
}

TEST_CASE("skip attention hand case: zero 7x7 kernel gives a 0.5 spatial gate") {
  Rng rng(17);
  SkipAttention<float> att(rng);
  std::fill(att.spatial_weight().values().begin(), att.spatial_weight().values().end(), 0.0f);
  Rng data(18);
  auto x = testutil::random_tensor<float>(data, {1, 1, 2, 2});
  NoGradGuard ng;
  auto sg = att.spatial_gate(x);
  for (float v : sg.values()) CHECK(v == 0.5f);  // sigmoid(0) exactly
  auto out = att.forward(x);
  auto cg = att.channel_gate(x);
  for (int i = 0; i < 4; ++i)
    CHECK(out.values()[i] ==
          doctest::Approx(0.5f * cg.values()[0] * x.values()[i]).epsilon(1e-6));
}

TEST_CASE("decoder mirrors the ladder to a one-channel logit map") {
  Rng rng(19);
  auto att = std::make_shared<SkipAttention<float>>(rng);
  Decoder<float> dec(64, {8, 16, 24, 32}, att, rng);
  Rng data(20);
  auto deepest = testutil::random_tensor<float>(data, {1, 64, 8, 8});
  std::vector<Tensor<float>> skips{
      testutil::random_tensor<float>(data, {1, 8, 128, 128}),
      testutil::random_tensor<float>(data, {1, 16, 64, 64}),
      testutil::random_tensor<float>(data, {1, 24, 32, 32}),
      testutil::random_tensor<float>(data, {1, 32, 16, 16}),
  };
  NoGradGuard ng;
  CHECK(dec.forward(deepest, skips).shape() == Shape{1, 1, 256, 256});
  std::swap(skips[0], skips[1]);
  CHECK_THROWS_AS(dec.forward(deepest, skips), ContractViolation);
}

TEST_CASE("decoder: zero inputs and zero biases give a zero logit map") {
  Rng rng(21);
  auto att = std::make_shared<SkipAttention<float>>(rng);
  Decoder<float> dec(8, {4}, att, rng);  // biases start at zero
  auto deepest = Tensor<float>::zeros({1, 8, 4, 4});
  std::vector<Tensor<float>> skips{Tensor<float>::zeros({1, 4, 8, 8})};
  NoGradGuard ng;
  auto out = dec.forward(deepest, skips);
  for (float v : out.values()) CHECK(v == 0.0f);
}

TEST_CASE("decoder gradients match finite differences") {
  Rng rng(22);
  auto att = std::make_shared<SkipAttention<double>>(rng);
  Decoder<double> dec(8, {2, 4}, att, rng);
  Rng data(23);
  auto deepest = testutil::random_tensor<double>(data, {1, 8, 2, 2});
  std::vector<Tensor<double>> skips{testutil::random_tensor<double>(data, {1, 2, 8, 8}),
                                    testutil::random_tensor<double>(data, {1, 4, 4, 4})};
  NamedParams<double> params;
  dec.collect_params(params, "decoder");
  att->collect_params(params, "skip_attention");
  auto loss_fn = [&]() { return mean_all(dec.forward(deepest, skips)); };
  auto res = testutil::finite_difference_check(params, loss_fn);
  INFO("worst: ", res.worst);
  CHECK(res.max_rel_err <= 1e-4);
}
