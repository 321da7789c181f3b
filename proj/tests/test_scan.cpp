#include <cmath>

#include "doctest.h"
#include "salm2/mamba.hpp"
#include "salm2/scan.hpp"
#include "testutil.hpp"

using namespace salm2;

namespace {

// Independent reference: literal per-step recurrence, written without any of
// the library's scan machinery.
std::vector<double> naive_scan(const ScanInputs<double>& in) {
  const int64_t L = in.len, D = in.width, S = in.states;
  std::vector<double> h(in.initial_state.empty() ? std::vector<double>(D * S, 0.0)
                                                 : in.initial_state);
  std::vector<double> y(L * D, 0.0);
  for (int64_t t = 0; t < L; ++t) {
    for (int64_t d = 0; d < D; ++d)
      for (int64_t s = 0; s < S; ++s) {
        const int64_t i = (t * D + d) * S + s;
        h[d * S + s] = in.decay[i] * h[d * S + s] + in.drive[i];
        y[t * D + d] += in.readout[i] * h[d * S + s];
      }
    if (!in.passthrough.empty() && !in.raw_input.empty())
      for (int64_t d = 0; d < D; ++d) y[t * D + d] += in.passthrough[d] * in.raw_input[t * D + d];
  }
  return y;
}

ScanInputs<double> random_inputs(Rng& rng, int64_t L, int64_t D, int64_t S, bool with_state = true) {
  ScanInputs<double> in;
  in.len = L;
  in.width = D;
  in.states = S;
  in.decay = testutil::random_vec(rng, L * D * S, 0.0, 1.0);
  in.drive = testutil::random_vec(rng, L * D * S);
  in.readout = testutil::random_vec(rng, L * D * S);
  if (with_state) in.initial_state = testutil::random_vec(rng, D * S);
  return in;
}

}  // namespace

TEST_CASE("sequential_scan: zero decay is a zero-memory identity") {
  const int64_t L = 5;
  ScanInputs<double> in;
  in.len = L;
  in.width = 1;
  in.states = 1;
  in.decay.assign(L, 0.0);
  in.drive = {0.3, -1.2, 4.0, 0.0, 2.5};  // drive_t = x_t
  in.readout.assign(L, 1.0);
  auto y = sequential_scan(in);
  for (int64_t t = 0; t < L; ++t) CHECK(y[t] == in.drive[t]);  // exact
}

TEST_CASE("sequential_scan: unit decay accumulates a counter") {
  ScanInputs<double> in;
  in.len = 3;
  in.width = 1;
  in.states = 1;
  in.decay.assign(3, 1.0);
  in.drive.assign(3, 1.0);
  in.readout.assign(3, 1.0);
  auto y = sequential_scan(in);
  CHECK(y == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("sequential_scan matches an independent loop oracle") {
  Rng rng(42);
  auto in = random_inputs(rng, 16, 2, 3);
  in.passthrough = testutil::random_vec(rng, 2);
  in.raw_input = testutil::random_vec(rng, 16 * 2);
  auto y = sequential_scan(in);
  auto ref = naive_scan(in);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[i] - ref[i]) <= 1e-12);
}

TEST_CASE("scan input contracts") {
  ScanInputs<double> in;
  in.len = 2;
  in.width = 1;
  in.states = 1;
  in.decay = {0.5, 0.5};
  in.drive = {1.0, 1.0};
  in.readout = {1.0};  // wrong size
  CHECK_THROWS_AS(sequential_scan(in), ContractViolation);
  in.readout = {1.0, 1.0};
  CHECK_NOTHROW(sequential_scan(in));
  in.drive[0] = std::nan("");
  CHECK_THROWS_AS(sequential_scan(in), NonFiniteError);
  in.drive[0] = 1.0;
  in.len = 0;
  CHECK_THROWS_AS(sequential_scan(in), ContractViolation);
}

TEST_CASE("parallel_scan: single step equals sequential exactly") {
  Rng rng(7);
  auto in = random_inputs(rng, 1, 3, 2);
  CHECK(parallel_scan(in) == sequential_scan(in));
}

TEST_CASE("parallel_scan: zero decay ignores the initial state") {
  Rng rng(8);
  auto in = random_inputs(rng, 6, 2, 2);
  std::fill(in.decay.begin(), in.decay.end(), 0.0);
  auto y1 = parallel_scan(in);
  in.initial_state.assign(in.initial_state.size(), 123.0);
  auto y2 = parallel_scan(in);
  for (size_t i = 0; i < y1.size(); ++i) {
    CHECK(y1[i] == y2[i]);  // exact
    // output equals readout-weighted drive
  }
  std::vector<double> expect(in.len * in.width, 0.0);
  for (int64_t t = 0; t < in.len; ++t)
    for (int64_t d = 0; d < in.width; ++d)
      for (int64_t s = 0; s < in.states; ++s)
        expect[t * in.width + d] += in.readout[(t * in.width + d) * in.states + s] *
                                    in.drive[(t * in.width + d) * in.states + s];
  for (size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(y2[i] - expect[i]) <= 1e-12);
}

TEST_CASE("parallel_scan equals sequential_scan over random shapes") {
  Rng rng(100);
  for (int rep = 0; rep < 100; ++rep) {
    const int64_t L = 2 + static_cast<int64_t>(rng.uniform_int(63));
    const int64_t D = 1 + static_cast<int64_t>(rng.uniform_int(8));
    const int64_t S = 1 + static_cast<int64_t>(rng.uniform_int(8));
    auto in = random_inputs(rng, L, D, S);
    auto ys = sequential_scan(in);
    auto yp = parallel_scan(in);
    double worst = 0;
    for (size_t i = 0; i < ys.size(); ++i) worst = std::max(worst, std::abs(ys[i] - yp[i]));
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("scan output is linear in drive for fixed gates") {
  Rng rng(11);
  auto in = random_inputs(rng, 12, 2, 2, false);
  auto base = sequential_scan(in);
  auto scaled = in;
  const double alpha = -2.75;
  for (auto& v : scaled.drive) v *= alpha;
  auto y = sequential_scan(scaled);
  for (size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - alpha * base[i]) <= 1e-12);
}

TEST_CASE("mamba_block preserves shape and is pure") {
  Rng rng(3);
  MambaBlock<float> block(8, 8, 2, 4, rng);
  Rng data(5);
  auto x = testutil::random_tensor<float>(data, {2, 64, 8});
  NoGradGuard ng;
  auto y1 = block.forward(x);
  auto y2 = block.forward(x);
  CHECK(y1.shape() == Shape{2, 64, 8});
  CHECK(y1.values() == y2.values());  // bitwise: no hidden state across calls
  auto bad = testutil::random_tensor<float>(data, {2, 64, 7});
  CHECK_THROWS_AS(block.forward(bad), ContractViolation);
}

TEST_CASE("mamba_block analytic gradients match finite differences") {
  Rng rng(17);
  MambaBlock<double> block(4, 3, 2, 4, rng);
  Rng data(23);
  auto x = testutil::random_tensor<double>(data, {1, 6, 4});
  x.set_requires_grad(true);
  NamedParams<double> params;
  block.collect_params(params, "mamba");
  params.emplace_back("input", x);
  auto weights = testutil::random_tensor<double>(data, {1, 6, 4});
  auto loss_fn = [&]() {
    // weighted sum keeps every output element in play
    return mean_all(mul(block.forward(x), weights));
  };
  auto res = testutil::finite_difference_check(params, loss_fn);
  INFO("worst: ", res.worst);
  CHECK(res.checked > 200);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("mamba_block gradients stay finite on random batches") {
  Rng rng(31);
  MambaBlock<float> block(6, 8, 2, 4, rng);
  for (int rep = 0; rep < 3; ++rep) {
    Rng data(100 + rep);
    auto x = testutil::random_tensor<float>(data, {2, 32, 6}, -3.0, 3.0);
    x.set_requires_grad(true);
    auto loss = mean_all(mul(block.forward(x), block.forward(x)));
    backward(loss);
    NamedParams<float> params;
    block.collect_params(params, "m");
    for (auto& [name, p] : params) {
      REQUIRE(!p.grad().empty());
      CHECK(all_finite(p.grad()));
      p.zero_grad();
    }
    CHECK(all_finite(x.grad()));
  }
}
