#pragma once

// Shared helpers for the unit and acceptance suites.

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "salm2/rng.hpp"
#include "salm2/tensor.hpp"

namespace testutil {

inline std::vector<double> random_vec(salm2::Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

template <typename T>
salm2::Tensor<T> random_tensor(salm2::Rng& rng, salm2::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(static_cast<size_t>(salm2::shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return salm2::Tensor<T>::from(std::move(shape), std::move(v));
}

struct FdResult {
  double max_rel_err = 0.0;
  std::string worst;
  int64_t checked = 0;
};

// Central finite differences against analytic gradients for every element of
// every listed parameter. loss_fn must rebuild the graph from current
// parameter values and return a scalar tensor.
inline FdResult finite_difference_check(salm2::NamedParams<double>& params,
                                        const std::function<salm2::Tensor<double>()>& loss_fn,
                                        double step = 1e-5) {
  using namespace salm2;
  for (auto& [name, p] : params) p.zero_grad();
  auto loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& [name, p] : params) {
    analytic.push_back(p.grad().empty() ? std::vector<double>(p.numel(), 0.0) : p.grad());
  }
  FdResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].second.values();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      double lp, lm;
      {
        NoGradGuard ng;
        vals[i] = keep + step;
        lp = loss_fn().item();
        vals[i] = keep - step;
        lm = loss_fn().item();
        vals[i] = keep;
      }
      const double fd = (lp - lm) / (2.0 * step);
      const double an = analytic[pi][i];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = params[pi].first + "[" + std::to_string(i) + "] fd=" + std::to_string(fd) +
                    " analytic=" + std::to_string(an);
      }
    }
  }
  return res;
}

// Unique scratch directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("salm2_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
