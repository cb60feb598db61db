#pragma once

// Central-difference gradient check shared by the test suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "setrank/tensor.hpp"

namespace setrank::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = normal(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), 1e-12);
}

// Largest relative error over the given inputs of a scalar-valued function.
inline double gradient_error(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  f().backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.size() != t.size()) analytic.assign(t.size(), 0.0);
    std::vector<double> numeric(t.size());
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      double plus, minus;
      {
        NoGradGuard guard;
        w[i] = saved + h;
        plus = f().item();
        w[i] = saved - h;
        minus = f().item();
      }
      w[i] = saved;
      numeric[i] = (plus - minus) / (2 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace setrank::testing
