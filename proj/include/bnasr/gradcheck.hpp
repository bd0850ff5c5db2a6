#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bnasr/layers.hpp"

namespace bnasr {

struct GradCheckResult {
  double max_relative_error = 0;
  std::string worst;  // "<tensor>[<index>]" of the worst element
  std::size_t checked = 0;
};

/// Elementwise relative error |a - n| / max(|a|, |n|, floor). The floor keeps
/// entries whose true gradient is ~0 from dividing rounding noise by ~0.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Central differences of `loss` with respect to every entry of `values`,
/// compared with `analytic`; folds into `result`.
template <typename Real>
void compare_with_finite_differences(std::span<Real> values, std::span<const Real> analytic,
                                     const std::function<double()>& loss, double epsilon,
                                     const std::string& name, GradCheckResult& result) {
  if (values.size() != analytic.size()) {
    throw ContractViolation("gradient of " + name + " has " + std::to_string(analytic.size()) +
                            " entries, value has " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real saved = values[i];
    values[i] = Real(saved + epsilon);
    const double plus = loss();
    values[i] = Real(saved - epsilon);
    const double minus = loss();
    values[i] = saved;
    const double numeric = (plus - minus) / (2 * epsilon);
    const double err = relative_error(analytic[i], numeric);
    ++result.checked;
    if (err > result.max_relative_error || result.worst.empty()) {
      result.max_relative_error = std::max(result.max_relative_error, err);
      if (err >= result.max_relative_error) result.worst = name + "[" + std::to_string(i) + "]";
    }
  }
}

/// Checks a layer's backward against central finite differences of the scalar
/// loss sum(forward(x) * R) for a fixed random projection R. Covers the input
/// gradient and every trainable parameter.
template <typename Real, typename Layer>
GradCheckResult check_gradient(Layer& layer, const Tensor<Real>& input, double epsilon,
                               Mode mode = Mode::kEval, std::uint64_t seed = 17) {
  if (!(epsilon > 0)) throw ContractViolation("check_gradient: epsilon must be positive");
  using Cache = typename Layer::Cache;

  Tensor<Real> x = input;
  Cache c1, c2;
  const Tensor<Real> y1 = layer.forward(x, c1, mode);
  const Tensor<Real> y2 = layer.forward(x, c2, mode);
  if (!(y1 == y2)) throw ContractViolation("check_gradient: layer is not deterministic");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<Real> projection(y1.shape());
  for (auto& v : projection.values()) v = Real(normal(rng));

  ParamList<Real> params;
  layer.collect("param", params);
  for (auto& p : params) {
    if (p.trainable) p.tensor->zero_grad();
  }
  Cache cache;
  layer.forward(x, cache, mode);
  const Tensor<Real> gx = layer.backward(projection, cache);
  require_shape(gx, x.shape(), "check_gradient input gradient");
  std::vector<std::vector<Real>> analytic;
  for (auto& p : params) {
    if (!p.trainable) continue;
    if (p.tensor->grad().size() != p.tensor->size()) {
      throw ContractViolation("parameter " + p.name + " has no gradient slot of matching shape");
    }
    analytic.emplace_back(p.tensor->grad().begin(), p.tensor->grad().end());
  }

  const std::function<double()> loss = [&] {
    Cache scratch;
    const Tensor<Real> y = layer.forward(x, scratch, mode);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += double(y[i]) * double(projection[i]);
    return s;
  };

  GradCheckResult result;
  compare_with_finite_differences<Real>(x.values(), gx.values(), loss, epsilon, "input", result);
  std::size_t k = 0;
  for (auto& p : params) {
    if (!p.trainable) continue;
    compare_with_finite_differences<Real>(p.tensor->values(), analytic[k++], loss, epsilon, p.name,
                                          result);
  }
  return result;
}

}  // namespace bnasr
