#include "odssd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "odssd/ops.hpp"
#include "odssd/rng.hpp"

namespace odssd {

GradCheckReport grad_check_fn(const LossFn& loss, std::span<Tensor<double>> wrt, double tolerance,
                              std::size_t max_per_tensor, std::uint64_t seed, double eps) {
  for (auto& t : wrt) t.set_requires_grad(true);
  Graph<double> graph;
  auto value = loss(&graph);
  graph.backward(value, wrt);
  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) analytic.emplace_back(t.grad().begin(), t.grad().end());

  SplitMix64 rng(seed);
  GradCheckReport report;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto& t = wrt[k];
    std::vector<std::size_t> coords(static_cast<std::size_t>(t.numel()));
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_per_tensor > 0 && coords.size() > max_per_tensor) {
      for (std::size_t i = 0; i < max_per_tensor; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(max_per_tensor);
    }
    for (auto i : coords) {
      double& v = t.values()[i];
      const double saved = v;
      v = saved + eps;
      const double up = loss(nullptr).item();
      v = saved - eps;
      const double down = loss(nullptr).item();
      v = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-5});
      ++report.checked;
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        std::ostringstream os;
        os << "input " << k << "[" << i << "]: analytic=" << a << " numeric=" << numeric;
        report.worst = os.str();
      }
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

GradCheckReport grad_check(const OpUnderTest& op, const std::vector<Shape>& input_shapes, double tolerance,
                           std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Tensor<double>> inputs;
  for (const auto& s : input_shapes) {
    Tensor<double> t(s);
    for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
    inputs.push_back(t);
  }
  // Output size is only known after one evaluation.
  const auto probe = op(nullptr, inputs);
  std::vector<double> coeffs(static_cast<std::size_t>(probe.numel()));
  for (auto& c : coeffs) c = rng.uniform(-1.0, 1.0);
  LossFn loss = [&](Graph<double>* g) {
    auto out = op(g, inputs);
    return ops::weighted_sum<double>(g, out, coeffs);
  };
  return grad_check_fn(loss, inputs, tolerance, 0, seed + 1);
}

}  // namespace odssd
