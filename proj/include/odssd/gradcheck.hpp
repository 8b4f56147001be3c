#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "odssd/tensor.hpp"

namespace odssd {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = true;
  /// "<input>[<index>]: analytic=... numeric=..." for the worst element.
  std::string worst;
};

/// Scalar-valued closure over the tensors being checked. It must rebuild the
/// computation on every call (values change between calls) and record it on
/// the graph it is given.
using LossFn = std::function<Tensor<double>(Graph<double>*)>;

/// Compares reverse-pass gradients of `loss` w.r.t. each tensor in `wrt`
/// against central differences. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-5).
/// `max_per_tensor` > 0 samples that many coordinates per tensor (seeded).
GradCheckReport grad_check_fn(const LossFn& loss, std::span<Tensor<double>> wrt, double tolerance,
                              std::size_t max_per_tensor = 0, std::uint64_t seed = 7, double eps = 1e-6);

using OpUnderTest = std::function<Tensor<double>(Graph<double>*, std::span<const Tensor<double>>)>;

/// Builds random inputs of the given shapes, reduces the op output with a
/// random weighted sum and runs grad_check_fn on all inputs.
GradCheckReport grad_check(const OpUnderTest& op, const std::vector<Shape>& input_shapes, double tolerance,
                           std::uint64_t seed = 7);

}  // namespace odssd
