#pragma once

#include "props/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace props {

/// |a - b| / max(floor, |a|, |b|).
double relative_error(double a, double b, double floor = 1e-8);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct CoordinateCheck {
  std::string parameter;
  Index row = 0;
  Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<CoordinateCheck> checks;
  double max_rel_error = 0.0;
  const CoordinateCheck* worst() const;
  bool passed(double tolerance) const { return !checks.empty() && max_rel_error < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coordinates = 0;  // 0 checks every coordinate
  std::uint64_t seed = 0;
  double floor = 1e-8;  // denominator floor of the relative error
};

/// Central-difference check of d(loss)/d(params). `loss` must rebuild the
/// graph from the current parameter values on every call.
GradCheckReport check_gradients(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& params,
                                const GradCheckOptions& options = {});

}  // namespace props
