#include "props/gradcheck.hpp"

#include "props/rng.hpp"

#include <algorithm>
#include <cmath>

namespace props {

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

const CoordinateCheck* GradCheckReport::worst() const {
  if (checks.empty()) return nullptr;
  return &*std::max_element(checks.begin(), checks.end(),
                            [](const auto& a, const auto& b) { return a.rel_error < b.rel_error; });
}

GradCheckReport check_gradients(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& params,
                                const GradCheckOptions& options) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  backward(loss());
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.tensor.grad());

  struct Coord {
    std::size_t param;
    Index row, col;
  };
  std::vector<Coord> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (Index r = 0; r < params[i].tensor.rows(); ++r) {
      for (Index c = 0; c < params[i].tensor.cols(); ++c) coords.push_back({i, r, c});
    }
  }
  if (options.max_coordinates > 0 && coords.size() > options.max_coordinates) {
    CounterRng rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (const auto& c : coords) {
    Tensor t = params[c.param].tensor;
    double& slot = t.mutable_value()(c.row, c.col);
    const double original = slot;
    slot = original + options.step;
    const double plus = loss().item();
    slot = original - options.step;
    const double minus = loss().item();
    slot = original;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double a = analytic[c.param](c.row, c.col);
    CoordinateCheck check{params[c.param].name, c.row, c.col, a, numeric, relative_error(a, numeric, options.floor)};
    report.max_rel_error = std::max(report.max_rel_error, check.rel_error);
    report.checks.push_back(std::move(check));
  }
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  return report;
}

}  // namespace props
