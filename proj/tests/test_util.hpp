#pragma once

#include "props/ops.hpp"
#include "props/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

using props::Matrix;
using props::Tensor;

inline Matrix random_matrix(props::CounterRng& rng, props::Index rows, props::Index cols, double lo = -2.0,
                            double hi = 2.0) {
  Matrix m(rows, cols);
  for (props::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

// Central differences over every coordinate of every leaf, independent of
// the library's own checker. Returns the worst relative error.
inline double fd_max_error(const std::function<Tensor()>& loss, std::vector<Tensor> leaves, double h = 1e-5) {
  for (auto& t : leaves) t.zero_grad();
  Tensor out = loss();
  props::backward(out);
  double worst = 0.0;
  for (auto& t : leaves) {
    const Matrix analytic = t.grad();
    Matrix& v = t.mutable_value();
    for (props::Index i = 0; i < v.size(); ++i) {
      const double keep = v.data()[i];
      v.data()[i] = keep + h;
      const double up = loss().item();
      v.data()[i] = keep - h;
      const double down = loss().item();
      v.data()[i] = keep;
      worst = std::max(worst, rel_err(analytic.data()[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

// Scalar probe sum(x ⊙ w) with fixed random weights, so every output
// coordinate contributes a distinct amount to the loss.
inline Tensor probe(const Tensor& x, const Matrix& w) { return props::sum(props::mul(x, Tensor(w))); }

}  // namespace testutil
