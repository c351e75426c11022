#include "props/ops.hpp"

#include <cmath>
#include <limits>

namespace props {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) +
                         " vs " + shape_string(b.rows(), b.cols()));
  }
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

Matrix row_softmax(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

// dx = y ⊙ (g - rowsum(g ⊙ y))
Matrix softmax_backward(const Matrix& y, const Matrix& g) {
  Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
  return (y.array() * (g.colwise() - dots).array()).matrix();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.rows(), a.cols()) +
                         " x " + shape_string(b.rows(), b.cols()));
  }
  Matrix out = a.value() * b.value();
  return make_op(std::move(out), "matmul", {a, b}, [](Node& self) {
    Node& A = in(self, 0);
    Node& B = in(self, 1);
    if (A.requires_grad) A.accumulate(self.grad * B.value.transpose());
    if (B.requires_grad) B.accumulate(A.value.transpose() * self.grad);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_string(a.rows(), a.cols()) +
                         " x " + shape_string(b.rows(), b.cols()) + "^T");
  }
  Matrix out = a.value() * b.value().transpose();
  return make_op(std::move(out), "matmul_nt", {a, b}, [](Node& self) {
    Node& A = in(self, 0);
    Node& B = in(self, 1);
    if (A.requires_grad) A.accumulate(self.grad * B.value);
    if (B.requires_grad) B.accumulate(self.grad.transpose() * A.value);
  });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return make_op(std::move(out), "transpose", {a}, [](Node& self) {
    Node& A = in(self, 0);
    if (A.requires_grad) A.accumulate(self.grad.transpose());
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return make_op(std::move(out), "add", {a, b}, [](Node& self) {
    if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad);
    if (in(self, 1).requires_grad) in(self, 1).accumulate(self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return make_op(std::move(out), "sub", {a, b}, [](Node& self) {
    if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad);
    if (in(self, 1).requires_grad) in(self, 1).accumulate(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return make_op(std::move(out), "mul", {a, b}, [](Node& self) {
    Node& A = in(self, 0);
    Node& B = in(self, 1);
    if (A.requires_grad) A.accumulate(self.grad.cwiseProduct(B.value));
    if (B.requires_grad) B.accumulate(self.grad.cwiseProduct(A.value));
  });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw DimensionError("add_row: row " + shape_string(row.rows(), row.cols()) +
                         " does not broadcast over " + shape_string(x.rows(), x.cols()));
  }
  Matrix out = x.value().rowwise() + row.value().row(0);
  return make_op(std::move(out), "add_row", {x, row}, [](Node& self) {
    if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad);
    if (in(self, 1).requires_grad) in(self, 1).accumulate(self.grad.colwise().sum());
  });
}

Tensor mul_col(const Tensor& col, const Tensor& x) {
  if (col.cols() != 1 || col.rows() != x.rows()) {
    throw DimensionError("mul_col: column " + shape_string(col.rows(), col.cols()) +
                         " does not broadcast over " + shape_string(x.rows(), x.cols()));
  }
  Matrix out = x.value().array().colwise() * col.value().col(0).array();
  return make_op(std::move(out), "mul_col", {col, x}, [](Node& self) {
    Node& C = in(self, 0);
    Node& X = in(self, 1);
    if (C.requires_grad) C.accumulate(self.grad.cwiseProduct(X.value).rowwise().sum());
    if (X.requires_grad) {
      Matrix g = self.grad.array().colwise() * C.value.col(0).array();
      X.accumulate(g);
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  Matrix out = x.value() * factor;
  return make_op(std::move(out), "scale", {x}, [factor](Node& self) {
    if (in(self, 0).requires_grad) in(self, 0).accumulate(self.grad * factor);
  });
}

Tensor mul_scalar(const Tensor& s, const Tensor& x) {
  if (s.size() != 1) {
    throw DimensionError("mul_scalar: expected [1,1] scalar, got " + shape_string(s.rows(), s.cols()));
  }
  Matrix out = x.value() * s.value()(0, 0);
  return make_op(std::move(out), "mul_scalar", {s, x}, [](Node& self) {
    Node& S = in(self, 0);
    Node& X = in(self, 1);
    if (S.requires_grad) S.accumulate(Matrix::Constant(1, 1, self.grad.cwiseProduct(X.value).sum()));
    if (X.requires_grad) X.accumulate(self.grad * S.value(0, 0));
  });
}

Tensor relu(const Tensor& x) {
  Matrix out = x.value().cwiseMax(0.0);
  return make_op(std::move(out), "relu", {x}, [](Node& self) {
    Node& X = in(self, 0);
    if (X.requires_grad) {
      X.accumulate((X.value.array() > 0.0).select(self.grad, 0.0).matrix());
    }
  });
}

Tensor tanh(const Tensor& x) {
  Matrix out = x.value().array().tanh().matrix();
  return make_op(std::move(out), "tanh", {x}, [](Node& self) {
    Node& X = in(self, 0);
    if (X.requires_grad) {
      X.accumulate((self.grad.array() * (1.0 - self.value.array().square())).matrix());
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis != 0 && axis != 1) {
    throw DimensionError("softmax: axis must be 0 or 1, got " + std::to_string(axis));
  }
  Matrix out = axis == 1 ? row_softmax(x.value()) : Matrix(row_softmax(x.value().transpose()).transpose());
  return make_op(std::move(out), "softmax", {x}, [axis](Node& self) {
    Node& X = in(self, 0);
    if (!X.requires_grad) return;
    if (axis == 1) {
      X.accumulate(softmax_backward(self.value, self.grad));
    } else {
      Matrix yt = self.value.transpose();
      Matrix gt = self.grad.transpose();
      X.accumulate(softmax_backward(yt, gt).transpose());
    }
  });
}

Tensor masked_softmax(const Tensor& x, const Mask& mask) {
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
    throw DimensionError("masked_softmax: mask " + shape_string(mask.rows(), mask.cols()) +
                         " vs scores " + shape_string(x.rows(), x.cols()));
  }
  const Matrix& v = x.value();
  Matrix out = Matrix::Zero(v.rows(), v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < v.cols(); ++c) {
      if (mask(r, c)) m = std::max(m, v(r, c));
    }
    if (!std::isfinite(m)) {
      throw ContractError("masked_softmax: row " + std::to_string(r) + " has no visible entries");
    }
    double total = 0.0;
    for (Index c = 0; c < v.cols(); ++c) {
      if (mask(r, c)) {
        out(r, c) = std::exp(v(r, c) - m);
        total += out(r, c);
      }
    }
    out.row(r) /= total;
  }
  return make_op(std::move(out), "masked_softmax", {x}, [](Node& self) {
    Node& X = in(self, 0);
    if (X.requires_grad) X.accumulate(softmax_backward(self.value, self.grad));
  });
}

Tensor log_softmax(const Tensor& x) {
  const Matrix& v = x.value();
  Matrix out(v.rows(), v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    const double lse = m + std::log((v.row(r).array() - m).exp().sum());
    out.row(r) = v.row(r).array() - lse;
  }
  return make_op(std::move(out), "log_softmax", {x}, [](Node& self) {
    Node& X = in(self, 0);
    if (!X.requires_grad) return;
    Matrix p = self.value.array().exp().matrix();
    Eigen::VectorXd gsum = self.grad.rowwise().sum();
    Matrix g = self.grad - (p.array().colwise() * gsum.array()).matrix();
    X.accumulate(g);
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (static_cast<Index>(targets.size()) != logits.rows() || logits.rows() == 0) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(logits.rows(), logits.cols()));
  }
  const Matrix& v = logits.value();
  Matrix probs = row_softmax(v);
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (Index r = 0; r < v.rows(); ++r) {
    const int t = tgt[static_cast<std::size_t>(r)];
    if (t < 0 || t >= v.cols()) {
      throw DimensionError("cross_entropy: target " + std::to_string(t) + " outside " +
                           std::to_string(v.cols()) + " classes");
    }
    const double m = v.row(r).maxCoeff();
    const double lse = m + std::log((v.row(r).array() - m).exp().sum());
    total += lse - v(r, t);
  }
  const double n = static_cast<double>(v.rows());
  return make_op(Matrix::Constant(1, 1, total / n), "cross_entropy", {logits},
                 [probs = std::move(probs), tgt = std::move(tgt), n](Node& self) {
                   Node& X = in(self, 0);
                   if (!X.requires_grad) return;
                   Matrix g = probs;
                   for (Index r = 0; r < g.rows(); ++r) g(r, tgt[static_cast<std::size_t>(r)]) -= 1.0;
                   X.accumulate(g * (self.grad(0, 0) / n));
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index d = x.cols();
  if (d == 0) {
    throw DimensionError("layer_norm: last dimension is 0");
  }
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.rows(), gain.cols()) + " / bias " +
                         shape_string(bias.rows(), bias.cols()) + " for input " +
                         shape_string(x.rows(), x.cols()));
  }
  const Matrix& v = x.value();
  Matrix normed(v.rows(), d);
  Eigen::VectorXd inv_std(v.rows());
  for (Index r = 0; r < v.rows(); ++r) {
    const double mu = v.row(r).mean();
    const double var = (v.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normed.row(r) = (v.row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (normed.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return make_op(std::move(out), "layer_norm", {x, gain, bias},
                 [normed = std::move(normed), inv_std = std::move(inv_std)](Node& self) {
                   Node& X = in(self, 0);
                   Node& G = in(self, 1);
                   Node& B = in(self, 2);
                   if (G.requires_grad) G.accumulate(self.grad.cwiseProduct(normed).colwise().sum());
                   if (B.requires_grad) B.accumulate(self.grad.colwise().sum());
                   if (X.requires_grad) {
                     Matrix gx = self.grad.array().rowwise() * G.value.row(0).array();
                     Eigen::VectorXd m1 = gx.rowwise().mean();
                     Eigen::VectorXd m2 = gx.cwiseProduct(normed).rowwise().mean();
                     Matrix dx = gx;
                     dx.colwise() -= m1;
                     dx -= (normed.array().colwise() * m2.array()).matrix();
                     dx = dx.array().colwise() * inv_std.array();
                     X.accumulate(dx);
                   }
                 });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale_factor, const Mask* mask) {
  if (k.rows() == 0) {
    throw ContractError("attention: empty key set");
  }
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: query " + shape_string(q.rows(), q.cols()) + " and key " +
                         shape_string(k.rows(), k.cols()) + " widths differ");
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: key " + shape_string(k.rows(), k.cols()) + " and value " +
                         shape_string(v.rows(), v.cols()) + " lengths differ");
  }
  const double s = scale_factor < 0.0 ? 1.0 / std::sqrt(static_cast<double>(q.cols())) : scale_factor;
  Tensor scores = scale(matmul_nt(q, k), s);
  Tensor weights = mask ? masked_softmax(scores, *mask) : softmax(scores, 1);
  return matmul(weights, v);
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw DimensionError("concat_rows: no inputs");
  }
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: width " + std::to_string(p.cols()) + " vs " + std::to_string(cols));
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_op(std::move(out), "concat_rows", std::vector<Tensor>(parts.begin(), parts.end()),
                 [offsets = std::move(offsets)](Node& self) {
                   for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                     Node& P = *self.inputs[i];
                     if (P.requires_grad) P.accumulate(self.grad.middleRows(offsets[i], P.value.rows()));
                   }
                 });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw DimensionError("concat_cols: no inputs");
  }
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: height " + std::to_string(p.rows()) + " vs " + std::to_string(rows));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_op(std::move(out), "concat_cols", std::vector<Tensor>(parts.begin(), parts.end()),
                 [offsets = std::move(offsets)](Node& self) {
                   for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                     Node& P = *self.inputs[i];
                     if (P.requires_grad) P.accumulate(self.grad.middleCols(offsets[i], P.value.cols()));
                   }
                 });
}

Tensor slice_rows(const Tensor& x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(x.rows(), x.cols()));
  }
  Matrix out = x.value().middleRows(begin, count);
  return make_op(std::move(out), "slice_rows", {x}, [begin, count](Node& self) {
    Node& X = in(self, 0);
    if (!X.requires_grad) return;
    Matrix g = Matrix::Zero(X.value.rows(), X.value.cols());
    g.middleRows(begin, count) = self.grad;
    X.accumulate(g);
  });
}

Tensor slice_cols(const Tensor& x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(x.rows(), x.cols()));
  }
  Matrix out = x.value().middleCols(begin, count);
  return make_op(std::move(out), "slice_cols", {x}, [begin, count](Node& self) {
    Node& X = in(self, 0);
    if (!X.requires_grad) return;
    Matrix g = Matrix::Zero(X.value.rows(), X.value.cols());
    g.middleCols(begin, count) = self.grad;
    X.accumulate(g);
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  Matrix out(static_cast<Index>(ids.size()), table.cols());
  std::vector<int> rows(ids.begin(), ids.end());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= table.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(rows[i]) + " outside table of " +
                           std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Index>(i)) = table.value().row(rows[i]);
  }
  return make_op(std::move(out), "gather_rows", {table}, [rows = std::move(rows)](Node& self) {
    Node& T = in(self, 0);
    if (!T.requires_grad) return;
    Matrix g = Matrix::Zero(T.value.rows(), T.value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += self.grad.row(static_cast<Index>(i));
    T.accumulate(g);
  });
}

Tensor sum(const Tensor& x) {
  return make_op(Matrix::Constant(1, 1, x.value().sum()), "sum", {x}, [](Node& self) {
    Node& X = in(self, 0);
    if (X.requires_grad) X.accumulate(Matrix::Constant(X.value.rows(), X.value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) {
    throw DimensionError("mean of an empty tensor");
  }
  const double n = static_cast<double>(x.size());
  return make_op(Matrix::Constant(1, 1, x.value().sum() / n), "mean", {x}, [n](Node& self) {
    Node& X = in(self, 0);
    if (X.requires_grad) X.accumulate(Matrix::Constant(X.value.rows(), X.value.cols(), self.grad(0, 0) / n));
  });
}

Tensor sum_rows(const Tensor& x) {
  Matrix out = x.value().colwise().sum();
  return make_op(std::move(out), "sum_rows", {x}, [](Node& self) {
    Node& X = in(self, 0);
    if (!X.requires_grad) return;
    Matrix g = self.grad.replicate(X.value.rows(), 1);
    X.accumulate(g);
  });
}

Tensor max_rows(const Tensor& x) {
  if (x.rows() == 0) {
    throw DimensionError("max_rows of a tensor with no rows");
  }
  const Matrix& v = x.value();
  Matrix out(1, v.cols());
  std::vector<Index> arg(static_cast<std::size_t>(v.cols()));
  for (Index c = 0; c < v.cols(); ++c) {
    Index best = 0;
    for (Index r = 1; r < v.rows(); ++r) {
      if (v(r, c) > v(best, c)) best = r;
    }
    arg[static_cast<std::size_t>(c)] = best;
    out(0, c) = v(best, c);
  }
  return make_op(std::move(out), "max_rows", {x}, [arg = std::move(arg)](Node& self) {
    Node& X = in(self, 0);
    if (!X.requires_grad) return;
    Matrix g = Matrix::Zero(X.value.rows(), X.value.cols());
    for (std::size_t c = 0; c < arg.size(); ++c) g(arg[c], static_cast<Index>(c)) = self.grad(0, static_cast<Index>(c));
    X.accumulate(g);
  });
}

Tensor straight_through(const Matrix& hard, const Tensor& soft) {
  if (hard.rows() != soft.rows() || hard.cols() != soft.cols()) {
    throw DimensionError("straight_through: hard " + shape_string(hard.rows(), hard.cols()) + " vs soft " +
                         shape_string(soft.rows(), soft.cols()));
  }
  return make_op(hard, "straight_through", {soft}, [](Node& self) {
    Node& S = in(self, 0);
    if (S.requires_grad) S.accumulate(self.grad);
  });
}

Tensor detach(const Tensor& x) { return Tensor(x.value(), false); }

}  // namespace props
