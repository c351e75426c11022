#pragma once

#include "props/tensor.hpp"

#include <span>
#include <vector>

// Differentiable operations over Tensor. Every op validates shapes and throws
// DimensionError naming both operands when they disagree.
namespace props {

Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// x[m,n] + row[1,n], broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& row);
/// col[m,1] ⊙ x[m,n], broadcast over columns.
Tensor mul_col(const Tensor& col, const Tensor& x);
Tensor scale(const Tensor& x, double factor);
/// s[1,1] · x.
Tensor mul_scalar(const Tensor& s, const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& x, double factor) { return scale(x, factor); }
inline Tensor operator*(double factor, const Tensor& x) { return scale(x, factor); }

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Numerically stabilized softmax along axis 0 (columns) or 1 (rows).
Tensor softmax(const Tensor& x, int axis = 1);
/// Row softmax over the entries where mask is true; masked entries are 0.
Tensor masked_softmax(const Tensor& x, const Mask& mask);
Tensor log_softmax(const Tensor& x);
/// Mean over rows of -log softmax(logits)[row, target[row]].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Row-wise layer normalization, eps inside the square root.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// softmax(scale · Q Kᵀ) V. A negative scale selects 1/sqrt(dh).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale = -1.0,
                 const Mask* mask = nullptr);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, Index begin, Index count);
Tensor slice_cols(const Tensor& x, Index begin, Index count);
/// Embedding lookup: row i of the result is table[ids[i]].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Column sums, [m,n] -> [1,n].
Tensor sum_rows(const Tensor& x);
/// Column maxima, [m,n] -> [1,n]; the gradient goes to the first maximizer.
Tensor max_rows(const Tensor& x);

/// Forward value is `hard`; the gradient is passed unchanged to `soft`.
Tensor straight_through(const Matrix& hard, const Tensor& soft);
Tensor detach(const Tensor& x);

}  // namespace props
