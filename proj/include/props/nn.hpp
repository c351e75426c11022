#pragma once

#include "props/gradcheck.hpp"
#include "props/ops.hpp"
#include "props/rng.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

// Small building blocks shared by the frozen model and the prompt generators.
namespace props {

/// Ordered name -> parameter handle. Ordering makes hashing and checkpoint
/// layout deterministic.
using ParameterMap = std::map<std::string, Tensor>;

std::size_t parameter_count(const ParameterMap& params);
std::vector<NamedTensor> as_named(const ParameterMap& params);
/// FNV-1a over names, shapes and raw parameter bytes.
std::uint64_t fingerprint(const ParameterMap& params);

using Snapshot = std::map<std::string, Matrix>;
/// Same hash as fingerprint(ParameterMap) over stored values.
std::uint64_t fingerprint(const Snapshot& values);
Snapshot snapshot(const ParameterMap& params);
void restore(const ParameterMap& params, const Snapshot& values);
void zero_grads(const ParameterMap& params);

/// Uniform in ±1/sqrt(fan_in).
Matrix uniform_init(Index rows, Index cols, Index fan_in, CounterRng& rng);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]

  static Linear create(Index in, Index out, CounterRng& rng, bool requires_grad);
  Tensor operator()(const Tensor& x) const { return add_row(matmul(x, weight), bias); }
  void collect(const std::string& prefix, ParameterMap& out) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams create(Index d, bool requires_grad);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
  void collect(const std::string& prefix, ParameterMap& out) const;
};

struct FeedForward {
  Linear in;
  Linear out;

  static FeedForward create(Index d, Index hidden, CounterRng& rng, bool requires_grad);
  Tensor operator()(const Tensor& x) const { return out(relu(in(x))); }
  void collect(const std::string& prefix, ParameterMap& out_map) const;
};

}  // namespace props
