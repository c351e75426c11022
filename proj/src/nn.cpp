#include "props/nn.hpp"

#include <cmath>
#include <cstring>

namespace props {

std::size_t parameter_count(const ParameterMap& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += static_cast<std::size_t>(t.size());
  return n;
}

std::vector<NamedTensor> as_named(const ParameterMap& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back({name, t});
  return out;
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
}

}  // namespace

namespace {

void fnv_matrix(std::uint64_t& h, const std::string& name, const Matrix& m) {
  fnv(h, name.data(), name.size());
  const std::int64_t dims[2] = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
  fnv(h, dims, sizeof(dims));
  fnv(h, m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
}

}  // namespace

std::uint64_t fingerprint(const ParameterMap& params) {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : params) fnv_matrix(h, name, t.value());
  return h;
}

std::uint64_t fingerprint(const Snapshot& values) {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, m] : values) fnv_matrix(h, name, m);
  return h;
}

Snapshot snapshot(const ParameterMap& params) {
  Snapshot out;
  for (const auto& [name, t] : params) out.emplace(name, t.value());
  return out;
}

void restore(const ParameterMap& params, const Snapshot& values) {
  for (const auto& [name, t] : params) {
    auto it = values.find(name);
    if (it == values.end()) {
      throw ContractError("snapshot has no entry for " + name);
    }
    Tensor handle = t;
    handle.mutable_value() = it->second;
  }
}

void zero_grads(const ParameterMap& params) {
  for (const auto& [name, t] : params) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

Matrix uniform_init(Index rows, Index cols, Index fan_in, CounterRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1)));
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

Linear Linear::create(Index in, Index out, CounterRng& rng, bool requires_grad) {
  Linear l;
  l.weight = Tensor(uniform_init(in, out, in, rng), requires_grad);
  l.bias = Tensor(uniform_init(1, out, in, rng), requires_grad);
  return l;
}

void Linear::collect(const std::string& prefix, ParameterMap& out) const {
  out.emplace(prefix + ".weight", weight);
  out.emplace(prefix + ".bias", bias);
}

LayerNormParams LayerNormParams::create(Index d, bool requires_grad) {
  return {Tensor(Matrix::Ones(1, d), requires_grad), Tensor(Matrix::Zero(1, d), requires_grad)};
}

void LayerNormParams::collect(const std::string& prefix, ParameterMap& out) const {
  out.emplace(prefix + ".gain", gain);
  out.emplace(prefix + ".bias", bias);
}

FeedForward FeedForward::create(Index d, Index hidden, CounterRng& rng, bool requires_grad) {
  return {Linear::create(d, hidden, rng, requires_grad), Linear::create(hidden, d, rng, requires_grad)};
}

void FeedForward::collect(const std::string& prefix, ParameterMap& out_map) const {
  in.collect(prefix + ".in", out_map);
  out.collect(prefix + ".out", out_map);
}

}  // namespace props
