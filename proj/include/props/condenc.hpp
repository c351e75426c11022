#pragma once

#include "props/nn.hpp"
#include "props/vocab.hpp"

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace props {

struct EmptyConditionError : ContractError {
  using ContractError::ContractError;
};

/// Maximum token budget per condition kind: instruction 50, input text 64,
/// every metadata kind 5.
int default_max_length(std::string_view kind);

/// Clip to the first `length` ids or pad the tail with Vocab::kPad.
std::vector<int> clip_pad(std::vector<int> ids, int length);

/// One named conditioning text, tokenized to a fixed length.
struct Condition {
  std::string name;
  std::string text;
  std::vector<int> tokens;  // exactly max_length ids, pads only at the tail
  int length = 0;           // non-pad prefix
  int max_length = 0;
};

Condition make_condition(std::string name, std::string text, const Vocab& vocab, int max_length = 0);

/// Ordered conditions of one example; the instruction comes first.
class ConditionSet {
 public:
  ConditionSet() = default;
  explicit ConditionSet(std::vector<Condition> items);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const Condition& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<Condition>& items() const { return items_; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<Condition> items_;
};

using NamedTexts = std::vector<std::pair<std::string, std::string>>;

ConditionSet make_condition_set(const NamedTexts& texts, const Vocab& vocab, int instruction_max_length = 0);

enum class PoolingMode { attentive_max, weighted_sum };

/// Condition encoder f(·): fixed-size summary of a variable-length condition.
///
/// attentive_max: a = softmax(x w) over non-pad rows, out_j = max_t a_t (x_t W_p)_j.
/// weighted_sum:  out = sum_t a_t (x_t W_p).
struct ConditionEncoder {
  Tensor score;       // [d,1]
  Tensor projection;  // [d,d]
  PoolingMode mode = PoolingMode::attentive_max;

  static ConditionEncoder create(Index d, CounterRng& rng, bool requires_grad,
                                 PoolingMode mode = PoolingMode::attentive_max);
  /// `sequence` is [T,d]; rows at and beyond `length` are padding.
  Tensor encode(const Tensor& sequence, Index length) const;
  void collect(const std::string& prefix, ParameterMap& out) const;
};

/// Rows of the condition embedding matrix [E], one per condition, in order.
Tensor build_condition_matrix(const ConditionSet& conditions, const Tensor& token_embedding,
                              const ConditionEncoder& encoder);

}  // namespace props
