#include "props/condenc.hpp"

#include <algorithm>

namespace props {

int default_max_length(std::string_view kind) {
  if (kind == "instruction") return 50;
  if (kind == "input") return 64;
  return 5;
}

std::vector<int> clip_pad(std::vector<int> ids, int length) {
  if (length < 1) {
    throw ConfigError("condition length must be at least 1, got " + std::to_string(length));
  }
  ids.resize(static_cast<std::size_t>(length), Vocab::kPad);
  return ids;
}

Condition make_condition(std::string name, std::string text, const Vocab& vocab, int max_length) {
  Condition c;
  c.max_length = max_length > 0 ? max_length : default_max_length(name);
  std::vector<int> ids = tokenize(text, vocab);
  c.length = static_cast<int>(std::min<std::size_t>(ids.size(), static_cast<std::size_t>(c.max_length)));
  c.tokens = clip_pad(std::move(ids), c.max_length);
  c.name = std::move(name);
  c.text = std::move(text);
  return c;
}

ConditionSet::ConditionSet(std::vector<Condition> items) : items_(std::move(items)) {
  if (items_.empty()) {
    throw ContractError("a condition set needs at least one condition");
  }
}

ConditionSet make_condition_set(const NamedTexts& texts, const Vocab& vocab, int instruction_max_length) {
  std::vector<Condition> items;
  for (const auto& [name, text] : texts) {
    const int len = name == "instruction" ? instruction_max_length : 0;
    items.push_back(make_condition(name, text, vocab, len));
  }
  return ConditionSet(std::move(items));
}

ConditionEncoder ConditionEncoder::create(Index d, CounterRng& rng, bool requires_grad, PoolingMode mode) {
  ConditionEncoder e;
  e.score = Tensor(uniform_init(d, 1, d, rng), requires_grad);
  e.projection = Tensor(uniform_init(d, d, d, rng), requires_grad);
  e.mode = mode;
  return e;
}

Tensor ConditionEncoder::encode(const Tensor& sequence, Index length) const {
  if (length < 1) {
    throw EmptyConditionError("cannot encode a condition made only of padding");
  }
  // Pads only ever sit at the tail, so dropping them is the same as masking.
  Tensor tokens = length == sequence.rows() ? sequence : slice_rows(sequence, 0, length);
  Tensor weights = softmax(matmul(tokens, score), 0);  // [T,1]
  Tensor weighted = mul_col(weights, matmul(tokens, projection));
  return mode == PoolingMode::attentive_max ? max_rows(weighted) : sum_rows(weighted);
}

void ConditionEncoder::collect(const std::string& prefix, ParameterMap& out) const {
  out.emplace(prefix + ".score", score);
  out.emplace(prefix + ".projection", projection);
}

Tensor build_condition_matrix(const ConditionSet& conditions, const Tensor& token_embedding,
                              const ConditionEncoder& encoder) {
  std::vector<Tensor> rows;
  rows.reserve(conditions.size());
  for (const auto& c : conditions) {
    rows.push_back(encoder.encode(gather_rows(token_embedding, c.tokens), c.length));
  }
  return concat_rows(rows);
}

}  // namespace props
