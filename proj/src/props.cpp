#include "props/props.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace props {

void PropsConfig::validate() const {
  if (n_rules < 1) throw ConfigError("need at least one rule");
  if (top_k < 1 || top_k > n_rules) {
    throw ConfigError("top_k " + std::to_string(top_k) + " outside [1, " + std::to_string(n_rules) + "]");
  }
  if (layers < 1) throw ConfigError("need at least one generator layer");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (prompt_length < 1) throw ConfigError("prompt length must be at least 1");
  if (width < 1 || ffn_dim < 1) throw ConfigError("generator widths must be at least 1");
}

RuleSet RuleSet::create(int n_rules, Index d, Index ffn_dim, Index d_model, CounterRng& rng) {
  RuleSet rs;
  rs.embeddings = Tensor(uniform_init(n_rules, d, d, rng), true);
  for (int i = 0; i < n_rules; ++i) {
    RuleHead h;
    h.query = Tensor(uniform_init(d, d, d, rng), true);
    h.key = Tensor(uniform_init(d, d, d, rng), true);
    h.value = Tensor(uniform_init(d, d, d, rng), true);
    h.output = Tensor(uniform_init(d, d, d, rng), true);
    rs.heads.push_back(std::move(h));
  }
  rs.select_query = Tensor(uniform_init(d, d, d, rng), true);
  rs.context_query = Tensor(uniform_init(d, d, d, rng), true);
  rs.context_key = Tensor(uniform_init(d, d, d, rng), true);
  rs.norm = LayerNormParams::create(d, true);
  rs.transition = FeedForward::create(d, ffn_dim, rng, true);
  rs.out = Linear::create(d, 2 * d_model, rng, true);
  return rs;
}

void RuleSet::collect(const std::string& prefix, ParameterMap& out) const {
  out.emplace(prefix + ".rule_embeddings", embeddings);
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const std::string p = prefix + ".rule." + std::to_string(i);
    out.emplace(p + ".query", heads[i].query);
    out.emplace(p + ".key", heads[i].key);
    out.emplace(p + ".value", heads[i].value);
    out.emplace(p + ".output", heads[i].output);
  }
  out.emplace(prefix + ".select_query", select_query);
  out.emplace(prefix + ".context_query", context_query);
  out.emplace(prefix + ".context_key", context_key);
  norm.collect(prefix + ".norm", out);
  transition.collect(prefix + ".transition", out);
  this->out.collect(prefix + ".out", out);
}

RuleSet RuleSet::permuted(const std::vector<int>& perm) const {
  if (perm.size() != heads.size()) {
    throw DimensionError("permutation of size " + std::to_string(perm.size()) + " for " +
                         std::to_string(heads.size()) + " rules");
  }
  auto copy = [](const Tensor& t) { return t.clone(t.requires_grad()); };
  RuleSet rs;
  Matrix emb(embeddings.rows(), embeddings.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto& h = heads[static_cast<std::size_t>(perm[i])];
    emb.row(static_cast<Index>(i)) = embeddings.value().row(perm[i]);
    rs.heads.push_back({copy(h.query), copy(h.key), copy(h.value), copy(h.output)});
  }
  rs.embeddings = Tensor(emb, embeddings.requires_grad());
  rs.select_query = copy(select_query);
  rs.context_query = copy(context_query);
  rs.context_key = copy(context_key);
  rs.norm = {copy(norm.gain), copy(norm.bias)};
  rs.transition = {{copy(transition.in.weight), copy(transition.in.bias)},
                   {copy(transition.out.weight), copy(transition.out.bias)}};
  rs.out = {copy(out.weight), copy(out.bias)};
  return rs;
}

TopK gumbel_top_k(const Eigen::RowVectorXd& scores, int k, double tau, CounterRng* rng) {
  const Index n = scores.size();
  if (k < 1 || k > n) {
    throw ConfigError("cannot select " + std::to_string(k) + " of " + std::to_string(n) + " rules");
  }
  TopK out;
  out.noise = Eigen::RowVectorXd::Zero(n);
  if (rng) {
    for (Index i = 0; i < n; ++i) out.noise(i) = rng->gumbel();
  }
  const Eigen::RowVectorXd s = (scores + out.noise) / tau;
  out.hard = Matrix::Zero(1, n);
  out.soft = Matrix::Zero(1, n);
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  for (int round = 0; round < k; ++round) {
    Index best = -1;
    double top = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      if (!taken[static_cast<std::size_t>(i)] && (best < 0 || s(i) > top)) {
        best = i;
        top = s(i);
      }
    }
    double z = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (!taken[static_cast<std::size_t>(i)]) z += std::exp(s(i) - top);
    }
    for (Index i = 0; i < n; ++i) {
      if (!taken[static_cast<std::size_t>(i)]) out.soft(0, i) += std::exp(s(i) - top) / z;
    }
    taken[static_cast<std::size_t>(best)] = true;
    out.hard(0, best) = 1.0;
    out.indices.push_back(static_cast<int>(best));
  }
  return out;
}

RuleSelection select_rules(const Tensor& condition, const RuleSet& rules, int k, double tau, CounterRng* rng,
                           bool relaxed) {
  if (condition.rows() != 1 || condition.cols() != rules.width()) {
    throw DimensionError("condition vector " + shape_string(condition.rows(), condition.cols()) +
                         " does not match rule width " + std::to_string(rules.width()));
  }
  Tensor scores = matmul_nt(matmul(condition, rules.select_query), rules.embeddings);
  TopK pick = gumbel_top_k(scores.value().row(0), k, tau, rng);

  Tensor noisy = scale(add(scores, Tensor(Matrix(pick.noise))), 1.0 / tau);
  Mask visible = Mask::Constant(1, rules.size(), true);
  Tensor soft;
  for (int round = 0; round < k; ++round) {
    Tensor part = masked_softmax(noisy, visible);
    soft = round == 0 ? part : add(soft, part);
    visible(0, pick.indices[static_cast<std::size_t>(round)]) = false;
  }
  RuleSelection sel;
  sel.indices = std::move(pick.indices);
  sel.hard = std::move(pick.hard);
  sel.weights = relaxed ? soft : straight_through(sel.hard, soft);
  sel.soft = std::move(soft);
  sel.noise = std::move(pick.noise);
  return sel;
}

ContextSelection select_context(const Tensor& selected_rules, const Tensor& condition_matrix, const RuleSet& rules,
                                double tau, CounterRng* rng, bool relaxed) {
  if (condition_matrix.rows() < 1) {
    throw ContractError("context selection needs at least one condition");
  }
  Tensor q = matmul(selected_rules, rules.context_query);
  Tensor keys = matmul(condition_matrix, rules.context_key);
  Tensor scores = sum_rows(matmul_nt(q, keys));  // [1,|C|]
  const Index n = condition_matrix.rows();

  ContextSelection ctx;
  ctx.scores = scores.value().row(0);
  ctx.noise = Eigen::RowVectorXd::Zero(n);
  if (rng) {
    for (Index i = 0; i < n; ++i) ctx.noise(i) = rng->gumbel();
  }
  Eigen::Index best = 0;
  (ctx.scores + ctx.noise).maxCoeff(&best);
  ctx.index = static_cast<int>(best);
  ctx.soft = softmax(scale(add(scores, Tensor(Matrix(ctx.noise))), 1.0 / tau), 1);
  Tensor picked = slice_cols(ctx.soft, best, 1);
  ctx.weight = relaxed ? picked : straight_through(Matrix::Ones(1, 1), picked);
  return ctx;
}

Tensor apply_rules(const ConditionStates& self, const ConditionStates& context, const RuleSet& rules,
                   const std::vector<int>& order, const Tensor& weights, Routing routing, bool transition) {
  if (order.empty()) {
    throw ContractError("no rule selected");
  }
  if (weights.rows() != 1 || weights.cols() != rules.size()) {
    throw DimensionError("rule weights " + shape_string(weights.rows(), weights.cols()) + " for " +
                         std::to_string(rules.size()) + " rules");
  }
  const Index t = self.states.rows();
  const Index tc = context.states.rows();
  const Tensor parts[] = {self.states, context.states};
  Tensor x = rules.norm(concat_rows(parts));
  if (context.gate) {
    const Tensor gated[] = {slice_rows(x, 0, t), mul_scalar(*context.gate, slice_rows(x, t, tc))};
    x = concat_rows(gated);
  }
  Tensor queries = slice_rows(x, 0, t);

  Mask visible(t, t + tc);
  for (Index c = 0; c < t + tc; ++c) {
    const bool real = c < t ? c < self.length : (c - t) < context.length;
    visible.col(c).setConstant(real);
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(rules.width()));
  auto head = [&](int r) {
    const RuleHead& h = rules.heads[static_cast<std::size_t>(r)];
    return attention(matmul(queries, h.query), matmul(x, h.key), matmul(x, h.value), s, &visible);
  };

  Tensor combined;
  if (routing == Routing::top_k) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      const int r = order[i];
      Tensor term = mul_scalar(slice_cols(weights, r, 1), matmul(head(r), rules.heads[static_cast<std::size_t>(r)].output));
      combined = i == 0 ? term : add(combined, term);
    }
  } else {
    std::vector<Tensor> outs;
    std::vector<Tensor> maps;
    for (int r : order) {
      outs.push_back(mul_scalar(slice_cols(weights, r, 1), head(r)));
      maps.push_back(rules.heads[static_cast<std::size_t>(r)].output);
    }
    combined = matmul(concat_cols(outs), concat_rows(maps));
  }
  return transition ? add(combined, rules.transition(combined)) : combined;
}

PropsParams PropsParams::create(const PropsConfig& cfg, int vocab_size, Index d_model, CounterRng& rng) {
  cfg.validate();
  PropsParams p;
  p.token_embedding = Tensor(uniform_init(vocab_size, cfg.width, cfg.width, rng), true);
  p.encoder = ConditionEncoder::create(cfg.width, rng, true, cfg.pooling);
  p.rules = RuleSet::create(cfg.n_rules, cfg.width, cfg.ffn_dim, d_model, rng);
  return p;
}

void PropsParams::collect(const std::string& prefix, ParameterMap& out) const {
  out.emplace(prefix + ".token_embedding", token_embedding);
  encoder.collect(prefix + ".condition_encoder", out);
  rules.collect(prefix, out);
}

GeneratedPrompt generate_prompt(const ConditionSet& conditions, const PropsParams& params,
                                const std::vector<SiteKey>& sites, const PropsConfig& cfg, const CounterRng& rng,
                                const GenerateOptions& options) {
  if (conditions.empty()) {
    throw ContractError("a condition set needs at least one condition");
  }
  const Index tp = cfg.prompt_length;
  if (tp > conditions[0].max_length) {
    throw ConfigError("prompt length " + std::to_string(tp) + " exceeds instruction length " +
                      std::to_string(conditions[0].max_length));
  }
  const RuleSet& rules = params.rules;
  const bool noise = options.train && cfg.noise_enabled && !options.relaxed;
  const int k = cfg.routing == Routing::top_k ? cfg.top_k : rules.size();

  // Instruction rows are kept up to T_P so the prompt can be read off them;
  // any further padding never influences a real position and is dropped.
  std::vector<ConditionStates> states;
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    const Condition& c = conditions[i];
    const Index keep = i == 0 ? std::max<Index>(c.length, tp) : c.length;
    std::vector<int> ids(c.tokens.begin(), c.tokens.begin() + keep);
    states.push_back({gather_rows(params.token_embedding, ids), c.length});
  }

  GeneratedPrompt result;
  for (int layer = 0; layer < cfg.layers; ++layer) {
    std::vector<Tensor> rows;
    for (const auto& s : states) rows.push_back(params.encoder.encode(s.states, s.length));
    Tensor matrix = concat_rows(rows);

    std::vector<ConditionStates> next;
    for (std::size_t i = 0; i < states.size(); ++i) {
      const CounterRng stream = rng.split(static_cast<std::uint64_t>(layer)).split(i);
      CounterRng rule_rng = stream.split(0);
      CounterRng context_rng = stream.split(1);
      const Tensor condition = slice_rows(matrix, static_cast<Index>(i), 1);

      std::vector<int> order;
      std::vector<int> chosen;
      Tensor weights;
      Tensor soft;
      Eigen::RowVectorXd rule_noise;
      if (cfg.routing == Routing::top_k) {
        RuleSelection sel = select_rules(condition, rules, k, cfg.temperature, noise ? &rule_rng : nullptr,
                                         options.relaxed);
        chosen = sel.indices;
        order = chosen;
        if (options.train || options.relaxed) {
          // Dense pass: unselected rules carry weight exactly 0 forward but
          // still receive gradient through the soft mask.
          for (int r = 0; r < rules.size(); ++r) {
            if (std::find(chosen.begin(), chosen.end(), r) == chosen.end()) order.push_back(r);
          }
        }
        weights = sel.weights;
        soft = sel.soft;
        rule_noise = sel.noise;
      } else {
        Tensor scores = matmul_nt(matmul(condition, rules.select_query), rules.embeddings);
        soft = softmax(scale(scores, 1.0 / cfg.temperature), 1);
        weights = soft;
        order.resize(static_cast<std::size_t>(rules.size()));
        std::iota(order.begin(), order.end(), 0);
        chosen = order;
        rule_noise = Eigen::RowVectorXd::Zero(rules.size());
      }

      ContextSelection ctx = select_context(gather_rows(rules.embeddings, chosen), matrix, rules, cfg.temperature,
                                            noise ? &context_rng : nullptr, options.relaxed);
      const ConditionStates& other = states[static_cast<std::size_t>(ctx.index)];
      ConditionStates context{other.states, other.length, ctx.weight};
      next.push_back({apply_rules(states[i], context, rules, order, weights, cfg.routing, cfg.transition),
                      states[i].length});

      SelectionTrace trace;
      trace.layer = layer;
      trace.condition = static_cast<int>(i);
      trace.condition_name = conditions[i].name;
      trace.rules = chosen;
      const Matrix& sv = soft.value();
      trace.soft.assign(sv.data(), sv.data() + sv.size());
      trace.context = ctx.index;
      trace.stream_key = stream.key();
      if (noise) {
        trace.rule_noise.assign(rule_noise.data(), rule_noise.data() + rule_noise.size());
        trace.context_noise.assign(ctx.noise.data(), ctx.noise.data() + ctx.noise.size());
      }
      result.traces.push_back(std::move(trace));
    }
    states = std::move(next);
  }

  result.kv = slice_rows(rules.out(states[0].states), 0, tp);
  result.pack = PromptPack::broadcast(sites, result.kv);
  return result;
}

// ---------------------------------------------------------------------------

int UsageTable::top_rule(std::size_t task) const {
  const auto& row = first_round[task];
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

double UsageTable::concentration(std::size_t task) const {
  const auto& row = first_round[task];
  const long total = std::accumulate(row.begin(), row.end(), 0L);
  return total ? static_cast<double>(row[static_cast<std::size_t>(top_rule(task))]) / static_cast<double>(total)
               : 0.0;
}

bool UsageTable::separated(double threshold) const {
  std::set<int> tops;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (concentration(t) < threshold) return false;
    tops.insert(top_rule(t));
  }
  return tops.size() == tasks.size();
}

std::string UsageTable::to_csv() const {
  std::ostringstream out;
  out << "task";
  for (int r = 0; r < n_rules; ++r) out << ",rule" << r;
  out << ",entropy,top_rule,concentration\n";
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    out << tasks[t];
    for (long c : counts[t]) out << ',' << c;
    out << ',' << entropy[t] << ',' << top_rule(t) << ',' << concentration(t) << '\n';
  }
  return out.str();
}

UsageTable rule_usage_stats(const std::vector<SelectionTrace>& traces, int n_rules) {
  UsageTable table;
  table.n_rules = n_rules;
  std::map<std::string, std::size_t> slot;
  for (const auto& tr : traces) {
    auto [it, fresh] = slot.emplace(tr.task_id, table.tasks.size());
    if (fresh) {
      table.tasks.push_back(tr.task_id);
      table.counts.emplace_back(static_cast<std::size_t>(n_rules), 0L);
      table.first_round.emplace_back(static_cast<std::size_t>(n_rules), 0L);
    }
    for (int r : tr.rules) {
      if (r < 0 || r >= n_rules) {
        throw DimensionError("trace names rule " + std::to_string(r) + " of " + std::to_string(n_rules));
      }
      ++table.counts[it->second][static_cast<std::size_t>(r)];
    }
    if (!tr.rules.empty()) ++table.first_round[it->second][static_cast<std::size_t>(tr.rules.front())];
  }
  std::vector<std::set<int>> tops(table.tasks.size());
  for (std::size_t t = 0; t < table.tasks.size(); ++t) {
    const auto& row = table.counts[t];
    const double total = static_cast<double>(std::accumulate(row.begin(), row.end(), 0L));
    double h = 0.0;
    for (long c : row) {
      if (c > 0) {
        const double p = static_cast<double>(c) / total;
        h -= p * std::log(p);
      }
    }
    table.entropy.push_back(h + 0.0);
    for (int r = 0; r < n_rules; ++r) {
      if (table.first_round[t][static_cast<std::size_t>(r)] > 0) tops[t].insert(r);
    }
  }
  table.jaccard.assign(table.tasks.size(), std::vector<double>(table.tasks.size(), 0.0));
  for (std::size_t a = 0; a < tops.size(); ++a) {
    for (std::size_t b = 0; b < tops.size(); ++b) {
      std::vector<int> both;
      std::vector<int> either;
      std::set_intersection(tops[a].begin(), tops[a].end(), tops[b].begin(), tops[b].end(),
                            std::back_inserter(both));
      std::set_union(tops[a].begin(), tops[a].end(), tops[b].begin(), tops[b].end(), std::back_inserter(either));
      table.jaccard[a][b] = either.empty() ? 0.0 : static_cast<double>(both.size()) / static_cast<double>(either.size());
    }
  }
  return table;
}

std::string traces_to_jsonl(const std::vector<SelectionTrace>& traces, const std::string& run_id) {
  std::ostringstream out;
  for (const auto& tr : traces) {
    nlohmann::json row = {{"run", run_id},
                          {"task", tr.task_id},
                          {"example", tr.example_id},
                          {"layer", tr.layer},
                          {"condition", tr.condition_name},
                          {"rules", tr.rules},
                          {"context", tr.context}};
    out << row.dump() << '\n';
  }
  return out.str();
}

}  // namespace props
