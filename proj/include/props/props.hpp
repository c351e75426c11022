#pragma once

#include "props/condenc.hpp"
#include "props/plm.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

// Rule engine of the prompt production system: rule memory, Gumbel top-k
// rule selection, context selection, rule application and prompt assembly.
namespace props {

/// top_k: sparse selection of k rule heads whose outputs are summed.
/// all_heads: every head runs, weighted by dense softmax gates, and the head
/// outputs are concatenated before a stacked output map.
enum class Routing { top_k, all_heads };

struct PropsConfig {
  int n_rules = 8;
  int top_k = 3;
  int layers = 2;
  double temperature = 1.0;
  int prompt_length = 8;
  bool noise_enabled = true;  // Gumbel noise while training; never at evaluation
  int width = 32;             // generator width d
  int ffn_dim = 64;
  bool transition = true;
  PoolingMode pooling = PoolingMode::attentive_max;
  Routing routing = Routing::top_k;

  void validate() const;
};

struct RuleHead {
  Tensor query;   // [d,d]
  Tensor key;     // [d,d]
  Tensor value;   // [d,d]
  Tensor output;  // [d,d]
};

/// Rule memory: N rule embeddings with one attention head each, plus the
/// shared selection/context projections, transition and output map W_o.
struct RuleSet {
  Tensor embeddings;  // [N,d]
  std::vector<RuleHead> heads;
  Tensor select_query;   // W̄_q [d,d]
  Tensor context_query;  // W̃_q [d,d]
  Tensor context_key;    // W̃_k [d,d]
  LayerNormParams norm;
  FeedForward transition;
  Linear out;  // W_o: d -> 2·d_model

  static RuleSet create(int n_rules, Index d, Index ffn_dim, Index d_model, CounterRng& rng);
  int size() const { return static_cast<int>(heads.size()); }
  Index width() const { return embeddings.cols(); }
  void collect(const std::string& prefix, ParameterMap& out) const;
  /// Rule i of the result is rule perm[i] of this set; shares no storage.
  RuleSet permuted(const std::vector<int>& perm) const;
};

struct TopK {
  std::vector<int> indices;  // in selection-round order
  Matrix hard;               // [1,N], exactly k ones
  Matrix soft;               // [1,N], sums to k
  Eigen::RowVectorXd noise;  // Gumbel draws added to the scores (zeros when off)
};

/// k rounds of masked argmax over scores + Gumbel noise; soft weights are the
/// sum over rounds of the masked softmax at temperature tau. A null rng turns
/// the noise off.
TopK gumbel_top_k(const Eigen::RowVectorXd& scores, int k, double tau, CounterRng* rng);

struct RuleSelection {
  std::vector<int> indices;
  Matrix hard;               // [1,N]
  Tensor soft;               // [1,N], differentiable
  Tensor weights;            // [1,N]: hard forward, soft backward
  Eigen::RowVectorXd noise;
};

/// Scores q·Rᵀ with q = C⃗·W̄_q. With `relaxed`, the weights are the soft
/// mask itself, which makes the whole selection path exactly differentiable.
RuleSelection select_rules(const Tensor& condition, const RuleSet& rules, int k, double tau, CounterRng* rng,
                           bool relaxed = false);

struct ContextSelection {
  int index = 0;
  Tensor soft;    // [1,|C|]
  Tensor weight;  // [1,1]: 1 forward, soft[index] backward
  Eigen::RowVectorXd scores;
  Eigen::RowVectorXd noise;
};

/// score_c = Σ_rows (R_sel W̃_q)·(E W̃_k)ᵀ, then a Gumbel argmax over conditions.
ContextSelection select_context(const Tensor& selected_rules, const Tensor& condition_matrix, const RuleSet& rules,
                                double tau, CounterRng* rng, bool relaxed = false);

/// One condition's sequence states with the number of real (non-pad) rows.
struct ConditionStates {
  Tensor states;  // [T,d]
  Index length = 0;
  std::optional<Tensor> gate;  // [1,1], scales the rows after normalization
};

/// X = LN([S_C ; S_C′]), with a context gate applied to the S_C′ rows of X. Each selected rule attends from the S_C positions over
/// the non-pad positions of X; outputs are combined per `routing`, followed by
/// the transition h + g(h) when enabled. Result is [T_C, d].
///
/// `order` lists the rules to run, combined in that order; `weights` [1,N]
/// holds one scalar per rule.
Tensor apply_rules(const ConditionStates& self, const ConditionStates& context, const RuleSet& rules,
                   const std::vector<int>& order, const Tensor& weights, Routing routing, bool transition);

struct SelectionTrace {
  std::string task_id;
  std::int64_t example_id = -1;
  int layer = 0;
  int condition = 0;
  std::string condition_name;
  std::vector<int> rules;      // hard selections, round order
  std::vector<double> soft;    // soft rule weights
  int context = 0;
  std::uint64_t stream_key = 0;  // counter-rng key the draws came from
  std::vector<double> rule_noise;
  std::vector<double> context_noise;
};

struct GenerateOptions {
  bool train = false;    // noise (if enabled) and dense straight-through evaluation
  bool relaxed = false;  // soft forward everywhere; for gradient checks
};

struct PropsParams {
  Tensor token_embedding;  // [V,d]
  ConditionEncoder encoder;
  RuleSet rules;

  static PropsParams create(const PropsConfig& cfg, int vocab_size, Index d_model, CounterRng& rng);
  void collect(const std::string& prefix, ParameterMap& out) const;
};

struct GeneratedPrompt {
  PromptPack pack;
  Tensor kv;  // [T_P, 2·d_model] before the key/value split
  std::vector<SelectionTrace> traces;
};

/// Runs the L shared layers over every condition and turns the first T_P rows
/// of the instruction's output into key/value prompts for `sites`.
GeneratedPrompt generate_prompt(const ConditionSet& conditions, const PropsParams& params,
                                const std::vector<SiteKey>& sites, const PropsConfig& cfg, const CounterRng& rng,
                                const GenerateOptions& options = {});

struct UsageTable {
  std::vector<std::string> tasks;
  int n_rules = 0;
  std::vector<std::vector<long>> counts;       // [task][rule]
  std::vector<std::vector<long>> first_round;  // [task][rule], top-1 picks only
  std::vector<double> entropy;                 // per task, nats, over counts
  std::vector<std::vector<double>> jaccard;    // over the sets of top-1 rules

  int top_rule(std::size_t task) const;
  /// Share of a task's top-1 picks that went to its most used rule.
  double concentration(std::size_t task) const;
  /// Distinct top rules across tasks and every concentration >= threshold.
  bool separated(double threshold = 0.95) const;
  std::string to_csv() const;
};

/// Tasks appear in first-seen order.
UsageTable rule_usage_stats(const std::vector<SelectionTrace>& traces, int n_rules);

/// One JSON object per line.
std::string traces_to_jsonl(const std::vector<SelectionTrace>& traces, const std::string& run_id);

}  // namespace props
