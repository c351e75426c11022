#pragma once

#include "props/baselines.hpp"
#include "props/checkpoint.hpp"
#include "props/tasks.hpp"
#include "props/theory.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

// Experiment orchestration: configuration, prompt training with a frozen
// model, evaluation and the experiment drivers behind the CLI.
namespace props {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TaskKind { scan, transduction, summarization };

struct PretrainSettings {
  int examples = 4000;
  int heldout = 200;
  int max_epochs = 30;
  int min_epochs = 10;
  double lr = 3e-3;
  std::uint64_t seed = 1;
};

/// Flat key = value configuration. Unknown keys are an error.
struct RunConfig {
  GeneratorKind generator = GeneratorKind::props;
  TaskKind task = TaskKind::transduction;
  PlmConfig plm;
  PropsConfig props;
  int prefix_hidden = 64;
  PretrainSettings pretrain;
  std::string plm_path;  // frozen model checkpoint

  SplitSpec scan;
  int scan_validation = 100;
  std::vector<std::string> tasks = {"l0-l1", "l0-l2"};
  int n_per_task = 200;
  int n_eval = 50;
  std::optional<BridgeSpec> bridge;
  InstructionStyle summary_style = InstructionStyle::detailed;
  std::uint64_t data_seed = 1;

  AdamConfig adam;
  double warmup_ratio = 0.05;
  int batch_size = 32;
  int epochs = 20;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string out_dir;

  void set(const std::string& key, const std::string& value);
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  /// Canonical key = value listing; parse(to_text()) round-trips.
  std::string to_text() const;
  std::string hash() const;
};

struct EncodedExample {
  std::int64_t id = 0;
  std::string task;
  std::vector<int> src;
  std::vector<int> tgt;
  ConditionSet conditions;
};

std::vector<EncodedExample> encode_dataset(const Dataset& data, const Vocab& vocab, int instruction_max_length);

struct ExperimentData {
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> validation;
  std::vector<EncodedExample> test;
};

ExperimentData build_data(const RunConfig& cfg, const Vocab& vocab);

struct Metrics {
  double exact_match = 0.0;
  double token_accuracy = 0.0;
  double loss = 0.0;
  std::size_t examples = 0;
};

struct Prediction {
  std::vector<int> tokens;
  bool exact = false;
  double token_accuracy = 0.0;
};

/// Token accuracy of one prediction: matching positions over the longer of
/// the two sequences (1 when both are empty).
double sequence_token_accuracy(const std::vector<int>& predicted, const std::vector<int>& gold);

/// Greedy decoding with noise off; `traces` receives the selection traces
/// tagged with task and example ids.
Metrics evaluate(const PlmModel& plm, const PromptGenerator& generator, const std::vector<EncodedExample>& data,
                 std::uint64_t seed, std::vector<SelectionTrace>* traces = nullptr,
                 std::vector<Prediction>* predictions = nullptr);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  Metrics validation;
};

struct SeedResult {
  std::uint64_t seed = 0;
  Metrics test;
  int best_epoch = -1;
  Metrics best_validation;
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  std::size_t trainable_parameters = 0;
  std::uint64_t plm_fingerprint_before = 0;
  std::uint64_t plm_fingerprint_after = 0;
  std::uint64_t generator_fingerprint = 0;
  std::vector<SelectionTrace> test_traces;
};

struct RunReport {
  std::string config_hash;
  std::string generator;
  std::vector<SeedResult> seeds;
  double mean_exact_match = 0.0;
  double std_exact_match = 0.0;
  double mean_token_accuracy = 0.0;
  double std_token_accuracy = 0.0;
  double wall_seconds = 0.0;
  std::vector<std::string> checkpoints;

  std::string summary_json() const;
};

GeneratorSpec generator_spec(const RunConfig& cfg, int vocab_size);

/// Trains only the generator; the PLM must be frozen and stays bit-identical.
/// With `out_dir`, epoch records go to metrics_seed<s>.jsonl and the best
/// generator to generator_seed<s>.ckpt.
SeedResult train_seed(const RunConfig& cfg, const PlmModel& plm, const ExperimentData& data, std::uint64_t seed,
                      std::unique_ptr<PromptGenerator>* trained = nullptr);

RunReport train(const RunConfig& cfg, const PlmModel& plm, const ExperimentData& data);

/// mean and population std.
std::pair<double, double> mean_std(const std::vector<double>& values);

// ---- frozen model ---------------------------------------------------------

PlmModel pretrain_plm(const RunConfig& cfg, const Vocab& vocab, PretrainReport* report = nullptr);
void save_plm(const std::string& path, const PlmModel& plm, const Vocab& vocab);
/// Loads, freezes and checks the vocabulary matches `vocab`.
PlmModel load_plm(const std::string& path, const Vocab& vocab);
/// load_plm when `path` exists, otherwise pretrain and save there.
PlmModel load_or_pretrain_plm(const std::string& path, const RunConfig& cfg, const Vocab& vocab);

void save_generator(const std::string& path, const PromptGenerator& generator, const RunConfig& cfg);
void load_generator(const std::string& path, PromptGenerator& generator);

// ---- experiments ----------------------------------------------------------

struct AblationCell {
  int n = 0;
  int k = 0;
  int tk = 0;
  double theory = 0.0;  // 1 - P(N,k,T)
  double score = 0.0;   // mean test exact match
  bool all_rules_selected = false;
};

struct AblationTable {
  TheoryTable theory;
  std::vector<AblationCell> cells;
  std::vector<std::string> skipped;
  int tasks = 2;
  std::string to_csv() const;
  std::string to_text() const;
};

AblationTable run_ablation_kN(const RunConfig& base, const PlmModel& plm, const std::vector<int>& ns,
                              const std::vector<int>& ks);

struct RuleSeparationSeed {
  std::uint64_t seed = 0;
  UsageTable usage;
  bool separated = false;
  Metrics test;
};

struct RuleSeparationReport {
  std::vector<RuleSeparationSeed> seeds;
  int successes() const;
  std::string to_text() const;
};

/// Four instruction-only transduction tasks, N=4, k=1, one generator layer.
RunConfig rule_separation_config(RunConfig base);
RuleSeparationReport run_rule_separation(const RunConfig& cfg, const PlmModel& plm);

struct BridgeRow {
  std::string label;
  std::vector<std::string> train_tasks;
  std::size_t target_train_rows = 0;
  double target_score = 0.0;
  double delta = 0.0;  // relative to the no-bridge row
};

struct BridgeReport {
  std::string target;
  std::vector<BridgeRow> rows;
  std::string to_csv() const;
};

BridgeReport run_bridge(const RunConfig& cfg, const PlmModel& plm, const std::string& target = "l1-l2",
                        int few_shot = 50);

}  // namespace props
