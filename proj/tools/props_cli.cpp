#include "props/gradcheck.hpp"
#include "props/harness.hpp"
#include "props/ops.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace props;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string generator;
  std::vector<std::uint64_t> seeds;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value config file");
  app->add_option("--set", c.overrides, "override, key=value (repeatable)");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--generator", c.generator, "prefix | prefix_pp | trsf_p | s_trsf_p | props");
  app->add_option("--seed", c.seeds, "seed(s); replaces the configured list");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.generator.empty()) cfg.generator = parse_generator_kind(c.generator);
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  return cfg;
}

PlmModel frozen_model(const RunConfig& cfg) {
  const std::string path = cfg.plm_path.empty() ? "runs/plm.ckpt" : cfg.plm_path;
  return load_or_pretrain_plm(path, cfg, universe_vocab());
}

void write_file(const std::string& dir, const std::string& name, const std::string& text) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  std::ofstream(dir + "/" + name) << text;
}

int cmd_pretrain(const Common& c) {
  RunConfig cfg = resolve(c);
  const std::string path = cfg.plm_path.empty() ? "runs/plm.ckpt" : cfg.plm_path;
  const Vocab vocab = universe_vocab();
  PretrainReport report;
  PlmModel plm = pretrain_plm(cfg, vocab, &report);
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  save_plm(path, plm, vocab);
  std::cout << "pretrained " << plm.parameter_count() << " parameters in " << report.epochs
            << " epochs, held-out copy accuracy " << report.heldout_accuracy << "\nsaved " << path << '\n';
  return 0;
}

int cmd_train(const Common& c) {
  RunConfig cfg = resolve(c);
  PlmModel plm = frozen_model(cfg);
  const ExperimentData data = build_data(cfg, universe_vocab());
  write_file(cfg.out_dir, "config.txt", cfg.to_text());
  RunReport report = train(cfg, plm, data);
  for (const auto& s : report.seeds) {
    std::cout << "seed " << s.seed << ": test exact match " << s.test.exact_match << ", token accuracy "
              << s.test.token_accuracy << " (best epoch " << s.best_epoch << ", " << s.trainable_parameters
              << " trainable parameters)\n";
  }
  std::cout << report.summary_json() << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& split) {
  RunConfig cfg = resolve(c);
  PlmModel plm = frozen_model(cfg);
  const ExperimentData data = build_data(cfg, universe_vocab());
  const std::uint64_t seed = cfg.seeds.empty() ? 1 : cfg.seeds.front();
  auto gen = make_generator(generator_spec(cfg, plm.config().vocab_size), seed);
  load_generator(checkpoint, *gen);
  const auto& rows = split == "validation" ? data.validation : data.test;
  const Metrics m = evaluate(plm, *gen, rows, seed);
  nlohmann::json j = {{"split", split},
                      {"exact_match", m.exact_match},
                      {"token_accuracy", m.token_accuracy},
                      {"loss", m.loss},
                      {"examples", m.examples}};
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_ablate(const Common& c, std::vector<int> ns, std::vector<int> ks) {
  RunConfig cfg = resolve(c);
  PlmModel plm = frozen_model(cfg);
  AblationTable table = run_ablation_kN(cfg, plm, ns, ks);
  std::cout << table.to_text();
  write_file(cfg.out_dir, "ablation_kN.csv", table.to_csv());
  return 0;
}

int cmd_rule_sep(const Common& c) {
  RunConfig cfg = rule_separation_config(resolve(c));
  PlmModel plm = frozen_model(cfg);
  RuleSeparationReport report = run_rule_separation(cfg, plm);
  std::cout << report.to_text();
  write_file(cfg.out_dir, "rule_separation.txt", report.to_text());
  return 0;
}

// Flags win over bridge.target / bridge.few_shot from the config.
int cmd_bridge(const Common& c, std::string target, int few_shot) {
  RunConfig cfg = resolve(c);
  if (target.empty()) target = cfg.bridge ? cfg.bridge->target : "l1-l2";
  if (few_shot < 0) few_shot = cfg.bridge ? cfg.bridge->few_shot : 50;
  PlmModel plm = frozen_model(cfg);
  BridgeReport report = run_bridge(cfg, plm, target, few_shot);
  std::cout << report.to_csv();
  write_file(cfg.out_dir, "bridge.csv", report.to_csv());
  return 0;
}

int cmd_theory(const std::vector<int>& ns, const std::vector<int>& tks, bool csv) {
  TheoryTable table = theory_table(ns, tks);
  std::cout << (csv ? table.to_csv() : table.to_text());
  return 0;
}

int cmd_stats(const std::string& path, int n_rules, const std::string& condition, int layer) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::vector<SelectionTrace> traces;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.at("condition").get<std::string>() != condition || j.at("layer").get<int>() != layer) continue;
    SelectionTrace tr;
    tr.task_id = j.at("task").get<std::string>();
    tr.example_id = j.at("example").get<std::int64_t>();
    tr.layer = layer;
    tr.condition_name = condition;
    tr.rules = j.at("rules").get<std::vector<int>>();
    traces.push_back(std::move(tr));
  }
  UsageTable usage = rule_usage_stats(traces, n_rules);
  std::cout << usage.to_csv() << "separated " << (usage.separated(0.95) ? "yes" : "no") << '\n';
  return 0;
}

// Finite-difference check of the generator gradients through the frozen
// model, with a relaxed (soft) forward so the loss is differentiable.
int cmd_gradcheck(const Common& c, double tolerance) {
  RunConfig cfg = resolve(c);
  const Vocab vocab = universe_vocab();
  PlmConfig pc = cfg.plm;
  pc.vocab_size = vocab.size();
  pc.d_model = 16;
  pc.n_heads = 2;
  pc.ffn_dim = 16;
  pc.n_enc_layers = 1;
  pc.n_dec_layers = 1;
  PlmModel plm = PlmModel::build(pc, 7);
  plm.freeze();
  cfg.plm = pc;
  cfg.props.width = 8;
  cfg.props.ffn_dim = 8;
  cfg.props.prompt_length = 2;
  cfg.prefix_hidden = 8;
  cfg.tasks = {"l0-l1"};
  cfg.n_per_task = 1;
  cfg.n_eval = 1;
  const ExperimentData data = build_data(cfg, vocab);
  const EncodedExample& ex = data.train.front();
  int failures = 0;
  for (GeneratorKind kind : {GeneratorKind::prefix, GeneratorKind::prefix_pp, GeneratorKind::trsf_p,
                             GeneratorKind::s_trsf_p, GeneratorKind::props}) {
    cfg.generator = kind;
    auto gen = make_generator(generator_spec(cfg, pc.vocab_size), 3);
    std::vector<NamedTensor> params = as_named(gen->parameters());
    auto loss = [&] {
      GeneratedPrompt p = gen->generate(ex.conditions, CounterRng(5), {.relaxed = true});
      return sequence_loss(plm, {gen->prepare_source(ex.src, ex.conditions), ex.tgt}, &p.pack);
    };
    GradCheckReport report = check_gradients(loss, params, {.max_coordinates = 200, .seed = 11});
    const bool ok = report.passed(tolerance);
    failures += !ok;
    std::cout << generator_name(kind) << ": " << report.checks.size() << " coordinates, max relative error "
              << report.max_rel_error << (ok ? " ok" : " FAIL") << '\n';
    if (!ok && report.worst()) {
      const CoordinateCheck& w = *report.worst();
      std::cout << "  worst " << w.parameter << "[" << w.row << "," << w.col << "] analytic " << w.analytic
                << " numeric " << w.numeric << '\n';
    }
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prompt production system experiments"};
  app.require_subcommand(1);

  Common common;
  auto* pretrain = app.add_subcommand("pretrain-plm", "pretrain and freeze the backbone model");
  add_common(pretrain, common);

  auto* train_cmd = app.add_subcommand("train", "train a prompt generator against the frozen model");
  add_common(train_cmd, common);

  std::string checkpoint;
  std::string split = "test";
  auto* eval = app.add_subcommand("eval", "evaluate a saved generator");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "generator checkpoint")->required();
  eval->add_option("--split", split, "validation | test")->check(CLI::IsMember({"validation", "test"}));

  std::vector<int> ns = {12, 13, 14, 15, 16};
  std::vector<int> ks = {2, 3, 4, 5};
  auto* ablate = app.add_subcommand("ablate-kn", "sweep rule count N and selection size k");
  add_common(ablate, common);
  ablate->add_option("--ns", ns, "rule counts");
  ablate->add_option("--ks", ks, "selection sizes");

  auto* rule_sep = app.add_subcommand("rule-sep", "rule usage on instruction-only tasks");
  add_common(rule_sep, common);

  std::string target;
  int few_shot = -1;
  auto* bridge = app.add_subcommand("bridge", "few-shot target with bridge tasks");
  add_common(bridge, common);
  bridge->add_option("--target", target, "target task lA-lB");
  bridge->add_option("--few-shot", few_shot, "training rows per task");

  std::vector<int> theory_ns = {12, 13, 14, 15, 16};
  std::vector<int> theory_tks = {4, 6, 8, 10};
  bool csv = false;
  auto* theory = app.add_subcommand("theory", "1 - P(N, k, T) table");
  theory->add_option("--ns", theory_ns, "rule counts");
  theory->add_option("--tks", theory_tks, "selection totals T*k");
  theory->add_flag("--csv", csv, "full precision csv");

  std::string traces;
  int n_rules = 4;
  std::string condition = "instruction";
  int layer = 0;
  auto* stats = app.add_subcommand("stats", "rule usage table from a traces file");
  stats->add_option("--traces", traces, "traces jsonl")->required();
  stats->add_option("--rules", n_rules, "rule count");
  stats->add_option("--condition", condition, "condition name");
  stats->add_option("--layer", layer, "generator layer");

  double tolerance = 1e-3;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every generator");
  add_common(gradcheck, common);
  gradcheck->add_option("--tolerance", tolerance, "max relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pretrain) return cmd_pretrain(common);
    if (*train_cmd) return cmd_train(common);
    if (*eval) return cmd_eval(common, checkpoint, split);
    if (*ablate) return cmd_ablate(common, ns, ks);
    if (*rule_sep) return cmd_rule_sep(common);
    if (*bridge) return cmd_bridge(common, target, few_shot);
    if (*theory) return cmd_theory(theory_ns, theory_tks, csv);
    if (*stats) return cmd_stats(traces, n_rules, condition, layer);
    if (*gradcheck) return cmd_gradcheck(common, tolerance);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << '\n';
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
