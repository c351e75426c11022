#include "props/harness.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace props {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_same_v<T, double>) {
      out = std::stod(value, &used);
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      out = std::stoull(value, &used);
    } else {
      out = static_cast<T>(std::stoi(value, &used));
    }
    if (used != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "' expects true or false, got '" + value + "'");
}

const char* task_name(TaskKind t) {
  switch (t) {
    case TaskKind::scan:
      return "scan";
    case TaskKind::transduction:
      return "transduction";
    case TaskKind::summarization:
      return "summarization";
  }
  return "?";
}

const char* split_name(SplitKind k) {
  switch (k) {
    case SplitKind::add_primitive:
      return "add_primitive";
    case SplitKind::length:
      return "length";
    case SplitKind::random:
      return "random";
  }
  return "?";
}

TransductionTask parse_task(const std::string& id) {
  const auto dash = id.find('-');
  if (dash == std::string::npos || id[0] != 'l' || id[dash + 1] != 'l') {
    throw ConfigError("task id '" + id + "' is not of the form lA-lB");
  }
  return make_task(std::stoi(id.substr(1, dash - 1)), std::stoi(id.substr(dash + 2)));
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  auto num_i = [&] { return parse_number<int>(key, value); };
  auto num_d = [&] { return parse_number<double>(key, value); };
  auto num_u = [&] { return parse_number<std::uint64_t>(key, value); };
  if (key == "generator") {
    generator = parse_generator_kind(value);
  } else if (key == "task") {
    if (value == "scan") {
      task = TaskKind::scan;
    } else if (value == "transduction") {
      task = TaskKind::transduction;
    } else if (value == "summarization") {
      task = TaskKind::summarization;
    } else {
      throw ConfigError("unknown task '" + value + "'");
    }
  } else if (key == "plm.path") {
    plm_path = value;
  } else if (key == "plm.d_model") {
    plm.d_model = num_i();
  } else if (key == "plm.n_heads") {
    plm.n_heads = num_i();
  } else if (key == "plm.n_enc_layers") {
    plm.n_enc_layers = num_i();
  } else if (key == "plm.n_dec_layers") {
    plm.n_dec_layers = num_i();
  } else if (key == "plm.ffn_dim") {
    plm.ffn_dim = num_i();
  } else if (key == "plm.max_len") {
    plm.max_len = num_i();
  } else if (key == "pretrain.examples") {
    pretrain.examples = num_i();
  } else if (key == "pretrain.heldout") {
    pretrain.heldout = num_i();
  } else if (key == "pretrain.max_epochs") {
    pretrain.max_epochs = num_i();
  } else if (key == "pretrain.min_epochs") {
    pretrain.min_epochs = num_i();
  } else if (key == "pretrain.lr") {
    pretrain.lr = num_d();
  } else if (key == "pretrain.seed") {
    pretrain.seed = num_u();
  } else if (key == "props.n_rules") {
    props.n_rules = num_i();
  } else if (key == "props.top_k") {
    props.top_k = num_i();
  } else if (key == "props.layers") {
    props.layers = num_i();
  } else if (key == "props.temperature") {
    props.temperature = num_d();
  } else if (key == "props.prompt_length") {
    props.prompt_length = num_i();
  } else if (key == "props.noise") {
    props.noise_enabled = parse_bool(key, value);
  } else if (key == "props.width") {
    props.width = num_i();
  } else if (key == "props.ffn_dim") {
    props.ffn_dim = num_i();
  } else if (key == "props.transition") {
    props.transition = parse_bool(key, value);
  } else if (key == "props.pooling") {
    if (value == "attentive_max") {
      props.pooling = PoolingMode::attentive_max;
    } else if (value == "weighted_sum") {
      props.pooling = PoolingMode::weighted_sum;
    } else {
      throw ConfigError("unknown pooling '" + value + "'");
    }
  } else if (key == "prefix.hidden") {
    prefix_hidden = num_i();
  } else if (key == "scan.kind") {
    if (value == "add_primitive") {
      scan.kind = SplitKind::add_primitive;
    } else if (value == "length") {
      scan.kind = SplitKind::length;
    } else if (value == "random") {
      scan.kind = SplitKind::random;
    } else {
      throw ConfigError("unknown split kind '" + value + "'");
    }
  } else if (key == "scan.primitive") {
    scan.primitive = value;
  } else if (key == "scan.max_train_actions") {
    scan.max_train_actions = num_i();
  } else if (key == "scan.train_size") {
    scan.train_size = num_i();
  } else if (key == "scan.test_size") {
    scan.test_size = num_i();
  } else if (key == "scan.isolation_repeats") {
    scan.isolation_repeats = num_i();
  } else if (key == "scan.validation") {
    scan_validation = num_i();
  } else if (key == "tasks") {
    tasks = split_list(value);
  } else if (key == "n_per_task") {
    n_per_task = num_i();
  } else if (key == "n_eval") {
    n_eval = num_i();
  } else if (key == "bridge.target") {
    if (value.empty()) {
      bridge.reset();
    } else {
      if (!bridge) bridge = BridgeSpec{};
      bridge->target = value;
    }
  } else if (key == "bridge.few_shot") {
    if (!bridge) bridge = BridgeSpec{};
    bridge->few_shot = num_i();
  } else if (key == "summary.style") {
    if (value == "simple") {
      summary_style = InstructionStyle::simple;
    } else if (value == "detailed") {
      summary_style = InstructionStyle::detailed;
    } else {
      throw ConfigError("unknown instruction style '" + value + "'");
    }
  } else if (key == "data_seed") {
    data_seed = num_u();
    scan.seed = data_seed;
  } else if (key == "optim.lr") {
    adam.lr = num_d();
  } else if (key == "optim.beta1") {
    adam.beta1 = num_d();
  } else if (key == "optim.beta2") {
    adam.beta2 = num_d();
  } else if (key == "optim.eps") {
    adam.eps = num_d();
  } else if (key == "warmup_ratio") {
    warmup_ratio = num_d();
  } else if (key == "batch_size") {
    batch_size = num_i();
  } else if (key == "epochs") {
    epochs = num_i();
  } else if (key == "seeds") {
    seeds.clear();
    for (const auto& s : split_list(value)) seeds.push_back(parse_number<std::uint64_t>(key, s));
  } else if (key == "out") {
    out_dir = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + " lacks '='");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "generator = " << generator_name(generator) << '\n'
    << "task = " << task_name(task) << '\n'
    << "plm.path = " << plm_path << '\n'
    << "plm.d_model = " << plm.d_model << '\n'
    << "plm.n_heads = " << plm.n_heads << '\n'
    << "plm.n_enc_layers = " << plm.n_enc_layers << '\n'
    << "plm.n_dec_layers = " << plm.n_dec_layers << '\n'
    << "plm.ffn_dim = " << plm.ffn_dim << '\n'
    << "plm.max_len = " << plm.max_len << '\n'
    << "pretrain.examples = " << pretrain.examples << '\n'
    << "pretrain.heldout = " << pretrain.heldout << '\n'
    << "pretrain.max_epochs = " << pretrain.max_epochs << '\n'
    << "pretrain.min_epochs = " << pretrain.min_epochs << '\n'
    << "pretrain.lr = " << fmt(pretrain.lr) << '\n'
    << "pretrain.seed = " << pretrain.seed << '\n'
    << "props.n_rules = " << props.n_rules << '\n'
    << "props.top_k = " << props.top_k << '\n'
    << "props.layers = " << props.layers << '\n'
    << "props.temperature = " << fmt(props.temperature) << '\n'
    << "props.prompt_length = " << props.prompt_length << '\n'
    << "props.noise = " << (props.noise_enabled ? "true" : "false") << '\n'
    << "props.width = " << props.width << '\n'
    << "props.ffn_dim = " << props.ffn_dim << '\n'
    << "props.transition = " << (props.transition ? "true" : "false") << '\n'
    << "props.pooling = " << (props.pooling == PoolingMode::attentive_max ? "attentive_max" : "weighted_sum") << '\n'
    << "prefix.hidden = " << prefix_hidden << '\n'
    << "data_seed = " << data_seed << '\n'
    << "scan.kind = " << split_name(scan.kind) << '\n'
    << "scan.primitive = " << scan.primitive << '\n'
    << "scan.max_train_actions = " << scan.max_train_actions << '\n'
    << "scan.train_size = " << scan.train_size << '\n'
    << "scan.test_size = " << scan.test_size << '\n'
    << "scan.isolation_repeats = " << scan.isolation_repeats << '\n'
    << "scan.validation = " << scan_validation << '\n';
  o << "tasks = ";
  for (std::size_t i = 0; i < tasks.size(); ++i) o << (i ? "," : "") << tasks[i];
  o << '\n'
    << "n_per_task = " << n_per_task << '\n'
    << "n_eval = " << n_eval << '\n'
    << "bridge.target = " << (bridge ? bridge->target : "") << '\n';
  if (bridge) o << "bridge.few_shot = " << bridge->few_shot << '\n';
  o << "summary.style = " << (summary_style == InstructionStyle::simple ? "simple" : "detailed") << '\n'
    << "optim.lr = " << fmt(adam.lr) << '\n'
    << "optim.beta1 = " << fmt(adam.beta1) << '\n'
    << "optim.beta2 = " << fmt(adam.beta2) << '\n'
    << "optim.eps = " << fmt(adam.eps) << '\n'
    << "warmup_ratio = " << fmt(warmup_ratio) << '\n'
    << "batch_size = " << batch_size << '\n'
    << "epochs = " << epochs << '\n';
  o << "seeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) o << (i ? "," : "") << seeds[i];
  o << '\n' << "out = " << out_dir << '\n';
  return o.str();
}

std::string RunConfig::hash() const {
  // Paths do not change results, so they stay out of the hash.
  RunConfig c = *this;
  c.out_dir.clear();
  c.plm_path.clear();
  return spec_hash(c.to_text());
}

// ---------------------------------------------------------------------------

std::vector<EncodedExample> encode_dataset(const Dataset& data, const Vocab& vocab, int instruction_max_length) {
  std::vector<EncodedExample> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Example& ex = data[i];
    EncodedExample e;
    e.id = static_cast<std::int64_t>(i);
    e.task = ex.task_id;
    e.src = vocab.encode(ex.src);
    e.tgt = vocab.encode(ex.tgt);
    e.conditions = attach_conditions(ex, vocab, instruction_max_length);
    out.push_back(std::move(e));
  }
  return out;
}

ExperimentData build_data(const RunConfig& cfg, const Vocab& vocab) {
  Dataset train;
  Dataset validation;
  Dataset test;
  switch (cfg.task) {
    case TaskKind::scan: {
      SplitSpec spec = cfg.scan;
      spec.train_size += cfg.scan_validation;
      Split split = gen_scan_split(spec);
      // Validation rows come from the training distribution.
      std::set<std::string> seen;
      for (const auto& ex : split.train) {
        if (static_cast<int>(validation.size()) < cfg.scan_validation && ex.src.size() > 1 &&
            seen.insert(join_words(ex.src)).second) {
          validation.push_back(ex);
        } else {
          train.push_back(ex);
        }
      }
      test = std::move(split.test);
      break;
    }
    case TaskKind::transduction: {
      std::vector<TransductionTask> tasks;
      for (const auto& id : cfg.tasks) tasks.push_back(parse_task(id));
      TransductionData d = gen_multitask_transduction(tasks, cfg.n_per_task, cfg.n_eval, cfg.bridge, cfg.data_seed);
      train = std::move(d.train);
      validation = std::move(d.validation);
      test = std::move(d.test);
      break;
    }
    case TaskKind::summarization:
      train = gen_summarization(cfg.n_per_task, cfg.summary_style, cfg.data_seed);
      validation = gen_summarization(cfg.n_eval, cfg.summary_style, cfg.data_seed + 1000);
      test = gen_summarization(cfg.n_eval, cfg.summary_style, cfg.data_seed + 2000);
      break;
  }
  ExperimentData data;
  data.train = encode_dataset(train, vocab, 0);
  data.validation = encode_dataset(validation, vocab, 0);
  data.test = encode_dataset(test, vocab, 0);
  // Distinct id ranges keep the per-example random streams apart.
  for (auto& e : data.validation) e.id += 1'000'000;
  for (auto& e : data.test) e.id += 2'000'000;
  return data;
}

double sequence_token_accuracy(const std::vector<int>& predicted, const std::vector<int>& gold) {
  const std::size_t longest = std::max(predicted.size(), gold.size());
  if (longest == 0) return 1.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < std::min(predicted.size(), gold.size()); ++i) hit += predicted[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(longest);
}

Metrics evaluate(const PlmModel& plm, const PromptGenerator& generator, const std::vector<EncodedExample>& data,
                 std::uint64_t seed, std::vector<SelectionTrace>* traces, std::vector<Prediction>* predictions) {
  NoGradGuard no_grad;
  Metrics m;
  const CounterRng rng(seed);
  double exact = 0.0;
  double tokens = 0.0;
  double loss = 0.0;
  for (const auto& ex : data) {
    GeneratedPrompt prompt = generator.generate(ex.conditions, rng.split(static_cast<std::uint64_t>(ex.id)), {});
    const std::vector<int> src = generator.prepare_source(ex.src, ex.conditions);
    const std::vector<int> out =
        decode_greedy(plm, src, &prompt.pack, static_cast<int>(ex.tgt.size()) + 1);
    const bool hit = out == ex.tgt;
    const double acc = sequence_token_accuracy(out, ex.tgt);
    exact += hit;
    tokens += acc;
    loss += sequence_loss(plm, {src, ex.tgt}, &prompt.pack).item();
    if (traces) {
      for (auto& tr : prompt.traces) {
        tr.task_id = ex.task;
        tr.example_id = ex.id;
        traces->push_back(std::move(tr));
      }
    }
    if (predictions) predictions->push_back({out, hit, acc});
  }
  m.examples = data.size();
  if (!data.empty()) {
    const double n = static_cast<double>(data.size());
    m.exact_match = exact / n;
    m.token_accuracy = tokens / n;
    m.loss = loss / n;
  }
  return m;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

GeneratorSpec generator_spec(const RunConfig& cfg, int vocab_size) {
  GeneratorSpec spec;
  spec.kind = cfg.generator;
  spec.props = cfg.props;
  spec.prefix_hidden = cfg.prefix_hidden;
  spec.vocab_size = vocab_size;
  spec.plm = cfg.plm;
  spec.plm.vocab_size = vocab_size;
  return spec;
}

namespace {

nlohmann::json metrics_json(const Metrics& m) {
  return {{"exact_match", m.exact_match}, {"token_accuracy", m.token_accuracy}, {"loss", m.loss},
          {"examples", m.examples}};
}

bool better(const Metrics& a, const Metrics& b) {
  if (a.exact_match != b.exact_match) return a.exact_match > b.exact_match;
  return a.loss < b.loss;
}

}  // namespace

SeedResult train_seed(const RunConfig& cfg, const PlmModel& plm, const ExperimentData& data, std::uint64_t seed,
                      std::unique_ptr<PromptGenerator>* trained) {
  if (!plm.frozen()) throw FrozenError("prompt training needs a frozen model");
  plm.verify_frozen();
  if (data.train.empty()) throw ContractError("no training data");
  SeedResult result;
  result.seed = seed;
  result.plm_fingerprint_before = plm.fingerprint();

  std::unique_ptr<PromptGenerator> gen = make_generator(generator_spec(cfg, plm.config().vocab_size), seed);
  const ParameterMap params = gen->parameters();
  result.trainable_parameters = parameter_count(params);
  Adam adam(params, cfg.adam);
  const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  const std::size_t steps_per_epoch = (data.train.size() + batch - 1) / batch;
  WarmupSchedule schedule(cfg.adam.lr, cfg.warmup_ratio, steps_per_epoch * static_cast<std::size_t>(cfg.epochs));

  const CounterRng run(seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  Snapshot best = snapshot(params);
  std::ofstream log;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    log.open(cfg.out_dir + "/metrics_seed" + std::to_string(seed) + ".jsonl");
  }

  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), run.split(1).split(static_cast<std::uint64_t>(epoch)));
    const CounterRng noise = run.split(2).split(static_cast<std::uint64_t>(epoch));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double weight = 1.0 / static_cast<double>(end - start);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const EncodedExample& ex = data.train[order[i]];
        GeneratedPrompt prompt =
            gen->generate(ex.conditions, noise.split(static_cast<std::uint64_t>(ex.id)), {.train = true});
        Tensor loss = sequence_loss(plm, {gen->prepare_source(ex.src, ex.conditions), ex.tgt}, &prompt.pack);
        if (!std::isfinite(loss.item())) {
          throw DivergenceError("non-finite loss at step " + std::to_string(step) + "; last stable step " +
                                std::to_string(step == 0 ? 0 : step - 1));
        }
        batch_loss += loss.item();
        backward(scale(loss, weight));
      }
      adam.step(schedule.rate(step++));
      adam.zero_grad();
      result.step_losses.push_back(batch_loss * weight);
      epoch_loss += batch_loss;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    rec.validation = evaluate(plm, *gen, data.validation, seed);
    if (result.best_epoch < 0 || better(rec.validation, result.best_validation)) {
      result.best_epoch = epoch;
      result.best_validation = rec.validation;
      best = snapshot(params);
    }
    if (log) {
      nlohmann::json row = {{"seed", seed},
                            {"epoch", epoch},
                            {"train_loss", rec.train_loss},
                            {"validation", metrics_json(rec.validation)}};
      log << row.dump() << '\n';
    }
    result.epochs.push_back(rec);
  }

  restore(params, best);
  result.test = evaluate(plm, *gen, data.test, seed, &result.test_traces);
  result.generator_fingerprint = fingerprint(params);
  result.plm_fingerprint_after = plm.fingerprint();
  if (result.plm_fingerprint_after != result.plm_fingerprint_before) {
    throw FrozenError("frozen model changed during prompt training");
  }
  if (log) {
    nlohmann::json row = {{"seed", seed}, {"best_epoch", result.best_epoch}, {"test", metrics_json(result.test)}};
    log << row.dump() << '\n';
  }
  if (!cfg.out_dir.empty()) {
    const std::string tag = "_seed" + std::to_string(seed);
    save_generator(cfg.out_dir + "/generator" + tag + ".ckpt", *gen, cfg);
    if (is_conditional(cfg.generator)) {
      std::ofstream(cfg.out_dir + "/traces" + tag + ".jsonl") << traces_to_jsonl(result.test_traces, cfg.hash() + tag);
    }
  }
  if (trained) *trained = std::move(gen);
  return result;
}

RunReport train(const RunConfig& cfg, const PlmModel& plm, const ExperimentData& data) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.config_hash = cfg.hash();
  report.generator = std::string(generator_name(cfg.generator));
  std::vector<double> em;
  std::vector<double> acc;
  for (std::uint64_t seed : cfg.seeds) {
    report.seeds.push_back(train_seed(cfg, plm, data, seed));
    em.push_back(report.seeds.back().test.exact_match);
    acc.push_back(report.seeds.back().test.token_accuracy);
    if (!cfg.out_dir.empty()) {
      report.checkpoints.push_back(cfg.out_dir + "/generator_seed" + std::to_string(seed) + ".ckpt");
    }
  }
  std::tie(report.mean_exact_match, report.std_exact_match) = mean_std(em);
  std::tie(report.mean_token_accuracy, report.std_token_accuracy) = mean_std(acc);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!cfg.out_dir.empty()) {
    std::ofstream(cfg.out_dir + "/summary.json") << report.summary_json() << '\n';
  }
  return report;
}

std::string RunReport::summary_json() const {
  nlohmann::json seeds_json = nlohmann::json::array();
  for (const auto& s : seeds) {
    seeds_json.push_back({{"seed", s.seed},
                          {"best_epoch", s.best_epoch},
                          {"test", metrics_json(s.test)},
                          {"validation", metrics_json(s.best_validation)},
                          {"trainable_parameters", s.trainable_parameters},
                          {"plm_fingerprint", s.plm_fingerprint_after}});
  }
  nlohmann::json j = {{"summary", true},
                      {"config_hash", config_hash},
                      {"generator", generator},
                      {"seeds", seeds_json},
                      {"exact_match", {{"mean", mean_exact_match}, {"std", std_exact_match}}},
                      {"token_accuracy", {{"mean", mean_token_accuracy}, {"std", std_token_accuracy}}},
                      {"wall_seconds", wall_seconds},
                      {"checkpoints", checkpoints}};
  return j.dump();
}

// ---------------------------------------------------------------------------

namespace {

std::vector<TokenPair> token_pairs(const Dataset& data, const Vocab& vocab) {
  std::vector<TokenPair> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back({vocab.encode(ex.src), vocab.encode(ex.tgt)});
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) { return join_words(tokens); }

}  // namespace

PlmModel pretrain_plm(const RunConfig& cfg, const Vocab& vocab, PretrainReport* report) {
  PlmConfig pc = cfg.plm;
  pc.vocab_size = vocab.size();
  PlmModel model = PlmModel::build(pc, cfg.pretrain.seed);
  PretrainConfig tc;
  tc.max_epochs = cfg.pretrain.max_epochs;
  tc.min_epochs = cfg.pretrain.min_epochs;
  tc.adam.lr = cfg.pretrain.lr;
  tc.seed = cfg.pretrain.seed;
  const auto corpus = token_pairs(pretraining_corpus(cfg.pretrain.examples, cfg.pretrain.seed), vocab);
  const auto held = token_pairs(heldout_copy(cfg.pretrain.heldout, cfg.pretrain.seed), vocab);
  PretrainReport r = pretrain(model, corpus, held, tc);
  if (report) *report = r;
  model.freeze();
  return model;
}

void save_plm(const std::string& path, const PlmModel& plm, const Vocab& vocab) {
  Checkpoint ck;
  const PlmConfig& c = plm.config();
  ck.meta = {{"kind", "plm"},
             {"vocab_size", std::to_string(c.vocab_size)},
             {"d_model", std::to_string(c.d_model)},
             {"n_heads", std::to_string(c.n_heads)},
             {"n_enc_layers", std::to_string(c.n_enc_layers)},
             {"n_dec_layers", std::to_string(c.n_dec_layers)},
             {"ffn_dim", std::to_string(c.ffn_dim)},
             {"max_len", std::to_string(c.max_len)},
             {"fingerprint", std::to_string(plm.fingerprint())},
             {"vocab", join_tokens(vocab.tokens())}};
  ck.sections["plm"] = snapshot(plm.parameters());
  save_checkpoint(path, ck);
}

PlmModel load_plm(const std::string& path, const Vocab& vocab) {
  Checkpoint ck = load_checkpoint(path);
  auto meta = [&](const std::string& key) {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw IntegrityError("manifest: missing meta '" + key + "'");
    return it->second;
  };
  if (meta("kind") != "plm") throw IntegrityError("manifest: " + path + " is not a model checkpoint");
  if (split_words(meta("vocab")) != vocab.tokens()) {
    throw IntegrityError("manifest: vocabulary of " + path + " differs from the task vocabulary");
  }
  PlmConfig c;
  c.vocab_size = std::stoi(meta("vocab_size"));
  c.d_model = std::stoi(meta("d_model"));
  c.n_heads = std::stoi(meta("n_heads"));
  c.n_enc_layers = std::stoi(meta("n_enc_layers"));
  c.n_dec_layers = std::stoi(meta("n_dec_layers"));
  c.ffn_dim = std::stoi(meta("ffn_dim"));
  c.max_len = std::stoi(meta("max_len"));
  if (!ck.sections.count("plm")) throw IntegrityError("plm: section missing");
  PlmModel model = PlmModel::from_snapshot(c, ck.sections.at("plm"), true);
  if (std::to_string(model.fingerprint()) != meta("fingerprint")) {
    throw IntegrityError("plm: fingerprint differs from the manifest");
  }
  return model;
}

PlmModel load_or_pretrain_plm(const std::string& path, const RunConfig& cfg, const Vocab& vocab) {
  if (!path.empty() && std::filesystem::exists(path)) return load_plm(path, vocab);
  PlmModel model = pretrain_plm(cfg, vocab);
  if (!path.empty()) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    // Write-then-rename so a concurrent reader never sees a partial file.
    const std::string tmp = path + ".tmp";
    save_plm(tmp, model, vocab);
    std::filesystem::rename(tmp, path);
  }
  return model;
}

void save_generator(const std::string& path, const PromptGenerator& generator, const RunConfig& cfg) {
  Checkpoint ck;
  ck.meta = {{"kind", "generator"},
             {"generator", std::string(generator_name(generator.kind()))},
             {"config_hash", cfg.hash()}};
  ck.sections["generator"] = snapshot(generator.parameters());
  save_checkpoint(path, ck);
}

void load_generator(const std::string& path, PromptGenerator& generator) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.meta["kind"] != "generator") throw IntegrityError("manifest: " + path + " is not a generator checkpoint");
  if (ck.meta["generator"] != generator_name(generator.kind())) {
    throw IntegrityError("manifest: checkpoint holds a " + ck.meta["generator"] + " generator");
  }
  const ParameterMap params = generator.parameters();
  const Snapshot& values = ck.sections["generator"];
  for (const auto& [name, t] : params) {
    auto it = values.find(name);
    if (it == values.end() || it->second.rows() != t.rows() || it->second.cols() != t.cols()) {
      throw IntegrityError("generator: parameter " + name + " missing or misshapen");
    }
  }
  restore(params, values);
}

// ---------------------------------------------------------------------------

std::string AblationTable::to_csv() const {
  std::ostringstream out;
  out << "N,k,Tk,one_minus_p,exact_match,all_rules\n";
  out.precision(17);
  for (const auto& c : cells) {
    out << c.n << ',' << c.k << ',' << c.tk << ',' << c.theory << ',' << c.score << ','
        << (c.all_rules_selected ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string AblationTable::to_text() const {
  std::ostringstream out;
  out << "1 - P(N,k,T), T=" << tasks << "\n" << theory.to_text() << "\nmean test exact match\n";
  out << std::setw(4) << "N\\Tk";
  for (int tk : theory.tks) out << std::setw(7) << tk;
  out << '\n' << std::fixed << std::setprecision(2);
  for (int n : theory.ns) {
    out << std::setw(4) << n;
    for (int tk : theory.tks) {
      auto it = std::find_if(cells.begin(), cells.end(), [&](const AblationCell& c) { return c.n == n && c.tk == tk; });
      if (it == cells.end()) {
        out << std::setw(7) << "-";
      } else {
        out << std::setw(7) << it->score;
      }
    }
    out << '\n';
  }
  for (const auto& s : skipped) out << "skipped: " << s << '\n';
  return out.str();
}

AblationTable run_ablation_kN(const RunConfig& base, const PlmModel& plm, const std::vector<int>& ns,
                              const std::vector<int>& ks) {
  const int tasks = 2;
  std::vector<int> tks;
  for (int k : ks) tks.push_back(tasks * k);
  AblationTable table;
  table.tasks = tasks;
  table.theory = theory_table(ns, tks);

  RunConfig cfg = base;
  cfg.generator = GeneratorKind::props;
  cfg.task = TaskKind::transduction;
  cfg.tasks = {"l0-l1", "l1-l0"};
  cfg.bridge.reset();
  cfg.out_dir.clear();
  const ExperimentData data = build_data(cfg, universe_vocab());
  for (int n : ns) {
    for (int k : ks) {
      if (k > n) {
        table.skipped.push_back("N=" + std::to_string(n) + " k=" + std::to_string(k) + " (k > N)");
        continue;
      }
      cfg.props.n_rules = n;
      cfg.props.top_k = k;
      AblationCell cell{n, k, tasks * k, table.theory.at(n, tasks * k), 0.0, true};
      std::vector<double> scores;
      for (std::uint64_t seed : cfg.seeds) {
        SeedResult r = train_seed(cfg, plm, data, seed);
        scores.push_back(r.test.exact_match);
        for (const auto& tr : r.test_traces) {
          if (static_cast<int>(tr.rules.size()) != n) cell.all_rules_selected = false;
        }
      }
      cell.score = mean_std(scores).first;
      table.cells.push_back(cell);
    }
  }
  return table;
}

int RuleSeparationReport::successes() const {
  return static_cast<int>(std::count_if(seeds.begin(), seeds.end(), [](const auto& s) { return s.separated; }));
}

std::string RuleSeparationReport::to_text() const {
  std::ostringstream out;
  for (const auto& s : seeds) {
    out << "seed " << s.seed << (s.separated ? " separated" : " not separated") << " (test exact match "
        << s.test.exact_match << ")\n"
        << s.usage.to_csv();
  }
  out << "separated in " << successes() << "/" << seeds.size() << " seeds\n";
  return out.str();
}

RunConfig rule_separation_config(RunConfig cfg) {
  cfg.generator = GeneratorKind::props;
  cfg.task = TaskKind::transduction;
  cfg.tasks = {"l0-l1", "l0-l2", "l0-l3", "l0-l4"};
  cfg.bridge.reset();
  cfg.props.n_rules = 4;
  cfg.props.top_k = 1;
  cfg.props.layers = 1;
  return cfg;
}

RuleSeparationReport run_rule_separation(const RunConfig& cfg, const PlmModel& plm) {
  const ExperimentData data = build_data(cfg, universe_vocab());
  RuleSeparationReport report;
  for (std::uint64_t seed : cfg.seeds) {
    SeedResult r = train_seed(cfg, plm, data, seed);
    std::vector<SelectionTrace> instruction;
    for (const auto& tr : r.test_traces) {
      if (tr.layer == 0 && tr.condition == 0) instruction.push_back(tr);
    }
    RuleSeparationSeed s;
    s.seed = seed;
    s.usage = rule_usage_stats(instruction, cfg.props.n_rules);
    s.separated = s.usage.separated(0.95);
    s.test = r.test;
    report.seeds.push_back(std::move(s));
  }
  return report;
}

std::string BridgeReport::to_csv() const {
  std::ostringstream out;
  out << "row,train_tasks,target_train_rows,target_exact_match,delta\n";
  for (const auto& r : rows) {
    out << r.label << ',';
    for (std::size_t i = 0; i < r.train_tasks.size(); ++i) out << (i ? " " : "") << r.train_tasks[i];
    out << ',' << r.target_train_rows << ',' << r.target_score << ',' << r.delta << '\n';
  }
  return out.str();
}

BridgeReport run_bridge(const RunConfig& base, const PlmModel& plm, const std::string& target, int few_shot) {
  const TransductionTask t = parse_task(target);
  // Bridges route source -> a -> target through the other languages.
  std::vector<int> others;
  for (int l = 0; l < kLanguages; ++l) {
    if (l != t.source && l != t.target) others.push_back(l);
  }
  const std::string a = language_name(others.at(others.size() - 2));
  const std::string b = language_name(others.at(others.size() - 1));
  const std::string s = language_name(t.source);
  const std::string g = language_name(t.target);
  const std::vector<std::pair<std::string, std::vector<std::string>>> rows = {
      {"target only", {target}},
      {"+2 bridges", {target, s + "-" + a, a + "-" + g}},
      {"+3 bridges", {target, s + "-" + b, b + "-" + a, a + "-" + g}},
  };
  BridgeReport report;
  report.target = target;
  for (const auto& [label, tasks] : rows) {
    RunConfig cfg = base;
    cfg.task = TaskKind::transduction;
    cfg.tasks = tasks;
    cfg.n_per_task = few_shot;
    cfg.bridge = BridgeSpec{target, few_shot};
    cfg.out_dir.clear();
    ExperimentData data = build_data(cfg, universe_vocab());
    auto only_target = [&](std::vector<EncodedExample>& v) {
      v.erase(std::remove_if(v.begin(), v.end(), [&](const auto& e) { return e.task != target; }), v.end());
    };
    only_target(data.validation);
    only_target(data.test);
    BridgeRow row;
    row.label = label;
    row.train_tasks = tasks;
    row.target_train_rows = static_cast<std::size_t>(
        std::count_if(data.train.begin(), data.train.end(), [&](const auto& e) { return e.task == target; }));
    std::vector<double> scores;
    for (std::uint64_t seed : cfg.seeds) scores.push_back(train_seed(cfg, plm, data, seed).test.exact_match);
    row.target_score = mean_std(scores).first;
    row.delta = report.rows.empty() ? 0.0 : row.target_score - report.rows.front().target_score;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace props
