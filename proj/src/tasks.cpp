#include "props/tasks.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace props {

namespace {

const std::set<std::string> kPrimitives = {"walk", "look", "run", "jump"};

std::string action_of(const std::string& verb) { return "i_" + verb; }

std::string turn_of(const std::string& dir) { return dir == "left" ? "i_turn_left" : "i_turn_right"; }

Words interpret_phrase(const Words& w, std::size_t begin, std::size_t end) {
  const std::size_t n = end - begin;
  if (n == 0) throw GrammarError("empty phrase");
  const std::string& verb = w[begin];
  const bool is_turn = verb == "turn";
  if (!is_turn && !kPrimitives.count(verb)) throw GrammarError("unexpected token '" + verb + "'");
  if (n == 1) {
    if (is_turn) throw GrammarError("'turn' needs a direction");
    return {action_of(verb)};
  }
  auto direction = [&](std::size_t i) {
    if (w[i] != "left" && w[i] != "right") throw GrammarError("unexpected token '" + w[i] + "'");
    return turn_of(w[i]);
  };
  if (n == 2) {
    const std::string turn = direction(begin + 1);
    if (is_turn) return {turn};
    return {turn, action_of(verb)};
  }
  if (n == 3) {
    const std::string& mod = w[begin + 1];
    const std::string turn = direction(begin + 2);
    Words out;
    if (mod == "opposite") {
      out = {turn, turn};
      if (!is_turn) out.push_back(action_of(verb));
    } else if (mod == "around") {
      for (int i = 0; i < 4; ++i) {
        out.push_back(turn);
        if (!is_turn) out.push_back(action_of(verb));
      }
    } else {
      throw GrammarError("unexpected token '" + mod + "'");
    }
    return out;
  }
  throw GrammarError("unexpected token '" + w[begin + 3] + "'");
}

Words interpret_sentence(const Words& w, std::size_t begin, std::size_t end) {
  if (begin == end) throw GrammarError("empty command");
  int repeat = 1;
  if (w[end - 1] == "twice") repeat = 2;
  if (w[end - 1] == "thrice") repeat = 3;
  if (repeat > 1) --end;
  const Words once = interpret_phrase(w, begin, end);
  Words out;
  for (int i = 0; i < repeat; ++i) out.insert(out.end(), once.begin(), once.end());
  return out;
}

std::vector<Words> scan_phrases() {
  std::vector<Words> out;
  const Words verbs = {"walk", "look", "run", "jump"};
  for (const auto& v : verbs) out.push_back({v});
  for (const auto& v : {"walk", "look", "run", "jump", "turn"}) {
    for (const auto& d : {"left", "right"}) out.push_back({v, d});
  }
  for (const auto& mod : {"opposite", "around"}) {
    for (const auto& v : {"walk", "look", "run", "jump", "turn"}) {
      for (const auto& d : {"left", "right"}) out.push_back({v, mod, d});
    }
  }
  return out;
}

std::string join(const Words& w) { return join_words(w); }

Example scan_example(const Words& command) {
  return {"scan", command, scan_interpret(command), scan_conditions(command)};
}

template <typename T>
void shuffle_with(std::vector<T>& v, CounterRng rng) {
  std::shuffle(v.begin(), v.end(), rng);
}

std::vector<int> random_base(CounterRng& rng, int min_len, int max_len) {
  const int len = min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len - min_len + 1)));
  std::vector<int> base(static_cast<std::size_t>(len));
  for (auto& t : base) t = static_cast<int>(rng.below(kPayloadSize));
  return base;
}

const std::set<std::string> kStopwords = {"the", "a", "an", "and", "then", "of", "to"};

}  // namespace

Words scan_interpret(const Words& command) {
  for (std::size_t i = 0; i < command.size(); ++i) {
    if (command[i] == "and" || command[i] == "after") {
      Words first = interpret_sentence(command, 0, i);
      Words second = interpret_sentence(command, i + 1, command.size());
      if (command[i] == "after") std::swap(first, second);
      first.insert(first.end(), second.begin(), second.end());
      return first;
    }
  }
  return interpret_sentence(command, 0, command.size());
}

Words scan_interpret(const std::string& command) { return scan_interpret(split_words(command)); }

std::vector<Words> scan_all_commands() {
  std::vector<Words> sentences;
  for (const auto& p : scan_phrases()) {
    sentences.push_back(p);
    for (const auto& rep : {"twice", "thrice"}) {
      Words s = p;
      s.push_back(rep);
      sentences.push_back(std::move(s));
    }
  }
  std::vector<Words> out = sentences;
  for (const auto& conj : {"and", "after"}) {
    for (const auto& a : sentences) {
      for (const auto& b : sentences) {
        Words c = a;
        c.push_back(conj);
        c.insert(c.end(), b.begin(), b.end());
        out.push_back(std::move(c));
      }
    }
  }
  return out;
}

std::string SplitSpec::describe() const {
  std::ostringstream out;
  const char* names[] = {"add_primitive", "length", "random"};
  out << "scan kind=" << names[static_cast<int>(kind)] << " primitive=" << primitive
      << " max_train_actions=" << max_train_actions << " train=" << train_size << " test=" << test_size
      << " isolation=" << isolation_repeats << " seed=" << seed;
  return out.str();
}

NamedTexts scan_conditions(const Words& command) {
  NamedTexts out = {{"instruction", "generate actions"}};
  for (const auto& w : command) {
    if (w == "and" || w == "after") out.push_back({"conjunction", w});
  }
  Words dirs;
  for (const auto& w : command) {
    if (w == "opposite" || w == "around" || w == "left" || w == "right") dirs.push_back(w);
  }
  if (!dirs.empty()) out.push_back({"direction", join(dirs)});
  return out;
}

Split gen_scan_split(const SplitSpec& spec) {
  if (spec.train_size < 1 || spec.test_size < 1) throw GenerationError("split sizes must be positive");
  const std::vector<Words> all = scan_all_commands();
  std::vector<Words> train_pool;
  std::vector<Words> test_pool;
  int isolation = 0;
  switch (spec.kind) {
    case SplitKind::add_primitive: {
      if (!kPrimitives.count(spec.primitive)) throw GenerationError("unknown primitive '" + spec.primitive + "'");
      for (const auto& c : all) {
        const bool uses = std::find(c.begin(), c.end(), spec.primitive) != c.end();
        if (!uses) {
          train_pool.push_back(c);
        } else if (c.size() > 1) {
          test_pool.push_back(c);
        }
      }
      isolation = std::min(spec.isolation_repeats, spec.train_size);
      break;
    }
    case SplitKind::length:
      for (const auto& c : all) {
        (static_cast<int>(scan_interpret(c).size()) <= spec.max_train_actions ? train_pool : test_pool).push_back(c);
      }
      break;
    case SplitKind::random: {
      std::vector<Words> shuffled = all;
      shuffle_with(shuffled, CounterRng(spec.seed).split(0));
      const std::size_t cut = std::min(shuffled.size(), static_cast<std::size_t>(spec.train_size));
      train_pool.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(cut));
      test_pool.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(cut), shuffled.end());
      break;
    }
  }
  const std::size_t want_train = static_cast<std::size_t>(spec.train_size - isolation);
  if (train_pool.size() < want_train || test_pool.size() < static_cast<std::size_t>(spec.test_size)) {
    throw GenerationError("split '" + spec.describe() + "' needs " + std::to_string(want_train) + "/" +
                          std::to_string(spec.test_size) + " commands but the grammar offers " +
                          std::to_string(train_pool.size()) + "/" + std::to_string(test_pool.size()));
  }
  shuffle_with(train_pool, CounterRng(spec.seed).split(1));
  shuffle_with(test_pool, CounterRng(spec.seed).split(2));
  Split split;
  for (std::size_t i = 0; i < want_train; ++i) split.train.push_back(scan_example(train_pool[i]));
  for (int i = 0; i < isolation; ++i) split.train.push_back(scan_example({spec.primitive}));
  shuffle_with(split.train, CounterRng(spec.seed).split(3));
  for (int i = 0; i < spec.test_size; ++i) split.test.push_back(scan_example(test_pool[static_cast<std::size_t>(i)]));
  return split;
}

// ---------------------------------------------------------------------------

std::string payload_token(int i) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "w%02d", i);
  return buf;
}

std::string language_name(int i) { return "l" + std::to_string(i); }

Languages::Languages(std::uint64_t seed) {
  const CounterRng base(seed);
  for (int l = 0; l < kLanguages; ++l) {
    std::vector<int> p(kPayloadSize);
    std::iota(p.begin(), p.end(), 0);
    if (l > 0) shuffle_with(p, base.split(static_cast<std::uint64_t>(l)));
    std::vector<int> inv(kPayloadSize);
    for (int i = 0; i < kPayloadSize; ++i) inv[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])] = i;
    perms_.push_back(std::move(p));
    inverse_.push_back(std::move(inv));
  }
}

const std::vector<int>& Languages::permutation(int language) const { return perms_.at(static_cast<std::size_t>(language)); }

Words Languages::render(const std::vector<int>& base, int language) const {
  const auto& p = permutation(language);
  Words out;
  for (int t : base) out.push_back(payload_token(p[static_cast<std::size_t>(t)]));
  return out;
}

Words Languages::translate(const Words& sentence, int source, int target) const {
  const auto& inv = inverse_.at(static_cast<std::size_t>(source));
  std::vector<int> base;
  for (const auto& w : sentence) {
    int id = -1;
    if (w.size() == 3 && w[0] == 'w') id = std::stoi(w.substr(1));
    if (id < 0 || id >= kPayloadSize) throw GrammarError("'" + w + "' is not a payload token");
    base.push_back(inv[static_cast<std::size_t>(id)]);
  }
  return render(base, target);
}

std::string TransductionTask::instruction() const {
  return "translate " + language_name(source) + " to " + language_name(target);
}

TransductionTask make_task(int source, int target) {
  if (source < 0 || source >= kLanguages || target < 0 || target >= kLanguages) {
    throw ConfigError("language index outside [0, " + std::to_string(kLanguages) + ")");
  }
  return {language_name(source) + "-" + language_name(target), source, target};
}

std::vector<TransductionTask> all_pairs(const std::vector<int>& languages) {
  std::vector<TransductionTask> out;
  for (int a : languages) {
    for (int b : languages) {
      if (a != b) out.push_back(make_task(a, b));
    }
  }
  return out;
}

TransductionData gen_multitask_transduction(const std::vector<TransductionTask>& tasks, int n_per_task, int n_eval,
                                            const std::optional<BridgeSpec>& bridge, std::uint64_t seed,
                                            const Languages& languages) {
  std::set<std::string> ids;
  for (const auto& t : tasks) {
    if (!ids.insert(t.id).second) throw ConfigError("duplicate task id '" + t.id + "'");
  }
  if (bridge && !ids.count(bridge->target)) throw ConfigError("bridge target '" + bridge->target + "' is not a task");
  const CounterRng base(seed);
  TransductionData data;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    const auto& task = tasks[ti];
    const int n_train = bridge && bridge->target == task.id ? bridge->few_shot : n_per_task;
    CounterRng rng = base.split(ti);
    std::set<std::vector<int>> seen;
    auto fresh = [&] {
      for (int attempt = 0; attempt < 10000; ++attempt) {
        std::vector<int> b = random_base(rng, 3, 8);
        if (seen.insert(b).second) return b;
      }
      throw GenerationError("ran out of distinct sentences for task " + task.id);
    };
    auto make = [&](Dataset& into, int n) {
      for (int i = 0; i < n; ++i) {
        const std::vector<int> b = fresh();
        into.push_back({task.id, languages.render(b, task.source), languages.render(b, task.target),
                        {{"instruction", task.instruction()}}});
      }
    };
    make(data.test, n_eval);
    make(data.validation, n_eval);
    make(data.train, n_train);
  }
  shuffle_with(data.train, base.split(0x7e57));
  return data;
}

std::string marker_token(int source, int target) { return "@" + language_name(source) + ">" + language_name(target); }

namespace {

std::vector<std::string> content_tokens() {
  std::vector<std::string> out;
  const Vocab vocab = universe_vocab();
  for (const auto& t : vocab.tokens()) {
    if (t.front() != '<' && t.front() != '@') out.push_back(t);
  }
  return out;
}

Example copy_example(CounterRng& rng, const std::vector<std::string>& tokens) {
  const int len = 3 + static_cast<int>(rng.below(6));
  Words w;
  for (int i = 0; i < len; ++i) w.push_back(tokens[rng.below(tokens.size())]);
  return {"copy", w, w, {}};
}

}  // namespace

Dataset pretraining_corpus(int n, std::uint64_t seed, const Languages& languages) {
  const std::vector<std::string> tokens = content_tokens();
  const CounterRng base(seed);
  Dataset out;
  for (int i = 0; i < n; ++i) {
    CounterRng rng = base.split(static_cast<std::uint64_t>(i));
    if (i % 2 == 0) {
      out.push_back(copy_example(rng, tokens));
      continue;
    }
    const int other = 1 + static_cast<int>(rng.below(kLanguages - 1));
    const bool outward = rng.below(2) == 0;
    const int s = outward ? 0 : other;
    const int t = outward ? other : 0;
    const std::vector<int> b = random_base(rng, 3, 8);
    Words src = {marker_token(s, t)};
    const Words body = languages.render(b, s);
    src.insert(src.end(), body.begin(), body.end());
    out.push_back({"mark-" + language_name(s) + "-" + language_name(t), src, languages.render(b, t), {}});
  }
  return out;
}

Dataset heldout_copy(int n, std::uint64_t seed) {
  const std::vector<std::string> tokens = content_tokens();
  const CounterRng base = CounterRng(seed).split(0xc0b1);
  Dataset out;
  for (int i = 0; i < n; ++i) {
    CounterRng rng = base.split(static_cast<std::uint64_t>(i));
    out.push_back(copy_example(rng, tokens));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> support_instructions() {
  return {"find the most common entities", "find the most relevant sentence", "abstractive rephrase sentences"};
}

std::string target_instruction(InstructionStyle style) {
  return style == InstructionStyle::simple
             ? "abstractive summarization"
             : "find the most relevant sentences and most common entities then abstractive rephrase sentences";
}

std::vector<std::string> content_overlap(const std::string& a, const std::string& b) {
  std::set<std::string> wa;
  for (auto& w : split_words(a)) {
    if (!kStopwords.count(w)) wa.insert(w);
  }
  std::set<std::string> wb;
  for (auto& w : split_words(b)) {
    if (!kStopwords.count(w)) wb.insert(w);
  }
  std::vector<std::string> out;
  std::set_intersection(wa.begin(), wa.end(), wb.begin(), wb.end(), std::back_inserter(out));
  return out;
}

Dataset gen_summarization(int n, InstructionStyle style, std::uint64_t seed, const Languages& languages) {
  const CounterRng base = CounterRng(seed).split(0x5a);
  Dataset out;
  for (int i = 0; i < n; ++i) {
    CounterRng rng = base.split(static_cast<std::uint64_t>(i));
    const std::vector<int> doc = random_base(rng, 10, 16);
    const int span_len = 2 + static_cast<int>(rng.below(3));
    const int start = static_cast<int>(rng.below(doc.size() - static_cast<std::size_t>(span_len) + 1));
    const int label = 1 + static_cast<int>(rng.below(kLanguages - 1));
    const bool bbc = rng.below(2) == 1;

    Words src;
    for (int t = 0; t < static_cast<int>(doc.size()); ++t) {
      if (t == start) src.push_back("[");
      src.push_back(payload_token(doc[static_cast<std::size_t>(t)]));
      if (t == start + span_len - 1) src.push_back("]");
    }
    std::vector<int> span(doc.begin() + start, doc.begin() + start + span_len);
    Words tgt = languages.render(span, label);
    if (bbc) std::reverse(tgt.begin(), tgt.end());
    out.push_back({"summ", src, tgt,
                   {{"instruction", target_instruction(style)}, {"outlet", bbc ? "bbc" : "cnn"},
                    {"label", language_name(label)}}});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> universe_corpus() {
  std::vector<std::string> out;
  Words payload;
  for (int i = 0; i < kPayloadSize; ++i) payload.push_back(payload_token(i));
  out.push_back(join(payload));
  Words markers;
  for (int l = 1; l < kLanguages; ++l) {
    markers.push_back(marker_token(0, l));
    markers.push_back(marker_token(l, 0));
  }
  out.push_back(join(markers));
  Words langs;
  for (int l = 0; l < kLanguages; ++l) langs.push_back(language_name(l));
  out.push_back("translate to " + join(langs));
  out.push_back("walk look run jump turn left right opposite around twice thrice and after");
  out.push_back("i_walk i_look i_run i_jump i_turn_left i_turn_right");
  out.push_back("generate actions");
  out.push_back("[ ] cnn bbc");
  for (const auto& s : support_instructions()) out.push_back(s);
  out.push_back(target_instruction(InstructionStyle::simple));
  out.push_back(target_instruction(InstructionStyle::detailed));
  return out;
}

Vocab universe_vocab() {
  static const Vocab vocab = Vocab::build(universe_corpus());
  return vocab;
}

ConditionSet attach_conditions(const Example& example, const Vocab& vocab, int instruction_max_length) {
  return make_condition_set(example.conditions, vocab, instruction_max_length);
}

std::string spec_hash(const std::string& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : spec) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_dataset(std::ostream& out, const Dataset& data, const std::string& spec) {
  out << "# spec " << spec_hash(spec) << '\n';
  for (const auto& ex : data) {
    out << ex.task_id << '\t' << join(ex.src) << '\t' << join(ex.tgt) << '\t';
    for (std::size_t i = 0; i < ex.conditions.size(); ++i) {
      if (i) out << ';';
      out << ex.conditions[i].first << '=' << ex.conditions[i].second;
    }
    out << '\n';
  }
}

Dataset read_dataset(std::istream& in, std::string* hash) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# spec ", 0) != 0) {
    throw GenerationError("dataset file lacks the spec header");
  }
  if (hash) *hash = line.substr(7);
  Dataset data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream row(line);
    std::string f;
    while (std::getline(row, f, '\t')) fields.push_back(f);
    if (line.back() == '\t') fields.emplace_back();
    if (fields.size() != 4) throw GenerationError("dataset row has " + std::to_string(fields.size()) + " fields");
    Example ex{fields[0], split_words(fields[1]), split_words(fields[2]), {}};
    std::stringstream conds(fields[3]);
    while (std::getline(conds, f, ';')) {
      const auto eq = f.find('=');
      if (eq == std::string::npos) throw GenerationError("condition '" + f + "' lacks '='");
      ex.conditions.push_back({f.substr(0, eq), f.substr(eq + 1)});
    }
    data.push_back(std::move(ex));
  }
  return data;
}

}  // namespace props
