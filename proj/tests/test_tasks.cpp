#include "props/tasks.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

using namespace props;

namespace {

Words words(const std::string& s) { return split_words(s); }

// Independent SCAN reader: split on the conjunction first, then peel the
// counter, then expand the direction modifier.
Words oracle_action(const Words& w) {
  for (const char* conj : {"and", "after"}) {
    auto it = std::find(w.begin(), w.end(), conj);
    if (it == w.end()) continue;
    Words a = oracle_action(Words(w.begin(), it));
    Words b = oracle_action(Words(it + 1, w.end()));
    if (std::string(conj) == "after") std::swap(a, b);
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }
  int times = 1;
  Words p = w;
  if (p.back() == "twice" || p.back() == "thrice") {
    times = p.back() == "twice" ? 2 : 3;
    p.pop_back();
  }
  const std::string act = p[0] == "turn" ? "" : "i_" + p[0];
  Words unit;
  if (p.size() == 1) {
    unit = {act};
  } else {
    const std::string turn = "i_turn_" + p.back();
    int reps = 1;
    Words step = {turn};
    if (p.size() == 3 && p[1] == "opposite") step = {turn, turn};
    if (p.size() == 3 && p[1] == "around") reps = 4;
    for (int r = 0; r < reps; ++r) {
      unit.insert(unit.end(), step.begin(), step.end());
      if (!act.empty()) unit.push_back(act);
    }
  }
  Words out;
  for (int i = 0; i < times; ++i) out.insert(out.end(), unit.begin(), unit.end());
  return out;
}

bool contains(const Words& w, const std::string& t) { return std::find(w.begin(), w.end(), t) != w.end(); }

std::string key(const Words& w) { return join_words(w); }

}  // namespace

TEST(Scan, HandExamples) {
  EXPECT_EQ(scan_interpret("walk"), words("i_walk"));
  EXPECT_EQ(scan_interpret("walk left twice"), words("i_turn_left i_walk i_turn_left i_walk"));
  EXPECT_EQ(scan_interpret("run thrice and walk opposite left"),
            words("i_run i_run i_run i_turn_left i_turn_left i_walk"));
  EXPECT_EQ(scan_interpret("jump after look"), words("i_look i_jump"));
  EXPECT_EQ(scan_interpret("turn around right"), words("i_turn_right i_turn_right i_turn_right i_turn_right"));
  EXPECT_EQ(scan_interpret("turn opposite left"), words("i_turn_left i_turn_left"));
}

TEST(Scan, GrammarErrorsNameTheToken) {
  try {
    scan_interpret("walk sideways");
    FAIL();
  } catch (const GrammarError& e) {
    EXPECT_NE(std::string(e.what()).find("sideways"), std::string::npos);
  }
  EXPECT_THROW(scan_interpret("turn"), GrammarError);
  EXPECT_THROW(scan_interpret(""), GrammarError);
  EXPECT_THROW(scan_interpret("walk and"), GrammarError);
}

TEST(Scan, FullGrammarAgreesWithOracle) {
  const auto all = scan_all_commands();
  // 34 phrases, three counter forms, then single / and / after.
  const std::size_t s = 34 * 3;
  EXPECT_EQ(all.size(), s + 2 * s * s);
  EXPECT_EQ(all.size(), 20910u);
  std::set<std::string> unique;
  for (const auto& c : all) {
    unique.insert(key(c));
    ASSERT_EQ(scan_interpret(c), oracle_action(c)) << key(c);
  }
  EXPECT_EQ(unique.size(), all.size());
}

TEST(Scan, AddPrimitiveSplit) {
  SplitSpec spec;
  spec.train_size = 400;
  spec.test_size = 100;
  spec.isolation_repeats = 20;
  const Split split = gen_scan_split(spec);
  EXPECT_EQ(split.train.size(), 400u);
  EXPECT_EQ(split.test.size(), 100u);
  int bare = 0;
  for (const auto& ex : split.train) {
    if (contains(ex.src, "jump")) {
      EXPECT_EQ(ex.src, words("jump"));
      ++bare;
    }
    EXPECT_EQ(ex.tgt, oracle_action(ex.src));
  }
  EXPECT_EQ(bare, 20);
  std::set<std::string> train;
  for (const auto& ex : split.train) train.insert(key(ex.src));
  for (const auto& ex : split.test) {
    EXPECT_TRUE(contains(ex.src, "jump"));
    EXPECT_GT(ex.src.size(), 1u);
    EXPECT_EQ(ex.tgt, oracle_action(ex.src));
    EXPECT_FALSE(train.count(key(ex.src)));
  }
}

TEST(Scan, LengthSplit) {
  SplitSpec spec;
  spec.kind = SplitKind::length;
  spec.train_size = 300;
  spec.test_size = 100;
  const Split split = gen_scan_split(spec);
  for (const auto& ex : split.train) EXPECT_LE(ex.tgt.size(), 6u);
  for (const auto& ex : split.test) EXPECT_GT(ex.tgt.size(), 6u);
}

TEST(Scan, RandomSplitDisjointAndDeterministic) {
  SplitSpec spec;
  spec.kind = SplitKind::random;
  spec.train_size = 500;
  spec.test_size = 200;
  spec.seed = 4;
  const Split a = gen_scan_split(spec);
  const Split b = gen_scan_split(spec);
  std::ostringstream sa, sb;
  write_dataset(sa, a.train, spec.describe());
  write_dataset(sb, b.train, spec.describe());
  EXPECT_EQ(sa.str(), sb.str());
  std::set<std::string> train;
  for (const auto& ex : a.train) train.insert(key(ex.src));
  for (const auto& ex : a.test) EXPECT_FALSE(train.count(key(ex.src)));
  spec.seed = 5;
  std::ostringstream sc;
  write_dataset(sc, gen_scan_split(spec).train, spec.describe());
  EXPECT_NE(sa.str(), sc.str());
}

TEST(Scan, InfeasibleSizesRejected) {
  SplitSpec spec;
  spec.kind = SplitKind::length;
  spec.max_train_actions = 1;
  spec.train_size = 100;
  EXPECT_THROW(gen_scan_split(spec), GenerationError);
  spec = SplitSpec{};
  spec.primitive = "fly";
  EXPECT_THROW(gen_scan_split(spec), GenerationError);
}

TEST(Scan, Conditions) {
  const NamedTexts c = scan_conditions(words("jump and walk left"));
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].first, "instruction");
  EXPECT_EQ(c[1], (std::pair<std::string, std::string>{"conjunction", "and"}));
  EXPECT_EQ(c[2], (std::pair<std::string, std::string>{"direction", "left"}));
  EXPECT_EQ(scan_conditions(words("walk")).size(), 1u);
}

TEST(Languages, BijectionsAndTranslation) {
  const Languages langs;
  for (int l = 0; l < kLanguages; ++l) {
    std::vector<int> p = langs.permutation(l);
    std::sort(p.begin(), p.end());
    for (int i = 0; i < kPayloadSize; ++i) EXPECT_EQ(p[static_cast<std::size_t>(i)], i);
  }
  for (int i = 0; i < kPayloadSize; ++i) EXPECT_EQ(langs.permutation(0)[static_cast<std::size_t>(i)], i);
  EXPECT_NE(langs.permutation(1), langs.permutation(2));
  const Words x = words("w03 w17 w31 w00");
  EXPECT_EQ(langs.translate(x, 2, 2), x);
  EXPECT_EQ(langs.translate(langs.translate(x, 1, 3), 3, 1), x);
  EXPECT_EQ(langs.translate(langs.translate(x, 1, 2), 2, 4), langs.translate(x, 1, 4));
  EXPECT_THROW(langs.translate(words("w99"), 0, 1), GrammarError);
}

TEST(Transduction, LabelsMatchRecomputation) {
  const Languages langs;
  const auto tasks = all_pairs({0, 1, 2, 3});
  EXPECT_EQ(tasks.size(), 12u);
  const TransductionData d = gen_multitask_transduction(tasks, 30, 10, std::nullopt, 3);
  EXPECT_EQ(d.train.size(), 360u);
  EXPECT_EQ(d.validation.size(), 120u);
  EXPECT_EQ(d.test.size(), 120u);
  std::set<std::string> train;
  for (const auto& ex : d.train) train.insert(ex.task_id + "|" + key(ex.src));
  for (const Dataset* part : {&d.train, &d.validation, &d.test}) {
    for (const auto& ex : *part) {
      const int s = ex.task_id[1] - '0';
      const int t = ex.task_id[4] - '0';
      // Oracle: map each token through π_t ∘ π_s⁻¹ by search.
      Words expect;
      for (const auto& w : ex.src) {
        const int id = std::stoi(w.substr(1));
        const auto& ps = langs.permutation(s);
        const int base = static_cast<int>(std::find(ps.begin(), ps.end(), id) - ps.begin());
        expect.push_back(payload_token(langs.permutation(t)[static_cast<std::size_t>(base)]));
      }
      EXPECT_EQ(ex.tgt, expect);
      ASSERT_EQ(ex.conditions.size(), 1u);
      EXPECT_EQ(ex.conditions[0].first, "instruction");
      if (part != &d.train) EXPECT_FALSE(train.count(ex.task_id + "|" + key(ex.src)));
    }
  }
}

TEST(Transduction, IdentityPairIsCopy) {
  const TransductionData d = gen_multitask_transduction({make_task(2, 2)}, 5, 1, std::nullopt, 1);
  for (const auto& ex : d.train) EXPECT_EQ(ex.src, ex.tgt);
}

TEST(Transduction, BridgeTargetOnlyGetsFewShotRows) {
  const auto tasks = std::vector<TransductionTask>{make_task(0, 1), make_task(1, 2), make_task(0, 2)};
  const TransductionData none = gen_multitask_transduction(tasks, 20, 5, BridgeSpec{"l0-l2", 0}, 1);
  for (const auto& ex : none.train) EXPECT_NE(ex.task_id, "l0-l2");
  EXPECT_EQ(std::count_if(none.test.begin(), none.test.end(), [](const Example& e) { return e.task_id == "l0-l2"; }),
            5);
  const TransductionData few = gen_multitask_transduction(tasks, 20, 5, BridgeSpec{"l0-l2", 3}, 1);
  EXPECT_EQ(std::count_if(few.train.begin(), few.train.end(), [](const Example& e) { return e.task_id == "l0-l2"; }),
            3);
}

TEST(Transduction, ConfigErrors) {
  EXPECT_THROW(gen_multitask_transduction({make_task(0, 1), make_task(0, 1)}, 5, 1, std::nullopt, 1), ConfigError);
  EXPECT_THROW(gen_multitask_transduction({make_task(0, 1)}, 5, 1, BridgeSpec{"l3-l4", 0}, 1), ConfigError);
  EXPECT_THROW(make_task(0, 9), ConfigError);
}

TEST(Pretraining, MixtureHalvesAndLabels) {
  const Languages langs;
  const Dataset d = pretraining_corpus(200, 7);
  int copies = 0;
  for (const auto& ex : d) {
    if (ex.task_id == "copy") {
      ++copies;
      EXPECT_EQ(ex.src, ex.tgt);
      continue;
    }
    const int s = ex.task_id[6] - '0';
    const int t = ex.task_id[9] - '0';
    EXPECT_EQ(ex.src.front(), marker_token(s, t));
    EXPECT_TRUE(s == 0 || t == 0);
    EXPECT_EQ(ex.tgt, langs.translate(Words(ex.src.begin() + 1, ex.src.end()), s, t));
  }
  EXPECT_EQ(copies, 100);
  const Vocab v = universe_vocab();
  for (const auto& ex : d) {
    for (const auto& w : ex.src) EXPECT_TRUE(v.contains(w)) << w;
  }
}

TEST(Summarization, SpanAndMetadata) {
  const Languages langs;
  const Dataset d = gen_summarization(50, InstructionStyle::simple, 2);
  for (const auto& ex : d) {
    ASSERT_EQ(ex.conditions.size(), 3u);
    EXPECT_EQ(ex.conditions[1].first, "outlet");
    EXPECT_EQ(ex.conditions[2].first, "label");
    const auto open = std::find(ex.src.begin(), ex.src.end(), "[");
    const auto close = std::find(ex.src.begin(), ex.src.end(), "]");
    ASSERT_LT(open, close);
    Words expect = langs.translate(Words(open + 1, close), 0, ex.conditions[2].second[1] - '0');
    if (ex.conditions[1].second == "bbc") std::reverse(expect.begin(), expect.end());
    EXPECT_EQ(ex.tgt, expect);
  }
}

TEST(Summarization, DetailedInstructionOverlapsEverySupportTask) {
  const std::string detailed = target_instruction(InstructionStyle::detailed);
  for (const auto& s : support_instructions()) EXPECT_GE(content_overlap(detailed, s).size(), 3u) << s;
  for (const auto& s : support_instructions()) {
    EXPECT_LT(content_overlap(target_instruction(InstructionStyle::simple), s).size(), 3u);
  }
}

TEST(Dataset, RoundTripWithHeader) {
  const Split split = gen_scan_split({.train_size = 50, .test_size = 10});
  std::stringstream buf;
  write_dataset(buf, split.train, "spec-a");
  std::string hash;
  const Dataset back = read_dataset(buf, &hash);
  EXPECT_EQ(hash, spec_hash("spec-a"));
  ASSERT_EQ(back.size(), split.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].task_id, split.train[i].task_id);
    EXPECT_EQ(back[i].src, split.train[i].src);
    EXPECT_EQ(back[i].tgt, split.train[i].tgt);
    EXPECT_EQ(back[i].conditions, split.train[i].conditions);
  }
  std::stringstream bad("no header\n");
  EXPECT_THROW(read_dataset(bad), GenerationError);
}

TEST(Conditions, AttachedInInstructionFirstOrder) {
  const Vocab v = universe_vocab();
  const Example ex{"scan", words("jump and walk left"), {}, scan_conditions(words("jump and walk left"))};
  const ConditionSet cs = attach_conditions(ex, v);
  ASSERT_EQ(cs.size(), 3u);
  EXPECT_EQ(cs[0].name, "instruction");
  EXPECT_EQ(cs[0].length, 2);
  EXPECT_EQ(cs[1].tokens.front(), v.id("and"));
}
