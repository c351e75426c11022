#pragma once

#include "props/condenc.hpp"
#include "props/rng.hpp"
#include "props/vocab.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Synthetic task suites: a SCAN-style command grammar, permutation-language
// transduction, the pretraining mixture and a span-summarization analog.
namespace props {

struct GrammarError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Words = std::vector<std::string>;

struct Example {
  std::string task_id;
  Words src;
  Words tgt;
  NamedTexts conditions;  // instruction first
};
using Dataset = std::vector<Example>;

// ---- SCAN grammar ---------------------------------------------------------

/// Reference interpreter. Action tokens are lowercase ("i_walk").
Words scan_interpret(const Words& command);
Words scan_interpret(const std::string& command);

/// Every command of the grammar (20,910), in a fixed order.
std::vector<Words> scan_all_commands();

enum class SplitKind { add_primitive, length, random };

struct SplitSpec {
  SplitKind kind = SplitKind::add_primitive;
  std::string primitive = "jump";
  int max_train_actions = 6;  // length split
  int train_size = 1000;
  int test_size = 200;
  int isolation_repeats = 50;  // copies of the bare primitive in train (add_primitive)
  std::uint64_t seed = 1;

  std::string describe() const;
};

struct Split {
  Dataset train;
  Dataset test;
};

/// Sampled, disjoint train/test sets honoring the split rule.
Split gen_scan_split(const SplitSpec& spec);

/// instruction, then "conjunction" and "direction" when the command has them.
NamedTexts scan_conditions(const Words& command);

// ---- permutation languages ------------------------------------------------

constexpr int kPayloadSize = 32;
constexpr int kLanguages = 5;  // l0 is the identity language
constexpr std::uint64_t kLanguageSeed = 0x1a46;

std::string payload_token(int i);
std::string language_name(int i);

/// Fixed bijections over the payload: sentence x in language i is π_i(x).
class Languages {
 public:
  explicit Languages(std::uint64_t seed = kLanguageSeed);
  const std::vector<int>& permutation(int language) const;
  /// Tokenwise π_t(π_s⁻¹(x)).
  Words translate(const Words& sentence, int source, int target) const;
  Words render(const std::vector<int>& base, int language) const;

 private:
  std::vector<std::vector<int>> perms_;
  std::vector<std::vector<int>> inverse_;
};

struct TransductionTask {
  std::string id;  // "l1-l2"
  int source = 0;
  int target = 0;
  std::string instruction() const;
};

TransductionTask make_task(int source, int target);
/// Every ordered pair of distinct languages among `languages`.
std::vector<TransductionTask> all_pairs(const std::vector<int>& languages);

struct BridgeSpec {
  std::string target;  // task id kept out of full training
  int few_shot = 0;    // target rows admitted to training
};

struct TransductionData {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// n_per_task training rows per task (targets of a bridge get only the
/// few-shot budget) and n_eval validation and test rows per task.
TransductionData gen_multitask_transduction(const std::vector<TransductionTask>& tasks, int n_per_task, int n_eval,
                                            const std::optional<BridgeSpec>& bridge, std::uint64_t seed,
                                            const Languages& languages = Languages());

// ---- pretraining mixture --------------------------------------------------

/// Marker token announcing the mapping from language `source` to `target`.
std::string marker_token(int source, int target);

/// Half copy over every content token, half marked transduction between the
/// identity language and each other language (both directions).
Dataset pretraining_corpus(int n, std::uint64_t seed, const Languages& languages = Languages());
Dataset heldout_copy(int n, std::uint64_t seed);

// ---- summarization analog -------------------------------------------------

enum class InstructionStyle { simple, detailed };

/// Support-task instructions and the target instruction in both styles.
std::vector<std::string> support_instructions();
std::string target_instruction(InstructionStyle style);
/// Words shared by a and b outside a small stopword list.
std::vector<std::string> content_overlap(const std::string& a, const std::string& b);

/// Documents of payload tokens with one bracketed span. The target is the
/// span rendered in the label's language, reversed for the "bbc" outlet.
Dataset gen_summarization(int n, InstructionStyle style, std::uint64_t seed, const Languages& languages = Languages());

// ---- shared ---------------------------------------------------------------

/// Every token any generator can emit, one text per token group. Building a
/// Vocab from it gives the single vocabulary shared by model and generators.
std::vector<std::string> universe_corpus();
Vocab universe_vocab();

/// Conditions of an example, tokenized and clipped.
ConditionSet attach_conditions(const Example& example, const Vocab& vocab, int instruction_max_length = 0);

/// Tab-separated rows task, src, tgt, conditions ("name=text;name=text") after
/// a "# spec <hash>" header.
void write_dataset(std::ostream& out, const Dataset& data, const std::string& spec);
Dataset read_dataset(std::istream& in, std::string* spec_hash = nullptr);
std::string spec_hash(const std::string& spec);

}  // namespace props
