#pragma once

#include "props/props.hpp"

#include <memory>
#include <string>
#include <string_view>
#include <vector>

// Prompt generators behind one interface: the rule engine and its baselines.
namespace props {

enum class GeneratorKind { prefix, prefix_pp, trsf_p, s_trsf_p, props };

GeneratorKind parse_generator_kind(std::string_view name);
std::string_view generator_name(GeneratorKind kind);
bool is_conditional(GeneratorKind kind);

/// Prepends every condition's tokens to src, each followed by the separator
/// token. When the result would not fit in `max_src`, the tail of src is
/// dropped; the conditions are never truncated.
std::vector<int> prefixpp_prepare(const std::vector<int>& src, const ConditionSet& conditions, std::size_t max_src);

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::props;
  PropsConfig props;
  int prefix_hidden = 64;  // width of the prefix reparametrization MLP
  int vocab_size = 0;
  PlmConfig plm;
  std::vector<SiteKey> sites;  // empty: every site of the model
};

class PromptGenerator {
 public:
  virtual ~PromptGenerator() = default;
  virtual GeneratorKind kind() const = 0;
  virtual ParameterMap parameters() const = 0;
  virtual GeneratedPrompt generate(const ConditionSet& conditions, const CounterRng& rng,
                                   const GenerateOptions& options) const = 0;
  /// Source tokens as fed to the frozen model.
  virtual std::vector<int> prepare_source(const std::vector<int>& src, const ConditionSet&) const { return src; }
  const std::vector<SiteKey>& sites() const { return sites_; }
  std::size_t parameter_count() const { return props::parameter_count(parameters()); }

 protected:
  std::vector<SiteKey> sites_;
};

/// prefix / prefix_pp: per site kind, one [T_P, 2·d_model] matrix per layer,
/// passed through a site-specific two-layer tanh MLP.
class PrefixGenerator : public PromptGenerator {
 public:
  PrefixGenerator(const GeneratorSpec& spec, CounterRng& rng);
  GeneratorKind kind() const override { return kind_; }
  ParameterMap parameters() const override;
  GeneratedPrompt generate(const ConditionSet& conditions, const CounterRng& rng,
                           const GenerateOptions& options) const override;
  std::vector<int> prepare_source(const std::vector<int>& src, const ConditionSet& conditions) const override;

 private:
  struct SiteParams {
    std::vector<Tensor> tables;  // per layer
    Linear hidden;
    Linear out;
  };
  GeneratorKind kind_;
  std::size_t max_src_;
  std::map<AttentionSite, SiteParams> params_;
  Index prompt_length_;
};

/// props, s_trsf_p and trsf_p share the conditional core. props routes to
/// top-k rules; s_trsf_p runs every head with one shared parameter set;
/// trsf_p keeps an independent core per site kind.
class ConditionalGenerator : public PromptGenerator {
 public:
  ConditionalGenerator(const GeneratorSpec& spec, CounterRng& rng);
  GeneratorKind kind() const override { return kind_; }
  ParameterMap parameters() const override;
  GeneratedPrompt generate(const ConditionSet& conditions, const CounterRng& rng,
                           const GenerateOptions& options) const override;
  const PropsConfig& config() const { return config_; }
  const PropsParams& core(std::size_t i = 0) const { return cores_.at(i).params; }
  PropsParams& core(std::size_t i = 0) { return cores_.at(i).params; }

 private:
  struct Core {
    std::string name;
    PropsParams params;
    std::vector<SiteKey> sites;
  };
  GeneratorKind kind_;
  PropsConfig config_;
  std::vector<Core> cores_;
};

std::unique_ptr<PromptGenerator> make_generator(const GeneratorSpec& spec, std::uint64_t seed);

}  // namespace props
