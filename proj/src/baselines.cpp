#include "props/baselines.hpp"

#include <algorithm>

namespace props {

GeneratorKind parse_generator_kind(std::string_view name) {
  if (name == "prefix") return GeneratorKind::prefix;
  if (name == "prefix_pp") return GeneratorKind::prefix_pp;
  if (name == "trsf_p") return GeneratorKind::trsf_p;
  if (name == "s_trsf_p") return GeneratorKind::s_trsf_p;
  if (name == "props") return GeneratorKind::props;
  throw ConfigError("unknown generator '" + std::string(name) + "'");
}

std::string_view generator_name(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::prefix:
      return "prefix";
    case GeneratorKind::prefix_pp:
      return "prefix_pp";
    case GeneratorKind::trsf_p:
      return "trsf_p";
    case GeneratorKind::s_trsf_p:
      return "s_trsf_p";
    case GeneratorKind::props:
      return "props";
  }
  return "?";
}

bool is_conditional(GeneratorKind kind) { return kind != GeneratorKind::prefix && kind != GeneratorKind::prefix_pp; }

std::vector<int> prefixpp_prepare(const std::vector<int>& src, const ConditionSet& conditions, std::size_t max_src) {
  std::vector<int> out;
  for (const auto& c : conditions) {
    out.insert(out.end(), c.tokens.begin(), c.tokens.begin() + c.length);
    out.push_back(Vocab::kSep);
  }
  if (out.size() > max_src) {
    throw ContractError("conditions alone take " + std::to_string(out.size()) + " tokens, limit " +
                        std::to_string(max_src));
  }
  const std::size_t room = max_src - out.size();
  out.insert(out.end(), src.begin(), src.begin() + static_cast<std::ptrdiff_t>(std::min(room, src.size())));
  return out;
}

namespace {

std::vector<SiteKey> resolve_sites(const GeneratorSpec& spec) {
  return spec.sites.empty() ? all_sites(spec.plm) : spec.sites;
}

}  // namespace

PrefixGenerator::PrefixGenerator(const GeneratorSpec& spec, CounterRng& rng)
    : kind_(spec.kind),
      max_src_(static_cast<std::size_t>(spec.plm.max_len - 1)),
      prompt_length_(spec.props.prompt_length) {
  if (is_conditional(spec.kind)) {
    throw ConfigError("prefix generator built for a conditional kind");
  }
  if (spec.props.prompt_length < 1) throw ConfigError("prompt length must be at least 1");
  sites_ = resolve_sites(spec);
  const Index width = 2 * spec.plm.d_model;
  for (const auto& s : sites_) {
    auto [it, fresh] = params_.try_emplace(s.site);
    SiteParams& p = it->second;
    if (fresh) {
      p.hidden = Linear::create(width, spec.prefix_hidden, rng, true);
      p.out = Linear::create(spec.prefix_hidden, width, rng, true);
    }
    if (static_cast<int>(p.tables.size()) <= s.layer) p.tables.resize(static_cast<std::size_t>(s.layer) + 1);
    p.tables[static_cast<std::size_t>(s.layer)] = Tensor(uniform_init(prompt_length_, width, width, rng), true);
  }
}

ParameterMap PrefixGenerator::parameters() const {
  ParameterMap out;
  for (const auto& [site, p] : params_) {
    const std::string prefix = "prefix." + std::string(site_name(site));
    for (std::size_t l = 0; l < p.tables.size(); ++l) {
      if (p.tables[l].size() > 0) out.emplace(prefix + ".table." + std::to_string(l), p.tables[l]);
    }
    p.hidden.collect(prefix + ".mlp.hidden", out);
    p.out.collect(prefix + ".mlp.out", out);
  }
  return out;
}

GeneratedPrompt PrefixGenerator::generate(const ConditionSet&, const CounterRng&, const GenerateOptions&) const {
  GeneratedPrompt result;
  result.pack = PromptPack(prompt_length_);
  for (const auto& s : sites_) {
    const SiteParams& p = params_.at(s.site);
    Tensor kv = p.out(tanh(p.hidden(p.tables[static_cast<std::size_t>(s.layer)])));
    const Index d = kv.cols() / 2;
    result.pack.set(s, {slice_cols(kv, 0, d), slice_cols(kv, d, d)});
    if (result.kv.size() == 0) result.kv = kv;
  }
  return result;
}

std::vector<int> PrefixGenerator::prepare_source(const std::vector<int>& src, const ConditionSet& conditions) const {
  return kind_ == GeneratorKind::prefix_pp ? prefixpp_prepare(src, conditions, max_src_) : src;
}

ConditionalGenerator::ConditionalGenerator(const GeneratorSpec& spec, CounterRng& rng)
    : kind_(spec.kind), config_(spec.props) {
  if (!is_conditional(spec.kind)) {
    throw ConfigError("conditional generator built for an unconditional kind");
  }
  config_.routing = spec.kind == GeneratorKind::props ? Routing::top_k : Routing::all_heads;
  config_.validate();
  sites_ = resolve_sites(spec);
  if (spec.kind == GeneratorKind::trsf_p) {
    for (AttentionSite site : {AttentionSite::encoder_self, AttentionSite::decoder_self, AttentionSite::cross}) {
      Core core{"gen." + std::string(site_name(site)), PropsParams::create(config_, spec.vocab_size,
                                                                            spec.plm.d_model, rng), {}};
      for (const auto& s : sites_) {
        if (s.site == site) core.sites.push_back(s);
      }
      cores_.push_back(std::move(core));
    }
  } else {
    cores_.push_back({"gen", PropsParams::create(config_, spec.vocab_size, spec.plm.d_model, rng), sites_});
  }
}

ParameterMap ConditionalGenerator::parameters() const {
  ParameterMap out;
  for (const auto& c : cores_) c.params.collect(c.name, out);
  return out;
}

GeneratedPrompt ConditionalGenerator::generate(const ConditionSet& conditions, const CounterRng& rng,
                                               const GenerateOptions& options) const {
  if (cores_.size() == 1) {
    return generate_prompt(conditions, cores_[0].params, cores_[0].sites, config_, rng, options);
  }
  GeneratedPrompt result;
  result.pack = PromptPack(config_.prompt_length);
  for (std::size_t i = 0; i < cores_.size(); ++i) {
    if (cores_[i].sites.empty()) continue;
    GeneratedPrompt part = generate_prompt(conditions, cores_[i].params, cores_[i].sites, config_, rng.split(i), options);
    for (const auto& [key, pair] : part.pack.entries()) result.pack.set(key, pair);
    if (result.kv.size() == 0) result.kv = part.kv;
    for (auto& tr : part.traces) result.traces.push_back(std::move(tr));
  }
  return result;
}

std::unique_ptr<PromptGenerator> make_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  if (spec.vocab_size < 1) throw ConfigError("generator needs the vocabulary size");
  CounterRng rng = CounterRng(seed).split(0x6e6);
  if (is_conditional(spec.kind)) return std::make_unique<ConditionalGenerator>(spec, rng);
  return std::make_unique<PrefixGenerator>(spec, rng);
}

}  // namespace props
