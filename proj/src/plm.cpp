#include "props/plm.hpp"

#include "props/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace props {

void PlmConfig::validate() const {
  if (vocab_size < 1 || d_model < 1 || n_heads < 1 || n_enc_layers < 1 || n_dec_layers < 1 || ffn_dim < 1 ||
      max_len < 1) {
    throw ConfigError("every model dimension must be at least 1");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(n_heads) +
                      " heads");
  }
  if (vocab_size <= Vocab::kEos) {
    throw ConfigError("vocabulary must include the reserved tokens");
  }
}

std::size_t plm_parameter_count(const PlmConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t v = static_cast<std::size_t>(c.vocab_size);
  const std::size_t f = static_cast<std::size_t>(c.ffn_dim);
  const std::size_t embeddings = v * d + static_cast<std::size_t>(c.max_len) * d;
  const std::size_t attention = 4 * (d * d + d);
  const std::size_t norm = 2 * d;
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t enc_layer = attention + 2 * norm + ffn;
  const std::size_t dec_layer = 2 * attention + 3 * norm + ffn;
  return embeddings + static_cast<std::size_t>(c.n_enc_layers) * enc_layer +
         static_cast<std::size_t>(c.n_dec_layers) * dec_layer + 2 * norm + d * v + v;
}

std::string_view site_name(AttentionSite site) {
  switch (site) {
    case AttentionSite::encoder_self:
      return "enc_self";
    case AttentionSite::decoder_self:
      return "dec_self";
    case AttentionSite::cross:
      return "cross";
  }
  return "?";
}

std::vector<SiteKey> all_sites(const PlmConfig& config) {
  std::vector<SiteKey> sites;
  for (int l = 0; l < config.n_enc_layers; ++l) sites.push_back({AttentionSite::encoder_self, l});
  for (int l = 0; l < config.n_dec_layers; ++l) sites.push_back({AttentionSite::decoder_self, l});
  for (int l = 0; l < config.n_dec_layers; ++l) sites.push_back({AttentionSite::cross, l});
  std::sort(sites.begin(), sites.end());
  return sites;
}

PromptPack PromptPack::broadcast(const std::vector<SiteKey>& sites, const Tensor& kv) {
  if (kv.cols() % 2 != 0) {
    throw DimensionError("prompt width " + std::to_string(kv.cols()) + " cannot be split into key and value");
  }
  const Index d = kv.cols() / 2;
  PromptPair pair{slice_cols(kv, 0, d), slice_cols(kv, d, d)};
  PromptPack pack(kv.rows());
  for (const auto& s : sites) pack.set(s, pair);
  return pack;
}

void PromptPack::set(SiteKey key, PromptPair pair) {
  if (pair.key.rows() != prompt_length_ || pair.value.rows() != prompt_length_ ||
      pair.key.cols() != pair.value.cols()) {
    throw DimensionError("prompt pair " + shape_string(pair.key.rows(), pair.key.cols()) + " / " +
                         shape_string(pair.value.rows(), pair.value.cols()) + " does not match length " +
                         std::to_string(prompt_length_));
  }
  entries_.insert_or_assign(key, std::move(pair));
}

const PromptPair* PromptPack::find(SiteKey key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<SiteKey> PromptPack::sites() const {
  std::vector<SiteKey> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

void PromptPack::validate(const std::vector<SiteKey>& sites, Index d_model) const {
  std::vector<SiteKey> want = sites;
  std::sort(want.begin(), want.end());
  if (want != this->sites()) {
    throw ContractError("prompt pack sites do not match the adaptation set");
  }
  for (const auto& [k, pair] : entries_) {
    if (pair.key.cols() != d_model) {
      throw DimensionError("prompt width " + std::to_string(pair.key.cols()) + " at " +
                           std::string(site_name(k.site)) + "/" + std::to_string(k.layer) + " differs from d_model " +
                           std::to_string(d_model));
    }
  }
}

namespace {

Mask with_prompt_columns(const Mask* mask, Index tq, Index tp, Index tk) {
  Mask full(tq, tp + tk);
  full.leftCols(tp).setConstant(true);
  if (mask) {
    full.rightCols(tk) = *mask;
  } else {
    full.rightCols(tk).setConstant(true);
  }
  return full;
}

void check_prompt_dims(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& p_k, const Tensor& p_v) {
  if (p_k.rows() != p_v.rows()) {
    throw DimensionError("prompt keys " + shape_string(p_k.rows(), p_k.cols()) + " and values " +
                         shape_string(p_v.rows(), p_v.cols()) + " differ in length");
  }
  if (p_k.rows() > 0 && (p_k.cols() != k.cols() || p_k.cols() != q.cols())) {
    throw DimensionError("prompt key width " + std::to_string(p_k.cols()) + " differs from key width " +
                         std::to_string(k.cols()));
  }
  if (p_v.rows() > 0 && p_v.cols() != v.cols()) {
    throw DimensionError("prompt value width " + std::to_string(p_v.cols()) + " differs from value width " +
                         std::to_string(v.cols()));
  }
}

double resolve_scale(double scale, Index dh) { return scale < 0.0 ? 1.0 / std::sqrt(static_cast<double>(dh)) : scale; }

// Output of softmax over [P_k ‖ K]; the prompt slots are never masked.
Tensor concat_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& p_k, const Tensor& p_v,
                        double scale, const Mask* mask) {
  if (p_k.rows() == 0) {
    return attention(q, k, v, scale, mask);
  }
  const Tensor keys_parts[] = {p_k, k};
  const Tensor value_parts[] = {p_v, v};
  Tensor keys = concat_rows(keys_parts);
  Tensor values = concat_rows(value_parts);
  if (!mask) {
    return attention(q, keys, values, scale, nullptr);
  }
  Mask full = with_prompt_columns(mask, q.rows(), p_k.rows(), k.rows());
  return attention(q, keys, values, scale, &full);
}

double log_sum_exp(const Eigen::RowVectorXd& row, const Eigen::Matrix<bool, 1, Eigen::Dynamic>* visible) {
  double m = -std::numeric_limits<double>::infinity();
  for (Index c = 0; c < row.size(); ++c) {
    if (!visible || (*visible)(c)) m = std::max(m, row(c));
  }
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Index c = 0; c < row.size(); ++c) {
    if (!visible || (*visible)(c)) s += std::exp(row(c) - m);
  }
  return m + std::log(s);
}

Matrix plain_attention(const Matrix& q, const Matrix& k, const Matrix& v, double scale, const Mask* mask) {
  Matrix scores = scale * q * k.transpose();
  Matrix out(q.rows(), v.cols());
  for (Index r = 0; r < q.rows(); ++r) {
    Eigen::Matrix<bool, 1, Eigen::Dynamic> vis;
    if (mask) vis = mask->row(r);
    const double lse = log_sum_exp(scores.row(r), mask ? &vis : nullptr);
    Eigen::RowVectorXd w(k.rows());
    for (Index c = 0; c < k.rows(); ++c) {
      w(c) = (!mask || vis(c)) ? std::exp(scores(r, c) - lse) : 0.0;
    }
    out.row(r) = w * v;
  }
  return out;
}

}  // namespace

Eigen::VectorXd prompt_gate(const Matrix& q, const Matrix& k, const Matrix& p_k, double scale, const Mask* mask) {
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(q.rows());
  if (p_k.rows() == 0) return alpha;
  const double s = resolve_scale(scale, q.cols());
  Matrix prompt_scores = s * q * p_k.transpose();
  Matrix key_scores = s * q * k.transpose();
  for (Index r = 0; r < q.rows(); ++r) {
    Eigen::Matrix<bool, 1, Eigen::Dynamic> vis;
    if (mask) vis = mask->row(r);
    const double lp = log_sum_exp(prompt_scores.row(r), nullptr);
    const double lk = log_sum_exp(key_scores.row(r), mask ? &vis : nullptr);
    // alpha = e^lp / (e^lp + e^lk) = 1 / (1 + e^(lk - lp))
    alpha(r) = std::isfinite(lk) ? 1.0 / (1.0 + std::exp(lk - lp)) : 1.0;
  }
  return alpha;
}

Matrix gated_attention(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& p_k, const Matrix& p_v,
                       double scale, const Mask* mask) {
  const double s = resolve_scale(scale, q.cols());
  Matrix frozen = plain_attention(q, k, v, s, mask);
  if (p_k.rows() == 0) return frozen;
  Matrix adapted = plain_attention(q, p_k, p_v, s, nullptr);
  Eigen::VectorXd alpha = prompt_gate(q, k, p_k, s, mask);
  Matrix out(q.rows(), v.cols());
  for (Index r = 0; r < q.rows(); ++r) {
    out.row(r) = alpha(r) * adapted.row(r) + (1.0 - alpha(r)) * frozen.row(r);
  }
  return out;
}

PromptedAttention prompted_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& p_k,
                                     const Tensor& p_v, double scale, const Mask* mask, bool verify) {
  check_prompt_dims(q, k, v, p_k, p_v);
  const double s = resolve_scale(scale, q.cols());
  PromptedAttention result;
  result.out = concat_attention(q, k, v, p_k, p_v, s, mask);
  result.alpha = prompt_gate(q.value(), k.value(), p_k.value(), s, mask);
  if (verify) {
    Matrix gated = gated_attention(q.value(), k.value(), v.value(), p_k.value(), p_v.value(), s, mask);
    const double gap = (gated - result.out.value()).cwiseAbs().maxCoeff();
    if (gap > 1e-9) {
      throw ContractError("gated decomposition differs from concatenated attention by " + std::to_string(gap));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

PlmModel PlmModel::build(const PlmConfig& config, std::uint64_t seed) {
  config.validate();
  CounterRng rng(seed);
  const Index d = config.d_model;
  PlmModel m;
  m.config_ = config;
  m.token_embedding_ = Tensor(uniform_init(config.vocab_size, d, d, rng), true);
  m.position_embedding_ = Tensor(uniform_init(config.max_len, d, d, rng), true);
  auto block = [&] {
    return AttentionBlock{Linear::create(d, d, rng, true), Linear::create(d, d, rng, true),
                          Linear::create(d, d, rng, true), Linear::create(d, d, rng, true)};
  };
  for (int l = 0; l < config.n_enc_layers; ++l) {
    EncoderLayer layer;
    layer.norm_attn = LayerNormParams::create(d, true);
    layer.norm_ffn = LayerNormParams::create(d, true);
    layer.self_attn = block();
    layer.ffn = FeedForward::create(d, config.ffn_dim, rng, true);
    m.encoder_.push_back(std::move(layer));
  }
  for (int l = 0; l < config.n_dec_layers; ++l) {
    DecoderLayer layer;
    layer.norm_self = LayerNormParams::create(d, true);
    layer.norm_cross = LayerNormParams::create(d, true);
    layer.norm_ffn = LayerNormParams::create(d, true);
    layer.self_attn = block();
    layer.cross_attn = block();
    layer.ffn = FeedForward::create(d, config.ffn_dim, rng, true);
    m.decoder_.push_back(std::move(layer));
  }
  m.encoder_norm_ = LayerNormParams::create(d, true);
  m.decoder_norm_ = LayerNormParams::create(d, true);
  m.output_ = Linear::create(d, config.vocab_size, rng, true);
  return m;
}

PlmModel PlmModel::from_snapshot(const PlmConfig& config, const Snapshot& values, bool frozen) {
  PlmModel m = build(config, 0);
  const ParameterMap params = m.parameters();
  for (const auto& [name, t] : params) {
    auto it = values.find(name);
    if (it == values.end()) {
      throw ContractError("stored model lacks parameter " + name);
    }
    if (it->second.rows() != t.rows() || it->second.cols() != t.cols()) {
      throw DimensionError("stored parameter " + name + " has shape " +
                           shape_string(it->second.rows(), it->second.cols()) + ", expected " +
                           shape_string(t.rows(), t.cols()));
    }
  }
  if (values.size() != params.size()) {
    throw ContractError("stored model has " + std::to_string(values.size()) + " parameters, expected " +
                        std::to_string(params.size()));
  }
  restore(params, values);
  if (frozen) m.freeze();
  return m;
}

ParameterMap PlmModel::parameters() const {
  ParameterMap out;
  out.emplace("embed.token", token_embedding_);
  out.emplace("embed.position", position_embedding_);
  auto collect_block = [&out](const std::string& p, const AttentionBlock& b) {
    b.query.collect(p + ".query", out);
    b.key.collect(p + ".key", out);
    b.value.collect(p + ".value", out);
    b.output.collect(p + ".output", out);
  };
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    const std::string p = "enc." + std::to_string(l);
    const auto& layer = encoder_[l];
    layer.norm_attn.collect(p + ".norm_attn", out);
    layer.norm_ffn.collect(p + ".norm_ffn", out);
    collect_block(p + ".self", layer.self_attn);
    layer.ffn.collect(p + ".ffn", out);
  }
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const std::string p = "dec." + std::to_string(l);
    const auto& layer = decoder_[l];
    layer.norm_self.collect(p + ".norm_self", out);
    layer.norm_cross.collect(p + ".norm_cross", out);
    layer.norm_ffn.collect(p + ".norm_ffn", out);
    collect_block(p + ".self", layer.self_attn);
    collect_block(p + ".cross", layer.cross_attn);
    layer.ffn.collect(p + ".ffn", out);
  }
  encoder_norm_.collect("enc.final_norm", out);
  decoder_norm_.collect("dec.final_norm", out);
  output_.collect("output", out);
  return out;
}

void PlmModel::freeze() {
  for (auto& [name, t] : parameters()) {
    Tensor handle = t;
    handle.set_requires_grad(false);
  }
  frozen_ = true;
  frozen_fingerprint_ = fingerprint();
}

std::uint64_t PlmModel::fingerprint() const { return props::fingerprint(parameters()); }

void PlmModel::verify_frozen() const {
  if (!frozen_) {
    throw FrozenError("model is not frozen");
  }
  if (fingerprint() != frozen_fingerprint_) {
    throw FrozenError("frozen model parameters were modified");
  }
}

ParameterMap PlmModel::trainable_parameters() {
  if (frozen_) {
    throw FrozenError("cannot train a frozen model");
  }
  return parameters();
}

PlmModel PlmModel::deep_copy() const {
  PlmModel copy = build(config_, 0);
  restore(copy.parameters(), snapshot(parameters()));
  if (frozen_) copy.freeze();
  return copy;
}

void PlmModel::check_tokens(const std::vector<int>& ids, std::size_t extra) const {
  if (ids.size() + extra > static_cast<std::size_t>(config_.max_len)) {
    throw DimensionError("sequence of " + std::to_string(ids.size() + extra) + " tokens exceeds max_len " +
                         std::to_string(config_.max_len));
  }
  for (int id : ids) {
    if (id < 0 || id >= config_.vocab_size) {
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(config_.vocab_size));
    }
  }
}

const PromptPair* PlmModel::prompt_at(const PromptPack* prompts, AttentionSite site, int layer) const {
  return prompts ? prompts->find({site, layer}) : nullptr;
}

Tensor PlmModel::attend(const AttentionBlock& block, const Tensor& x_query, const Tensor& x_context,
                        const PromptPair* prompt, const Mask* mask) const {
  Tensor q = block.query(x_query);
  Tensor k = block.key(x_context);
  Tensor v = block.value(x_context);
  const Index dh = config_.head_dim();
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(config_.n_heads));
  for (int h = 0; h < config_.n_heads; ++h) {
    const Index at = h * dh;
    Tensor qh = slice_cols(q, at, dh);
    Tensor kh = slice_cols(k, at, dh);
    Tensor vh = slice_cols(v, at, dh);
    if (prompt) {
      heads.push_back(concat_attention(qh, kh, vh, slice_cols(prompt->key, at, dh), slice_cols(prompt->value, at, dh),
                                       s, mask));
    } else {
      heads.push_back(attention(qh, kh, vh, s, mask));
    }
  }
  return block.output(concat_cols(heads));
}

Tensor PlmModel::encode(const std::vector<int>& src, const PromptPack* prompts) const {
  check_tokens(src, 1);
  std::vector<int> ids = src;
  ids.push_back(Vocab::kEos);
  const Index n = static_cast<Index>(ids.size());
  Tensor x = add(gather_rows(token_embedding_, ids), slice_rows(position_embedding_, 0, n));
  for (int l = 0; l < config_.n_enc_layers; ++l) {
    const auto& layer = encoder_[static_cast<std::size_t>(l)];
    Tensor h = layer.norm_attn(x);
    x = add(x, attend(layer.self_attn, h, h, prompt_at(prompts, AttentionSite::encoder_self, l), nullptr));
    x = add(x, layer.ffn(layer.norm_ffn(x)));
  }
  return encoder_norm_(x);
}

Tensor PlmModel::decode(const Tensor& memory, const std::vector<int>& tgt_in, const PromptPack* prompts) const {
  if (tgt_in.empty()) {
    throw DimensionError("decoder input must contain at least the begin token");
  }
  check_tokens(tgt_in, 0);
  const Index n = static_cast<Index>(tgt_in.size());
  Mask causal(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) causal(i, j) = j <= i;
  }
  Tensor y = add(gather_rows(token_embedding_, tgt_in), slice_rows(position_embedding_, 0, n));
  for (int l = 0; l < config_.n_dec_layers; ++l) {
    const auto& layer = decoder_[static_cast<std::size_t>(l)];
    Tensor h = layer.norm_self(y);
    y = add(y, attend(layer.self_attn, h, h, prompt_at(prompts, AttentionSite::decoder_self, l), &causal));
    h = layer.norm_cross(y);
    y = add(y, attend(layer.cross_attn, h, memory, prompt_at(prompts, AttentionSite::cross, l), nullptr));
    y = add(y, layer.ffn(layer.norm_ffn(y)));
  }
  return output_(decoder_norm_(y));
}

Tensor PlmModel::forward(const std::vector<int>& src, const std::vector<int>& tgt_in,
                         const PromptPack* prompts) const {
  if (prompts) {
    for (const auto& key : prompts->sites()) {
      const int layers = key.site == AttentionSite::encoder_self ? config_.n_enc_layers : config_.n_dec_layers;
      if (key.layer < 0 || key.layer >= layers) {
        throw ContractError("prompt targets missing layer " + std::to_string(key.layer) + " of " +
                            std::string(site_name(key.site)));
      }
    }
  }
  return decode(encode(src, prompts), tgt_in, prompts);
}

std::vector<int> decode_greedy(const PlmModel& model, const std::vector<int>& src, const PromptPack* prompts,
                               int max_len) {
  NoGradGuard no_grad;
  const Tensor memory = model.encode(src, prompts);
  std::vector<int> prefix{Vocab::kBos};
  std::vector<int> out;
  const int limit = std::min(max_len, model.config().max_len - 1);
  while (static_cast<int>(out.size()) < limit) {
    const Tensor logits = model.decode(memory, prefix, prompts);
    Index best = 0;
    logits.value().row(logits.rows() - 1).maxCoeff(&best);
    if (best == Vocab::kEos) break;
    out.push_back(static_cast<int>(best));
    prefix.push_back(static_cast<int>(best));
  }
  return out;
}

Tensor sequence_loss(const PlmModel& model, const TokenPair& pair, const PromptPack* prompts) {
  std::vector<int> tgt_in{Vocab::kBos};
  tgt_in.insert(tgt_in.end(), pair.tgt.begin(), pair.tgt.end());
  std::vector<int> targets = pair.tgt;
  targets.push_back(Vocab::kEos);
  return cross_entropy(model.forward(pair.src, tgt_in, prompts), targets);
}

double teacher_forced_accuracy(const PlmModel& model, const std::vector<TokenPair>& pairs) {
  NoGradGuard no_grad;
  std::size_t hit = 0;
  std::size_t total = 0;
  for (const auto& p : pairs) {
    std::vector<int> tgt_in{Vocab::kBos};
    tgt_in.insert(tgt_in.end(), p.tgt.begin(), p.tgt.end());
    const Tensor logits = model.forward(p.src, tgt_in);
    for (Index r = 0; r < logits.rows(); ++r) {
      Index best = 0;
      logits.value().row(r).maxCoeff(&best);
      const int want = r < static_cast<Index>(p.tgt.size()) ? p.tgt[static_cast<std::size_t>(r)] : Vocab::kEos;
      hit += best == want;
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

PretrainReport pretrain(PlmModel& model, const std::vector<TokenPair>& corpus,
                        const std::vector<TokenPair>& heldout_copy, const PretrainConfig& config) {
  ParameterMap params = model.trainable_parameters();
  if (corpus.empty()) {
    throw ContractError("pretraining corpus is empty");
  }
  const std::size_t batch = static_cast<std::size_t>(std::max(1, config.batch_size));
  const std::size_t steps_per_epoch = (corpus.size() + batch - 1) / batch;
  WarmupSchedule schedule(config.adam.lr, config.warmup_ratio,
                          steps_per_epoch * static_cast<std::size_t>(config.max_epochs));
  Adam adam(params, config.adam);
  CounterRng order_rng(config.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  PretrainReport report;
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    CounterRng epoch_rng = order_rng.split(static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), epoch_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double weight = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        Tensor loss = sequence_loss(model, corpus[order[i]]);
        epoch_loss += loss.item();
        backward(scale(loss, weight));
      }
      adam.step(schedule.rate(step++));
      adam.zero_grad();
    }
    report.epoch_losses.push_back(epoch_loss / static_cast<double>(corpus.size()));
    report.epochs = epoch + 1;
    report.heldout_accuracy = teacher_forced_accuracy(model, heldout_copy);
    if (report.epochs >= config.min_epochs && report.heldout_accuracy >= config.target_accuracy) break;
  }
  return report;
}

}  // namespace props
