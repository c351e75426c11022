#pragma once

#include "props/nn.hpp"
#include "props/optim.hpp"

#include <compare>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string_view>
#include <vector>

// Tiny encoder-decoder transformer standing in for a frozen pretrained model.
// Every attention site accepts prompt keys/values prepended to its own.
namespace props {

struct FrozenError : ContractError {
  using ContractError::ContractError;
};
struct VocabularyError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct PlmConfig {
  int vocab_size = 64;
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int ffn_dim = 128;
  int max_len = 64;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  bool operator==(const PlmConfig&) const = default;
};

/// Closed-form parameter count:
///   embeddings  V·d + L·d
///   attention   4·(d² + d)
///   layer norm  2·d
///   ffn         d·f + f + f·d + d
///   encoder layer = attention + 2 norms + ffn
///   decoder layer = 2 attention + 3 norms + ffn
///   two final norms, output projection d·V + V
std::size_t plm_parameter_count(const PlmConfig& config);

enum class AttentionSite { encoder_self, decoder_self, cross };
std::string_view site_name(AttentionSite site);

struct SiteKey {
  AttentionSite site = AttentionSite::encoder_self;
  int layer = 0;
  auto operator<=>(const SiteKey&) const = default;
};

/// Every (site, layer) of the model: encoder self-attention per encoder
/// layer, decoder self- and cross-attention per decoder layer.
std::vector<SiteKey> all_sites(const PlmConfig& config);

struct PromptPair {
  Tensor key;    // [T_P, d_model]
  Tensor value;  // [T_P, d_model]
};

/// Prompt keys/values for a set of attention sites, all of length T_P.
class PromptPack {
 public:
  PromptPack() = default;
  explicit PromptPack(Index prompt_length) : prompt_length_(prompt_length) {}

  /// Splits kv [T_P, 2·d_model] along the last dimension into (P_k, P_v)
  /// and installs that pair at every listed site.
  static PromptPack broadcast(const std::vector<SiteKey>& sites, const Tensor& kv);

  void set(SiteKey key, PromptPair pair);
  const PromptPair* find(SiteKey key) const;
  Index prompt_length() const { return prompt_length_; }
  std::size_t size() const { return entries_.size(); }
  std::vector<SiteKey> sites() const;
  const std::map<SiteKey, PromptPair>& entries() const { return entries_; }

  /// Throws unless the pack covers exactly `sites` with width d_model.
  void validate(const std::vector<SiteKey>& sites, Index d_model) const;

 private:
  Index prompt_length_ = 0;
  std::map<SiteKey, PromptPair> entries_;
};

struct PromptedAttention {
  Tensor out;             // [tq, dv]
  Eigen::VectorXd alpha;  // share of attention mass on prompt slots, per query
};

/// Attention over the concatenated keys [P_k ‖ K]. `mask` ([tq, tk], may be
/// null) applies to K only; prompt slots are visible to every query. With
/// `verify`, the output is recomputed through the gated decomposition and a
/// ContractError is thrown if the two disagree by more than 1e-9.
PromptedAttention prompted_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& p_k,
                                     const Tensor& p_v, double scale = -1.0, const Mask* mask = nullptr,
                                     bool verify = false);

/// Gate alpha = Σ exp(q·P_k) / (Σ exp(q·P_k) + Σ exp(q·K)), per query.
Eigen::VectorXd prompt_gate(const Matrix& q, const Matrix& k, const Matrix& p_k, double scale,
                            const Mask* mask = nullptr);

/// alpha·Attn(Q,P_k,P_v) + (1-alpha)·Attn(Q,K,V), evaluated without autodiff.
Matrix gated_attention(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& p_k, const Matrix& p_v,
                       double scale, const Mask* mask = nullptr);

struct TokenPair {
  std::vector<int> src;
  std::vector<int> tgt;
};

class PlmModel {
 public:
  static PlmModel build(const PlmConfig& config, std::uint64_t seed);
  /// Rebuilds a model from stored values (e.g. a checkpoint section).
  static PlmModel from_snapshot(const PlmConfig& config, const Snapshot& values, bool frozen);

  const PlmConfig& config() const { return config_; }
  ParameterMap parameters() const;
  std::size_t parameter_count() const { return props::parameter_count(parameters()); }

  bool frozen() const { return frozen_; }
  /// Marks every parameter read-only and records the fingerprint.
  void freeze();
  std::uint64_t fingerprint() const;
  /// Fingerprint recorded at freeze time.
  std::uint64_t frozen_fingerprint() const { return frozen_fingerprint_; }
  /// Throws FrozenError when the parameters changed after freeze().
  void verify_frozen() const;
  /// Writable parameter handles; throws FrozenError on a frozen model.
  ParameterMap trainable_parameters();

  /// Encoder states [len(src)+1, d]; an end token is appended to src.
  Tensor encode(const std::vector<int>& src, const PromptPack* prompts = nullptr) const;
  /// Decoder logits [len(tgt_in), vocab] under teacher forcing.
  Tensor decode(const Tensor& memory, const std::vector<int>& tgt_in, const PromptPack* prompts = nullptr) const;
  /// `tgt_in` starts with the begin token; row t of the result predicts tgt_in[t+1].
  Tensor forward(const std::vector<int>& src, const std::vector<int>& tgt_in,
                 const PromptPack* prompts = nullptr) const;

  PlmModel deep_copy() const;

 private:
  struct AttentionBlock {
    Linear query, key, value, output;
  };
  struct EncoderLayer {
    LayerNormParams norm_attn, norm_ffn;
    AttentionBlock self_attn;
    FeedForward ffn;
  };
  struct DecoderLayer {
    LayerNormParams norm_self, norm_cross, norm_ffn;
    AttentionBlock self_attn, cross_attn;
    FeedForward ffn;
  };

  Tensor attend(const AttentionBlock& block, const Tensor& x_query, const Tensor& x_context,
                const PromptPair* prompt, const Mask* mask) const;
  void check_tokens(const std::vector<int>& ids, std::size_t extra) const;
  const PromptPair* prompt_at(const PromptPack* prompts, AttentionSite site, int layer) const;

  PlmConfig config_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  LayerNormParams encoder_norm_;
  LayerNormParams decoder_norm_;
  Linear output_;
  bool frozen_ = false;
  std::uint64_t frozen_fingerprint_ = 0;
};

/// Greedy argmax decoding until the end token or `max_len` tokens. The end
/// token is not included in the result.
std::vector<int> decode_greedy(const PlmModel& model, const std::vector<int>& src, const PromptPack* prompts,
                               int max_len);

/// Mean cross-entropy of one (src, tgt) pair; targets are tgt followed by eos.
Tensor sequence_loss(const PlmModel& model, const TokenPair& pair, const PromptPack* prompts = nullptr);

struct PretrainConfig {
  int max_epochs = 30;
  int min_epochs = 0;  // train at least this long even once the target is met
  int batch_size = 32;
  AdamConfig adam{.lr = 3e-3};
  double warmup_ratio = 0.05;
  double target_accuracy = 0.98;
  std::uint64_t seed = 1;
};

struct PretrainReport {
  int epochs = 0;
  double heldout_accuracy = 0.0;
  std::vector<double> epoch_losses;
};

/// Teacher-forced token accuracy (eos included as a target).
double teacher_forced_accuracy(const PlmModel& model, const std::vector<TokenPair>& pairs);

/// Trains every parameter until the held-out copy accuracy reaches the
/// target (after min_epochs) or the epoch budget runs out. Throws FrozenError on a frozen model.
PretrainReport pretrain(PlmModel& model, const std::vector<TokenPair>& corpus,
                        const std::vector<TokenPair>& heldout_copy, const PretrainConfig& config);

}  // namespace props
