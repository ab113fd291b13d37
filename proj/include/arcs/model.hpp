#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "arcs/grammar.hpp"
#include "arcs/tensor.hpp"
#include "arcs/tokenizer.hpp"
#include "arcs/topology.hpp"

namespace arcs {

enum class ModelVariant { Baseline, TwoHead, Graph };

const char* variant_name(ModelVariant v);
ModelVariant parse_variant(std::string_view s);

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 128;
  ModelVariant variant = ModelVariant::TwoHead;
  int rwpe_k = kRwpeWalkLength;

  static ModelConfig desk(ModelVariant v = ModelVariant::TwoHead);
  static ModelConfig paper(ModelVariant v = ModelVariant::Graph);

  std::string to_json() const;
  static ModelConfig from_json(const std::string& json);
  bool operator==(const ModelConfig&) const = default;
};

struct SamplingConfig {
  double temperature = 0.8;
  int top_k = 50;
  uint64_t seed = 0;
  ConstraintLevel level = ConstraintLevel::Topology;
  int max_len = kDefaultMaxLen;
};

// Named parameter tensors plus cached indices into the store. The
// structure head is weight-tied: it reuses tok_emb directly.
struct ModelParams {
  ModelConfig config;
  ad::ParamStore store;

  int tok_emb = -1;
  int type_emb = -1;
  int final_norm = -1;
  struct LayerIdx {
    int attn_norm, wq, wk, wv, wo;
    int ffn_norm, w1, w3, w2;
    std::vector<int> gbias;  // per head (graph variant)
  };
  std::vector<LayerIdx> layers;
  int vh_w1 = -1, vh_b1 = -1, vh_w2 = -1, vh_b2 = -1;
  int vh_wout = -1, vh_bout = -1;
  int rwpe_w1 = -1, rwpe_b1 = -1, rwpe_w2 = -1, rwpe_b2 = -1;

  bool two_headed() const { return config.variant != ModelVariant::Baseline; }
};

ModelParams init_model(const ModelConfig& config, uint64_t seed);

// Per-position next-token logits (row t predicts token t+1).
// `use_training_path` routes through the autodiff tape instead of the
// KV-cached inference path; both must agree to rounding error.
Eigen::MatrixXd forward_logits(const ModelParams& params,
                               const TokenSequence& tokens,
                               const std::string& topology,
                               bool use_training_path = false);

// Incremental decoder with per-layer KV caches.
class InferenceSession {
 public:
  InferenceSession(const ModelParams& params, const std::string& topology);
  // Consumes one token, returns the 706 next-token logits.
  Eigen::RowVectorXd feed(TokenId token);
  int position() const { return static_cast<int>(fed_.size()); }

 private:
  const ModelParams& p_;
  const TopologyTemplate* tmpl_ = nullptr;
  Eigen::MatrixXd rwpe_rows_;  // slots x d_model (graph variant)
  std::vector<Eigen::MatrixXd> k_cache_, v_cache_;
  std::vector<TokenId> fed_;
  std::vector<int> slot_of_;
  std::vector<uint8_t> filled_;
  int pending_slot_ = -1;
  int sep_count_ = 0;
};

// Weighted next-token cross entropy (Stage 1). PAD targets are excluded;
// value-token targets carry weight 5. Mean over counted positions. The
// per-sequence topology comes from each sequence's own topology token.
double sl_loss(const ModelParams& params,
               const std::vector<TokenSequence>& batch);
// Same, also accumulating parameter gradients.
double sl_loss_backward(ModelParams& params,
                        const std::vector<TokenSequence>& batch);

struct TrainStats {
  std::vector<double> step_loss;
  std::vector<double> step_lr;
  std::vector<double> epoch_loss;
};

struct SlTrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double peak_lr = 1e-3;
  double warmup_frac = 0.05;
  uint64_t seed = 0;
  ad::AdamWConfig adamw;
};

TrainStats train_sl(ModelParams& params,
                    const std::vector<TokenSequence>& dataset,
                    const SlTrainConfig& cfg);

struct GenerationResult {
  TokenSequence tokens;
  double total_log_prob = 0.0;
  double mean_log_prob = 0.0;
  int sampled_tokens = 0;
  bool hit_budget = false;
};

// Builds the spec prefix, then samples the component region under the
// configured grammar level. Log-probs are taken from the distribution
// actually sampled (after masking, temperature and top-k).
GenerationResult generate(const ModelParams& params,
                          const std::string& topology,
                          const std::map<std::string, double>& spec,
                          const SamplingConfig& sampling);

// START TOPO SEP (spec value)* SEP -- the forced part of a sequence.
TokenSequence encode_prefix(const std::string& topology,
                            const std::map<std::string, double>& spec);

struct LogProbResult {
  double total = 0.0;
  double mean = 0.0;
  int positions = 0;
};

// Log-probability of the component region under the masked distribution.
// temperature/top_k default to the raw model distribution.
LogProbResult sequence_log_prob(const ModelParams& params,
                                const TokenSequence& tokens,
                                const std::string& topology,
                                ConstraintLevel level,
                                double temperature = 1.0, int top_k = 0);

// Mean per-position KL(p || ref) over the masked support of the
// component region.
double kl_divergence(const ModelParams& params, const ModelParams& ref,
                     const TokenSequence& tokens, const std::string& topology,
                     ConstraintLevel level);

// One term of a policy-gradient surrogate: coeff * (-log p(tokens)).
struct RlBatchItem {
  TokenSequence tokens;
  std::string topology;
  double coeff = 0.0;
};

struct RlSurrogateStats {
  double loss = 0.0;         // full surrogate (policy term + beta * KL)
  double policy_term = 0.0;  // sum_i coeff_i * (-log p_i)
  double mean_kl = 0.0;      // mean over items of mean-per-position KL
};

// Builds loss = sum_i coeff_i * (-log p(seq_i)) + beta * mean_i KL_i and
// accumulates gradients into params. Log-probs and KL use the masked
// distribution at temperature 1 (no top-k).
RlSurrogateStats rl_surrogate_backward(ModelParams& params,
                                       const ModelParams& ref,
                                       const std::vector<RlBatchItem>& batch,
                                       ConstraintLevel level, double beta,
                                       bool accumulate_grads = true);

// Checkpoint container (shared by the generator and the reward model).
void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_json,
                     const ad::ParamStore& store);
// Returns {kind, config_json}; fills `store` (must be pre-shaped by the
// caller from the config). Shape or name mismatch -> CheckpointMismatch.
std::pair<std::string, std::string> load_checkpoint(const std::string& path,
                                                    ad::ParamStore& store);
std::pair<std::string, std::string> peek_checkpoint(const std::string& path);

void save_model(const std::string& path, const ModelParams& params);
ModelParams load_model(const std::string& path);

}  // namespace arcs
