#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "arcs/model.hpp"
#include "arcs/simulate.hpp"
#include "arcs/tensor.hpp"

namespace arcs {

// ---------------------------------------------------------------------------
// Learned reward model: bidirectional encoder -> mean pool -> MLP -> scalar.

struct RewardModelConfig {
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_len = 64;

  std::string to_json() const;
  static RewardModelConfig from_json(const std::string& json);
  bool operator==(const RewardModelConfig&) const = default;
};

struct RewardModelParams {
  RewardModelConfig config;
  ad::ParamStore store;
  int tok_emb = -1;
  int pos_emb = -1;
  int final_norm = -1;
  struct LayerIdx {
    int attn_norm, wq, wk, wv, wo;
    int ffn_norm, w1, w3, w2;
  };
  std::vector<LayerIdx> layers;
  int mlp_w1 = -1, mlp_b1 = -1, mlp_w2 = -1, mlp_b2 = -1;
};

RewardModelParams init_reward_model(const RewardModelConfig& cfg,
                                    uint64_t seed);

// Rank-k truncated SVD projection of generator embeddings: U_k * S_k,
// column signs fixed so each column's largest-magnitude entry is
// positive. Rows beyond the available rank are zero-padded (the
// `degenerate` flag reports that).
struct SvdWarmStart {
  Eigen::MatrixXd projected;  // rows x target_dim
  bool degenerate = false;
};
SvdWarmStart svd_warm_start(const Eigen::MatrixXd& embeddings,
                            int target_dim = 128);

// Copies an SVD projection of the generator's token embeddings into the
// reward model's embedding table.
void warm_start_embeddings(RewardModelParams& rm,
                           const Eigen::MatrixXd& generator_embeddings);

double predict_reward(const RewardModelParams& rm, const TokenSequence& seq);

struct RewardModelMetrics {
  double pearson_r = 0.0;
  double spearman_rho = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  double within_half = 0.0;
  double within_one = 0.0;
};

struct RewardModelTrainConfig {
  int epochs = 25;
  int batch_size = 32;
  double lr = 1e-3;
  double huber_delta = 1.0;
  double holdout_frac = 0.2;
  uint64_t seed = 0;
};

struct LabeledSequence {
  TokenSequence tokens;
  double reward = 0.0;
};

struct RewardModelTrainResult {
  std::vector<double> epoch_loss;
  RewardModelMetrics holdout;
};

RewardModelTrainResult train_reward_model(
    RewardModelParams& rm, const std::vector<LabeledSequence>& dataset,
    const RewardModelTrainConfig& cfg);

RewardModelMetrics evaluate_reward_model(
    const RewardModelParams& rm, const std::vector<LabeledSequence>& dataset);

double huber_loss(double residual, double delta);
double pearson_correlation(const std::vector<double>& a,
                           const std::vector<double>& b);
double spearman_correlation(const std::vector<double>& a,
                            const std::vector<double>& b);

void save_reward_model(const std::string& path, const RewardModelParams& rm);
RewardModelParams load_reward_model(const std::string& path);

// ---------------------------------------------------------------------------
// Best-of-N candidate selection.

enum class RankerKind { Confidence, RewardModel, Spice };
RankerKind parse_ranker(std::string_view s);
const char* ranker_name(RankerKind k);

struct RankedCandidate {
  TokenSequence tokens;
  CircuitDesign design;
  int source = 0;  // index of the generator that produced it
  RankerKind scored_by = RankerKind::Confidence;
  double score = 0.0;
  double mean_log_prob = 0.0;
};

using CandidateGenerator = std::function<GenerationResult()>;

struct BestOfNResult {
  RankedCandidate winner;
  std::vector<RankedCandidate> candidates;
  long spice_evaluations = 0;
};

// Draws N candidates from each generator source and keeps the best under
// the chosen scorer (ties: first). The spice ranker simulates every
// candidate; multi-source selection is the hybrid scheme.
BestOfNResult best_of_n(const std::vector<CandidateGenerator>& sources,
                        const std::map<std::string, double>& spec,
                        int n_per_source, RankerKind ranker,
                        const RewardModelParams* rm = nullptr,
                        SimBackend backend = SimBackend::Analytic,
                        const SpiceConfig& spice = {});

}  // namespace arcs
