#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "arcs/model.hpp"
#include "arcs/simulate.hpp"

namespace arcs {

enum class RlAlgorithm { Reinforce, Grpo };

struct RlConfig {
  RlAlgorithm algorithm = RlAlgorithm::Grpo;
  int steps = 100;
  int batch = 8;           // REINFORCE rollouts per step
  int group_topologies = 3;  // K
  int group_size = 4;        // G
  double lr = 1e-5;
  SamplingConfig sampling;   // temperature 0.8, top_k 50
  double kl_target = 0.5;
  double beta = 0.1;
  double epsilon = 1e-6;     // z-score denominator guard
  double baseline_decay = 0.9;
  SimBackend backend = SimBackend::Analytic;
  SpiceConfig spice;
  uint64_t seed = 0;
  int eval_every = 50;       // early-stopping cadence (0 = off)
  int eval_samples = 16;
};

struct AdvantageGroup {
  std::string topology;
  std::vector<double> rewards;
  double mean = 0.0;
  double stddev = 0.0;  // population
  double epsilon = 0.0;
  std::vector<double> advantages;
};

// Per-group z-scored advantages (population statistics).
AdvantageGroup grpo_group(const std::string& topology,
                          const std::vector<double>& rewards, double epsilon);
std::vector<AdvantageGroup> grpo_advantages(
    const std::vector<std::pair<std::string, std::vector<double>>>& groups,
    double epsilon);

struct BaselineState {
  double value = 0.0;
  double decay = 0.9;
  bool initialized = false;

  // First update adopts the batch mean; afterwards an EMA.
  void update(double batch_mean) {
    value = initialized ? decay * value + (1.0 - decay) * batch_mean
                        : batch_mean;
    initialized = true;
  }
};

// beta doubles when KL overshoots 1.5x target, halves below target/1.5,
// clamped to [1e-4, 10].
double adapt_kl_coeff(double beta, double measured_kl, double kl_target);

struct RlStepStats {
  int step = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double beta = 0.0;
  double baseline = 0.0;
  double sim_valid_fraction = 0.0;
  double surrogate = 0.0;
};

// One REINFORCE update: sample `batch` rollouts over uniformly drawn
// topologies, score them, apply (R - b) * grad log p - beta * grad KL.
RlStepStats reinforce_step(ModelParams& params, const ModelParams& ref,
                           BaselineState& baseline,
                           const std::vector<std::string>& topologies,
                           RlConfig& cfg, std::mt19937_64& rng,
                           long step_number);

// One GRPO update: K topologies x G rollouts, per-group z-scored
// advantages.
RlStepStats grpo_step(ModelParams& params, const ModelParams& ref,
                      const std::vector<std::string>& topologies,
                      RlConfig& cfg, std::mt19937_64& rng, long step_number);

struct RlRunResult {
  std::vector<RlStepStats> history;
  ModelParams best;          // early-stopped best checkpoint
  double best_sim_valid = -1.0;
  int best_step = -1;
};

RlRunResult train_rl(ModelParams& params, const ModelParams& ref,
                     const std::vector<std::string>& topologies, RlConfig cfg);

}  // namespace arcs
