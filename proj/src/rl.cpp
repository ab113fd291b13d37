#include "arcs/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace arcs {

AdvantageGroup grpo_group(const std::string& topology,
                          const std::vector<double>& rewards, double epsilon) {
  if (rewards.size() < 2)
    throw Error(Errc::GroupTooSmall,
                "group for " + topology + " needs at least 2 rewards");
  AdvantageGroup g;
  g.topology = topology;
  g.rewards = rewards;
  g.epsilon = epsilon;
  const double n = static_cast<double>(rewards.size());
  g.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - g.mean) * (r - g.mean);
  g.stddev = std::sqrt(var / n);
  g.advantages.reserve(rewards.size());
  for (double r : rewards)
    g.advantages.push_back((r - g.mean) / (g.stddev + epsilon));
  return g;
}

std::vector<AdvantageGroup> grpo_advantages(
    const std::vector<std::pair<std::string, std::vector<double>>>& groups,
    double epsilon) {
  std::vector<AdvantageGroup> out;
  out.reserve(groups.size());
  for (const auto& [topology, rewards] : groups)
    out.push_back(grpo_group(topology, rewards, epsilon));
  return out;
}

double adapt_kl_coeff(double beta, double measured_kl, double kl_target) {
  if (measured_kl > 1.5 * kl_target) {
    beta *= 2.0;
  } else if (measured_kl < kl_target / 1.5) {
    beta /= 2.0;
  }
  return std::clamp(beta, 1e-4, 10.0);
}

namespace {

struct Rollout {
  TokenSequence tokens;
  std::string topology;
  double reward = 0.0;
  bool sim_valid = false;
};

Rollout sample_rollout(const ModelParams& params, const std::string& topology,
                       RlConfig& cfg, std::mt19937_64& rng) {
  Rollout r;
  r.topology = topology;
  const TopologyTemplate& t = get_template(topology);
  const std::map<std::string, double> spec = sample_spec(t, rng());

  SamplingConfig sampling = cfg.sampling;
  sampling.seed = rng();
  GenerationResult gen = generate(params, topology, spec, sampling);
  r.tokens = gen.tokens;

  DecodeResult decoded = decode_sequence(gen.tokens);
  if (!decoded.ok()) return r;  // reward stays 0
  try {
    const SimMetrics m =
        simulate_design(*decoded.design, cfg.backend, cfg.spice);
    r.sim_valid = m.plausible();
    r.reward = compute_reward(*decoded.design, m, spec).total;
  } catch (const Error&) {
    // Simulator/structural failures score what the reward gate allows.
    SimMetrics failed;
    failed.converged = false;
    r.reward = compute_reward(*decoded.design, failed, spec).total;
  }
  return r;
}

double fraction_sim_valid(const std::vector<Rollout>& rollouts) {
  if (rollouts.empty()) return 0.0;
  long n = 0;
  for (const auto& r : rollouts) n += r.sim_valid;
  return static_cast<double>(n) / rollouts.size();
}

RlStepStats apply_update(ModelParams& params, const ModelParams& ref,
                         const std::vector<Rollout>& rollouts,
                         const std::vector<double>& coeffs, RlConfig& cfg,
                         long step_number) {
  std::vector<RlBatchItem> batch;
  batch.reserve(rollouts.size());
  for (size_t i = 0; i < rollouts.size(); ++i)
    batch.push_back({rollouts[i].tokens, rollouts[i].topology, coeffs[i]});

  params.store.zero_grad();
  const RlSurrogateStats surrogate = rl_surrogate_backward(
      params, ref, batch, cfg.sampling.level, cfg.beta, true);
  ad::AdamWConfig adamw;
  adamw.weight_decay = 0.0;
  ad::adamw_step(params.store, cfg.lr, adamw, step_number);

  cfg.beta = adapt_kl_coeff(cfg.beta, surrogate.mean_kl, cfg.kl_target);

  RlStepStats stats;
  double sum = 0.0;
  for (const auto& r : rollouts) sum += r.reward;
  stats.mean_reward = rollouts.empty() ? 0.0 : sum / rollouts.size();
  stats.mean_kl = surrogate.mean_kl;
  stats.beta = cfg.beta;
  stats.sim_valid_fraction = fraction_sim_valid(rollouts);
  stats.surrogate = surrogate.loss;
  return stats;
}

}  // namespace

RlStepStats reinforce_step(ModelParams& params, const ModelParams& ref,
                           BaselineState& baseline,
                           const std::vector<std::string>& topologies,
                           RlConfig& cfg, std::mt19937_64& rng,
                           long step_number) {
  if (cfg.batch < 1) throw Error(Errc::BadConfig, "batch must be >= 1");
  std::vector<Rollout> rollouts;
  rollouts.reserve(cfg.batch);
  std::uniform_int_distribution<size_t> pick(0, topologies.size() - 1);
  for (int i = 0; i < cfg.batch; ++i)
    rollouts.push_back(sample_rollout(params, topologies[pick(rng)], cfg, rng));

  double mean_reward = 0.0;
  for (const auto& r : rollouts) mean_reward += r.reward;
  mean_reward /= rollouts.size();
  if (!baseline.initialized) baseline.update(mean_reward);

  std::vector<double> coeffs;
  coeffs.reserve(rollouts.size());
  for (const auto& r : rollouts) coeffs.push_back(r.reward - baseline.value);

  RlStepStats stats =
      apply_update(params, ref, rollouts, coeffs, cfg, step_number);
  baseline.update(mean_reward);
  stats.baseline = baseline.value;
  return stats;
}

RlStepStats grpo_step(ModelParams& params, const ModelParams& ref,
                      const std::vector<std::string>& topologies,
                      RlConfig& cfg, std::mt19937_64& rng, long step_number) {
  if (cfg.group_size < 2)
    throw Error(Errc::GroupTooSmall, "GRPO needs group_size >= 2");
  std::vector<Rollout> rollouts;
  std::vector<double> coeffs;
  std::uniform_int_distribution<size_t> pick(0, topologies.size() - 1);
  for (int k = 0; k < cfg.group_topologies; ++k) {
    const std::string& topology = topologies[pick(rng)];
    std::vector<Rollout> group;
    std::vector<double> rewards;
    for (int g = 0; g < cfg.group_size; ++g) {
      group.push_back(sample_rollout(params, topology, cfg, rng));
      rewards.push_back(group.back().reward);
    }
    const AdvantageGroup adv = grpo_group(topology, rewards, cfg.epsilon);
    for (int g = 0; g < cfg.group_size; ++g) {
      rollouts.push_back(std::move(group[g]));
      coeffs.push_back(adv.advantages[g]);
    }
  }
  return apply_update(params, ref, rollouts, coeffs, cfg, step_number);
}

RlRunResult train_rl(ModelParams& params, const ModelParams& ref,
                     const std::vector<std::string>& topologies, RlConfig cfg) {
  if (topologies.empty()) throw Error(Errc::BadConfig, "no topologies");
  RlRunResult result;
  result.best = params;
  std::mt19937_64 rng(cfg.seed);
  BaselineState baseline;
  baseline.decay = cfg.baseline_decay;

  auto held_out_sim_valid = [&](long step) {
    std::mt19937_64 eval_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull ^ step);
    long valid = 0;
    for (int i = 0; i < cfg.eval_samples; ++i) {
      const std::string& topology = topologies[i % topologies.size()];
      const TopologyTemplate& t = get_template(topology);
      SamplingConfig sampling = cfg.sampling;
      sampling.seed = eval_rng();
      GenerationResult gen =
          generate(params, topology, sample_spec(t, eval_rng()), sampling);
      DecodeResult decoded = decode_sequence(gen.tokens);
      if (!decoded.ok()) continue;
      try {
        valid +=
            simulate_design(*decoded.design, cfg.backend, cfg.spice).plausible();
      } catch (const Error&) {
      }
    }
    return static_cast<double>(valid) / std::max(1, cfg.eval_samples);
  };

  for (int step = 0; step < cfg.steps; ++step) {
    RlStepStats stats =
        cfg.algorithm == RlAlgorithm::Reinforce
            ? reinforce_step(params, ref, baseline, topologies, cfg, rng,
                             step + 1)
            : grpo_step(params, ref, topologies, cfg, rng, step + 1);
    stats.step = step;
    result.history.push_back(stats);

    if (cfg.eval_every > 0 &&
        ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps)) {
      const double sim_valid = held_out_sim_valid(step);
      if (sim_valid > result.best_sim_valid) {
        result.best_sim_valid = sim_valid;
        result.best = params;
        result.best_step = step;
      }
    }
  }
  if (result.best_step < 0) result.best = params;
  return result;
}

}  // namespace arcs
