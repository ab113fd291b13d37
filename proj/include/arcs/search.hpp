#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "arcs/simulate.hpp"
#include "arcs/topology.hpp"

namespace arcs {

struct GaConfig {
  int population = 16;
  int generations = 20;
  double blx_alpha = 0.5;
  double mutation_prob = 0.2;
  double mutation_sigma = 0.1;  // decades, log10 space
  int tournament = 3;
  int elitism = 1;
  uint64_t seed = 0;
};

struct Individual {
  std::vector<double> genes;  // log10 of slot values
  double fitness = 0.0;
  bool evaluated = false;
};

struct SearchResult {
  CircuitDesign best;
  RewardBreakdown best_reward;
  long evaluations = 0;
  std::vector<double> best_per_generation;  // GA only
};

// `budget` independent E24-snapped log-uniform draws; argmax reward,
// first draw wins ties.
SearchResult random_search(const TopologyTemplate& t,
                           const std::map<std::string, double>& spec,
                           long budget, SimBackend backend, uint64_t seed,
                           const SpiceConfig& spice = {});

// BLX-alpha crossover in log space, Gaussian mutation, tournament
// selection, elitism. Optional seed designs fill the initial population.
SearchResult ga_optimize(const TopologyTemplate& t,
                         const std::map<std::string, double>& spec,
                         const GaConfig& cfg, SimBackend backend,
                         const std::vector<CircuitDesign>& seeds = {},
                         const SpiceConfig& spice = {});

// Generates n_seeds candidates from `generator`, scores them, seeds the
// best into one GA slot. Falls back to cold start when no candidate is
// structurally usable.
struct WarmStartResult {
  SearchResult search;
  long generator_evaluations = 0;  // simulator calls spent on seeds
  bool seeded = false;
};
WarmStartResult warm_start_ga(
    const TopologyTemplate& t, const std::map<std::string, double>& spec,
    const std::function<std::optional<CircuitDesign>()>& generator,
    int n_seeds, const GaConfig& cfg, SimBackend backend,
    const SpiceConfig& spice = {});

}  // namespace arcs
