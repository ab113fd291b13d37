#include "arcs/search.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace arcs {

namespace {

CircuitDesign design_from_genes(const TopologyTemplate& t,
                                const std::map<std::string, double>& spec,
                                const std::vector<double>& genes) {
  CircuitDesign d;
  d.topology = t.name;
  d.spec = spec;
  d.components.reserve(t.slots.size());
  for (size_t i = 0; i < t.slots.size(); ++i)
    d.components.emplace_back(t.slots[i].type, std::pow(10.0, genes[i]));
  return d;
}

std::vector<double> genes_from_design(const TopologyTemplate& t,
                                      const CircuitDesign& d) {
  const std::vector<double> bound = bind_components(t, d);
  std::vector<double> genes(bound.size());
  for (size_t i = 0; i < bound.size(); ++i) genes[i] = std::log10(bound[i]);
  return genes;
}

void clamp_genes(const TopologyTemplate& t, std::vector<double>& genes) {
  for (size_t i = 0; i < genes.size(); ++i)
    genes[i] = std::clamp(genes[i], std::log10(t.slots[i].lo),
                          std::log10(t.slots[i].hi));
}

double evaluate_genes(const TopologyTemplate& t,
                      const std::map<std::string, double>& spec,
                      const std::vector<double>& genes, SimBackend backend,
                      const SpiceConfig& spice, long& evals) {
  ++evals;
  return evaluate_design(design_from_genes(t, spec, genes), backend, spice)
      .total;
}

}  // namespace

SearchResult random_search(const TopologyTemplate& t,
                           const std::map<std::string, double>& spec,
                           long budget, SimBackend backend, uint64_t seed,
                           const SpiceConfig& spice) {
  if (budget < 1) throw Error(Errc::BadConfig, "budget must be >= 1");
  SearchResult result;
  std::mt19937_64 rng(seed);
  double best = -1.0;
  for (long i = 0; i < budget; ++i) {
    const CircuitDesign d = sample_random_design(t, spec, rng());
    const RewardBreakdown r = evaluate_design(d, backend, spice);
    ++result.evaluations;
    if (r.total > best) {
      best = r.total;
      result.best = d;
      result.best_reward = r;
    }
  }
  return result;
}

SearchResult ga_optimize(const TopologyTemplate& t,
                         const std::map<std::string, double>& spec,
                         const GaConfig& cfg, SimBackend backend,
                         const std::vector<CircuitDesign>& seeds,
                         const SpiceConfig& spice) {
  if (cfg.population < 2)
    throw Error(Errc::BadConfig, "population must be >= 2");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const size_t genes = t.slots.size();

  SearchResult result;
  std::vector<Individual> pop(cfg.population);
  for (int i = 0; i < cfg.population; ++i) {
    if (i < static_cast<int>(seeds.size())) {
      pop[i].genes = genes_from_design(t, seeds[i]);
      clamp_genes(t, pop[i].genes);
    } else {
      pop[i].genes.resize(genes);
      for (size_t g = 0; g < genes; ++g) {
        std::uniform_real_distribution<double> u(std::log10(t.slots[g].lo),
                                                 std::log10(t.slots[g].hi));
        pop[i].genes[g] = u(rng);
      }
    }
  }

  auto evaluate_all = [&](std::vector<Individual>& p) {
    for (auto& ind : p) {
      if (ind.evaluated) continue;
      ind.fitness = evaluate_genes(t, spec, ind.genes, backend, spice,
                                   result.evaluations);
      ind.evaluated = true;
    }
  };
  auto best_index = [](const std::vector<Individual>& p) {
    size_t best = 0;
    for (size_t i = 1; i < p.size(); ++i)
      if (p[i].fitness > p[best].fitness) best = i;
    return best;
  };
  // Lowest index wins ties, both in tournaments and for the elite.
  auto tournament_pick = [&](const std::vector<Individual>& p) -> const Individual& {
    std::uniform_int_distribution<size_t> pick(0, p.size() - 1);
    size_t winner = pick(rng);
    for (int i = 1; i < cfg.tournament; ++i) {
      const size_t challenger = pick(rng);
      if (p[challenger].fitness > p[winner].fitness ||
          (p[challenger].fitness == p[winner].fitness && challenger < winner))
        winner = challenger;
    }
    return p[winner];
  };

  evaluate_all(pop);
  Individual best_ever = pop[best_index(pop)];
  result.best_per_generation.push_back(best_ever.fitness);

  for (int gen = 0; gen < cfg.generations; ++gen) {
    std::vector<Individual> next;
    next.reserve(cfg.population);
    for (int e = 0; e < cfg.elitism && e < cfg.population; ++e)
      next.push_back(best_ever);

    while (static_cast<int>(next.size()) < cfg.population) {
      const Individual& a = tournament_pick(pop);
      const Individual& b = tournament_pick(pop);
      Individual child;
      child.genes.resize(genes);
      for (size_t g = 0; g < genes; ++g) {
        const double lo = std::min(a.genes[g], b.genes[g]);
        const double hi = std::max(a.genes[g], b.genes[g]);
        const double span = hi - lo;
        std::uniform_real_distribution<double> blx(lo - cfg.blx_alpha * span,
                                                   hi + cfg.blx_alpha * span);
        child.genes[g] = blx(rng);
        if (unit(rng) < cfg.mutation_prob && cfg.mutation_sigma > 0.0) {
          std::normal_distribution<double> noise(0.0, cfg.mutation_sigma);
          child.genes[g] += noise(rng);
        }
      }
      clamp_genes(t, child.genes);
      next.push_back(std::move(child));
    }
    pop = std::move(next);
    evaluate_all(pop);
    const size_t b = best_index(pop);
    if (pop[b].fitness > best_ever.fitness) best_ever = pop[b];
    result.best_per_generation.push_back(best_ever.fitness);
  }

  result.best = design_from_genes(t, spec, best_ever.genes);
  // Re-derive the winner's breakdown; not counted against the budget.
  result.best_reward = evaluate_design(result.best, backend, spice);
  return result;
}

WarmStartResult warm_start_ga(
    const TopologyTemplate& t, const std::map<std::string, double>& spec,
    const std::function<std::optional<CircuitDesign>()>& generator,
    int n_seeds, const GaConfig& cfg, SimBackend backend,
    const SpiceConfig& spice) {
  WarmStartResult result;
  std::optional<CircuitDesign> best_seed;
  double best_seed_reward = -1.0;
  for (int i = 0; i < n_seeds; ++i) {
    std::optional<CircuitDesign> candidate = generator();
    if (!candidate) continue;
    try {
      bind_components(t, *candidate);
    } catch (const Error&) {
      continue;  // structurally unusable candidate
    }
    const RewardBreakdown r = evaluate_design(*candidate, backend, spice);
    ++result.generator_evaluations;
    if (r.total > best_seed_reward) {
      best_seed_reward = r.total;
      best_seed = candidate;
    }
  }

  std::vector<CircuitDesign> seeds;
  if (best_seed) {
    seeds.push_back(*best_seed);
    result.seeded = true;
  }
  result.search = ga_optimize(t, spec, cfg, backend, seeds, spice);
  return result;
}

}  // namespace arcs
