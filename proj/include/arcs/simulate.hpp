#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "arcs/tokenizer.hpp"
#include "arcs/topology.hpp"

namespace arcs {

enum class SimBackend { Analytic, Spice };
SimBackend parse_backend(std::string_view s);
const char* backend_name(SimBackend b);

// Raw measurements out of a simulation backend. Only the fields for the
// design's domain are populated; the rest stay NaN.
struct SimMetrics {
  bool converged = false;
  Domain domain = Domain::Power;

  static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  // power
  double v_out = kNaN;
  double efficiency = kNaN;
  double ripple = kNaN;
  // amplifier
  double gain = kNaN;
  double bandwidth = kNaN;
  // filter
  double f_c = kNaN;
  double passband_gain = kNaN;
  // oscillator
  double f_osc = kNaN;
  double amplitude = kNaN;
  // bias
  double i_out = kNaN;
  double current_error = kNaN;

  // Simulation validity: converged with physically plausible numbers
  // (efficiency in [0,1], frequencies strictly positive, ...).
  bool plausible() const;
};

struct RewardBreakdown {
  double r_struct = 0.0;      // <= 1
  double r_sim = 0.0;         // <= 1
  double r_accuracy = 0.0;    // <= 3
  double r_efficiency = 0.0;  // <= 2
  double r_quality = 0.0;     // <= 1
  double total = 0.0;         // <= 8
};

struct SpiceConfig {
  std::string ngspice_path;  // empty: $ARCS_NGSPICE, then "ngspice"
  double timeout_seconds = 10.0;
  int max_parallel = 4;
  std::string work_dir;  // empty: $TMPDIR or /tmp

  std::string resolved_path() const;
};

// Binds the design's (type, value) pairs onto template slots in emission
// order. Throws ComponentMismatch when the multiset does not match.
std::vector<double> bind_components(const TopologyTemplate& t,
                                    const CircuitDesign& d);

// Ideal switching duty cycle used by both the netlist emitter and the
// analytic oracle (power domains only).
double ideal_duty(const TopologyTemplate& t, const CircuitDesign& d);

std::string emit_netlist(const CircuitDesign& d);

// Closed-form textbook metrics; deterministic, never fails to converge.
SimMetrics analytic_eval(const CircuitDesign& d);

bool spice_available(const SpiceConfig& cfg = {});

// Batch-mode ngspice run over a raw netlist. Returns the parsed
// ".meas" results; convergence failures and timeouts yield
// converged=false rather than throwing.
struct SpiceRawResult {
  bool converged = false;
  std::map<std::string, double> measurements;
};
SpiceRawResult run_spice_raw(const std::string& netlist,
                             const SpiceConfig& cfg = {});
SimMetrics run_spice(const std::string& netlist, const TopologyTemplate& t,
                     const SpiceConfig& cfg = {});

// Parse "name = value" measurement lines from ngspice batch output.
std::map<std::string, double> parse_ngspice_measurements(
    const std::string& output);

SimMetrics simulate_design(const CircuitDesign& d, SimBackend backend,
                           const SpiceConfig& cfg = {});

// Structural gate, simulation gate, then spec-aware accuracy /
// efficiency / quality terms. Total is capped at 8.
RewardBreakdown compute_reward(const CircuitDesign& d, const SimMetrics& m,
                               const std::map<std::string, double>& spec);

// Convenience: simulate + score in one call.
RewardBreakdown evaluate_design(const CircuitDesign& d, SimBackend backend,
                                const SpiceConfig& cfg = {});

}  // namespace arcs
