#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "arcs/tokenizer.hpp"

namespace arcs {

// Hard cap on slots per template; RWPE/adjacency are padded to this for
// batch uniformity.
constexpr int kMaxSlots = 16;
constexpr int kRwpeWalkLength = 8;

enum class Domain { Power, Amplifier, Filter, Oscillator, Bias };

const char* domain_name(Domain d);
Domain parse_domain(std::string_view s);

struct SlotSpec {
  std::string ref;    // netlist placeholder, e.g. "L1"
  std::string type;   // component token name, e.g. "INDUCTOR"
  double lo = 0.0;    // value bounds, SI units
  double hi = 0.0;
  std::string role;
  std::vector<std::string> nets;  // electrical nets this slot touches
};

struct SpecRange {
  std::string key;  // spec token name, e.g. "SPEC_VOUT"
  double lo = 0.0;
  double hi = 0.0;
};

// A parameterized circuit family: ordered slots with bounds, the netlist
// body they instantiate, the spec keys it consumes, and the slot
// adjacency graph (two slots are adjacent iff they share a non-ground net).
struct TopologyTemplate {
  std::string name;
  Domain domain = Domain::Power;
  std::vector<SlotSpec> slots;
  std::vector<SpecRange> spec_ranges;
  std::string netlist_body;
  // SimMetrics field name -> ngspice .meas result name
  std::map<std::string, std::string> meas_bindings;
  // Nominal target for the domain's secondary metric when no spec key
  // drives it (filter passband gain, oscillator amplitude).
  double secondary_target = 1.0;
  Eigen::MatrixXd adjacency;  // slots x slots, 0/1, zero diagonal

  int slot_count() const { return static_cast<int>(slots.size()); }
  std::vector<std::string> spec_keys() const;
  bool has_spec_key(std::string_view key) const;
  double spec_default(std::string_view key) const;  // geometric mid of range
  const SlotSpec* find_slot(std::string_view ref) const;
};

// Per-slot random-walk return probabilities, diag(T^k) for k = 1..K with
// T = D^-1 A.
struct RwpeFeatures {
  Eigen::MatrixXd probs;  // slots x K
  int walk_length() const { return static_cast<int>(probs.cols()); }
};

// Parse/validate a template from its text form. Throws Error on any
// invariant violation (bounds, connectivity, unknown tokens, slot cap).
TopologyTemplate parse_template(const std::string& text);
TopologyTemplate load_template_file(const std::string& path);

// Names of the built-in templates, in registry order.
const std::vector<std::string>& template_names();
const TopologyTemplate& get_template(std::string_view name);

// diag((D^-1 A)^k) for k = 1..K over an arbitrary adjacency matrix.
// Throws DisconnectedTopology when the graph is not connected.
Eigen::MatrixXd rwpe_return_probabilities(const Eigen::MatrixXd& adjacency,
                                          int walk_length);
RwpeFeatures compute_rwpe(const TopologyTemplate& t,
                          int walk_length = kRwpeWalkLength);

// Log-uniform draw per slot, snapped to the nearest E24 preferred value
// within bounds. Deterministic under seed.
CircuitDesign sample_random_design(const TopologyTemplate& t,
                                   const std::map<std::string, double>& spec,
                                   uint64_t seed);

// Draw a spec-target assignment from the template's declared ranges
// (log-uniform per key).
std::map<std::string, double> sample_spec(const TopologyTemplate& t,
                                          uint64_t seed);

std::map<std::string, int> required_components(const TopologyTemplate& t);

// Nearest E24 preferred value (in log space); result confined to [lo, hi].
double snap_e24(double v, double lo, double hi);
bool is_e24(double v);

}  // namespace arcs
