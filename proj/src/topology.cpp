#include "arcs/topology.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace arcs {

namespace {

// Built-in template sources, generated from templates/*.topo at build time.
struct BuiltinTemplate {
  const char* name;
  const char* text;
};
const BuiltinTemplate kBuiltinTemplates[] = {
#include "builtin_templates.inc"
};

constexpr std::array<double, 24> kE24Mantissas = {
    1.0, 1.1, 1.2, 1.3, 1.5, 1.6, 1.8, 2.0, 2.2, 2.4, 2.7, 3.0,
    3.3, 3.6, 3.9, 4.3, 4.7, 5.1, 5.6, 6.2, 6.8, 7.5, 8.2, 9.1};

bool is_ground(const std::string& net) { return net == "0" || net == "gnd"; }

Eigen::MatrixXd adjacency_from_nets(const std::vector<SlotSpec>& slots) {
  const int n = static_cast<int>(slots.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      bool shared = false;
      for (const auto& ni : slots[i].nets) {
        if (is_ground(ni)) continue;
        for (const auto& nj : slots[j].nets) {
          if (ni == nj) {
            shared = true;
            break;
          }
        }
        if (shared) break;
      }
      if (shared) a(i, j) = a(j, i) = 1.0;
    }
  }
  return a;
}

bool is_connected(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  if (n == 0) return false;
  if (n == 1) return true;
  std::vector<int> stack{0};
  std::vector<bool> seen(n, false);
  seen[0] = true;
  int count = 1;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (int v = 0; v < n; ++v) {
      if (a(u, v) != 0.0 && !seen[v]) {
        seen[v] = true;
        ++count;
        stack.push_back(v);
      }
    }
  }
  return count == n;
}

void validate_template(const TopologyTemplate& t) {
  const Vocabulary& vocab = Vocabulary::instance();
  if (t.name.empty()) throw Error(Errc::BadConfig, "template without a name");
  if (!vocab.topology_token(t.name))
    throw Error(Errc::UnknownTopology, t.name + " has no topology token");
  if (t.slots.empty())
    throw Error(Errc::BadConfig, t.name + ": template has no slots");
  if (t.slot_count() > kMaxSlots)
    throw Error(Errc::BadConfig, t.name + ": more than 16 slots");
  for (const auto& s : t.slots) {
    auto id = vocab.find(s.type);
    if (!id || !vocab.is_component(*id))
      throw Error(Errc::UnknownToken, t.name + ": slot type " + s.type);
    if (!(kValueMin <= s.lo && s.lo < s.hi && s.hi <= kValueMax))
      throw Error(Errc::BadConfig, t.name + ": bad bounds for slot " + s.ref);
    // The slot value must reach the netlist, either directly {REF} or
    // through a derived form like {REF_CPOLE}.
    if (t.netlist_body.find("{" + s.ref + "}") == std::string::npos &&
        t.netlist_body.find("{" + s.ref + "_") == std::string::npos)
      throw Error(Errc::BadConfig,
                  t.name + ": netlist lacks placeholder {" + s.ref + "}");
  }
  for (const auto& r : t.spec_ranges) {
    auto id = vocab.find(r.key);
    if (!id || !vocab.is_spec(*id))
      throw Error(Errc::UnknownToken, t.name + ": spec key " + r.key);
    if (!(r.lo > 0.0 && r.lo <= r.hi))
      throw Error(Errc::BadConfig, t.name + ": bad range for " + r.key);
  }
  if (!is_connected(t.adjacency))
    throw Error(Errc::DisconnectedTopology, t.name + ": slot graph disconnected");
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream iss(line);
  std::vector<std::string> out;
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

const char* domain_name(Domain d) {
  switch (d) {
    case Domain::Power: return "power";
    case Domain::Amplifier: return "amplifier";
    case Domain::Filter: return "filter";
    case Domain::Oscillator: return "oscillator";
    case Domain::Bias: return "bias";
  }
  return "?";
}

Domain parse_domain(std::string_view s) {
  if (s == "power") return Domain::Power;
  if (s == "amplifier") return Domain::Amplifier;
  if (s == "filter") return Domain::Filter;
  if (s == "oscillator") return Domain::Oscillator;
  if (s == "bias") return Domain::Bias;
  throw Error(Errc::BadConfig, "unknown domain " + std::string(s));
}

std::vector<std::string> TopologyTemplate::spec_keys() const {
  std::vector<std::string> keys;
  keys.reserve(spec_ranges.size());
  for (const auto& r : spec_ranges) keys.push_back(r.key);
  return keys;
}

bool TopologyTemplate::has_spec_key(std::string_view key) const {
  for (const auto& r : spec_ranges)
    if (r.key == key) return true;
  return false;
}

double TopologyTemplate::spec_default(std::string_view key) const {
  for (const auto& r : spec_ranges)
    if (r.key == key) return std::sqrt(r.lo * r.hi);
  throw Error(Errc::UnknownToken,
              name + " does not consume spec key " + std::string(key));
}

const SlotSpec* TopologyTemplate::find_slot(std::string_view ref) const {
  for (const auto& s : slots)
    if (s.ref == ref) return &s;
  return nullptr;
}

TopologyTemplate parse_template(const std::string& text) {
  TopologyTemplate t;
  std::istringstream in(text);
  std::string line;
  bool in_netlist = false;
  std::ostringstream body;
  while (std::getline(in, line)) {
    if (in_netlist) {
      if (line == "end") {
        in_netlist = false;
        continue;
      }
      body << line << '\n';
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_ws(line);
    if (fields.empty()) continue;
    const std::string& kw = fields[0];
    if (kw == "name" && fields.size() == 2) {
      t.name = fields[1];
    } else if (kw == "domain" && fields.size() == 2) {
      t.domain = parse_domain(fields[1]);
    } else if (kw == "spec" && fields.size() == 4) {
      t.spec_ranges.push_back(
          {fields[1], std::stod(fields[2]), std::stod(fields[3])});
    } else if (kw == "slot" && fields.size() >= 6) {
      SlotSpec s;
      s.ref = fields[1];
      s.type = fields[2];
      s.lo = std::stod(fields[3]);
      s.hi = std::stod(fields[4]);
      s.role = fields[5];
      s.nets.assign(fields.begin() + 6, fields.end());
      t.slots.push_back(std::move(s));
    } else if (kw == "meas" && fields.size() == 3) {
      t.meas_bindings[fields[1]] = fields[2];
    } else if (kw == "secondary_target" && fields.size() == 2) {
      t.secondary_target = std::stod(fields[1]);
    } else if (kw == "netlist") {
      in_netlist = true;
    } else {
      throw Error(Errc::BadConfig, "unrecognized template line: " + line);
    }
  }
  t.netlist_body = body.str();
  t.adjacency = adjacency_from_nets(t.slots);
  validate_template(t);
  return t;
}

TopologyTemplate load_template_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_template(ss.str());
}

namespace {

const std::vector<TopologyTemplate>& builtin_registry() {
  static const std::vector<TopologyTemplate> registry = [] {
    std::vector<TopologyTemplate> v;
    for (const auto& b : kBuiltinTemplates) v.push_back(parse_template(b.text));
    return v;
  }();
  return registry;
}

}  // namespace

const std::vector<std::string>& template_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& t : builtin_registry()) v.push_back(t.name);
    return v;
  }();
  return names;
}

const TopologyTemplate& get_template(std::string_view name) {
  for (const auto& t : builtin_registry())
    if (t.name == name) return t;
  throw Error(Errc::UnknownTopology, std::string(name));
}

Eigen::MatrixXd rwpe_return_probabilities(const Eigen::MatrixXd& adjacency,
                                          int walk_length) {
  const int n = static_cast<int>(adjacency.rows());
  if (adjacency.cols() != n || n == 0)
    throw Error(Errc::BadConfig, "adjacency must be square and nonempty");
  if (!is_connected(adjacency))
    throw Error(Errc::DisconnectedTopology, "adjacency graph disconnected");

  Eigen::MatrixXd transition(n, n);
  for (int i = 0; i < n; ++i) {
    const double degree = adjacency.row(i).sum();
    transition.row(i) = adjacency.row(i) / degree;
  }
  Eigen::MatrixXd probs(n, walk_length);
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  for (int k = 0; k < walk_length; ++k) {
    power = power * transition;
    probs.col(k) = power.diagonal();
  }
  return probs;
}

RwpeFeatures compute_rwpe(const TopologyTemplate& t, int walk_length) {
  return {rwpe_return_probabilities(t.adjacency, walk_length)};
}

double snap_e24(double v, double lo, double hi) {
  v = std::clamp(v, lo, hi);
  const double lv = std::log10(v);
  double best = 0.0;
  double best_dist = std::numeric_limits<double>::infinity();
  // Candidates from the decades bracketing v, confined to [lo, hi].
  const int e0 = static_cast<int>(std::floor(lv));
  for (int e = e0 - 1; e <= e0 + 1; ++e) {
    for (double m : kE24Mantissas) {
      const double c = m * std::pow(10.0, e);
      if (c < lo || c > hi) continue;
      const double d = std::abs(std::log10(c) - lv);
      if (d < best_dist) {
        best_dist = d;
        best = c;
      }
    }
  }
  // Range too narrow to contain any E24 value: keep the clamped draw.
  return best > 0.0 ? best : v;
}

bool is_e24(double v) {
  if (!(v > 0.0)) return false;
  const double e = std::floor(std::log10(v));
  const double m = v / std::pow(10.0, e);
  for (double c : kE24Mantissas)
    if (std::abs(m - c) <= 1e-9 * c) return true;
  // Mantissa may normalize to 10.0 - epsilon for values like 9.999e3.
  return std::abs(m - 10.0) <= 1e-9 * 10.0;
}

CircuitDesign sample_random_design(const TopologyTemplate& t,
                                   const std::map<std::string, double>& spec,
                                   uint64_t seed) {
  for (const auto& [key, _] : spec)
    if (!t.has_spec_key(key))
      throw Error(Errc::UnknownToken,
                  t.name + " does not consume spec key " + key);

  std::mt19937_64 rng(seed);
  CircuitDesign d;
  d.topology = t.name;
  d.spec = spec;
  d.components.reserve(t.slots.size());
  for (const auto& s : t.slots) {
    double v;
    if (s.lo == s.hi) {
      v = s.lo;
    } else {
      std::uniform_real_distribution<double> u(std::log10(s.lo),
                                               std::log10(s.hi));
      v = snap_e24(std::pow(10.0, u(rng)), s.lo, s.hi);
    }
    d.components.emplace_back(s.type, v);
  }
  return d;
}

std::map<std::string, double> sample_spec(const TopologyTemplate& t,
                                          uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::map<std::string, double> spec;
  for (const auto& r : t.spec_ranges) {
    std::uniform_real_distribution<double> u(std::log10(r.lo),
                                             std::log10(r.hi));
    spec[r.key] = std::pow(10.0, u(rng));
  }
  return spec;
}

std::map<std::string, int> required_components(const TopologyTemplate& t) {
  std::map<std::string, int> m;
  for (const auto& s : t.slots) ++m[s.type];
  return m;
}

}  // namespace arcs
