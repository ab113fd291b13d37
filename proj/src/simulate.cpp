#include "arcs/simulate.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

namespace arcs {

SimBackend parse_backend(std::string_view s) {
  if (s == "analytic") return SimBackend::Analytic;
  if (s == "spice") return SimBackend::Spice;
  throw Error(Errc::BadConfig, "unknown backend " + std::string(s));
}

const char* backend_name(SimBackend b) {
  return b == SimBackend::Analytic ? "analytic" : "spice";
}

namespace {

bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }

double spec_or_default(const TopologyTemplate& t,
                       const std::map<std::string, double>& spec,
                       const std::string& key) {
  auto it = spec.find(key);
  if (it != spec.end()) return it->second;
  return t.spec_default(key);
}

double slot_value(const TopologyTemplate& t, const std::vector<double>& bound,
                  std::string_view role) {
  for (size_t i = 0; i < t.slots.size(); ++i)
    if (t.slots[i].role == role) return bound[i];
  throw Error(Errc::BadConfig,
              t.name + ": no slot with role " + std::string(role));
}

constexpr double kMirrorVcc = 12.0;
constexpr double kMirrorVbe = 0.7;

}  // namespace

bool SimMetrics::plausible() const {
  if (!converged) return false;
  switch (domain) {
    case Domain::Power:
      return std::isfinite(v_out) && std::abs(v_out) > 0.0 &&
             std::isfinite(efficiency) && efficiency >= 0.0 &&
             efficiency <= 1.0 && std::isfinite(ripple) && ripple >= 0.0;
    case Domain::Amplifier:
      return std::isfinite(gain) && std::abs(gain) > 0.0 &&
             finite_positive(bandwidth);
    case Domain::Filter:
      return finite_positive(f_c) && std::isfinite(passband_gain) &&
             passband_gain > 0.0;
    case Domain::Oscillator:
      return finite_positive(f_osc) && finite_positive(amplitude);
    case Domain::Bias:
      return finite_positive(i_out);
  }
  return false;
}

std::vector<double> bind_components(const TopologyTemplate& t,
                                    const CircuitDesign& d) {
  std::vector<double> values(t.slots.size(), 0.0);
  std::vector<uint8_t> filled(t.slots.size(), 0);
  for (const auto& [type, value] : d.components) {
    int slot = -1;
    for (size_t i = 0; i < t.slots.size(); ++i) {
      if (!filled[i] && t.slots[i].type == type) {
        slot = static_cast<int>(i);
        break;
      }
    }
    if (slot < 0)
      throw Error(Errc::ComponentMismatch,
                  t.name + ": no remaining slot for component " + type);
    filled[slot] = 1;
    values[slot] = value;
  }
  for (size_t i = 0; i < filled.size(); ++i)
    if (!filled[i])
      throw Error(Errc::ComponentMismatch,
                  t.name + ": slot " + t.slots[i].ref + " left unfilled");
  return values;
}

double ideal_duty(const TopologyTemplate& t, const CircuitDesign& d) {
  if (t.domain != Domain::Power)
    throw Error(Errc::BadConfig, t.name + " has no duty cycle");
  const std::vector<double> bound = bind_components(t, d);
  const double vin = spec_or_default(t, d.spec, "SPEC_VIN");
  const double vout = spec_or_default(t, d.spec, "SPEC_VOUT");
  double duty = 0.5;
  if (t.name == "buck") {
    duty = vout / vin;
  } else if (t.name == "boost") {
    const double vf = slot_value(t, bound, "rectifier");
    duty = 1.0 - vin / (vout + vf);
  } else if (t.name == "buck_boost") {
    const double vf = slot_value(t, bound, "rectifier");
    duty = (vout + vf) / (vout + vf + vin);
  }
  return std::clamp(duty, 0.05, 0.95);
}

namespace {

SimMetrics analytic_power(const TopologyTemplate& t, const CircuitDesign& d,
                          const std::vector<double>& bound) {
  SimMetrics m;
  m.domain = Domain::Power;
  m.converged = true;

  const double vin = spec_or_default(t, d.spec, "SPEC_VIN");
  const double iout = spec_or_default(t, d.spec, "SPEC_IOUT");
  const double fsw = spec_or_default(t, d.spec, "SPEC_FSW");
  const double duty = ideal_duty(t, d);
  const double inductance = slot_value(t, bound, "inductor");
  const double capacitance = slot_value(t, bound, "out_cap");
  const double esr = slot_value(t, bound, "esr");
  const double r_on = slot_value(t, bound, "switch");

  if (t.name == "buck") {
    m.v_out = duty * vin;
    const double p_out = m.v_out * iout;
    const double loss = iout * iout * (r_on * duty + esr);
    m.efficiency = p_out / (p_out + loss);
    m.ripple =
        (1.0 - duty) / (8.0 * inductance * capacitance * fsw * fsw);
  } else if (t.name == "boost") {
    const double vf = slot_value(t, bound, "rectifier");
    m.v_out = vin / (1.0 - duty) - vf;
    const double i_l = iout / (1.0 - duty);
    const double p_out = m.v_out * iout;
    const double loss =
        i_l * i_l * r_on * duty + iout * vf + iout * iout * esr;
    m.efficiency = p_out / (p_out + loss);
    m.ripple = duty * iout / (capacitance * fsw * std::abs(m.v_out));
  } else if (t.name == "buck_boost") {
    const double vf = slot_value(t, bound, "rectifier");
    const double magnitude = duty / (1.0 - duty) * vin - vf;
    m.v_out = -magnitude;  // inverting topology
    const double i_l = iout / (1.0 - duty);
    const double p_out = std::abs(magnitude) * iout;
    const double loss =
        i_l * i_l * r_on * duty + iout * vf + iout * iout * esr;
    m.efficiency = p_out / (p_out + loss);
    m.ripple = duty * iout / (capacitance * fsw * std::max(1e-9, magnitude));
  } else {
    throw Error(Errc::BadConfig, "no analytic power model for " + t.name);
  }
  if (m.efficiency < 0.0) m.efficiency = 0.0;
  return m;
}

SimMetrics analytic_amplifier(const TopologyTemplate& t,
                              const CircuitDesign& d,
                              const std::vector<double>& bound) {
  SimMetrics m;
  m.domain = Domain::Amplifier;
  m.converged = true;
  const double gbw = slot_value(t, bound, "opamp");
  const double rf = slot_value(t, bound, "feedback");
  if (t.name == "inverting_amp") {
    const double rin = slot_value(t, bound, "input_res");
    m.gain = -rf / rin;
    m.bandwidth = gbw / (1.0 + rf / rin);
  } else {  // noninverting_amp and kin
    const double rg = slot_value(t, bound, "gain_set");
    m.gain = 1.0 + rf / rg;
    m.bandwidth = gbw / m.gain;
  }
  return m;
}

SimMetrics analytic_filter(const TopologyTemplate& t, const CircuitDesign& d,
                           const std::vector<double>& bound) {
  SimMetrics m;
  m.domain = Domain::Filter;
  m.converged = true;
  const double r1 = slot_value(t, bound, "series_r1");
  const double r2 = slot_value(t, bound, "series_r2");
  const double c1 = slot_value(t, bound, "feedback_c");
  const double c2 = slot_value(t, bound, "shunt_c");
  m.f_c = 1.0 / (2.0 * M_PI * std::sqrt(r1 * r2 * c1 * c2));
  m.passband_gain = 1.0;  // unity-gain Sallen-Key
  return m;
}

SimMetrics analytic_oscillator(const TopologyTemplate& t,
                               const CircuitDesign& d,
                               const std::vector<double>& bound) {
  SimMetrics m;
  m.domain = Domain::Oscillator;
  m.converged = true;
  const double r1 = slot_value(t, bound, "series_r");
  const double c1 = slot_value(t, bound, "series_c");
  const double r2 = slot_value(t, bound, "shunt_r");
  const double c2 = slot_value(t, bound, "shunt_c");
  const double rf = slot_value(t, bound, "gain_feedback");
  const double rg = slot_value(t, bound, "gain_ground");
  const double ratio = rf / rg;
  if (ratio < 2.0) {
    // Loop gain below the oscillation threshold: the output decays.
    m.f_osc = 0.0;
    m.amplitude = 0.0;
    return m;
  }
  m.f_osc = 1.0 / (2.0 * M_PI * std::sqrt(r1 * r2 * c1 * c2));
  // Unit amplitude at healthy gain margins; heavy excess gain clips.
  m.amplitude = ratio <= 4.0 ? 1.0 : 4.0 / ratio;
  return m;
}

SimMetrics analytic_bias(const TopologyTemplate& t, const CircuitDesign& d,
                         const std::vector<double>& bound) {
  SimMetrics m;
  m.domain = Domain::Bias;
  m.converged = true;
  const double rref = slot_value(t, bound, "ref_set");
  const double beta1 = slot_value(t, bound, "mirror_in");
  const double beta2 = slot_value(t, bound, "mirror_out");
  const double re1 = slot_value(t, bound, "degeneration_in");
  const double re2 = slot_value(t, bound, "degeneration_out");
  const double i_ref = (kMirrorVcc - kMirrorVbe) / (rref + re1);
  const double beta = std::sqrt(beta1 * beta2);
  m.i_out = i_ref * (re1 / re2) * (beta / (beta + 2.0));
  auto it = d.spec.find("SPEC_IOUT");
  const double target =
      it != d.spec.end() ? it->second : t.spec_default("SPEC_IOUT");
  m.current_error = std::abs(m.i_out - target) / target;
  return m;
}

}  // namespace

SimMetrics analytic_eval(const CircuitDesign& d) {
  const TopologyTemplate& t = get_template(d.topology);
  const std::vector<double> bound = bind_components(t, d);
  switch (t.domain) {
    case Domain::Power: return analytic_power(t, d, bound);
    case Domain::Amplifier: return analytic_amplifier(t, d, bound);
    case Domain::Filter: return analytic_filter(t, d, bound);
    case Domain::Oscillator: return analytic_oscillator(t, d, bound);
    case Domain::Bias: return analytic_bias(t, d, bound);
  }
  throw Error(Errc::BadConfig, "unhandled domain");
}

// ---------------------------------------------------------------------------
// Netlist emission

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

std::string compact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::string emit_netlist(const CircuitDesign& d) {
  const TopologyTemplate& t = get_template(d.topology);
  const std::vector<double> bound = bind_components(t, d);

  std::map<std::string, std::string> values;
  for (size_t i = 0; i < t.slots.size(); ++i) {
    values[t.slots[i].ref] = sci(bound[i]);
    if (t.slots[i].type == "OPAMP") {
      // Single-pole op-amp: gm = 1 mS, pole cap set so gm/(2*pi*C) is
      // the slot's gain-bandwidth product.
      values[t.slots[i].ref + "_CPOLE"] =
          sci(1e-3 / (2.0 * M_PI * bound[i]));
    }
  }
  for (const auto& r : t.spec_ranges) {
    // SPEC_VIN -> {VIN} etc.
    values[r.key.substr(5)] = compact(spec_or_default(t, d.spec, r.key));
  }

  if (t.domain == Domain::Power) {
    const double fsw = spec_or_default(t, d.spec, "SPEC_FSW");
    const double duty = ideal_duty(t, d);
    const double tsw = 1.0 / fsw;
    values["TSW"] = compact(tsw);
    values["TON"] = compact(duty * tsw);
    values["TSTEP"] = compact(tsw / 100.0);
    values["TSTART"] = compact(200.0 * tsw);
    values["TSTOP"] = compact(220.0 * tsw);
    const double vout = spec_or_default(t, d.spec, "SPEC_VOUT");
    const double iout = spec_or_default(t, d.spec, "SPEC_IOUT");
    values["RLOAD"] = compact(vout / iout);
  } else if (t.domain == Domain::Oscillator) {
    const double fosc = spec_or_default(t, d.spec, "SPEC_FOSC");
    const double period = 1.0 / fosc;
    values["TSTEP"] = compact(period / 100.0);
    values["TSTART"] = compact(40.0 * period);
    values["TSTOP"] = compact(60.0 * period);
  } else if (t.domain == Domain::Bias) {
    const double iout = spec_or_default(t, d.spec, "SPEC_IOUT");
    values["VCC"] = compact(kMirrorVcc);
    values["RLOAD_BIAS"] = compact((kMirrorVcc - 1.0) / iout);
  }

  std::string out = t.netlist_body;
  size_t pos = 0;
  while ((pos = out.find('{', pos)) != std::string::npos) {
    const size_t close = out.find('}', pos);
    if (close == std::string::npos)
      throw Error(Errc::ParseFailure, t.name + ": unbalanced placeholder");
    const std::string key = out.substr(pos + 1, close - pos - 1);
    auto it = values.find(key);
    if (it == values.end())
      throw Error(Errc::ParseFailure,
                  t.name + ": unknown placeholder {" + key + "}");
    out.replace(pos, close - pos + 1, it->second);
    pos += it->second.size();
  }
  if (out.find(".end") == std::string::npos) out += ".end\n";
  return out;
}

// ---------------------------------------------------------------------------
// ngspice backend

std::string SpiceConfig::resolved_path() const {
  if (!ngspice_path.empty()) return ngspice_path;
  if (const char* env = std::getenv("ARCS_NGSPICE")) return env;
  return "ngspice";
}

bool spice_available(const SpiceConfig& cfg) {
  const std::string cmd =
      "command -v " + cfg.resolved_path() + " >/dev/null 2>&1";
  return std::system(cmd.c_str()) == 0;
}

std::map<std::string, double> parse_ngspice_measurements(
    const std::string& output) {
  std::map<std::string, double> meas;
  static const std::regex line_re(
      R"(^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([-+]?[0-9][-+.0-9eE]*))");
  std::istringstream in(output);
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (std::regex_search(line, m, line_re)) {
      try {
        meas[m[1].str()] = std::stod(m[2].str());
      } catch (...) {
        // non-numeric right-hand side ("failed"), skip
      }
    }
  }
  return meas;
}

SpiceRawResult run_spice_raw(const std::string& netlist,
                             const SpiceConfig& cfg) {
  if (!spice_available(cfg))
    throw Error(Errc::SimulatorUnavailable,
                cfg.resolved_path() + " not found on PATH");

  std::string dir = cfg.work_dir;
  if (dir.empty()) {
    const char* tmp = std::getenv("TMPDIR");
    dir = tmp ? tmp : "/tmp";
  }
  char tmpl[4096];
  std::snprintf(tmpl, sizeof(tmpl), "%s/arcs_spice_XXXXXX", dir.c_str());
  const int fd = mkstemp(tmpl);
  if (fd < 0) throw Error(Errc::IoError, "cannot create temp netlist");
  {
    std::ofstream out(tmpl);
    out << netlist;
  }
  const std::string cir = tmpl;
  const std::string log = cir + ".log";

  char cmd[8192];
  std::snprintf(cmd, sizeof(cmd), "timeout %.0f %s -b %s > %s 2>&1",
                std::max(1.0, cfg.timeout_seconds), cfg.resolved_path().c_str(),
                cir.c_str(), log.c_str());
  const int rc = std::system(cmd);

  SpiceRawResult result;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  result.measurements = parse_ngspice_measurements(text);
  const bool aborted = text.find("aborted") != std::string::npos ||
                       text.find("doAnalyses:") != std::string::npos ||
                       text.find("Fatal error") != std::string::npos;
  result.converged = rc == 0 && !aborted && !result.measurements.empty();

  std::remove(cir.c_str());
  std::remove(log.c_str());
  close(fd);
  return result;
}

SimMetrics run_spice(const std::string& netlist, const TopologyTemplate& t,
                     const SpiceConfig& cfg) {
  SpiceRawResult raw = run_spice_raw(netlist, cfg);
  SimMetrics m;
  m.domain = t.domain;
  m.converged = raw.converged;
  if (!raw.converged) return m;

  auto fetch = [&](const char* field) {
    auto binding = t.meas_bindings.find(field);
    if (binding == t.meas_bindings.end()) return SimMetrics::kNaN;
    auto it = raw.measurements.find(binding->second);
    return it == raw.measurements.end() ? SimMetrics::kNaN : it->second;
  };
  m.v_out = fetch("v_out");
  m.efficiency = fetch("efficiency");
  m.ripple = fetch("ripple");
  m.gain = fetch("gain");
  m.bandwidth = fetch("bandwidth");
  m.f_c = fetch("f_c");
  m.passband_gain = fetch("passband_gain");
  m.f_osc = fetch("f_osc");
  m.amplitude = fetch("amplitude");
  m.i_out = fetch("i_out");
  return m;
}

SimMetrics simulate_design(const CircuitDesign& d, SimBackend backend,
                           const SpiceConfig& cfg) {
  if (backend == SimBackend::Analytic) return analytic_eval(d);
  const TopologyTemplate& t = get_template(d.topology);
  return run_spice(emit_netlist(d), t, cfg);
}

// ---------------------------------------------------------------------------
// Reward

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double relative_error(double actual, double target) {
  if (!std::isfinite(actual) || !(std::abs(target) > 0.0))
    return std::numeric_limits<double>::infinity();
  return std::abs(std::abs(actual) - std::abs(target)) / std::abs(target);
}

bool within_factor_two(double actual, double target) {
  if (!std::isfinite(actual) || actual <= 0.0 || target <= 0.0) return false;
  const double ratio = actual / target;
  return ratio >= 0.5 && ratio <= 2.0;
}

}  // namespace

RewardBreakdown compute_reward(const CircuitDesign& d, const SimMetrics& m,
                               const std::map<std::string, double>& spec) {
  RewardBreakdown r;
  const TopologyTemplate* t = nullptr;
  try {
    t = &get_template(d.topology);
    bind_components(*t, d);
  } catch (const Error&) {
    return r;  // structural mismatch: everything stays 0
  }
  r.r_struct = 1.0;
  r.total = r.r_struct;
  if (!m.plausible()) return r;
  r.r_sim = 1.0;

  auto target = [&](const char* key) {
    auto it = spec.find(key);
    return it != spec.end() ? it->second : t->spec_default(key);
  };

  double primary_error = std::numeric_limits<double>::infinity();
  double secondary_error = std::numeric_limits<double>::infinity();
  double secondary_actual = SimMetrics::kNaN;
  double secondary_target = SimMetrics::kNaN;
  switch (t->domain) {
    case Domain::Power:
      primary_error = relative_error(m.v_out, target("SPEC_VOUT"));
      break;
    case Domain::Amplifier:
      primary_error = relative_error(m.gain, target("SPEC_GAIN"));
      secondary_actual = m.bandwidth;
      secondary_target = target("SPEC_BW");
      secondary_error = relative_error(m.bandwidth, secondary_target);
      break;
    case Domain::Filter:
      primary_error = relative_error(m.f_c, target("SPEC_FC"));
      secondary_actual = m.passband_gain;
      secondary_target = t->secondary_target;
      secondary_error = relative_error(m.passband_gain, secondary_target);
      break;
    case Domain::Oscillator:
      primary_error = relative_error(m.f_osc, target("SPEC_FOSC"));
      secondary_actual = m.amplitude;
      secondary_target = t->secondary_target;
      secondary_error = relative_error(m.amplitude, secondary_target);
      break;
    case Domain::Bias:
      primary_error = relative_error(m.i_out, target("SPEC_IOUT"));
      secondary_actual = m.i_out;
      secondary_target = target("SPEC_IOUT");
      secondary_error = primary_error;
      break;
  }

  r.r_accuracy = 3.0 * clamp01(1.0 - primary_error / 0.5);
  if (t->domain == Domain::Power) {
    r.r_efficiency = 2.0 * clamp01((m.efficiency - 0.5) / 0.45);
    r.r_quality = clamp01(1.0 - m.ripple / 0.1);
  } else {
    r.r_efficiency = 2.0 * clamp01(1.0 - secondary_error / 0.5);
    r.r_quality =
        within_factor_two(std::abs(secondary_actual), secondary_target) ? 1.0
                                                                        : 0.0;
  }
  r.total = r.r_struct + r.r_sim + r.r_accuracy + r.r_efficiency + r.r_quality;
  return r;
}

RewardBreakdown evaluate_design(const CircuitDesign& d, SimBackend backend,
                                const SpiceConfig& cfg) {
  SimMetrics m;
  try {
    m = simulate_design(d, backend, cfg);
  } catch (const Error& e) {
    if (e.code() == Errc::ComponentMismatch) {
      return compute_reward(d, m, d.spec);  // structural failure: total 0
    }
    throw;
  }
  return compute_reward(d, m, d.spec);
}

}  // namespace arcs
