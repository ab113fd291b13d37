#include "arcs/datagen.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace arcs {

namespace {

using nlohmann::json;

void put_finite(json& j, const char* key, double v) {
  if (std::isfinite(v)) j[key] = v;
}

double get_or_nan(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? SimMetrics::kNaN : it->get<double>();
}

}  // namespace

std::string record_to_json(const DatasetRecord& r) {
  json j;
  j["schema_version"] = r.schema_version;
  j["topology"] = r.topology;
  j["spec"] = r.spec;
  json comps = json::array();
  for (const auto& [type, value] : r.components)
    comps.push_back(json::array({type, value}));
  j["components"] = comps;

  json m;
  m["converged"] = r.metrics.converged;
  m["domain"] = domain_name(r.metrics.domain);
  put_finite(m, "v_out", r.metrics.v_out);
  put_finite(m, "efficiency", r.metrics.efficiency);
  put_finite(m, "ripple", r.metrics.ripple);
  put_finite(m, "gain", r.metrics.gain);
  put_finite(m, "bandwidth", r.metrics.bandwidth);
  put_finite(m, "f_c", r.metrics.f_c);
  put_finite(m, "passband_gain", r.metrics.passband_gain);
  put_finite(m, "f_osc", r.metrics.f_osc);
  put_finite(m, "amplitude", r.metrics.amplitude);
  put_finite(m, "i_out", r.metrics.i_out);
  put_finite(m, "current_error", r.metrics.current_error);
  j["metrics"] = m;

  json w;
  w["struct"] = r.reward.r_struct;
  w["sim"] = r.reward.r_sim;
  w["accuracy"] = r.reward.r_accuracy;
  w["efficiency"] = r.reward.r_efficiency;
  w["quality"] = r.reward.r_quality;
  w["total"] = r.reward.total;
  j["reward"] = w;
  j["valid"] = r.valid;
  return j.dump();
}

DatasetRecord record_from_json(const std::string& line) {
  json j = json::parse(line);
  DatasetRecord r;
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != kDatasetSchemaVersion)
    throw Error(Errc::ParseFailure,
                "unsupported dataset schema " +
                    std::to_string(r.schema_version));
  r.topology = j.at("topology").get<std::string>();
  r.spec = j.at("spec").get<std::map<std::string, double>>();
  for (const auto& c : j.at("components"))
    r.components.emplace_back(c.at(0).get<std::string>(),
                              c.at(1).get<double>());
  const json& m = j.at("metrics");
  r.metrics.converged = m.at("converged").get<bool>();
  r.metrics.domain = parse_domain(m.at("domain").get<std::string>());
  r.metrics.v_out = get_or_nan(m, "v_out");
  r.metrics.efficiency = get_or_nan(m, "efficiency");
  r.metrics.ripple = get_or_nan(m, "ripple");
  r.metrics.gain = get_or_nan(m, "gain");
  r.metrics.bandwidth = get_or_nan(m, "bandwidth");
  r.metrics.f_c = get_or_nan(m, "f_c");
  r.metrics.passband_gain = get_or_nan(m, "passband_gain");
  r.metrics.f_osc = get_or_nan(m, "f_osc");
  r.metrics.amplitude = get_or_nan(m, "amplitude");
  r.metrics.i_out = get_or_nan(m, "i_out");
  r.metrics.current_error = get_or_nan(m, "current_error");
  const json& w = j.at("reward");
  r.reward.r_struct = w.at("struct").get<double>();
  r.reward.r_sim = w.at("sim").get<double>();
  r.reward.r_accuracy = w.at("accuracy").get<double>();
  r.reward.r_efficiency = w.at("efficiency").get<double>();
  r.reward.r_quality = w.at("quality").get<double>();
  r.reward.total = w.at("total").get<double>();
  r.valid = j.at("valid").get<bool>();
  return r;
}

std::vector<DatasetRecord> generate_dataset(
    const std::vector<std::string>& templates, int count_per_template,
    SimBackend backend, uint64_t seed, const SpiceConfig& spice) {
  if (count_per_template < 1)
    throw Error(Errc::BadConfig, "count must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<DatasetRecord> records;
  records.reserve(templates.size() * count_per_template);
  for (const auto& name : templates) {
    const TopologyTemplate& t = get_template(name);
    for (int i = 0; i < count_per_template; ++i) {
      DatasetRecord r;
      r.topology = name;
      r.spec = sample_spec(t, rng());
      const CircuitDesign d = sample_random_design(t, r.spec, rng());
      r.components = d.components;
      try {
        r.metrics = simulate_design(d, backend, spice);
      } catch (const Error&) {
        r.metrics.converged = false;
        r.metrics.domain = t.domain;
      }
      r.valid = r.metrics.plausible();
      r.reward = compute_reward(d, r.metrics, r.spec);
      records.push_back(std::move(r));
    }
  }
  return records;
}

DatasetSummary summarize_dataset(const std::vector<DatasetRecord>& records) {
  DatasetSummary s;
  for (const auto& r : records) {
    auto& [valid, total] = s.per_topology[r.topology];
    total += 1;
    valid += r.valid ? 1 : 0;
    s.total += 1;
    s.valid += r.valid ? 1 : 0;
  }
  return s;
}

void write_dataset(const std::string& path,
                   const std::vector<DatasetRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  for (const auto& r : records) out << record_to_json(r) << '\n';
}

std::vector<DatasetRecord> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  std::vector<DatasetRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(record_from_json(line));
  }
  return records;
}

std::vector<TokenSequence> augment_dataset(
    const std::vector<DatasetRecord>& records, int factor, uint64_t seed) {
  if (factor < 1) throw Error(Errc::BadConfig, "factor must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<TokenSequence> out;
  out.reserve(records.size() * factor);
  for (const auto& r : records) {
    const TokenSequence seq = encode_circuit(r.design());
    for (auto& variant : augment_shuffle(seq, factor, rng()))
      out.push_back(std::move(variant));
  }
  return out;
}

}  // namespace arcs
