#include "arcs/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace arcs {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::NonPositiveValue: return "NonPositiveValue";
    case Errc::WrongCategory: return "WrongCategory";
    case Errc::UnknownToken: return "UnknownToken";
    case Errc::UnknownTopology: return "UnknownTopology";
    case Errc::DisconnectedTopology: return "DisconnectedTopology";
    case Errc::MissingStart: return "MissingStart";
    case Errc::MissingEnd: return "MissingEnd";
    case Errc::MissingTopology: return "MissingTopology";
    case Errc::DanglingComponent: return "DanglingComponent";
    case Errc::SpecRegionMalformed: return "SpecRegionMalformed";
    case Errc::UnexpectedToken: return "UnexpectedToken";
    case Errc::DoneState: return "DoneState";
    case Errc::IllegalToken: return "IllegalToken";
    case Errc::AllMasked: return "AllMasked";
    case Errc::BadConfig: return "BadConfig";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::InvalidSequence: return "InvalidSequence";
    case Errc::ComponentMismatch: return "ComponentMismatch";
    case Errc::SimulatorUnavailable: return "SimulatorUnavailable";
    case Errc::ParseFailure: return "ParseFailure";
    case Errc::GroupTooSmall: return "GroupTooSmall";
    case Errc::CheckpointMismatch: return "CheckpointMismatch";
    case Errc::EmptyEvaluation: return "EmptyEvaluation";
    case Errc::DegenerateEmbeddings: return "DegenerateEmbeddings";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

const char* category_name(TokenCategory c) {
  switch (c) {
    case TokenCategory::Special: return "special";
    case TokenCategory::Component: return "component";
    case TokenCategory::Topology: return "topology";
    case TokenCategory::Spec: return "spec";
    case TokenCategory::Pin: return "pin";
    case TokenCategory::Net: return "net";
    case TokenCategory::Value: return "value";
  }
  return "?";
}

namespace {

const char* kSpecialNames[5] = {"START", "END", "PAD", "SEP", "INVALID"};

const char* kComponentNames[14] = {
    "MOSFET_N", "RESISTOR", "CAPACITOR", "INDUCTOR", "DIODE",
    "OPAMP",    "TRANSFORMER", "MOSFET_P", "BJT_NPN", "BJT_PNP",
    "ZENER",    "SWITCH",   "VSOURCE",  "ISOURCE"};

// 34 named topologies: tier-1 power, tier-2 signal, tier-2b extended.
const char* kTopologyNames[34] = {
    "buck", "boost", "buck_boost", "cuk", "sepic", "flyback", "forward",
    "inverting_amp", "noninverting_amp", "instrum_amp", "differential_amp",
    "sallen_key_lowpass", "sk_highpass", "sk_bandpass", "wien_bridge",
    "colpitts",
    "common_emitter", "common_collector", "common_base", "cascode",
    "current_mirror", "shunt_regulator", "series_regulator", "hartley",
    "phase_shift", "state_var_filter", "twin_t_notch", "half_bridge",
    "push_pull", "charge_pump", "voltage_doubler", "zeta_converter",
    "transimpedance_amp", "inv_summing_amp"};

const char* kSpecNames[8] = {"SPEC_VIN", "SPEC_VOUT", "SPEC_IOUT", "SPEC_FSW",
                             "SPEC_GAIN", "SPEC_BW",  "SPEC_FC",   "SPEC_FOSC"};

const char* kPinNames[21] = {
    "PIN_DRAIN", "PIN_GATE", "PIN_SOURCE", "PIN_BASE",  "PIN_COLLECTOR",
    "PIN_EMITTER", "PIN_ANODE", "PIN_CATHODE", "PIN_POS", "PIN_NEG",
    "PIN_OUT",   "PIN_IN",   "PIN_VCC",    "PIN_VEE",   "PIN_GND",
    "PIN_P1",    "PIN_P2",   "PIN_S1",     "PIN_S2",    "PIN_FB",
    "PIN_EN"};

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  return s;
}

}  // namespace

Vocabulary::Vocabulary() {
  names_.reserve(kVocabSize);
  categories_.reserve(kVocabSize);
  auto push = [&](TokenCategory cat, std::string name) {
    categories_.push_back(cat);
    names_.push_back(std::move(name));
  };

  special_ = {0, 5};
  for (const char* n : kSpecialNames) push(TokenCategory::Special, n);

  component_ = {5, 20};
  for (const char* n : kComponentNames) push(TokenCategory::Component, n);
  for (int i = 0; i < 6; ++i)
    push(TokenCategory::Component, "COMP_RSV_" + std::to_string(i));

  topology_ = {25, 40};
  for (const char* n : kTopologyNames)
    push(TokenCategory::Topology, "TOPO_" + upper(n));
  for (int i = 0; i < 6; ++i)
    push(TokenCategory::Topology, "TOPO_RSV_" + std::to_string(i));

  spec_ = {65, 20};
  for (const char* n : kSpecNames) push(TokenCategory::Spec, n);
  for (int i = 0; i < 12; ++i)
    push(TokenCategory::Spec, "SPEC_RSV_" + std::to_string(i));

  pin_ = {85, 21};
  for (const char* n : kPinNames) push(TokenCategory::Pin, n);

  net_ = {106, 100};
  for (int i = 0; i < 100; ++i)
    push(TokenCategory::Net, "NET_" + std::to_string(i));

  value_ = {206, kValueBins};
  char buf[32];
  for (int i = 0; i < kValueBins; ++i) {
    std::snprintf(buf, sizeof(buf), "VAL_%.3e", bin_to_value(i));
    push(TokenCategory::Value, buf);
  }

  for (TokenId id = 0; id < kVocabSize; ++id) by_name_.emplace(names_[id], id);
}

const Vocabulary& Vocabulary::instance() {
  static const Vocabulary vocab;
  return vocab;
}

const Vocabulary& build_vocabulary() { return Vocabulary::instance(); }

TokenCategory Vocabulary::category(TokenId id) const {
  if (id < 0 || id >= kVocabSize)
    throw Error(Errc::UnknownToken, "token id " + std::to_string(id));
  return categories_[id];
}

const std::string& Vocabulary::name(TokenId id) const {
  if (id < 0 || id >= kVocabSize)
    throw Error(Errc::UnknownToken, "token id " + std::to_string(id));
  return names_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::value_token(int bin) const {
  if (bin < 0 || bin >= kValueBins)
    throw Error(Errc::UnknownToken, "value bin " + std::to_string(bin));
  return value_.first + bin;
}

int Vocabulary::value_bin(TokenId id) const {
  if (!value_.contains(id))
    throw Error(Errc::WrongCategory, name(id) + " is not a value token");
  return id - value_.first;
}

std::optional<TokenId> Vocabulary::topology_token(
    std::string_view topology_name) const {
  return find("TOPO_" + upper(std::string(topology_name)));
}

std::string Vocabulary::topology_name_of(TokenId id) const {
  if (!topology_.contains(id))
    throw Error(Errc::WrongCategory, name(id) + " is not a topology token");
  std::string n = names_[id].substr(5);  // strip "TOPO_"
  std::transform(n.begin(), n.end(), n.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return n;
}

int value_to_bin(double v) {
  if (!(v > 0.0))
    throw Error(Errc::NonPositiveValue, "value " + std::to_string(v));
  const double x = std::log10(std::clamp(v, kValueMin, kValueMax));
  // Nearest bin center in log space; exact midpoints round up.
  const long bin = std::lround((x + 12.0) * (kValueBins - 1) / kDecadesSpanned);
  return static_cast<int>(std::clamp(bin, 0L, long(kValueBins - 1)));
}

double bin_to_value(int bin) {
  if (bin < 0 || bin >= kValueBins)
    throw Error(Errc::WrongCategory, "bin " + std::to_string(bin));
  return std::pow(10.0, -12.0 + kDecadesSpanned * bin / (kValueBins - 1));
}

double bin_center_of_token(TokenId id) {
  return bin_to_value(Vocabulary::instance().value_bin(id));
}

TokenSequence encode_circuit(const CircuitDesign& design) {
  const Vocabulary& vocab = Vocabulary::instance();
  auto topo = vocab.topology_token(design.topology);
  if (!topo)
    throw Error(Errc::UnknownToken, "topology " + design.topology);

  TokenSequence out;
  out.reserve(6 + 2 * (design.spec.size() + design.components.size()));
  out.push_back(vocab.start_id());
  out.push_back(*topo);
  out.push_back(vocab.sep_id());

  // Spec pairs in ascending token-id order (matches the canonical layout).
  std::vector<std::pair<TokenId, double>> spec_pairs;
  for (const auto& [key, value] : design.spec) {
    auto id = vocab.find(key);
    if (!id || !vocab.is_spec(*id))
      throw Error(Errc::UnknownToken, "spec key " + key);
    spec_pairs.emplace_back(*id, value);
  }
  std::sort(spec_pairs.begin(), spec_pairs.end());
  for (const auto& [id, value] : spec_pairs) {
    out.push_back(id);
    out.push_back(vocab.value_token(value_to_bin(value)));
  }
  out.push_back(vocab.sep_id());

  for (const auto& [type, value] : design.components) {
    auto id = vocab.find(type);
    if (!id || !vocab.is_component(*id))
      throw Error(Errc::UnknownToken, "component type " + type);
    out.push_back(*id);
    out.push_back(vocab.value_token(value_to_bin(value)));
  }
  out.push_back(vocab.end_id());
  return out;
}

DecodeResult decode_sequence(const TokenSequence& tokens) {
  const Vocabulary& vocab = Vocabulary::instance();
  auto fail = [](Errc e, int pos) {
    DecodeResult r;
    r.error = e;
    r.error_position = pos;
    return r;
  };

  size_t i = 0;
  const size_t n = tokens.size();
  if (n == 0 || tokens[0] != vocab.start_id()) return fail(Errc::MissingStart, 0);
  ++i;
  if (i >= n || !vocab.is_topology(tokens[i]))
    return fail(Errc::MissingTopology, static_cast<int>(i));
  CircuitDesign design;
  design.topology = vocab.topology_name_of(tokens[i]);
  ++i;
  if (i >= n || tokens[i] != vocab.sep_id())
    return fail(Errc::SpecRegionMalformed, static_cast<int>(i));
  ++i;

  // Spec region: (spec_key value)* SEP
  while (true) {
    if (i >= n) return fail(Errc::SpecRegionMalformed, static_cast<int>(i));
    if (tokens[i] == vocab.sep_id()) {
      ++i;
      break;
    }
    if (!vocab.is_spec(tokens[i]))
      return fail(Errc::SpecRegionMalformed, static_cast<int>(i));
    const std::string key = vocab.name(tokens[i]);
    ++i;
    if (i >= n || !vocab.is_value(tokens[i]))
      return fail(Errc::SpecRegionMalformed, static_cast<int>(i));
    design.spec[key] = bin_center_of_token(tokens[i]);
    ++i;
  }

  // Component region: (component value)* END
  while (true) {
    if (i >= n) return fail(Errc::MissingEnd, static_cast<int>(i));
    if (tokens[i] == vocab.end_id()) {
      ++i;
      break;
    }
    if (!vocab.is_component(tokens[i])) {
      return fail(Errc::UnexpectedToken, static_cast<int>(i));
    }
    const std::string type = vocab.name(tokens[i]);
    ++i;
    if (i >= n || !vocab.is_value(tokens[i]))
      return fail(Errc::DanglingComponent, static_cast<int>(i));
    design.components.emplace_back(type, bin_center_of_token(tokens[i]));
    ++i;
  }

  // Trailing PAD is fine; anything else is junk.
  for (; i < n; ++i)
    if (tokens[i] != vocab.pad_id())
      return fail(Errc::UnexpectedToken, static_cast<int>(i));

  DecodeResult r;
  r.design = std::move(design);
  return r;
}

std::vector<TokenSequence> augment_shuffle(const TokenSequence& tokens, int n,
                                           uint64_t seed) {
  const Vocabulary& vocab = Vocabulary::instance();
  DecodeResult parsed = decode_sequence(tokens);
  if (!parsed.ok())
    throw Error(parsed.error,
                "cannot shuffle invalid sequence (position " +
                    std::to_string(parsed.error_position) + ")");

  // Locate the component region: after the second SEP, before END.
  size_t comp_begin = 0;
  int seps = 0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == vocab.sep_id() && ++seps == 2) {
      comp_begin = i + 1;
      break;
    }
  }
  std::vector<std::pair<TokenId, TokenId>> pairs;
  size_t i = comp_begin;
  while (tokens[i] != vocab.end_id()) {
    pairs.emplace_back(tokens[i], tokens[i + 1]);
    i += 2;
  }

  std::mt19937_64 rng(seed);
  std::vector<TokenSequence> out;
  out.reserve(static_cast<size_t>(std::max(n, 0)));
  for (int k = 0; k < n; ++k) {
    auto shuffled = pairs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    TokenSequence seq(tokens.begin(), tokens.begin() + comp_begin);
    for (const auto& [c, v] : shuffled) {
      seq.push_back(c);
      seq.push_back(v);
    }
    seq.insert(seq.end(), tokens.begin() + i, tokens.end());
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<TokenCategory> token_types(const TokenSequence& tokens) {
  const Vocabulary& vocab = Vocabulary::instance();
  std::vector<TokenCategory> types;
  types.reserve(tokens.size());
  for (TokenId id : tokens) types.push_back(vocab.category(id));
  return types;
}

}  // namespace arcs
