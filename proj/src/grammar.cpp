#include "arcs/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace arcs {

const char* constraint_level_name(ConstraintLevel level) {
  switch (level) {
    case ConstraintLevel::None: return "none";
    case ConstraintLevel::Grammar: return "grammar";
    case ConstraintLevel::Topology: return "topology";
    case ConstraintLevel::Full: return "full";
  }
  return "?";
}

ConstraintLevel parse_constraint_level(std::string_view s) {
  if (s == "none") return ConstraintLevel::None;
  if (s == "grammar") return ConstraintLevel::Grammar;
  if (s == "topology") return ConstraintLevel::Topology;
  if (s == "full") return ConstraintLevel::Full;
  throw Error(Errc::BadConfig, "unknown constraint level " + std::string(s));
}

int GrammarState::remaining_total() const {
  int total = 0;
  for (const auto& [_, n] : remaining) total += n;
  return total;
}

int GrammarState::steps_to_finish() const {
  switch (phase) {
    case GrammarPhase::Done:
      return 0;
    case GrammarPhase::ExpectComp:
      if (level >= ConstraintLevel::Topology) return 2 * remaining_total() + 1;
      return 1;  // END
    case GrammarPhase::ExpectVal:
      if (level >= ConstraintLevel::Topology)
        return 1 + 2 * remaining_total() + 1;
      return 2;  // value then END
  }
  return 0;
}

GrammarState init_state(const std::string& topology, ConstraintLevel level,
                        int max_len) {
  GrammarState s;
  s.level = level;
  s.max_len = max_len;
  if (level >= ConstraintLevel::Topology) {
    const TopologyTemplate& t = get_template(topology);  // UnknownTopology
    s.topology = topology;
    s.remaining = required_components(t);
    s.slot_filled.assign(t.slots.size(), 0);
  } else {
    s.topology = topology;
  }
  return s;
}

namespace {

int bind_next_slot(const TopologyTemplate& t,
                   const std::vector<uint8_t>& filled,
                   const std::string& type) {
  for (size_t i = 0; i < t.slots.size(); ++i)
    if (!filled[i] && t.slots[i].type == type) return static_cast<int>(i);
  return -1;
}

}  // namespace

TokenMask mask(const GrammarState& s, const Vocabulary& vocab) {
  if (s.done()) throw Error(Errc::DoneState, "sequence already complete");

  TokenMask m(kVocabSize, 0);
  if (s.level == ConstraintLevel::None) {
    std::fill(m.begin(), m.end(), 1);
    return m;
  }

  // Opening another (component, value) pair is only safe when the budget
  // still has room for the pair plus a closing END.
  const bool room_for_pair = (s.max_len - s.position) >= 3;

  if (s.phase == GrammarPhase::ExpectVal) {
    int lo_bin = 0;
    int hi_bin = kValueBins - 1;
    if (s.level == ConstraintLevel::Full && s.current_slot >= 0) {
      const auto& slot = get_template(s.topology).slots[s.current_slot];
      lo_bin = value_to_bin(slot.lo);
      hi_bin = value_to_bin(slot.hi);
    }
    for (int b = lo_bin; b <= hi_bin; ++b) m[vocab.value_token(b)] = 1;
    return m;
  }

  // ExpectComp
  if (s.level == ConstraintLevel::Grammar) {
    m[vocab.end_id()] = 1;
    if (room_for_pair) {
      const IdRange& comp = vocab.component();
      for (TokenId id = comp.first; id <= comp.last(); ++id) m[id] = 1;
    }
    return m;
  }

  // Topology / Full: only component types still required; END once all
  // are placed. Any required component is on a shortest path to DONE, so
  // a tight budget changes nothing here.
  for (const auto& [type, count] : s.remaining) {
    if (count > 0) m[*vocab.find(type)] = 1;
  }
  if (s.remaining_total() == 0) m[vocab.end_id()] = 1;
  return m;
}

GrammarState advance(const GrammarState& s, TokenId token) {
  const Vocabulary& vocab = Vocabulary::instance();
  TokenMask m = mask(s, vocab);
  if (token < 0 || token >= kVocabSize || !m[token])
    throw Error(Errc::IllegalToken,
                "token " + std::to_string(token) + " not allowed here");

  GrammarState next = s;
  next.position = s.position + 1;

  if (s.level == ConstraintLevel::None) {
    // Untracked free-running mode: follow transitions loosely so END
    // still terminates the stream.
    if (token == vocab.end_id()) {
      next.phase = GrammarPhase::Done;
    } else if (s.phase == GrammarPhase::ExpectComp && vocab.is_component(token)) {
      next.phase = GrammarPhase::ExpectVal;
      next.last_component = token;
    } else if (s.phase == GrammarPhase::ExpectVal && vocab.is_value(token)) {
      next.phase = GrammarPhase::ExpectComp;
    }
    return next;
  }

  if (s.phase == GrammarPhase::ExpectComp) {
    if (token == vocab.end_id()) {
      next.phase = GrammarPhase::Done;
      return next;
    }
    next.phase = GrammarPhase::ExpectVal;
    next.last_component = token;
    if (s.level >= ConstraintLevel::Topology) {
      const std::string& type = vocab.name(token);
      next.remaining[type] -= 1;
      const TopologyTemplate& t = get_template(s.topology);
      next.current_slot = bind_next_slot(t, s.slot_filled, type);
      if (next.current_slot >= 0) next.slot_filled[next.current_slot] = 1;
    }
    return next;
  }

  // ExpectVal -> value token consumed.
  next.phase = GrammarPhase::ExpectComp;
  next.current_slot = -1;
  return next;
}

std::vector<double> masked_distribution(const std::vector<double>& logits,
                                        const TokenMask& m, double temperature,
                                        int top_k) {
  if (logits.size() != m.size())
    throw Error(Errc::BadConfig, "logits/mask size mismatch");
  if (!(temperature > 0.0))
    throw Error(Errc::BadConfig, "temperature must be positive");

  std::vector<int> allowed;
  allowed.reserve(64);
  for (size_t i = 0; i < m.size(); ++i)
    if (m[i]) allowed.push_back(static_cast<int>(i));
  if (allowed.empty()) throw Error(Errc::AllMasked, "no token allowed");

  // Top-k applies after masking, highest logits first; ties keep the
  // lower token id.
  if (top_k > 0 && top_k < static_cast<int>(allowed.size())) {
    std::stable_sort(allowed.begin(), allowed.end(), [&](int a, int b) {
      return logits[a] > logits[b];
    });
    allowed.resize(top_k);
    std::sort(allowed.begin(), allowed.end());
  }

  double max_score = -std::numeric_limits<double>::infinity();
  for (int id : allowed) max_score = std::max(max_score, logits[id]);
  std::vector<double> probs(logits.size(), 0.0);
  double z = 0.0;
  for (int id : allowed) {
    const double p = std::exp((logits[id] - max_score) / temperature);
    probs[id] = p;
    z += p;
  }
  for (int id : allowed) probs[id] /= z;
  return probs;
}

TokenId masked_sample(const std::vector<double>& logits, const TokenMask& m,
                      double temperature, int top_k, std::mt19937_64& rng) {
  const std::vector<double> probs =
      masked_distribution(logits, m, temperature, top_k);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  double acc = 0.0;
  int last_allowed = -1;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_allowed = static_cast<int>(i);
    acc += probs[i];
    if (r < acc) return static_cast<int>(i);
  }
  return last_allowed;  // guard against trailing rounding
}

TokenId masked_sample(const std::vector<double>& logits, const TokenMask& m,
                      double temperature, int top_k, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return masked_sample(logits, m, temperature, top_k, rng);
}

bool ValidityReport::valid_at(ConstraintLevel level) const {
  switch (level) {
    case ConstraintLevel::None: return true;
    case ConstraintLevel::Grammar: return structural;
    case ConstraintLevel::Topology: return structural && component_correct;
    case ConstraintLevel::Full:
      return structural && component_correct && values_in_range;
  }
  return false;
}

ValidityReport validate_sequence(const TokenSequence& tokens,
                                 ConstraintLevel level,
                                 const std::string& topology) {
  const Vocabulary& vocab = Vocabulary::instance();
  ValidityReport report;
  (void)level;  // the report carries all checks; valid_at() applies a level

  auto fail = [&](Errc e, int pos) {
    report.error = e;
    report.first_violation = pos;
    return report;
  };

  // Prefix: START TOPO SEP (spec value)* SEP
  size_t i = 0;
  const size_t n = tokens.size();
  if (n == 0 || tokens[0] != vocab.start_id()) return fail(Errc::MissingStart, 0);
  ++i;
  if (i >= n || !vocab.is_topology(tokens[i]))
    return fail(Errc::MissingTopology, static_cast<int>(i));
  const std::string seq_topology = vocab.topology_name_of(tokens[i]);
  ++i;
  if (i >= n || tokens[i] != vocab.sep_id())
    return fail(Errc::SpecRegionMalformed, static_cast<int>(i));
  ++i;
  while (true) {
    if (i >= n) return fail(Errc::SpecRegionMalformed, static_cast<int>(i));
    if (tokens[i] == vocab.sep_id()) {
      ++i;
      break;
    }
    if (!vocab.is_spec(tokens[i]))
      return fail(Errc::SpecRegionMalformed, static_cast<int>(i));
    ++i;
    if (i >= n || !vocab.is_value(tokens[i]))
      return fail(Errc::SpecRegionMalformed, static_cast<int>(i));
    ++i;
  }

  // Component region: alternation + END, collected for the type checks.
  std::vector<std::pair<TokenId, TokenId>> pairs;
  std::vector<int> pair_positions;
  bool saw_end = false;
  int end_position = -1;
  while (i < n) {
    if (tokens[i] == vocab.end_id()) {
      saw_end = true;
      end_position = static_cast<int>(i);
      ++i;
      break;
    }
    if (!vocab.is_component(tokens[i]))
      return fail(Errc::UnexpectedToken, static_cast<int>(i));
    const int comp_pos = static_cast<int>(i);
    ++i;
    if (i >= n || !vocab.is_value(tokens[i]))
      return fail(Errc::DanglingComponent, static_cast<int>(i));
    pairs.emplace_back(tokens[comp_pos], tokens[i]);
    pair_positions.push_back(comp_pos);
    ++i;
  }
  if (!saw_end) return fail(Errc::MissingEnd, static_cast<int>(i));
  for (; i < n; ++i)
    if (tokens[i] != vocab.pad_id())
      return fail(Errc::UnexpectedToken, static_cast<int>(i));

  report.structural = true;

  // Component-type correctness against the template multiset.
  const std::string topo_name = topology.empty() ? seq_topology : topology;
  const TopologyTemplate* tmpl = nullptr;
  try {
    tmpl = &get_template(topo_name);
  } catch (const Error&) {
    report.error = Errc::UnknownTopology;
    report.first_violation = 1;
    return report;
  }

  std::map<std::string, int> want = required_components(*tmpl);
  bool counts_ok = true;
  int violation = -1;
  std::map<std::string, int> seen;
  for (size_t k = 0; k < pairs.size(); ++k) {
    const std::string& type = vocab.name(pairs[k].first);
    auto it = want.find(type);
    if (it == want.end() || ++seen[type] > it->second) {
      counts_ok = false;
      violation = pair_positions[k];
      break;
    }
  }
  if (counts_ok) {
    for (const auto& [type, count] : want) {
      if (seen[type] != count) {
        counts_ok = false;
        violation = end_position;  // a required component never appeared
        break;
      }
    }
  }
  report.component_correct = counts_ok;
  if (!counts_ok) {
    report.error = Errc::ComponentMismatch;
    report.first_violation = violation;
    return report;
  }

  // Value-range adherence, binding pairs to slots in emission order.
  std::vector<uint8_t> filled(tmpl->slots.size(), 0);
  bool ranges_ok = true;
  for (size_t k = 0; k < pairs.size(); ++k) {
    const std::string& type = vocab.name(pairs[k].first);
    const int slot = bind_next_slot(*tmpl, filled, type);
    filled[slot] = 1;
    const int bin = vocab.value_bin(pairs[k].second);
    if (bin < value_to_bin(tmpl->slots[slot].lo) ||
        bin > value_to_bin(tmpl->slots[slot].hi)) {
      ranges_ok = false;
      if (report.first_violation < 0)
        report.first_violation = pair_positions[k] + 1;
      break;
    }
  }
  report.values_in_range = ranges_ok;
  if (!ranges_ok) {
    report.error = Errc::InvalidSequence;
    return report;
  }
  report.first_violation = -1;
  return report;
}

}  // namespace arcs
