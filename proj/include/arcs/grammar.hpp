#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "arcs/tokenizer.hpp"
#include "arcs/topology.hpp"

namespace arcs {

// Constraint strictness, ordered: each level's allowed set is a subset of
// the previous one.
enum class ConstraintLevel { None = 0, Grammar = 1, Topology = 2, Full = 3 };

const char* constraint_level_name(ConstraintLevel level);
ConstraintLevel parse_constraint_level(std::string_view s);

using TokenMask = std::vector<uint8_t>;  // length 706, 1 = allowed

enum class GrammarPhase { ExpectComp, ExpectVal, Done };

// Decoding state for the component region of a sequence. Small value
// type; copy freely.
struct GrammarState {
  GrammarPhase phase = GrammarPhase::ExpectComp;
  ConstraintLevel level = ConstraintLevel::Grammar;
  std::string topology;                 // empty below Topology level
  std::map<std::string, int> remaining; // required component counts left
  std::vector<uint8_t> slot_filled;     // per template slot
  TokenId last_component = -1;
  int current_slot = -1;  // slot bound to the pending value token
  int position = 0;       // tokens emitted in the component region
  int max_len = 0;

  bool done() const { return phase == GrammarPhase::Done; }
  int remaining_total() const;
  // Minimal number of tokens to a legal DONE from here.
  int steps_to_finish() const;
};

// Default sampled-token budget for the component region.
constexpr int kDefaultMaxLen = 2 * kMaxSlots + 8;

GrammarState init_state(const std::string& topology, ConstraintLevel level,
                        int max_len = kDefaultMaxLen);

// Allowed next tokens for the state. At tight budgets the mask narrows to
// tokens on a shortest path to DONE so generation always terminates
// legally. Throws DoneState once the sequence is complete.
TokenMask mask(const GrammarState& s, const Vocabulary& vocab);

// Step the FSM. Throws IllegalToken when the token is not in mask(s) --
// that means the caller's decoder is broken, not the input.
GrammarState advance(const GrammarState& s, TokenId token);

// Masked softmax((z + log m)/T) with top-k truncation after masking.
// Returns a dense probability vector; masked entries are exactly 0.
std::vector<double> masked_distribution(const std::vector<double>& logits,
                                        const TokenMask& m, double temperature,
                                        int top_k);
TokenId masked_sample(const std::vector<double>& logits, const TokenMask& m,
                      double temperature, int top_k, std::mt19937_64& rng);
TokenId masked_sample(const std::vector<double>& logits, const TokenMask& m,
                      double temperature, int top_k, uint64_t seed);

struct ValidityReport {
  bool structural = false;       // well-formed prefix + component region
  bool component_correct = false;  // multiset equals the template's
  bool values_in_range = false;  // every value token inside its slot bounds
  Errc error = Errc::InvalidSequence;
  int first_violation = -1;  // token index, -1 when fully valid

  bool valid_at(ConstraintLevel level) const;
};

// Replays a full sequence (prefix + component region) through the FSM and
// reports validity. `topology` may be empty: component checks then use
// the topology token found in the sequence.
ValidityReport validate_sequence(const TokenSequence& tokens,
                                 ConstraintLevel level,
                                 const std::string& topology = "");

}  // namespace arcs
