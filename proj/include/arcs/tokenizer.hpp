#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "arcs/common.hpp"

namespace arcs {

// Seven semantic token categories. The enum order doubles as the
// token-type id used for type embeddings.
enum class TokenCategory : uint8_t {
  Special = 0,
  Component = 1,
  Topology = 2,
  Spec = 3,
  Pin = 4,
  Net = 5,
  Value = 6,
};

const char* category_name(TokenCategory c);

constexpr int kVocabSize = 706;
constexpr int kNumCategories = 7;
constexpr int kValueBins = 500;
constexpr double kValueMin = 1e-12;
constexpr double kValueMax = 1e6;
// Bin centers are 10^(-12 + 18*i/499); half a bin is 18/998 decades.
constexpr double kDecadesSpanned = 18.0;

using TokenId = int;
using TokenSequence = std::vector<TokenId>;

struct IdRange {
  TokenId first = 0;
  TokenId count = 0;
  bool contains(TokenId id) const { return id >= first && id < first + count; }
  TokenId last() const { return first + count - 1; }
};

// The fixed 706-token vocabulary. Immutable once built; share freely.
class Vocabulary {
 public:
  static const Vocabulary& instance();

  int size() const { return kVocabSize; }
  TokenCategory category(TokenId id) const;
  const std::string& name(TokenId id) const;
  std::optional<TokenId> find(std::string_view name) const;

  const IdRange& special() const { return special_; }
  const IdRange& component() const { return component_; }
  const IdRange& topology() const { return topology_; }
  const IdRange& spec() const { return spec_; }
  const IdRange& pin() const { return pin_; }
  const IdRange& net() const { return net_; }
  const IdRange& value() const { return value_; }

  TokenId start_id() const { return 0; }
  TokenId end_id() const { return 1; }
  TokenId pad_id() const { return 2; }
  TokenId sep_id() const { return 3; }
  TokenId invalid_id() const { return 4; }

  bool is_value(TokenId id) const { return value_.contains(id); }
  bool is_component(TokenId id) const { return component_.contains(id); }
  bool is_topology(TokenId id) const { return topology_.contains(id); }
  bool is_spec(TokenId id) const { return spec_.contains(id); }

  TokenId value_token(int bin) const;
  int value_bin(TokenId id) const;  // throws WrongCategory for non-value ids

  std::optional<TokenId> topology_token(std::string_view topology_name) const;
  // "TOPO_BUCK" -> "buck"
  std::string topology_name_of(TokenId id) const;

 private:
  Vocabulary();
  std::vector<std::string> names_;
  std::vector<TokenCategory> categories_;
  std::map<std::string, TokenId, std::less<>> by_name_;
  IdRange special_, component_, topology_, spec_, pin_, net_, value_;
};

// Spec-visible constructor for the vocabulary singleton.
const Vocabulary& build_vocabulary();

// Log-uniform value binning over [1e-12, 1e6].
int value_to_bin(double v);              // throws NonPositiveValue for v <= 0
double bin_to_value(int bin);            // bin in [0, 499]
double bin_center_of_token(TokenId id);  // throws WrongCategory

// A concrete circuit: topology name, spec assignment and ordered
// component (type name, SI value) pairs.
struct CircuitDesign {
  std::string topology;
  std::map<std::string, double> spec;  // spec-token name -> SI value
  std::vector<std::pair<std::string, double>> components;

  bool operator==(const CircuitDesign&) const = default;
};

// START TOPO SEP (spec_key value)* SEP (component value)* END.
// Spec pairs are emitted in ascending spec-token id order.
TokenSequence encode_circuit(const CircuitDesign& design);

struct DecodeResult {
  std::optional<CircuitDesign> design;
  Errc error = Errc::InvalidSequence;
  int error_position = -1;

  bool ok() const { return design.has_value(); }
};

DecodeResult decode_sequence(const TokenSequence& tokens);

// n copies of `tokens` with the (component, value) pairs permuted
// uniformly at random. The prefix is untouched.
std::vector<TokenSequence> augment_shuffle(const TokenSequence& tokens, int n,
                                           uint64_t seed);

// Per-token category tags (one of the 7 categories).
std::vector<TokenCategory> token_types(const TokenSequence& tokens);

}  // namespace arcs
