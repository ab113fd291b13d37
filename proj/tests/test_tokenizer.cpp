#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "arcs/tokenizer.hpp"

using namespace arcs;

TEST_SUITE_BEGIN("tokenizer");

TEST_CASE("vocabulary has exactly 706 densely numbered tokens") {
  const Vocabulary& vocab = build_vocabulary();
  CHECK(vocab.size() == 706);

  std::map<TokenCategory, int> counts;
  std::set<std::string> names;
  for (TokenId id = 0; id < vocab.size(); ++id) {
    counts[vocab.category(id)]++;
    names.insert(vocab.name(id));
    CHECK(vocab.find(vocab.name(id)) == id);
  }
  CHECK(names.size() == 706);  // no duplicate names
  CHECK(counts[TokenCategory::Special] == 5);
  CHECK(counts[TokenCategory::Component] == 20);
  CHECK(counts[TokenCategory::Topology] == 40);
  CHECK(counts[TokenCategory::Spec] == 20);
  CHECK(counts[TokenCategory::Pin] == 21);
  CHECK(counts[TokenCategory::Net] == 100);
  CHECK(counts[TokenCategory::Value] == 500);
}

TEST_CASE("named tokens exist where expected") {
  const Vocabulary& vocab = build_vocabulary();
  for (const char* name : {"START", "END", "PAD", "SEP", "INVALID",
                           "MOSFET_N", "RESISTOR", "CAPACITOR", "INDUCTOR",
                           "DIODE", "OPAMP", "TRANSFORMER", "SPEC_VIN",
                           "SPEC_VOUT", "SPEC_IOUT", "SPEC_FSW", "SPEC_GAIN",
                           "SPEC_BW", "SPEC_FC", "SPEC_FOSC"})
    CHECK_MESSAGE(vocab.find(name).has_value(), name);

  // 34 named topologies + 6 reserved slots.
  int named = 0, reserved = 0;
  for (TokenId id = vocab.topology().first; id <= vocab.topology().last(); ++id) {
    if (vocab.name(id).rfind("TOPO_RSV_", 0) == 0)
      ++reserved;
    else
      ++named;
  }
  CHECK(named == 34);
  CHECK(reserved == 6);
  CHECK(vocab.find("TOPO_BUCK").has_value());
  CHECK(vocab.find("TOPO_CURRENT_MIRROR").has_value());
}

TEST_CASE("value binning boundary and midpoint behaviour") {
  CHECK(value_to_bin(1e-12) == 0);
  CHECK(value_to_bin(1e6) == 499);
  // log-midpoint example: (−3 − (−12))/18 * 499 = 249.5 rounds up
  CHECK(value_to_bin(1e-3) == 250);
  CHECK(bin_to_value(0) == doctest::Approx(1e-12).epsilon(1e-12));
  CHECK(bin_to_value(499) == doctest::Approx(1e6).epsilon(1e-12));
  CHECK_THROWS_AS(value_to_bin(0.0), Error);
  CHECK_THROWS_AS(value_to_bin(-1.0), Error);
  CHECK_THROWS_AS(bin_center_of_token(0), Error);  // START is not a value
  // out-of-range values clamp to the boundary bins
  CHECK(value_to_bin(1e-15) == 0);
  CHECK(value_to_bin(1e9) == 499);
}

TEST_CASE("binning is monotone and bin centers strictly increase") {
  int prev_bin = -1;
  double prev_center = 0.0;
  for (int i = 0; i < kValueBins; ++i) {
    const double c = bin_to_value(i);
    CHECK(c > prev_center);
    prev_center = c;
  }
  for (double x = -12.0; x <= 6.0; x += 0.01) {
    const int bin = value_to_bin(std::pow(10.0, x));
    CHECK(bin >= prev_bin);
    prev_bin = bin;
  }
}

TEST_CASE("round-trip log error stays within half a bin") {
  // exhaustive sweep: 1e5 log-spaced values over the full range
  const double half_bin_decades = kDecadesSpanned / (2.0 * (kValueBins - 1));
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double x = -12.0 + 18.0 * i / 99999.0;
    const double v = std::pow(10.0, x);
    const double rt = bin_to_value(value_to_bin(v));
    worst = std::max(worst, std::abs(std::log10(rt) - std::log10(v)));
  }
  CHECK(worst <= half_bin_decades + 1e-12);
  // equivalently <= 4.3% relative error
  CHECK(std::pow(10.0, worst) - 1.0 <= 0.043);
}

namespace {

CircuitDesign fig2_buck() {
  CircuitDesign d;
  d.topology = "buck";
  d.spec = {{"SPEC_VIN", 12.0}, {"SPEC_VOUT", 5.0}, {"SPEC_IOUT", 1.0}};
  d.components = {{"INDUCTOR", 100e-6},
                  {"CAPACITOR", 22e-6},
                  {"RESISTOR", 5e-3},
                  {"MOSFET_N", 15e-3}};
  return d;
}

}  // namespace

TEST_CASE("encode_circuit lays out the buck example in canonical order") {
  const Vocabulary& vocab = build_vocabulary();
  const TokenSequence seq = encode_circuit(fig2_buck());

  std::vector<std::string> names;
  for (TokenId id : seq) names.push_back(vocab.name(id));
  REQUIRE(names.size() == 19);
  CHECK(names[0] == "START");
  CHECK(names[1] == "TOPO_BUCK");
  CHECK(names[2] == "SEP");
  CHECK(names[3] == "SPEC_VIN");
  CHECK(names[5] == "SPEC_VOUT");
  CHECK(names[7] == "SPEC_IOUT");
  CHECK(names[9] == "SEP");
  CHECK(names[10] == "INDUCTOR");
  CHECK(names[12] == "CAPACITOR");
  CHECK(names[14] == "RESISTOR");
  CHECK(names[16] == "MOSFET_N");
  CHECK(names[18] == "END");
  for (int i : {4, 6, 8, 11, 13, 15, 17})
    CHECK(vocab.is_value(seq[i]));
}

TEST_CASE("empty component list encodes to a bare prefix") {
  CircuitDesign d;
  d.topology = "buck";
  d.spec = {{"SPEC_VIN", 12.0}};
  const TokenSequence seq = encode_circuit(d);
  const Vocabulary& vocab = build_vocabulary();
  REQUIRE(seq.size() == 7);
  CHECK(seq.front() == vocab.start_id());
  CHECK(seq.back() == vocab.end_id());
  CHECK(seq[2] == vocab.sep_id());
  CHECK(seq[5] == vocab.sep_id());
}

TEST_CASE("encode rejects unknown topologies and spec keys") {
  CircuitDesign d;
  d.topology = "warp_drive";
  CHECK_THROWS_AS(encode_circuit(d), Error);
  d.topology = "buck";
  d.spec = {{"SPEC_WARP", 1.0}};
  CHECK_THROWS_AS(encode_circuit(d), Error);
}

TEST_CASE("decode recovers the Fig-2-style design with 4 components") {
  const TokenSequence seq = encode_circuit(fig2_buck());
  const DecodeResult r = decode_sequence(seq);
  REQUIRE(r.ok());
  CHECK(r.design->topology == "buck");
  CHECK(r.design->components.size() == 4);
  CHECK(r.design->components[0].first == "INDUCTOR");
  CHECK(r.design->spec.size() == 3);
}

TEST_CASE("decode/encode round trip within quantization error") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> expo(-11.5, 5.5);
  for (int trial = 0; trial < 200; ++trial) {
    CircuitDesign d = fig2_buck();
    for (auto& [type, value] : d.components)
      value = std::pow(10.0, expo(rng));
    const DecodeResult r = decode_sequence(encode_circuit(d));
    REQUIRE(r.ok());
    REQUIRE(r.design->components.size() == d.components.size());
    for (size_t i = 0; i < d.components.size(); ++i) {
      const double orig = d.components[i].second;
      const double restored = r.design->components[i].second;
      CHECK(std::abs(restored - orig) / orig <= 0.043);
    }
    // idempotence: encode(decode(seq)) == seq
    CHECK(encode_circuit(*r.design) == encode_circuit(d));
  }
}

TEST_CASE("decode reports structured errors with positions") {
  const Vocabulary& vocab = build_vocabulary();
  const TokenSequence good = encode_circuit(fig2_buck());

  SUBCASE("missing START") {
    TokenSequence seq(good.begin() + 1, good.end());
    const DecodeResult r = decode_sequence(seq);
    CHECK(!r.ok());
    CHECK(r.error == Errc::MissingStart);
    CHECK(r.error_position == 0);
  }
  SUBCASE("missing END") {
    TokenSequence seq(good.begin(), good.end() - 1);
    const DecodeResult r = decode_sequence(seq);
    CHECK(!r.ok());
    CHECK(r.error == Errc::MissingEnd);
  }
  SUBCASE("two consecutive component tokens dangle") {
    TokenSequence seq = good;
    seq[11] = *vocab.find("CAPACITOR");  // value slot replaced by component
    const DecodeResult r = decode_sequence(seq);
    CHECK(!r.ok());
    CHECK(r.error == Errc::DanglingComponent);
    CHECK(r.error_position == 11);
  }
  SUBCASE("junk in the spec region") {
    TokenSequence seq = good;
    seq[3] = *vocab.find("INDUCTOR");
    const DecodeResult r = decode_sequence(seq);
    CHECK(!r.ok());
    CHECK(r.error == Errc::SpecRegionMalformed);
    CHECK(r.error_position == 3);
  }
}

TEST_CASE("trailing PAD is tolerated, other trailing junk is not") {
  const Vocabulary& vocab = build_vocabulary();
  TokenSequence seq = encode_circuit(fig2_buck());
  seq.push_back(vocab.pad_id());
  seq.push_back(vocab.pad_id());
  CHECK(decode_sequence(seq).ok());
  seq.push_back(vocab.start_id());
  CHECK(!decode_sequence(seq).ok());
}

TEST_CASE("augment_shuffle keeps the prefix and the pair adjacency") {
  const Vocabulary& vocab = build_vocabulary();
  const TokenSequence seq = encode_circuit(fig2_buck());
  const auto variants = augment_shuffle(seq, 5, 99);
  REQUIRE(variants.size() == 5);

  const DecodeResult base = decode_sequence(seq);
  std::multiset<std::pair<std::string, double>> base_multiset(
      base.design->components.begin(), base.design->components.end());

  for (const auto& v : variants) {
    // identical prefix
    for (int i = 0; i < 10; ++i) CHECK(v[i] == seq[i]);
    // every component token is immediately followed by its value token
    for (size_t i = 10; i + 1 < v.size(); i += 2) {
      if (v[i] == vocab.end_id()) break;
      CHECK(vocab.is_component(v[i]));
      CHECK(vocab.is_value(v[i + 1]));
    }
    const DecodeResult r = decode_sequence(v);
    REQUIRE(r.ok());
    std::multiset<std::pair<std::string, double>> got(
        r.design->components.begin(), r.design->components.end());
    CHECK(got == base_multiset);
  }
}

TEST_CASE("augment_shuffle of a single-component design is the identity") {
  CircuitDesign d;
  d.topology = "buck";
  d.spec = {{"SPEC_VIN", 12.0}};
  d.components = {{"INDUCTOR", 1e-4}};
  const TokenSequence seq = encode_circuit(d);
  const auto variants = augment_shuffle(seq, 1, 3);
  REQUIRE(variants.size() == 1);
  CHECK(variants[0] == seq);
}

TEST_CASE("augment_shuffle is deterministic under seed") {
  const TokenSequence seq = encode_circuit(fig2_buck());
  CHECK(augment_shuffle(seq, 4, 42) == augment_shuffle(seq, 4, 42));
}

TEST_SUITE_END();
