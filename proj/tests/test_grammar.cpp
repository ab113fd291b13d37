#include <doctest.h>

#include <cmath>
#include <random>

#include "arcs/grammar.hpp"
#include "arcs/model.hpp"

using namespace arcs;

TEST_SUITE_BEGIN("grammar");

namespace {

int allowed_count(const TokenMask& m) {
  int n = 0;
  for (uint8_t b : m) n += b;
  return n;
}

TokenSequence fig2_sequence() {
  CircuitDesign d;
  d.topology = "buck";
  d.spec = {{"SPEC_VIN", 12.0}, {"SPEC_VOUT", 5.0}, {"SPEC_IOUT", 1.0}};
  d.components = {{"INDUCTOR", 100e-6},
                  {"CAPACITOR", 22e-6},
                  {"RESISTOR", 5e-3},
                  {"MOSFET_N", 15e-3}};
  return encode_circuit(d);
}

}  // namespace

TEST_CASE("init_state seeds the remaining multiset at topology level") {
  const GrammarState s = init_state("buck", ConstraintLevel::Topology, 64);
  CHECK(s.phase == GrammarPhase::ExpectComp);
  CHECK(s.remaining == required_components(get_template("buck")));
  CHECK_THROWS_AS(init_state("nope", ConstraintLevel::Topology, 64), Error);

  const GrammarState g = init_state("", ConstraintLevel::Grammar, 64);
  CHECK(g.remaining.empty());
  const TokenMask m = mask(g, build_vocabulary());
  CHECK(m[build_vocabulary().end_id()] == 1);  // END allowed immediately
}

TEST_CASE("level NONE allows all 706 tokens every step") {
  GrammarState s = init_state("buck", ConstraintLevel::None, 8);
  CHECK(allowed_count(mask(s, build_vocabulary())) == 706);
  s = advance(s, *build_vocabulary().find("PIN_DRAIN"));  // junk is fine
  CHECK(allowed_count(mask(s, build_vocabulary())) == 706);
}

TEST_CASE("grammar level masks phase-appropriate categories") {
  const Vocabulary& vocab = build_vocabulary();
  GrammarState s = init_state("", ConstraintLevel::Grammar, 64);
  TokenMask m = mask(s, vocab);
  // components + END
  CHECK(allowed_count(m) == 21);
  s = advance(s, *vocab.find("INDUCTOR"));
  m = mask(s, vocab);
  CHECK(allowed_count(m) == 500);  // exactly the value tokens
  for (TokenId id = vocab.value().first; id <= vocab.value().last(); ++id)
    CHECK(m[id] == 1);
}

TEST_CASE("topology level enforces counts and END gating") {
  const Vocabulary& vocab = build_vocabulary();
  GrammarState s = init_state("buck", ConstraintLevel::Topology, 64);
  TokenMask m = mask(s, vocab);
  CHECK(m[vocab.end_id()] == 0);  // components still required
  CHECK(allowed_count(m) == 4);

  // place all four required components
  for (const char* type : {"INDUCTOR", "CAPACITOR", "RESISTOR", "MOSFET_N"}) {
    s = advance(s, *vocab.find(type));
    s = advance(s, vocab.value_token(250));
  }
  m = mask(s, vocab);
  CHECK(allowed_count(m) == 1);
  CHECK(m[vocab.end_id()] == 1);  // only END remains
  s = advance(s, vocab.end_id());
  CHECK(s.done());
  CHECK_THROWS_AS(mask(s, vocab), Error);  // DoneState
}

TEST_CASE("full level restricts value bins to the slot bounds") {
  const Vocabulary& vocab = build_vocabulary();
  GrammarState s = init_state("buck", ConstraintLevel::Full, 64);
  s = advance(s, *vocab.find("INDUCTOR"));
  const TokenMask m = mask(s, vocab);
  const TopologyTemplate& t = get_template("buck");
  const int lo_bin = value_to_bin(t.slots[0].lo);
  const int hi_bin = value_to_bin(t.slots[0].hi);
  for (int b = 0; b < kValueBins; ++b)
    CHECK(m[vocab.value_token(b)] == (b >= lo_bin && b <= hi_bin ? 1 : 0));
  CHECK(allowed_count(m) == hi_bin - lo_bin + 1);
}

TEST_CASE("advance flags illegal tokens as decoder bugs") {
  const Vocabulary& vocab = build_vocabulary();
  GrammarState s = init_state("buck", ConstraintLevel::Topology, 64);
  CHECK_THROWS_AS(advance(s, vocab.value_token(0)), Error);
  CHECK_THROWS_AS(advance(s, *vocab.find("OPAMP")), Error);  // not in buck
  s = advance(s, *vocab.find("INDUCTOR"));
  CHECK_THROWS_AS(advance(s, *vocab.find("CAPACITOR")), Error);
  CHECK_THROWS_AS(advance(s, vocab.end_id()), Error);
}

TEST_CASE("level monotonicity: allowed sets nest") {
  const Vocabulary& vocab = build_vocabulary();
  // walk a valid buck build and compare masks at every step
  std::vector<GrammarState> states = {
      init_state("buck", ConstraintLevel::Grammar, 64),
      init_state("buck", ConstraintLevel::Topology, 64),
      init_state("buck", ConstraintLevel::Full, 64)};
  const TokenSequence seq = fig2_sequence();
  for (size_t i = 10; i + 1 < seq.size(); ++i) {  // component region
    TokenMask mg = mask(states[0], vocab);
    TokenMask mt = mask(states[1], vocab);
    TokenMask mf = mask(states[2], vocab);
    for (int id = 0; id < kVocabSize; ++id) {
      if (mf[id]) CHECK(mt[id]);
      if (mt[id]) CHECK(mg[id]);
    }
    for (auto& s : states) s = advance(s, seq[i]);
  }
}

TEST_CASE("progress: DONE is reachable within 2*M_max+1 steps") {
  const Vocabulary& vocab = build_vocabulary();
  std::mt19937_64 rng(11);
  for (const auto& name : template_names()) {
    for (ConstraintLevel level :
         {ConstraintLevel::Topology, ConstraintLevel::Full}) {
      GrammarState s = init_state(name, level, kDefaultMaxLen);
      int steps = 0;
      while (!s.done()) {
        const TokenMask m = mask(s, vocab);
        REQUIRE(allowed_count(m) >= 1);
        // pick any allowed token
        std::vector<int> allowed;
        for (int id = 0; id < kVocabSize; ++id)
          if (m[id]) allowed.push_back(id);
        s = advance(s, allowed[rng() % allowed.size()]);
        ++steps;
        REQUIRE(steps <= 2 * kMaxSlots + 1);
      }
    }
  }
}

TEST_CASE("tight budgets force termination at grammar level") {
  const Vocabulary& vocab = build_vocabulary();
  GrammarState s = init_state("", ConstraintLevel::Grammar, 6);
  std::mt19937_64 rng(3);
  int steps = 0;
  while (!s.done()) {
    const TokenMask m = mask(s, vocab);
    REQUIRE(allowed_count(m) >= 1);
    std::vector<int> allowed;
    for (int id = 0; id < kVocabSize; ++id)
      if (m[id] && id != vocab.end_id()) allowed.push_back(id);
    // adversarial walker: avoids END unless forced
    const int pick = allowed.empty() ? vocab.end_id()
                                     : allowed[rng() % allowed.size()];
    s = advance(s, pick);
    ++steps;
    REQUIRE(steps <= 6);
  }
  CHECK(steps <= 6);
}

TEST_CASE("masked distribution zeroes masked tokens and sums to one") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(kVocabSize);
    for (auto& z : logits) z = noise(rng);
    TokenMask m(kVocabSize, 0);
    for (int i = 0; i < kVocabSize; ++i) m[i] = rng() % 3 == 0;
    m[17] = 1;  // guarantee one allowed token
    const auto probs = masked_distribution(logits, m, 0.8, 50);
    double sum = 0.0;
    for (int i = 0; i < kVocabSize; ++i) {
      if (!m[i]) CHECK(probs[i] == 0.0);
      sum += probs[i];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("single allowed token is sampled with probability one") {
  std::vector<double> logits(kVocabSize, 0.0);
  TokenMask m(kVocabSize, 0);
  m[42] = 1;
  for (uint64_t seed = 0; seed < 20; ++seed)
    CHECK(masked_sample(logits, m, 0.8, 50, seed) == 42);
}

TEST_CASE("two equal-logit tokens split 50/50 within 3 sigma") {
  std::vector<double> logits(kVocabSize, 0.0);
  TokenMask m(kVocabSize, 0);
  m[10] = m[20] = 1;
  std::mt19937_64 rng(123);
  const int draws = 100000;
  int first = 0;
  for (int i = 0; i < draws; ++i)
    first += masked_sample(logits, m, 1.0, 0, rng) == 10;
  const double sigma = std::sqrt(draws * 0.25);
  CHECK(std::abs(first - draws / 2.0) <= 3.0 * sigma);
}

TEST_CASE("all-masked input raises AllMasked") {
  std::vector<double> logits(kVocabSize, 0.0);
  TokenMask m(kVocabSize, 0);
  CHECK_THROWS_AS(masked_distribution(logits, m, 1.0, 0), Error);
}

TEST_CASE("top-k applies after masking") {
  // the k highest logits are all masked; sampling must still work and
  // stay inside the allowed set
  std::vector<double> logits(kVocabSize, 0.0);
  for (int i = 0; i < 50; ++i) logits[i] = 100.0;  // huge but masked
  TokenMask m(kVocabSize, 0);
  m[100] = m[101] = 1;
  const auto probs = masked_distribution(logits, m, 1.0, 2);
  CHECK(probs[100] == doctest::Approx(0.5));
  CHECK(probs[101] == doctest::Approx(0.5));
}

TEST_CASE("validate_sequence accepts the canonical buck sequence") {
  const ValidityReport r =
      validate_sequence(fig2_sequence(), ConstraintLevel::Topology, "buck");
  CHECK(r.structural);
  CHECK(r.component_correct);
  CHECK(r.values_in_range);
  CHECK(r.first_violation == -1);
  CHECK(r.valid_at(ConstraintLevel::Topology));
  CHECK(r.valid_at(ConstraintLevel::Full));
}

TEST_CASE("validate_sequence flags structural violations with positions") {
  const Vocabulary& vocab = build_vocabulary();
  TokenSequence seq = fig2_sequence();
  seq[11] = *vocab.find("CAPACITOR");
  const ValidityReport r = validate_sequence(seq, ConstraintLevel::Grammar);
  CHECK(!r.structural);
  CHECK(r.first_violation == 11);
}

TEST_CASE("validate_sequence flags wrong component multisets") {
  const Vocabulary& vocab = build_vocabulary();
  TokenSequence seq = fig2_sequence();
  seq[10] = *vocab.find("DIODE");  // buck has no diode slot
  const ValidityReport r =
      validate_sequence(seq, ConstraintLevel::Topology, "buck");
  CHECK(r.structural);
  CHECK(!r.component_correct);
  CHECK(r.first_violation == 10);
}

TEST_CASE("random token streams are essentially never valid") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> any(0, kVocabSize - 1);
  int valid = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    TokenSequence seq(20);
    for (auto& t : seq) t = any(rng);
    valid += validate_sequence(seq, ConstraintLevel::Grammar).structural;
  }
  CHECK(valid <= 2);
}

TEST_CASE("constrained generation output validates at its own level") {
  // random-init desk model; soundness must hold for arbitrary logits
  const ModelParams params = init_model(ModelConfig::desk(), 321);
  for (ConstraintLevel level :
       {ConstraintLevel::Grammar, ConstraintLevel::Topology,
        ConstraintLevel::Full}) {
    SamplingConfig sampling;
    sampling.level = level;
    sampling.seed = 9;
    const auto spec = sample_spec(get_template("boost"), 4);
    const GenerationResult g = generate(params, "boost", spec, sampling);
    const ValidityReport r = validate_sequence(g.tokens, level, "boost");
    CHECK(r.valid_at(level));
  }
}

TEST_SUITE_END();
