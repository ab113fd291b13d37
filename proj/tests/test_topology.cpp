#include <doctest.h>

#include <cmath>
#include <set>

#include "arcs/topology.hpp"

using namespace arcs;

TEST_SUITE_BEGIN("topology");

TEST_CASE("all eight builtin templates load and validate") {
  const auto& names = template_names();
  REQUIRE(names.size() == 8);
  const std::set<std::string> expected = {
      "buck",          "boost",        "buck_boost",
      "inverting_amp", "noninverting_amp", "sallen_key_lowpass",
      "wien_bridge",   "current_mirror"};
  CHECK(std::set<std::string>(names.begin(), names.end()) == expected);

  std::set<Domain> domains;
  for (const auto& name : names) {
    const TopologyTemplate& t = get_template(name);
    domains.insert(t.domain);
    CHECK(t.slot_count() >= 3);
    CHECK(t.slot_count() <= kMaxSlots);
    // adjacency: symmetric, zero diagonal, rows attached
    for (int i = 0; i < t.slot_count(); ++i) {
      CHECK(t.adjacency(i, i) == 0.0);
      CHECK(t.adjacency.row(i).sum() >= 1.0);
      for (int j = 0; j < t.slot_count(); ++j)
        CHECK(t.adjacency(i, j) == t.adjacency(j, i));
    }
    for (const auto& s : t.slots) {
      CHECK(s.lo >= 1e-12);
      CHECK(s.lo < s.hi);
      CHECK(s.hi <= 1e6);
    }
  }
  CHECK(domains.size() == 5);  // all five reward domains covered
}

TEST_CASE("get_template rejects unknown names") {
  CHECK_THROWS_AS(get_template("colpitts"), Error);  // named but not built in
  CHECK_THROWS_AS(get_template("nope"), Error);
}

TEST_CASE("buck template slots match the canonical example") {
  const TopologyTemplate& t = get_template("buck");
  std::multiset<std::string> types;
  for (const auto& s : t.slots) types.insert(s.type);
  CHECK(types == std::multiset<std::string>{"CAPACITOR", "INDUCTOR",
                                            "MOSFET_N", "RESISTOR"});
  CHECK(get_template("current_mirror").domain == Domain::Bias);
}

TEST_CASE("required_components counts slot types") {
  const auto m = required_components(get_template("wien_bridge"));
  CHECK(m.at("RESISTOR") == 4);
  CHECK(m.at("CAPACITOR") == 2);
  CHECK(m.at("OPAMP") == 1);
}

TEST_CASE("rwpe of a triangle matches the closed form") {
  Eigen::MatrixXd tri(3, 3);
  tri << 0, 1, 1, 1, 0, 1, 1, 1, 0;
  const Eigen::MatrixXd probs = rwpe_return_probabilities(tri, 8);
  for (int k = 1; k <= 8; ++k) {
    const double expected = (1.0 + 2.0 * std::pow(-0.5, k)) / 3.0;
    for (int node = 0; node < 3; ++node)
      CHECK(probs(node, k - 1) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("rwpe of a single edge alternates 0,1") {
  Eigen::MatrixXd edge(2, 2);
  edge << 0, 1, 1, 0;
  const Eigen::MatrixXd probs = rwpe_return_probabilities(edge, 8);
  for (int k = 1; k <= 8; ++k)
    for (int node = 0; node < 2; ++node)
      CHECK(probs(node, k - 1) == doctest::Approx(k % 2 == 0 ? 1.0 : 0.0));
}

TEST_CASE("rwpe entries live in [0,1] and start at 0 for every template") {
  for (const auto& name : template_names()) {
    const RwpeFeatures f = compute_rwpe(get_template(name));
    CHECK(f.walk_length() == 8);
    for (int i = 0; i < f.probs.rows(); ++i) {
      CHECK(f.probs(i, 0) == 0.0);  // no self loops
      for (int k = 0; k < f.probs.cols(); ++k) {
        CHECK(f.probs(i, k) >= 0.0);
        CHECK(f.probs(i, k) <= 1.0);
      }
    }
  }
}

TEST_CASE("rwpe rejects disconnected graphs") {
  Eigen::MatrixXd two_islands = Eigen::MatrixXd::Zero(4, 4);
  two_islands(0, 1) = two_islands(1, 0) = 1;
  two_islands(2, 3) = two_islands(3, 2) = 1;
  CHECK_THROWS_AS(rwpe_return_probabilities(two_islands, 8), Error);
}

TEST_CASE("rwpe permutes with graph relabeling") {
  const TopologyTemplate& t = get_template("boost");
  const int n = t.slot_count();
  // reverse-order relabeling
  Eigen::MatrixXd perm = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) perm(i, n - 1 - i) = 1.0;
  const Eigen::MatrixXd relabeled = perm * t.adjacency * perm.transpose();
  const Eigen::MatrixXd a = rwpe_return_probabilities(t.adjacency, 8);
  const Eigen::MatrixXd b = rwpe_return_probabilities(relabeled, 8);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 8; ++k)
      CHECK(a(i, k) == doctest::Approx(b(n - 1 - i, k)).epsilon(1e-12));
}

TEST_CASE("sampled designs are E24-snapped and within bounds") {
  const TopologyTemplate& t = get_template("buck");
  for (uint64_t seed = 0; seed < 300; ++seed) {
    const CircuitDesign d = sample_random_design(t, {}, seed);
    REQUIRE(d.components.size() == t.slots.size());
    for (size_t i = 0; i < d.components.size(); ++i) {
      const double v = d.components[i].second;
      CHECK(is_e24(v));
      CHECK(v >= t.slots[i].lo * (1 - 1e-12));
      CHECK(v <= t.slots[i].hi * (1 + 1e-12));
    }
  }
}

TEST_CASE("sampling is deterministic and log-centered") {
  const TopologyTemplate& t = get_template("buck");
  CHECK(sample_random_design(t, {}, 5).components ==
        sample_random_design(t, {}, 5).components);

  // 1e4 draws of a [1k, 10k] resistor: log-mean within 3 sigma of 3.5
  TopologyTemplate probe = t;
  probe.slots[2].lo = 1e3;  // the esr resistor slot
  probe.slots[2].hi = 1e4;
  double sum = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i)
    sum += std::log10(
        sample_random_design(probe, {}, 1000 + i).components[2].second);
  const double mean = sum / draws;
  const double sigma_mean = (1.0 / std::sqrt(12.0)) / std::sqrt(draws);
  CHECK(std::abs(mean - 3.5) <= 3.0 * sigma_mean);
}

TEST_CASE("degenerate lo==hi slots return the exact bound") {
  TopologyTemplate t = get_template("buck");
  t.slots[0].lo = t.slots[0].hi = 3.14159e-4;  // not an E24 value
  const CircuitDesign d = sample_random_design(t, {}, 1);
  CHECK(d.components[0].second == 3.14159e-4);
}

TEST_CASE("e24 snapping picks the nearest preferred value in log space") {
  // geometric midpoint of 1.0k and 1.1k is ~1048.8
  CHECK(snap_e24(1048.0, 1e2, 1e5) == doctest::Approx(1000.0));
  CHECK(snap_e24(1050.0, 1e2, 1e5) == doctest::Approx(1100.0));
  CHECK(snap_e24(9.6e3, 1e2, 1e5) == doctest::Approx(1e4));
  // bounds confine the choice
  CHECK(snap_e24(9.6e3, 1e2, 9.3e3) == doctest::Approx(9.1e3));
  CHECK(is_e24(2.2e-6));
  CHECK(!is_e24(2.5e-6));
}

TEST_CASE("sample_spec respects declared ranges") {
  const TopologyTemplate& t = get_template("buck");
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const auto spec = sample_spec(t, seed);
    for (const auto& r : t.spec_ranges) {
      REQUIRE(spec.count(r.key) == 1);
      CHECK(spec.at(r.key) >= r.lo);
      CHECK(spec.at(r.key) <= r.hi);
    }
  }
}

TEST_CASE("spec key validation on sampling") {
  const TopologyTemplate& t = get_template("buck");
  CHECK_THROWS_AS(sample_random_design(t, {{"SPEC_GAIN", 5.0}}, 0), Error);
}

TEST_CASE("template files on disk parse identically to the registry") {
  const TopologyTemplate loaded =
      load_template_file(std::string(ARCS_TEMPLATE_DIR) + "/buck.topo");
  const TopologyTemplate& builtin = get_template("buck");
  CHECK(loaded.name == builtin.name);
  CHECK(loaded.slot_count() == builtin.slot_count());
  CHECK(loaded.adjacency == builtin.adjacency);
  CHECK(loaded.netlist_body == builtin.netlist_body);
}

TEST_CASE("parse_template enforces invariants") {
  CHECK_THROWS_AS(parse_template("name buck\ndomain power\n"), Error);
  // disconnected slot graph
  const std::string disconnected =
      "name buck\ndomain power\n"
      "slot A RESISTOR 1 10 a n1\n"
      "slot B RESISTOR 1 10 b n2\n"
      "netlist\nA n1 0 {A}\nB n2 0 {B}\nend\n";
  CHECK_THROWS_AS(parse_template(disconnected), Error);
  // bad bounds
  const std::string bad_bounds =
      "name buck\ndomain power\n"
      "slot A RESISTOR 10 1 a n1\n"
      "slot B RESISTOR 1 10 b n1\n"
      "netlist\nA n1 0 {A}\nB n1 0 {B}\nend\n";
  CHECK_THROWS_AS(parse_template(bad_bounds), Error);
}

TEST_SUITE_END();
