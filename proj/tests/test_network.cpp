#include <random>

#include "doctest.h"
#include "mixtraffic/network.hpp"
#include "support.hpp"

using namespace mixtraffic;
using fixtures::conn;
using fixtures::doc;
using fixtures::seg;

TEST_CASE("chain loads with one adjacency entry") {
  auto g = load_network(fixtures::chain_doc());
  const auto a = g.index_of("A"), b = g.index_of("B");
  CHECK(g.adjacent(a, b));
  CHECK_FALSE(g.adjacent(b, a));
  REQUIRE(predecessors(g, "B").size() == 1);
  CHECK(predecessors(g, "B")[0] == a);
  CHECK(predecessors(g, "A").empty());
  CHECK_THROWS_AS(predecessors(g, "Z"), NetworkError);
}

TEST_CASE("loader errors name the offender") {
  auto expect_error = [](const nlohmann::json& d, const std::string& needle) {
    try {
      load_network(d);
      FAIL("expected NetworkError");
    } catch (const NetworkError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  SUBCASE("u-turn") {
    expect_error(doc({seg("A", "n0", "n1", 10, 10, true), seg("B", "n1", "n0", 10, 10, false, true)},
                     {conn("A", "B")}),
                 "U-turn");
  }
  SUBCASE("dangling reference") {
    expect_error(doc({seg("A", "n0", "n1", 10, 10, true)}, {conn("A", "Q")}), "'Q'");
  }
  SUBCASE("unreachable") {
    expect_error(doc({seg("A", "n0", "n1", 10, 10, true), seg("B", "n1", "n2", 10), seg("C", "n2", "n3", 10),
                      seg("D", "n3", "n2", 10)},
                     {conn("A", "B"), conn("C", "D"), conn("D", "C")}),
                 "C");
  }
  SUBCASE("non-positive length") {
    expect_error(doc({seg("A", "n0", "n1", 0, 10, true)}, nlohmann::json::array()), "A");
  }
  SUBCASE("non-positive speed") {
    expect_error(doc({seg("A", "n0", "n1", 10, -1, true)}, nlohmann::json::array()), "A");
  }
  SUBCASE("unknown version") {
    auto d = fixtures::chain_doc();
    d["format"] = 2;
    CHECK_THROWS_AS(load_network(d), NetworkError);
  }
}

TEST_CASE("2x2 grid") {
  auto d = generate_grid(2, 2, 100, 13.9);
  auto g = load_network(d);
  int internal = 0;
  for (const auto& s : g.segments()) internal += s.id.rfind("in-", 0) != 0 && s.id.rfind("out-", 0) != 0;
  CHECK(internal == 8);
  CHECK(g.size() == 12);
  // Four corners, each joined to two neighbours plus one border stub.
  int three_way = 0;
  for (const auto& x : g.intersections()) three_way += x.geometry == Geometry::ThreeWay;
  CHECK(three_way == 4);
  CHECK_THROWS_AS(generate_grid(1, 5, 100, 13.9), NetworkError);
}

TEST_CASE("4x4 grid interior intersections") {
  auto g = load_network(generate_grid(4, 4, 100, 13.89));
  const std::set<std::string> interior{"r1c1", "r1c2", "r2c1", "r2c2"};
  int seen = 0;
  for (const auto& x : g.intersections()) {
    if (!interior.count(x.node)) continue;
    ++seen;
    CHECK(x.geometry == Geometry::FourWay);
    // Four two-way arms: each approach splits into a left group and a
    // straight/right group.
    CHECK(x.direction_count() == 8);
    CHECK(x.incoming.size() == 4);
    for (std::size_t j = 0; j < x.direction_count(); ++j) CHECK_FALSE(x.conflicts(j, j));
  }
  CHECK(seen == 4);
  CHECK(predecessors(g, "r1c1-r1c2").size() == 3);
  for (auto s : g.spawn_segments()) CHECK(g.predecessors(s).empty());
}

TEST_CASE("grid generator satisfies its own loader") {
  for (int r = 2; r <= 6; ++r) {
    for (int c = 2; c <= 6; ++c) CHECK_NOTHROW(load_network(generate_grid(r, c, 80, 12)));
  }
}

TEST_CASE("predecessor and successor lists agree with adjacency") {
  auto g = load_network(generate_grid(4, 4, 100, 13.89));
  for (SegmentIndex e = 0; e < g.size(); ++e) {
    for (auto p : g.predecessors(e)) {
      CHECK(g.adjacent(p, e));
      const auto& s = g.successors(p);
      CHECK(std::find(s.begin(), s.end(), e) != s.end());
    }
    for (SegmentIndex p = 0; p < g.size(); ++p) {
      const auto& pr = g.predecessors(e);
      CHECK(g.adjacent(p, e) == (std::find(pr.begin(), pr.end(), p) != pr.end()));
    }
  }
}

TEST_CASE("diamond routes") {
  auto g = load_network(fixtures::diamond_doc());
  const auto s = g.index_of("S"), t = g.index_of("T"), b = g.index_of("B"), a = g.index_of("A");
  auto direct = shortest_route(g, s, t);
  CHECK(direct.total_length == doctest::Approx(300.0));
  CHECK(direct.segments == std::vector<SegmentIndex>{s, a, t});

  auto same = shortest_route(g, a, a);
  CHECK(same.segments.size() == 1);
  CHECK(same.total_length == doctest::Approx(200.0));

  auto via = shortest_route_via(g, s, b, t);
  CHECK(via.total_length == doctest::Approx(400.0));
  CHECK(via.segments == std::vector<SegmentIndex>{s, b, g.index_of("C"), t});
  CHECK(route_is_connected(g, via));

  auto on_path = shortest_route_via(g, s, a, t);
  CHECK(on_path == direct);

  CHECK_THROWS_AS(shortest_route(g, t, s), NetworkError);
  CHECK_THROWS_AS(shortest_route_via(g, a, b, t), NetworkError);
}

TEST_CASE("shortest route matches exhaustive enumeration on random graphs") {
  std::mt19937_64 rng(7);
  int compared = 0;
  for (int trial = 0; trial < 300; ++trial) {
    NetworkGraph g;
    try {
      g = load_network(fixtures::random_graph_doc(rng));
    } catch (const NetworkError&) {
      continue;
    }
    for (SegmentIndex a = 0; a < g.size(); ++a) {
      for (SegmentIndex b = 0; b < g.size(); ++b) {
        auto oracle = fixtures::brute_force_shortest(g, a, b);
        if (!oracle) {
          CHECK_THROWS_AS(shortest_route(g, a, b), NetworkError);
          continue;
        }
        auto r = shortest_route(g, a, b);
        std::vector<std::string> names;
        for (auto s : r.segments) names.push_back(g.segment(s).id);
        CHECK(r.total_length == oracle->first);
        CHECK(names == oracle->second);
        ++compared;
        for (SegmentIndex v = 0; v < g.size(); ++v) {
          double via_length = std::numeric_limits<double>::infinity();
          try {
            via_length = shortest_route_via(g, a, v, b).total_length;
          } catch (const NetworkError&) {
          }
          CHECK(via_length >= r.total_length);
        }
      }
    }
  }
  CHECK(compared > 500);
}

TEST_CASE("graph hash is stable under reload") {
  auto d = generate_grid(3, 3, 100, 13.89);
  auto g1 = load_network(d);
  auto g2 = load_network(d.dump());
  CHECK(g1.hash() == g2.hash());
  auto g3 = load_network(generate_grid(3, 3, 101, 13.89));
  CHECK(g1.hash() != g3.hash());
}
