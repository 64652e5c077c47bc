#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "mixtraffic/forecast.hpp"
#include "support.hpp"

using namespace mixtraffic;

namespace {

using Idx = Eigen::Index;

double& at(FlowMatrix& x, SegmentIndex e, int f) { return x.values(static_cast<Idx>(e), f); }
double at(const FlowMatrix& x, SegmentIndex e, int f) { return x.values(static_cast<Idx>(e), f); }

/// Zero model with predecessor regressors (plus self when asked).
PropagationModel blank_model(const NetworkGraph& g, bool self = false) {
  PropagationModel m;
  m.graph_hash = g.hash();
  m.include_self = self;
  m.segments.resize(g.size());
  for (SegmentIndex e = 0; e < g.size(); ++e) {
    auto& s = m.segments[e];
    s.regressors = g.predecessors(e);
    if (self) s.regressors.push_back(e);
    for (auto& a : s.alpha) a = Eigen::VectorXd::Zero(static_cast<Idx>(s.regressors.size()));
  }
  return m;
}

/// Chain series with B following A through b = slope * a + c.
FlowSeries chain_series(const NetworkGraph& g, double slope, double c, int length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  const auto a = g.index_of("A"), b = g.index_of("B");
  FlowSeries s;
  for (int t = 0; t < length; ++t) {
    auto x = FlowMatrix::zeros(g.size(), t);
    at(x, a, kVehicleCount) = u(rng);
    at(x, a, kRvRate) = u(rng) / 10.0;
    if (t > 0) {
      at(x, b, kVehicleCount) = slope * at(s.back(), a, kVehicleCount) + c;
      at(x, b, kRvRate) = at(s.back(), a, kRvRate);
    }
    s.push_back(x);
  }
  return s;
}

}  // namespace

TEST_CASE("exact propagation data is recovered") {
  auto g = load_network(fixtures::chain_doc());
  const auto a = g.index_of("A"), b = g.index_of("B");

  auto identity = fit(g, chain_series(g, 1.0, 0.0, 40, 1));
  CHECK(identity.segments[b].alpha[kVehicleCount](0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(identity.segments[b].intercept[kVehicleCount]) < 1e-9);

  const auto series = chain_series(g, 0.5, 3.0, 40, 2);
  auto m = fit(g, series);
  CHECK(std::abs(m.segments[b].alpha[kVehicleCount](0) - 0.5) < 1e-9);
  CHECK(std::abs(m.segments[b].intercept[kVehicleCount] - 3.0) < 1e-9);
  CHECK(std::abs(m.segments[b].alpha[kRvRate](0) - 1.0) < 1e-9);
  CHECK(m.segments[a].regressors.empty());
  CHECK(m.segments[b].alpha[kVehicleCount].size() == 1);

  // Training targets reproduced one step ahead.
  for (std::size_t t = 0; t + 1 < series.size(); ++t) {
    auto next = predict_one(m, g, series[t]);
    CHECK(std::abs(at(next, b, kVehicleCount) - at(series[t + 1], b, kVehicleCount)) < 1e-9);
  }
}

TEST_CASE("fit agrees with the normal-equations oracle") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + trial % 6;
    auto g = load_network(fixtures::fan_in_doc(k));
    std::vector<FlowSeries> runs{fixtures::random_series(g, rng, 50)};
    for (bool self : {false, true}) {
      auto m = fit(g, runs, FitOptions{self});
      CHECK(m.segments[g.index_of("T")].regressors.size() == static_cast<std::size_t>(k + (self ? 1 : 0)));
      CHECK(fixtures::max_oracle_deviation(g, runs, m) < 1e-9);
    }
  }
}

TEST_CASE("fit rejects short or misaligned series") {
  auto g = load_network(fixtures::fan_in_doc(6));
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(fit(g, fixtures::random_series(g, rng, 7)), ForecastError);
  CHECK_NOTHROW(fit(g, fixtures::random_series(g, rng, 8)));
  auto other = load_network(fixtures::chain_doc());
  CHECK_THROWS_AS(fit(other, fixtures::random_series(g, rng, 20)), ForecastError);
}

TEST_CASE("rank-deficient fits take the minimum-norm solution") {
  auto g = load_network(fixtures::fan_in_doc(2));
  FlowSeries s;
  // Both feeders always equal: only alpha_0 + alpha_1 is identified.
  for (int t = 0; t < 30; ++t) {
    auto x = FlowMatrix::zeros(g.size(), t);
    const double v = t % 7;
    at(x, g.index_of("P0"), kVehicleCount) = v;
    at(x, g.index_of("P1"), kVehicleCount) = v;
    if (t > 0) at(x, g.index_of("T"), kVehicleCount) = 2.0 * (s.back().values(static_cast<Idx>(g.index_of("P0")), 0));
    s.push_back(x);
  }
  auto m = fit(g, s);
  const auto& al = m.segments[g.index_of("T")].alpha[kVehicleCount];
  CHECK(al(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(al(1) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("one-step prediction and clamping") {
  auto g = load_network(fixtures::two_road_doc());
  auto m = blank_model(g);
  const auto l1 = g.index_of("L1");
  m.segments[l1].alpha[kRvRate] = Eigen::Vector2d(0.5, 0.5);
  auto x = FlowMatrix::zeros(g.size());
  at(x, g.index_of("F"), kRvRate) = 0.2;
  at(x, g.index_of("H"), kRvRate) = 0.6;
  ClampCounter clamps;
  CHECK(at(predict_one(m, g, x, &clamps), l1, kRvRate) == doctest::Approx(0.4));
  CHECK(clamps.events == 0);

  auto c = load_network(fixtures::chain_doc());
  auto over = blank_model(c);
  over.segments[c.index_of("B")].alpha[kRvRate] = Eigen::VectorXd::Constant(1, 2.0);
  over.segments[c.index_of("B")].intercept[kVehicleCount] = -4.0;
  auto y = FlowMatrix::zeros(c.size());
  at(y, c.index_of("A"), kRvRate) = 0.8;
  auto out = predict_one(over, c, y, &clamps);
  CHECK(at(out, c.index_of("B"), kRvRate) == 1.0);
  CHECK(at(out, c.index_of("B"), kVehicleCount) == 0.0);
  CHECK(clamps.events == 2);

  CHECK_THROWS_AS(predict_one(over, g, x), ForecastError);
  CHECK_THROWS(predict_one(over, c, FlowMatrix::zeros(5)));
}

TEST_CASE("multi-step rollout composes one-step predictions") {
  auto g = load_network(fixtures::chain_doc());
  const auto b = g.index_of("B");
  auto m = blank_model(g, true);
  m.segments[b].alpha[kVehicleCount] = Eigen::Vector2d(0.0, 0.5);
  auto x = FlowMatrix::zeros(g.size());
  at(x, b, kVehicleCount) = 8.0;
  auto seq = predict_multi(m, g, x, 3);
  REQUIRE(seq.size() == 3);
  CHECK(at(seq[0], b, kVehicleCount) == 4.0);
  CHECK(at(seq[1], b, kVehicleCount) == 2.0);
  CHECK(at(seq[2], b, kVehicleCount) == 1.0);

  m.segments[b].intercept[kVehicleCount] = 1.0;
  seq = predict_multi(m, g, x, 3);
  CHECK(at(seq[0], b, kVehicleCount) == 5.0);
  CHECK(at(seq[1], b, kVehicleCount) == 3.5);
  CHECK(at(seq[2], b, kVehicleCount) == 2.75);

  CHECK(predict_multi(m, g, x, 1)[0].values == predict_one(m, g, x).values);
  CHECK_THROWS(predict_multi(m, g, x, 0));
}

TEST_CASE("identity model rolls out a constant sequence") {
  auto g = load_network(fixtures::chain_doc());
  auto m = blank_model(g, true);
  for (auto& s : m.segments) {
    for (auto& a : s.alpha) a(a.size() - 1) = 1.0;
  }
  auto x = FlowMatrix::zeros(g.size());
  x.values << 3, 0.25, 7, 0.75;
  for (const auto& y : predict_multi(m, g, x, 20)) CHECK(y.values == x.values);
}

TEST_CASE("rollout splits compose and saturated rates stay saturated") {
  auto g = load_network(generate_grid(3, 3, 100, 13.89));
  std::mt19937_64 rng(5);
  auto m = fit(g, fixtures::random_series(g, rng, 60), FitOptions{true});
  const auto x = fixtures::random_series(g, rng, 1)[0];
  const auto direct = predict_multi(m, g, x, 7);
  for (int k1 = 1; k1 < 7; ++k1) {
    const auto first = predict_multi(m, g, x, k1);
    const auto second = predict_multi(m, g, first.back(), 7 - k1);
    CHECK(second.back().values == direct.back().values);
  }

  auto pos = blank_model(g, true);
  for (SegmentIndex e = 0; e < g.size(); ++e) {
    auto& a = pos.segments[e].alpha[kRvRate];
    for (Idx i = 0; i < a.size(); ++i) a(i) = 1.1;
  }
  auto ones = FlowMatrix::zeros(g.size());
  ones.values.col(kRvRate).setOnes();
  auto seq = predict_multi(pos, g, ones, 10);
  CHECK(at(seq[0], 0, kRvRate) == 1.0);
  for (std::size_t k = 1; k < seq.size(); ++k) {
    for (SegmentIndex e = 0; e < g.size(); ++e) {
      if (at(seq[k - 1], e, kRvRate) == 1.0) CHECK(at(seq[k], e, kRvRate) == 1.0);
    }
  }
}

TEST_CASE("constant baseline") {
  auto x = FlowMatrix::zeros(3, 4);
  x.values(1, 1) = 0.5;
  auto one = const_baseline(x, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].values == x.values);
  auto many = const_baseline(x, 100);
  CHECK(many.size() == 100);
  for (const auto& y : many) CHECK(y.values == x.values);

  std::vector<double> truth{0.5, 0.6, 0.7}, pred(3, 0.5);
  CHECK(error_metrics(truth, pred).mae > 0.0);
}

TEST_CASE("AR(1) baseline") {
  SUBCASE("constant series") {
    FlowSeries s;
    for (int t = 0; t < 20; ++t) {
      auto x = FlowMatrix::zeros(1, t);
      x.values << 4.0, 0.3;
      s.push_back(x);
    }
    auto ar = ar_baseline_fit({s});
    for (int f = 0; f < kFeatureCount; ++f) {
      CHECK(ar.a[0][f] * s[0].values(0, f) + ar.b[0][f] == doctest::Approx(s[0].values(0, f)).epsilon(1e-12));
    }
    for (const auto& y : ar_baseline_predict(ar, s[0], 50)) {
      CHECK(y.values(0, 0) == doctest::Approx(4.0));
      CHECK(y.values(0, 1) == doctest::Approx(0.3));
    }
  }
  SUBCASE("geometric decay") {
    FlowSeries s;
    for (int t = 0; t < 30; ++t) {
      auto x = FlowMatrix::zeros(1, t);
      x.values << 10.0 * std::pow(0.9, t), std::pow(0.9, t);
      s.push_back(x);
    }
    auto ar = ar_baseline_fit({s});
    CHECK(std::abs(ar.a[0][kVehicleCount] - 0.9) < 1e-9);
    CHECK(std::abs(ar.b[0][kVehicleCount]) < 1e-9);
    CHECK(std::abs(ar.a[0][kRvRate] - 0.9) < 1e-9);
  }
  SUBCASE("scalar closed form on random series") {
    std::mt19937_64 rng(9);
    auto g = load_network(fixtures::chain_doc());
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<FlowSeries> runs{fixtures::random_series(g, rng, 30), fixtures::random_series(g, rng, 25)};
      auto ar = ar_baseline_fit(runs);
      for (SegmentIndex e = 0; e < g.size(); ++e) {
        for (int f = 0; f < kFeatureCount; ++f) {
          double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
          for (const auto& r : runs) {
            for (std::size_t t = 0; t + 1 < r.size(); ++t) {
              const double xv = at(r[t], e, f), yv = at(r[t + 1], e, f);
              n += 1;
              sx += xv;
              sy += yv;
              sxx += xv * xv;
              sxy += xv * yv;
            }
          }
          const double a = (n * sxy - sx * sy) / (n * sxx - sx * sx);
          const double b = (sy - a * sx) / n;
          CHECK(std::abs(ar.a[e][f] - a) < 1e-9);
          CHECK(std::abs(ar.b[e][f] - b) < 1e-9);
        }
      }
    }
  }
  FlowSeries tiny(2, FlowMatrix::zeros(1));
  CHECK_THROWS_AS(ar_baseline_fit({tiny}), ForecastError);
}

TEST_CASE("error metrics") {
  std::vector<double> y{1, 2}, same{1, 2}, off{1, 3};
  auto zero = error_metrics(y, same);
  CHECK(zero.mae == 0.0);
  CHECK(zero.rmse == 0.0);
  CHECK(zero.mape == 0.0);
  auto m = error_metrics(y, off);
  CHECK(m.mae == doctest::Approx(0.5));
  CHECK(m.rmse == doctest::Approx(std::sqrt(0.5)));
  CHECK(m.mape == doctest::Approx(0.25));
  CHECK(m.n == 2);

  std::vector<double> with_zero{0, 2}, guess{1, 2};
  CHECK(error_metrics(with_zero, guess).mape == 0.0);
  CHECK(error_metrics(with_zero, guess).mae == doctest::Approx(0.5));

  std::vector<double> zeros{0, 0}, three{1, 2, 3};
  CHECK_THROWS(error_metrics(zeros, guess));
  CHECK_THROWS(error_metrics(y, three));
  CHECK_THROWS(error_metrics(std::vector<double>{}, std::vector<double>{}));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> t(1 + trial % 9), p(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = u(rng);
      p[i] = u(rng);
    }
    auto e = error_metrics(t, p);
    CHECK(e.rmse >= e.mae);
    CHECK(e.mae >= 0.0);
  }
}

TEST_CASE("model and dataset files round-trip") {
  auto g = load_network(generate_grid(2, 2, 100, 13.89));
  std::mt19937_64 rng(8);
  auto series = fixtures::random_series(g, rng, 40);
  auto m = fit(g, series, FitOptions{true});
  auto back = model_from_json(nlohmann::json::parse(model_to_json(m, g).dump()), g);
  CHECK(back.include_self);
  CHECK(back.series_length == m.series_length);
  const auto x = series[3];
  CHECK((predict_one(back, g, x).values - predict_one(m, g, x).values).cwiseAbs().maxCoeff() < 1e-12);
  auto other = load_network(generate_grid(3, 2, 100, 13.89));
  CHECK_THROWS_AS(model_from_json(model_to_json(m, g), other), ForecastError);

  const auto path = (std::filesystem::temp_directory_path() / "mixtraffic_flow_roundtrip.csv").string();
  write_flow_csv(path, g, series, "seed=8");
  auto read = read_flow_csv(path, g);
  REQUIRE(read.size() == series.size());
  for (std::size_t t = 0; t < series.size(); ++t) {
    CHECK(read[t].tick == series[t].tick);
    CHECK((read[t].values - series[t].values).cwiseAbs().maxCoeff() < 1e-9);
  }
  CHECK_THROWS(read_flow_csv(path, other));
  std::filesystem::remove(path);
}
