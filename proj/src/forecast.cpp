#include "mixtraffic/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <map>
#include <sstream>

namespace mixtraffic {

namespace {

void check_alignment(const NetworkGraph& graph, const FlowMatrix& x) {
  if (x.rows() != graph.size() || x.values.cols() != kFeatureCount) {
    throw ForecastError("flow matrix shape does not match the graph");
  }
}

double clamp_feature(int f, double v, ClampCounter* clamps) {
  double lo = 0.0;
  double hi = f == kRvRate ? 1.0 : std::numeric_limits<double>::infinity();
  if (v < lo || v > hi) {
    if (clamps) clamps->events += 1;
    return std::clamp(v, lo, hi);
  }
  return v;
}

const char* feature_key(int f) { return f == kVehicleCount ? "vehicle_count" : "rv_rate"; }

}  // namespace

Eigen::VectorXd solve_least_squares(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  return cod.solve(b);
}

PropagationModel fit(const NetworkGraph& graph, const FlowSeries& series, FitOptions options) {
  return fit(graph, std::vector<FlowSeries>{series}, options);
}

PropagationModel fit(const NetworkGraph& graph, const std::vector<FlowSeries>& runs, FitOptions options) {
  std::size_t transitions = 0;
  std::size_t total_len = 0;
  for (const auto& run : runs) {
    for (const auto& x : run) check_alignment(graph, x);
    if (!run.empty()) transitions += run.size() - 1;
    total_len += run.size();
  }

  PropagationModel model;
  model.graph_hash = graph.hash();
  model.series_length = total_len;
  model.include_self = options.include_self;
  model.segments.resize(graph.size());

  for (SegmentIndex e = 0; e < graph.size(); ++e) {
    auto& sm = model.segments[e];
    sm.regressors = graph.predecessors(e);
    if (options.include_self) {
      sm.regressors.push_back(e);
      std::sort(sm.regressors.begin(), sm.regressors.end());
    }
    const auto k = static_cast<Eigen::Index>(sm.regressors.size());
    if (transitions < static_cast<std::size_t>(k) + 1) {
      throw ForecastError("series too short to fit segment " + graph.segment(e).id);
    }
    Eigen::MatrixXd a(static_cast<Eigen::Index>(transitions), k + 1);
    std::array<Eigen::VectorXd, kFeatureCount> targets;
    for (auto& t : targets) t.resize(static_cast<Eigen::Index>(transitions));
    for (int f = 0; f < kFeatureCount; ++f) {
      Eigen::Index row = 0;
      for (const auto& run : runs) {
        for (std::size_t t = 0; t + 1 < run.size(); ++t, ++row) {
          for (Eigen::Index i = 0; i < k; ++i) {
            a(row, i) = run[t].values(static_cast<Eigen::Index>(sm.regressors[static_cast<std::size_t>(i)]), f);
          }
          a(row, k) = 1.0;
          targets[f](row) = run[t + 1].values(static_cast<Eigen::Index>(e), f);
        }
      }
      Eigen::VectorXd sol = solve_least_squares(a, targets[f]);
      sm.alpha[f] = sol.head(k);
      sm.intercept[f] = sol(k);
    }
  }
  return model;
}

FlowMatrix predict_one(const PropagationModel& model, const NetworkGraph& graph, const FlowMatrix& x,
                       ClampCounter* clamps) {
  if (model.graph_hash != graph.hash()) throw ForecastError("model was fitted on a different graph");
  check_alignment(graph, x);
  FlowMatrix out = FlowMatrix::zeros(graph.size(), x.tick + 1);
  for (SegmentIndex e = 0; e < graph.size(); ++e) {
    const auto& sm = model.segments[e];
    for (int f = 0; f < kFeatureCount; ++f) {
      double v = sm.intercept[f];
      for (std::size_t i = 0; i < sm.regressors.size(); ++i) {
        v += sm.alpha[f](static_cast<Eigen::Index>(i)) * x.values(static_cast<Eigen::Index>(sm.regressors[i]), f);
      }
      out.values(static_cast<Eigen::Index>(e), f) = clamp_feature(f, v, clamps);
    }
  }
  return out;
}

std::vector<FlowMatrix> predict_multi(const PropagationModel& model, const NetworkGraph& graph, const FlowMatrix& x,
                                      int horizon, ClampCounter* clamps) {
  if (horizon < 1) throw ForecastError("horizon must be at least 1");
  std::vector<FlowMatrix> out;
  out.reserve(static_cast<std::size_t>(horizon));
  const FlowMatrix* cur = &x;
  for (int k = 0; k < horizon; ++k) {
    out.push_back(predict_one(model, graph, *cur, clamps));
    cur = &out.back();
  }
  return out;
}

std::vector<FlowMatrix> const_baseline(const FlowMatrix& x, int horizon) {
  if (horizon < 1) throw ForecastError("horizon must be at least 1");
  std::vector<FlowMatrix> out;
  for (int k = 1; k <= horizon; ++k) out.push_back(FlowMatrix{x.values, x.tick + k});
  return out;
}

ArModel ar_baseline_fit(const std::vector<FlowSeries>& runs) {
  std::size_t transitions = 0;
  std::size_t rows = 0;
  for (const auto& run : runs) {
    if (!run.empty()) {
      transitions += run.size() - 1;
      rows = run.front().rows();
    }
  }
  if (transitions < 2) throw ForecastError("series too short for AR(1)");
  ArModel m;
  m.a.resize(rows);
  m.b.resize(rows);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(transitions), 2);
  Eigen::VectorXd y(static_cast<Eigen::Index>(transitions));
  for (std::size_t e = 0; e < rows; ++e) {
    for (int f = 0; f < kFeatureCount; ++f) {
      Eigen::Index row = 0;
      for (const auto& run : runs) {
        for (std::size_t t = 0; t + 1 < run.size(); ++t, ++row) {
          a(row, 0) = run[t].values(static_cast<Eigen::Index>(e), f);
          a(row, 1) = 1.0;
          y(row) = run[t + 1].values(static_cast<Eigen::Index>(e), f);
        }
      }
      Eigen::VectorXd sol = solve_least_squares(a, y);
      m.a[e][f] = sol(0);
      m.b[e][f] = sol(1);
    }
  }
  return m;
}

std::vector<FlowMatrix> ar_baseline_predict(const ArModel& model, const FlowMatrix& x, int horizon,
                                            ClampCounter* clamps) {
  if (horizon < 1) throw ForecastError("horizon must be at least 1");
  if (x.rows() != model.a.size()) throw ForecastError("flow matrix shape does not match the AR model");
  std::vector<FlowMatrix> out;
  FlowMatrix cur = x;
  for (int k = 0; k < horizon; ++k) {
    FlowMatrix next = FlowMatrix::zeros(cur.rows(), cur.tick + 1);
    for (std::size_t e = 0; e < cur.rows(); ++e) {
      for (int f = 0; f < kFeatureCount; ++f) {
        const auto r = static_cast<Eigen::Index>(e);
        next.values(r, f) = clamp_feature(f, model.a[e][f] * cur.values(r, f) + model.b[e][f], clamps);
      }
    }
    out.push_back(next);
    cur = std::move(next);
  }
  return out;
}

ErrorMetrics error_metrics(std::span<const double> truth, std::span<const double> prediction) {
  if (truth.size() != prediction.size()) throw ForecastError("truth and prediction lengths differ");
  if (truth.empty()) throw ForecastError("no values to evaluate");
  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
  std::size_t pct_n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = truth[i] - prediction[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
    if (truth[i] != 0.0) {
      pct_sum += std::abs(d / truth[i]);
      pct_n += 1;
    }
  }
  if (pct_n == 0) throw ForecastError("MAPE undefined: every truth value is zero");
  ErrorMetrics m;
  m.n = truth.size();
  m.mae = abs_sum / static_cast<double>(m.n);
  m.rmse = std::sqrt(sq_sum / static_cast<double>(m.n));
  m.mape = pct_sum / static_cast<double>(pct_n);
  // RMSE >= MAE by Cauchy-Schwarz; equality case can round either way.
  if (m.rmse < m.mae) m.rmse = m.mae;
  return m;
}

nlohmann::json model_to_json(const PropagationModel& model, const NetworkGraph& graph) {
  nlohmann::json doc;
  doc["format"] = 1;
  doc["graph_hash"] = hex64(model.graph_hash);
  doc["series_length"] = model.series_length;
  doc["include_self"] = model.include_self;
  doc["segments"] = nlohmann::json::array();
  for (SegmentIndex e = 0; e < model.segments.size(); ++e) {
    const auto& sm = model.segments[e];
    nlohmann::json js;
    js["id"] = graph.segment(e).id;
    js["regressors"] = nlohmann::json::array();
    for (auto p : sm.regressors) js["regressors"].push_back(graph.segment(p).id);
    for (int f = 0; f < kFeatureCount; ++f) {
      std::vector<double> alpha(sm.alpha[f].data(), sm.alpha[f].data() + sm.alpha[f].size());
      js[feature_key(f)] = {{"alpha", alpha}, {"intercept", sm.intercept[f]}};
    }
    doc["segments"].push_back(js);
  }
  return doc;
}

PropagationModel model_from_json(const nlohmann::json& doc, const NetworkGraph& graph) {
  if (doc.value("format", 0) != 1) throw ForecastError("unsupported model format");
  PropagationModel m;
  m.graph_hash = std::stoull(doc.at("graph_hash").get<std::string>(), nullptr, 16);
  if (m.graph_hash != graph.hash()) throw ForecastError("model was fitted on a different graph");
  m.series_length = doc.at("series_length").get<std::size_t>();
  m.include_self = doc.at("include_self").get<bool>();
  m.segments.resize(graph.size());
  for (const auto& js : doc.at("segments")) {
    const auto e = graph.index_of(js.at("id").get<std::string>());
    auto& sm = m.segments[e];
    for (const auto& r : js.at("regressors")) sm.regressors.push_back(graph.index_of(r.get<std::string>()));
    for (int f = 0; f < kFeatureCount; ++f) {
      const auto& jf = js.at(feature_key(f));
      auto alpha = jf.at("alpha").get<std::vector<double>>();
      if (alpha.size() != sm.regressors.size()) throw ForecastError("coefficient count mismatch");
      sm.alpha[f] = Eigen::Map<Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
      sm.intercept[f] = jf.at("intercept").get<double>();
    }
  }
  return m;
}

void write_flow_csv(const std::string& path, const NetworkGraph& graph, const FlowSeries& series,
                    const std::string& comment) {
  std::ofstream out(path);
  if (!out) throw ForecastError("cannot write " + path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "tick,segment_id,vehicle_count,rv_rate\n";
  out.precision(10);
  for (const auto& x : series) {
    for (SegmentIndex e = 0; e < graph.size(); ++e) {
      const auto r = static_cast<Eigen::Index>(e);
      out << x.tick << ',' << graph.segment(e).id << ',' << x.values(r, kVehicleCount) << ','
          << x.values(r, kRvRate) << '\n';
    }
  }
}

FlowSeries read_flow_csv(const std::string& path, const NetworkGraph& graph) {
  std::ifstream in(path);
  if (!in) throw ForecastError("cannot read " + path);
  std::map<std::int64_t, FlowMatrix> by_tick;
  std::map<std::int64_t, std::size_t> filled;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "tick,segment_id,vehicle_count,rv_rate") throw ForecastError(path + ": unexpected header");
      header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string tick_s, seg, count_s, rate_s;
    std::getline(ss, tick_s, ',');
    std::getline(ss, seg, ',');
    std::getline(ss, count_s, ',');
    std::getline(ss, rate_s, ',');
    const auto tick = std::stoll(tick_s);
    const auto e = graph.find(seg);
    if (!e) throw ForecastError(path + ": segment '" + seg + "' not in graph");
    auto it = by_tick.find(tick);
    if (it == by_tick.end()) it = by_tick.emplace(tick, FlowMatrix::zeros(graph.size(), tick)).first;
    it->second.values(static_cast<Eigen::Index>(*e), kVehicleCount) = std::stod(count_s);
    it->second.values(static_cast<Eigen::Index>(*e), kRvRate) = std::stod(rate_s);
    filled[tick] += 1;
  }
  FlowSeries out;
  for (auto& [tick, x] : by_tick) {
    if (filled[tick] != graph.size()) throw ForecastError(path + ": tick " + std::to_string(tick) + " incomplete");
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace mixtraffic
