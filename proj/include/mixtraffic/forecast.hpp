#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "mixtraffic/network.hpp"

namespace mixtraffic {

class ForecastError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Feature columns of a flow matrix.
enum Feature : int { kVehicleCount = 0, kRvRate = 1 };
inline constexpr int kFeatureCount = 2;

/// Network state at one tick: one row per segment (graph order), columns
/// [vehicle_count, rv_rate].
struct FlowMatrix {
  Eigen::MatrixXd values;
  std::int64_t tick{0};

  static FlowMatrix zeros(std::size_t segments, std::int64_t tick = 0) {
    return FlowMatrix{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(segments), kFeatureCount), tick};
  }
  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
};

using FlowSeries = std::vector<FlowMatrix>;

struct SegmentModel {
  std::vector<SegmentIndex> regressors;  // predecessors, plus self when enabled
  std::array<Eigen::VectorXd, kFeatureCount> alpha;
  std::array<double, kFeatureCount> intercept{0.0, 0.0};
};

/// Per-segment linear propagation X_{t+1}[e] = sum_p alpha_p X_t[p] + c.
struct PropagationModel {
  std::uint64_t graph_hash{0};
  std::size_t series_length{0};
  bool include_self{false};
  std::vector<SegmentModel> segments;
};

struct FitOptions {
  bool include_self{false};
};

struct ClampCounter {
  std::uint64_t events{0};
};

/// Minimum-norm least-squares solution of A x = b.
Eigen::VectorXd solve_least_squares(const Eigen::MatrixXd& a, const Eigen::VectorXd& b);

PropagationModel fit(const NetworkGraph& graph, const std::vector<FlowSeries>& runs, FitOptions options = {});
PropagationModel fit(const NetworkGraph& graph, const FlowSeries& series, FitOptions options = {});

FlowMatrix predict_one(const PropagationModel& model, const NetworkGraph& graph, const FlowMatrix& x,
                       ClampCounter* clamps = nullptr);
/// Element k is the (k+1)-step-ahead forecast.
std::vector<FlowMatrix> predict_multi(const PropagationModel& model, const NetworkGraph& graph, const FlowMatrix& x,
                                      int horizon, ClampCounter* clamps = nullptr);

std::vector<FlowMatrix> const_baseline(const FlowMatrix& x, int horizon);

/// Scalar AR(1) x_{t+1} = a x_t + b per (segment, feature); graph-blind.
struct ArModel {
  std::vector<std::array<double, kFeatureCount>> a;
  std::vector<std::array<double, kFeatureCount>> b;
};

ArModel ar_baseline_fit(const std::vector<FlowSeries>& runs);
std::vector<FlowMatrix> ar_baseline_predict(const ArModel& model, const FlowMatrix& x, int horizon,
                                            ClampCounter* clamps = nullptr);

struct ErrorMetrics {
  double mae{0.0};
  double rmse{0.0};
  double mape{0.0};
  std::size_t n{0};
};

/// MAE, RMSE and MAPE; MAPE skips entries whose truth is zero.
ErrorMetrics error_metrics(std::span<const double> truth, std::span<const double> prediction);

nlohmann::json model_to_json(const PropagationModel& model, const NetworkGraph& graph);
PropagationModel model_from_json(const nlohmann::json& doc, const NetworkGraph& graph);

void write_flow_csv(const std::string& path, const NetworkGraph& graph, const FlowSeries& series,
                    const std::string& comment = {});
FlowSeries read_flow_csv(const std::string& path, const NetworkGraph& graph);

}  // namespace mixtraffic
