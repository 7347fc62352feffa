#ifndef LFEDNET_METRICS_HPP
#define LFEDNET_METRICS_HPP

// Evaluation of a trained forecaster: accuracy (MAPE), realised dispatch cost
// of the schedules it induces, hourly statistics and the tradeoff curve.

#include "lfednet/taskgrad.hpp"
#include "lfednet/train.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace lfednet::metrics {

/// 100 * mean(|pred - actual| / actual). Throws DataError on a size mismatch,
/// empty input or a non-positive actual value.
double mape(const Vector& pred, const Vector& actual);

/// Realised cost of a schedule at the actual load, in $, by component.
struct RealizedCost {
  double total = 0.0;
  double generation = 0.0;
  double shortage = 0.0;
  double excess = 0.0;
  double flow = 0.0;
  double regularizer = 0.0;
};

/// Same arithmetic as taskgrad::task_loss; total is bit-identical to its total.
RealizedCost realized_cost(const DispatchSchedule& p_star, const Vector& y_actual, const grid::SystemConfig& system,
                           bool include_cost = true);

struct HourlyStats {
  Vector mean;
  Vector std;  ///< population form
};

/// Per-column mean and standard deviation of a (days x hours) matrix.
/// Throws DataError with fewer than two days.
HourlyStats hourly_stats(const Matrix& values);

struct TradeoffPoint {
  int epoch = 0;
  double task_loss = 0.0;
  double pred_loss = 0.0;
};

/// (task loss, prediction loss) on the training split for every epoch that
/// measured a task loss, in epoch order. Throws DataError on an empty log.
std::vector<TradeoffPoint> tradeoff_points(const train::TrainingLog& log);

/// Spearman rank correlation with average ranks for ties. NaN when either
/// series is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// One evaluated day.
struct DayResult {
  data::HourStamp target = 0;
  Vector actual;          ///< MW
  Vector forecast;        ///< MW
  Vector hourly_cost;     ///< realised cost per hour, $ (generation cost included)
  Vector hourly_task_loss;  ///< penalties and regulariser per hour, $ (no generation cost)
  RealizedCost cost;
  bool skipped = false;   ///< dispatch failed; excluded from every statistic
};

/// Forecast, dispatch and score every example.
std::vector<DayResult> evaluate_days(const net::NetworkParams& theta, const Vector& sigma2,
                                     const std::vector<data::TrainingExample>& examples,
                                     std::shared_ptr<const sed::DispatchModel> model, const data::NormStats& norm);

struct EvalReport {
  std::string model;
  int days = 0;
  int skipped_days = 0;
  double mape_percent = 0.0;
  double realized_cost_total = 0.0;  ///< sum over days, $
  double realized_cost_mean = 0.0;   ///< per day, $
  double realized_cost_percent = 100.0;
  std::string percent_base;
  RealizedCost mean_components;      ///< per day
  HourlyStats hourly_cost;
  HourlyStats hourly_task_loss;
};

/// Statistics over the non-skipped days. realized_cost_percent is
/// 100 * mean / base_cost_mean; pass base_cost_mean <= 0 to use the report's
/// own mean.
EvalReport make_report(const std::string& model_name, const std::vector<DayResult>& days, double base_cost_mean = 0.0,
                       const std::string& percent_base = "own mean realized cost");

nlohmann::json report_to_json(const EvalReport& report);

/// Bootstrap comparison of two models over the same days: each repeat draws
/// the days with replacement and expresses both mean costs as a percentage
/// of model A's. Days skipped by either model are dropped first.
struct Comparison {
  EvalReport a;
  EvalReport b;
  int repeats = 0;
  std::uint64_t seed = 0;
  std::vector<double> b_percent;  ///< per repeat, model B mean cost as % of model A's
  double b_percent_mean = 0.0;
  double b_percent_std = 0.0;
  double b_better_fraction = 0.0;  ///< repeats where B's mean cost is below A's
};

Comparison compare(const std::string& name_a, const std::vector<DayResult>& days_a, const std::string& name_b,
                   const std::vector<DayResult>& days_b, int repeats, std::uint64_t seed);

nlohmann::json comparison_to_json(const Comparison& c);

// Plot-ready CSV files.

/// hour,<name>_mean,<name>_std,... with hours numbered from 1.
void write_hourly_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                      const std::vector<HourlyStats>& stats);
/// epoch,task_loss,pred_loss
void write_tradeoff_csv(const std::filesystem::path& path, const std::vector<TradeoffPoint>& points);
/// day,hour,actual,<name>,... for days evaluated by every model.
void write_forecast_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                        const std::vector<std::vector<DayResult>>& days);

/// Shortest decimal form that reads back to the same double.
std::string format_number(double v);

}  // namespace lfednet::metrics

#endif  // LFEDNET_METRICS_HPP
