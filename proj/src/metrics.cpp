#include "lfednet/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace lfednet::metrics {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (v == 0.0) v = 0.0;  // drop the sign of -0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double mape(const Vector& pred, const Vector& actual) {
  if (pred.size() != actual.size()) throw DataError("mape: series lengths differ");
  if (actual.size() == 0) throw DataError("mape: empty series");
  if ((actual.array() <= 0.0).any()) throw DataError("mape: actual values must be positive");
  return 100.0 * ((pred - actual).cwiseAbs().array() / actual.array()).mean();
}

RealizedCost realized_cost(const DispatchSchedule& p_star, const Vector& y_actual, const grid::SystemConfig& system,
                           bool include_cost) {
  const auto tl = taskgrad::task_loss(p_star, y_actual, system, include_cost);
  RealizedCost c;
  c.total = tl.total;
  c.generation = include_cost ? tl.generation_cost.sum() : 0.0;
  c.shortage = tl.shortage.sum();
  c.excess = tl.excess.sum();
  c.flow = tl.flow_over.sum() + tl.flow_under.sum();
  c.regularizer = tl.regularizer.sum();
  return c;
}

HourlyStats hourly_stats(const Matrix& values) {
  if (values.rows() < 2 || values.cols() == 0) throw DataError("hourly statistics need at least two days");
  HourlyStats s;
  s.mean = values.colwise().mean().transpose();
  const Matrix centred = values.rowwise() - s.mean.transpose();
  s.std = (centred.array().square().colwise().sum() / static_cast<double>(values.rows())).sqrt().transpose();
  return s;
}

std::vector<TradeoffPoint> tradeoff_points(const train::TrainingLog& log) {
  if (log.epochs.empty()) throw DataError("tradeoff: empty training log");
  std::vector<TradeoffPoint> out;
  for (const auto& r : log.epochs)
    if (std::isfinite(r.task_loss_train)) out.push_back({r.epoch, r.task_loss_train, r.pred_loss_train});
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

Matrix stack_rows(const std::vector<DayResult>& days, Vector DayResult::*field) {
  std::vector<const DayResult*> used;
  for (const auto& d : days)
    if (!d.skipped) used.push_back(&d);
  Matrix m(static_cast<Eigen::Index>(used.size()), kHoursPerDay);
  for (std::size_t i = 0; i < used.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = (used[i]->*field).transpose();
  return m;
}

nlohmann::json stats_json(const HourlyStats& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"std", std::vector<double>(s.std.data(), s.std.data() + s.std.size())}};
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DataError("spearman: series lengths differ");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  return pearson(average_ranks(x), average_ranks(y));
}

std::vector<DayResult> evaluate_days(const net::NetworkParams& theta, const Vector& sigma2,
                                     const std::vector<data::TrainingExample>& examples,
                                     std::shared_ptr<const sed::DispatchModel> model, const data::NormStats& norm) {
  taskgrad::TaskContext ctx{model, norm, sigma2, true, {}};
  const auto& sys = model->system;
  std::vector<DayResult> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    DayResult d;
    d.target = ex.target;
    d.actual = data::denormalize_load(ex.y, norm);
    const auto ev = taskgrad::evaluate_task(theta, ex, ctx);
    d.forecast = ev.dist.mu;
    d.skipped = ev.skipped;
    if (!d.skipped) {
      const auto p = unflatten(ev.p_star, sys.horizon, sys.num_generators());
      const auto with_cost = taskgrad::task_loss(p, d.actual, sys, true);
      d.hourly_cost = with_cost.hourly();
      d.hourly_task_loss = with_cost.hourly_penalty() + with_cost.regularizer;
      d.cost = realized_cost(p, d.actual, sys, true);
    }
    out.push_back(std::move(d));
  }
  return out;
}

EvalReport make_report(const std::string& model_name, const std::vector<DayResult>& days, double base_cost_mean,
                       const std::string& percent_base) {
  EvalReport r;
  r.model = model_name;
  double ape_sum = 0.0;
  for (const auto& d : days) {
    if (d.skipped) {
      ++r.skipped_days;
      continue;
    }
    ++r.days;
    ape_sum += mape(d.forecast, d.actual);
    r.realized_cost_total += d.cost.total;
    r.mean_components.total += d.cost.total;
    r.mean_components.generation += d.cost.generation;
    r.mean_components.shortage += d.cost.shortage;
    r.mean_components.excess += d.cost.excess;
    r.mean_components.flow += d.cost.flow;
    r.mean_components.regularizer += d.cost.regularizer;
  }
  if (r.days == 0) throw NumericalError("evaluation: every day failed to dispatch");
  const double n = r.days;
  r.mape_percent = ape_sum / n;
  r.realized_cost_mean = r.realized_cost_total / n;
  for (double* c : {&r.mean_components.total, &r.mean_components.generation, &r.mean_components.shortage,
                    &r.mean_components.excess, &r.mean_components.flow, &r.mean_components.regularizer})
    *c /= n;
  const double base = base_cost_mean > 0.0 ? base_cost_mean : r.realized_cost_mean;
  r.realized_cost_percent = 100.0 * r.realized_cost_mean / base;
  r.percent_base = percent_base;
  if (r.days >= 2) {
    r.hourly_cost = hourly_stats(stack_rows(days, &DayResult::hourly_cost));
    r.hourly_task_loss = hourly_stats(stack_rows(days, &DayResult::hourly_task_loss));
  }
  return r;
}

nlohmann::json report_to_json(const EvalReport& r) {
  const auto& c = r.mean_components;
  return {
      {"model", r.model},
      {"days", r.days},
      {"skipped_days", r.skipped_days},
      {"mape_percent", r.mape_percent},
      {"realized_cost_total", r.realized_cost_total},
      {"realized_cost_mean", r.realized_cost_mean},
      {"realized_cost_percent", r.realized_cost_percent},
      {"percent_base", r.percent_base},
      {"mean_cost_components",
       {{"total", c.total},
        {"generation", c.generation},
        {"shortage", c.shortage},
        {"excess", c.excess},
        {"flow", c.flow},
        {"regularizer", c.regularizer}}},
      {"hourly_cost", stats_json(r.hourly_cost)},
      {"hourly_task_loss", stats_json(r.hourly_task_loss)},
  };
}

Comparison compare(const std::string& name_a, const std::vector<DayResult>& days_a, const std::string& name_b,
                   const std::vector<DayResult>& days_b, int repeats, std::uint64_t seed) {
  if (days_a.size() != days_b.size()) throw DataError("compare: models were evaluated on different days");
  if (repeats < 1) throw DataError("compare: repeats must be >= 1");
  std::vector<DayResult> a, b;
  for (std::size_t i = 0; i < days_a.size(); ++i) {
    if (days_a[i].target != days_b[i].target) throw DataError("compare: models were evaluated on different days");
    if (days_a[i].skipped || days_b[i].skipped) continue;
    a.push_back(days_a[i]);
    b.push_back(days_b[i]);
  }
  if (a.size() < 2) throw NumericalError("compare: fewer than two days dispatched by both models");

  Comparison c;
  c.repeats = repeats;
  c.seed = seed;
  c.a = make_report(name_a, a, 0.0, "mean realized cost of " + name_a);
  c.b = make_report(name_b, b, c.a.realized_cost_mean, "mean realized cost of " + name_a);

  std::mt19937_64 rng(seed);
  const auto n = a.size();
  int better = 0;
  for (int r = 0; r < repeats; ++r) {
    double sum_a = 0.0, sum_b = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = static_cast<std::size_t>(rng() % n);
      sum_a += a[i].cost.total;
      sum_b += b[i].cost.total;
    }
    c.b_percent.push_back(100.0 * sum_b / sum_a);
    if (sum_b < sum_a) ++better;
  }
  const double m = std::accumulate(c.b_percent.begin(), c.b_percent.end(), 0.0) / repeats;
  double ss = 0.0;
  for (double v : c.b_percent) ss += (v - m) * (v - m);
  c.b_percent_mean = m;
  c.b_percent_std = std::sqrt(ss / repeats);
  c.b_better_fraction = static_cast<double>(better) / repeats;
  return c;
}

nlohmann::json comparison_to_json(const Comparison& c) {
  return {
      {"model_a", report_to_json(c.a)},
      {"model_b", report_to_json(c.b)},
      {"resampling",
       {{"repeats", c.repeats},
        {"seed", c.seed},
        {"b_cost_percent_of_a", c.b_percent},
        {"b_cost_percent_mean", c.b_percent_mean},
        {"b_cost_percent_std", c.b_percent_std},
        {"b_better_fraction", c.b_better_fraction}}},
  };
}

void write_hourly_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                      const std::vector<HourlyStats>& stats) {
  if (names.size() != stats.size()) throw DataError("hourly csv: one name per series");
  auto out = open_csv(path);
  out << "hour";
  for (const auto& n : names) out << ',' << n << "_mean," << n << "_std";
  out << '\n';
  for (Eigen::Index t = 0; t < kHoursPerDay; ++t) {
    out << t + 1;
    for (const auto& s : stats) out << ',' << format_number(s.mean[t]) << ',' << format_number(s.std[t]);
    out << '\n';
  }
}

void write_tradeoff_csv(const std::filesystem::path& path, const std::vector<TradeoffPoint>& points) {
  auto out = open_csv(path);
  out << "epoch,task_loss,pred_loss\n";
  for (const auto& p : points) out << p.epoch << ',' << format_number(p.task_loss) << ',' << format_number(p.pred_loss) << '\n';
}

void write_forecast_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                        const std::vector<std::vector<DayResult>>& days) {
  if (names.size() != days.size() || days.empty()) throw DataError("forecast csv: one name per series");
  auto out = open_csv(path);
  out << "day,hour,actual";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < days.front().size(); ++i) {
    bool all = true;
    for (const auto& series : days) all = all && i < series.size() && !series[i].skipped;
    if (!all) continue;
    const auto& first = days.front()[i];
    const std::string date = data::format_timestamp(first.target).substr(0, 10);
    for (Eigen::Index t = 0; t < kHoursPerDay; ++t) {
      out << date << ',' << t + 1 << ',' << format_number(first.actual[t]);
      for (const auto& series : days) out << ',' << format_number(series[i].forecast[t]);
      out << '\n';
    }
  }
}

}  // namespace lfednet::metrics
