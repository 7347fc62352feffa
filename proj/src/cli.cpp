#include "lfednet/cli.hpp"

#include "lfednet/grid.hpp"
#include "lfednet/metrics.hpp"
#include "lfednet/model_io.hpp"
#include "lfednet/solver.hpp"
#include "lfednet/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace lfednet::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Record of one invocation, written next to the primary output.
struct Manifest {
  std::string command;
  std::vector<std::string> args;
  std::optional<std::uint64_t> seed;
  std::vector<std::pair<std::string, std::string>> configs;
  std::vector<std::pair<std::string, std::string>> inputs;
  std::vector<std::pair<std::string, std::string>> outputs;

  void write(const fs::path& path, double wall_s) const {
    const auto pairs = [](const auto& v) {
      nlohmann::json j = nlohmann::json::object();
      for (const auto& [k, p] : v) j[k] = p;
      return j;
    };
    nlohmann::json j = {
        {"command", command},
        {"args", args},
        {"tool_version", kToolVersion},
        {"seed", seed ? nlohmann::json(*seed) : nlohmann::json(nullptr)},
        {"configs", pairs(configs)},
        {"inputs", pairs(inputs)},
        {"outputs", pairs(outputs)},
        {"wall_time_s", wall_s},
    };
    model_io::write_atomically(path, j.dump(2) + "\n");
  }
};

fs::path sibling(const fs::path& path, const std::string& suffix) {
  auto p = path;
  p.replace_extension();
  p += suffix;
  return p;
}

fs::path manifest_path(const fs::path& primary) {
  auto p = primary;
  p += ".manifest.json";
  return p;
}

void check_distinct(const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  for (const auto& o : outputs)
    for (const auto& i : inputs)
      if (fs::weakly_canonical(o) == fs::weakly_canonical(i))
        throw UsageError("output " + o.string() + " would overwrite input " + i.string());
}

void write_text(const fs::path& path, const std::string& text) { model_io::write_atomically(path, text); }

std::string number(double v) { return metrics::format_number(v); }

struct Options {
  std::uint64_t seed = 1;
  int years = 5;
  int repeats = 100;
  std::string data, system, train_config, in_model, out_model, out, out_log, out_forecast, date, model, model_a,
      model_b, out_report, name_a = "lfednet", name_b = "lfnet", split = "test";
  bool seed_given = false;
};

train::TrainingConfig config_with_seed(const Options& o) {
  auto cfg = train::load_config(o.train_config);
  if (o.seed_given) cfg.seed = o.seed;
  return cfg;
}

std::vector<data::TrainingExample> pick_split(const train::PreparedData& prepared, const std::string& which) {
  if (which == "test") return prepared.dataset.test;
  if (which == "validation") return prepared.dataset.validation;
  if (which == "train") return prepared.dataset.train;
  throw UsageError("--split must be train, validation or test");
}

/// Examples of `records` normalised with the model's statistics.
train::PreparedData prepare_for_model(const std::vector<data::HourlyRecord>& records, const model_io::ModelFile& m) {
  return train::prepare_dataset(records, m.split_seed, &m.norm);
}

void progress(std::ostream& out, const std::string& phase, const train::EpochRecord& r, int total) {
  const int every = std::max(1, total / 10);
  if (r.epoch % every != 0 && r.epoch != total) return;
  out << phase << " epoch " << r.epoch << "/" << total << " pred_loss " << r.pred_loss_train;
  if (std::isfinite(r.task_loss_val)) out << " task_loss_train " << r.task_loss_train << " task_loss_val " << r.task_loss_val;
  out << '\n' << std::flush;
}

void cmd_gen_data(const Options& o, Manifest& man, std::ostream& out) {
  if (o.years < 1) throw UsageError("--years must be at least 1");
  const auto records = data::synth_generate(o.seed, o.years);
  std::ostringstream text;
  data::write_csv(text, records);
  write_text(o.out, text.str());
  man.outputs.emplace_back("data", o.out);
  out << "wrote " << records.size() << " hourly records to " << o.out << '\n';
}

void cmd_pretrain(const Options& o, Manifest& man, std::ostream& out) {
  const auto cfg = config_with_seed(o);
  man.seed = cfg.seed;
  grid::load_system(o.system);  // validated so that a broken system fails before training
  const auto records = data::load_csv(o.data);
  const auto prepared = train::prepare_dataset(records, cfg.seed);
  const auto theta0 = net::init_params(data::feature::kDim, cfg.seed);
  const auto res = train::pretrain(theta0, prepared.dataset, cfg,
                                   [&](const train::EpochRecord& r) { progress(out, "pretrain", r, cfg.pretrain_epochs); });
  model_io::ModelFile m{"pretrained", res.theta, res.sigma2, prepared.norm, cfg.seed, cfg, cfg.pretrain_epochs, res.log};
  model_io::save(o.out_model, m);
  const fs::path log_path = o.out_log.empty() ? sibling(o.out_model, ".log.csv") : fs::path(o.out_log);
  std::ostringstream log;
  train::write_log(log, res.log);
  write_text(log_path, log.str());
  man.outputs.emplace_back("model", o.out_model);
  man.outputs.emplace_back("log", log_path.string());
  out << "validation prediction loss " << number(train::evaluation_loss(res.theta, prepared.dataset.validation)) << '\n';
}

void cmd_train(const Options& o, Manifest& man, std::ostream& out) {
  const auto cfg = config_with_seed(o);
  man.seed = cfg.seed;
  const auto model = sed::make_dispatch_model(grid::load_system(o.system));
  const auto records = data::load_csv(o.data);
  const auto pre = model_io::load(o.in_model);
  const auto prepared = prepare_for_model(records, pre);
  const auto res = train::task_train(pre.theta, pre.sigma2, prepared.dataset, model, prepared.norm, cfg,
                                     [&](const train::EpochRecord& r) { progress(out, "task", r, cfg.n_train); });
  model_io::ModelFile m{"task-trained", res.theta, res.sigma2, prepared.norm, pre.split_seed, cfg, res.best_epoch, res.log};
  model_io::save(o.out_model, m);
  const fs::path log_path = o.out_log.empty() ? sibling(o.out_model, ".log.csv") : fs::path(o.out_log);
  std::ostringstream log;
  train::write_log(log, res.log);
  write_text(log_path, log.str());
  man.outputs.emplace_back("model", o.out_model);
  man.outputs.emplace_back("log", log_path.string());
  out << "best epoch " << res.best_epoch << '\n';
}

void cmd_dispatch(const Options& o, Manifest& man, std::ostream& out) {
  const auto model = sed::make_dispatch_model(grid::load_system(o.system));
  const auto m = model_io::load(o.model);
  const auto records = data::load_csv(o.data);
  const auto start = data::find_hour(records, data::parse_timestamp(o.date + "T00:00"));
  const auto ex = data::normalize_example(data::build_features(records, start), m.norm);
  taskgrad::TaskContext ctx{model, m.norm, m.sigma2, m.config.include_cost, {}};
  const auto dist = taskgrad::forecast_distribution(m.theta, ex, ctx);
  const auto res = solver::solve_sed(sed::make_problem(model, dist));
  if (!res.converged) throw NumericalError("dispatch for " + o.date + " did not converge");

  const auto& sys = model->system;
  std::ostringstream sched;
  sched << "hour,gen_id,mw\n";
  for (Eigen::Index t = 0; t < sys.horizon; ++t)
    for (Eigen::Index g = 0; g < sys.num_generators(); ++g)
      sched << t + 1 << ',' << sys.generators[static_cast<std::size_t>(g)].id << ',' << number(res.p_star(t, g)) << '\n';
  write_text(o.out, sched.str());

  const fs::path fc_path = o.out_forecast.empty() ? sibling(o.out, ".forecast.csv") : fs::path(o.out_forecast);
  std::ostringstream fc;
  fc << "hour,mu_mw,sigma2\n";
  for (Eigen::Index t = 0; t < sys.horizon; ++t) fc << t + 1 << ',' << number(dist.mu[t]) << ',' << number(dist.sigma2[t]) << '\n';
  write_text(fc_path, fc.str());
  man.outputs.emplace_back("schedule", o.out);
  man.outputs.emplace_back("forecast", fc_path.string());
  out << "dispatched " << o.date << " in " << res.outer_iterations << " SQP iterations\n";
}

void write_report_csvs(const fs::path& dir, const std::vector<std::string>& names,
                       const std::vector<const metrics::EvalReport*>& reports,
                       const std::vector<std::vector<metrics::DayResult>>& days, Manifest& man) {
  std::vector<metrics::HourlyStats> cost, task;
  for (const auto* r : reports) {
    cost.push_back(r->hourly_cost);
    task.push_back(r->hourly_task_loss);
  }
  const auto put = [&](const std::string& key, const fs::path& p) { man.outputs.emplace_back(key, p.string()); };
  metrics::write_hourly_csv(dir / "hourly_cost.csv", names, cost);
  put("hourly_cost", dir / "hourly_cost.csv");
  metrics::write_hourly_csv(dir / "hourly_taskloss.csv", names, task);
  put("hourly_taskloss", dir / "hourly_taskloss.csv");
  metrics::write_forecast_csv(dir / "forecast_vs_actual.csv", names, days);
  put("forecast_vs_actual", dir / "forecast_vs_actual.csv");
}

void cmd_evaluate(const Options& o, Manifest& man, std::ostream& out) {
  const auto model = sed::make_dispatch_model(grid::load_system(o.system));
  const auto m = model_io::load(o.model);
  const auto prepared = prepare_for_model(data::load_csv(o.data), m);
  const auto days = metrics::evaluate_days(m.theta, m.sigma2, pick_split(prepared, o.split), model, m.norm);
  const auto report = metrics::make_report(m.kind, days);
  auto j = metrics::report_to_json(report);
  j["split"] = o.split;
  write_text(o.out_report, j.dump(2) + "\n");
  man.outputs.emplace_back("report", o.out_report);

  const fs::path dir = fs::path(o.out_report).parent_path().empty() ? fs::path(".") : fs::path(o.out_report).parent_path();
  write_report_csvs(dir, {"forecast"}, {&report}, {days}, man);
  const auto points = m.log.epochs.empty() ? std::vector<metrics::TradeoffPoint>{} : metrics::tradeoff_points(m.log);
  if (!points.empty()) {
    metrics::write_tradeoff_csv(dir / "tradeoff.csv", points);
    man.outputs.emplace_back("tradeoff", (dir / "tradeoff.csv").string());
  }
  out << "MAPE " << number(report.mape_percent) << "%  mean realized cost $" << number(report.realized_cost_mean)
      << " over " << report.days << " days\n";
}

void cmd_compare(const Options& o, Manifest& man, std::ostream& out) {
  man.seed = o.seed;
  const auto model = sed::make_dispatch_model(grid::load_system(o.system));
  const auto records = data::load_csv(o.data);
  const auto ma = model_io::load(o.model_a);
  const auto mb = model_io::load(o.model_b);
  const auto pa = prepare_for_model(records, ma);
  const auto pb = prepare_for_model(records, mb);
  const auto days_a = metrics::evaluate_days(ma.theta, ma.sigma2, pick_split(pa, o.split), model, ma.norm);
  const auto days_b = metrics::evaluate_days(mb.theta, mb.sigma2, pick_split(pb, o.split), model, mb.norm);
  const auto cmp = metrics::compare(o.name_a, days_a, o.name_b, days_b, o.repeats, o.seed);
  auto j = metrics::comparison_to_json(cmp);
  j["split"] = o.split;
  write_text(o.out_report, j.dump(2) + "\n");
  man.outputs.emplace_back("report", o.out_report);
  const fs::path dir = fs::path(o.out_report).parent_path().empty() ? fs::path(".") : fs::path(o.out_report).parent_path();
  write_report_csvs(dir, {o.name_a, o.name_b}, {&cmp.a, &cmp.b}, {days_a, days_b}, man);
  out << o.name_a << ": cost 100%  MAPE " << number(cmp.a.mape_percent) << "%\n"
      << o.name_b << ": cost " << number(cmp.b.realized_cost_percent) << "%  MAPE " << number(cmp.b.mape_percent)
      << "%  (resampled " << number(cmp.b_percent_mean) << " +/- " << number(cmp.b_percent_std) << ")\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Task-based day-ahead load forecasting with a stochastic economic dispatch layer", "lfednet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Options o;

  const auto seed_opt = [&](CLI::App* sub, const std::string& help) {
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& s) {
          o.seed = s;
          o.seed_given = true;
        },
        help);
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic hourly load and weather series");
  seed_opt(gen, "Random seed (default 1)");
  gen->add_option("--years", o.years, "Calendar years to generate")->capture_default_str();
  gen->add_option("--out", o.out, "Output CSV")->required();

  auto* pre = app.add_subcommand("pretrain", "Train the forecaster on prediction loss");
  pre->add_option("--data", o.data, "Hourly data CSV")->required()->check(CLI::ExistingFile);
  pre->add_option("--system", o.system, "System JSON")->required()->check(CLI::ExistingFile);
  pre->add_option("--train-config", o.train_config, "Training config JSON")->required()->check(CLI::ExistingFile);
  pre->add_option("--out-model", o.out_model, "Output model JSON")->required();
  pre->add_option("--out-log", o.out_log, "Training log CSV (default <model>.log.csv)");
  seed_opt(pre, "Overrides the config seed; also seeds the split and initialisation");

  auto* trn = app.add_subcommand("train", "Continue training a pretrained model on task loss");
  trn->add_option("--data", o.data, "Hourly data CSV")->required()->check(CLI::ExistingFile);
  trn->add_option("--system", o.system, "System JSON")->required()->check(CLI::ExistingFile);
  trn->add_option("--train-config", o.train_config, "Training config JSON")->required()->check(CLI::ExistingFile);
  trn->add_option("--in-model", o.in_model, "Pretrained model JSON")->required()->check(CLI::ExistingFile);
  trn->add_option("--out-model", o.out_model, "Output model JSON")->required();
  trn->add_option("--out-log", o.out_log, "Training log CSV (default <model>.log.csv)");
  seed_opt(trn, "Overrides the config seed (minibatch order)");

  auto* dsp = app.add_subcommand("dispatch", "Forecast one day and solve its dispatch");
  dsp->add_option("--system", o.system, "System JSON")->required()->check(CLI::ExistingFile);
  dsp->add_option("--model", o.model, "Model JSON")->required()->check(CLI::ExistingFile);
  dsp->add_option("--data", o.data, "Hourly data CSV holding the day and the week before it")
      ->required()
      ->check(CLI::ExistingFile);
  dsp->add_option("--date", o.date, "Target day, YYYY-MM-DD")->required();
  dsp->add_option("--out", o.out, "Schedule CSV (hour,gen_id,mw)")->required();
  dsp->add_option("--out-forecast", o.out_forecast, "Forecast CSV (default <out>.forecast.csv)");

  auto* evl = app.add_subcommand("evaluate", "Score a model on realized dispatch cost and MAPE");
  evl->add_option("--data", o.data, "Hourly data CSV")->required()->check(CLI::ExistingFile);
  evl->add_option("--system", o.system, "System JSON")->required()->check(CLI::ExistingFile);
  evl->add_option("--model", o.model, "Model JSON")->required()->check(CLI::ExistingFile);
  evl->add_option("--out-report", o.out_report, "Report JSON; CSVs go to the same directory")->required();
  evl->add_option("--split", o.split, "train, validation or test")->capture_default_str();

  auto* cmp = app.add_subcommand("compare", "Compare two models with bootstrap resampling of days");
  cmp->add_option("--data", o.data, "Hourly data CSV")->required()->check(CLI::ExistingFile);
  cmp->add_option("--system", o.system, "System JSON")->required()->check(CLI::ExistingFile);
  cmp->add_option("--model-a", o.model_a, "Base model (100%)")->required()->check(CLI::ExistingFile);
  cmp->add_option("--model-b", o.model_b, "Second model")->required()->check(CLI::ExistingFile);
  cmp->add_option("--repeats", o.repeats, "Bootstrap repeats")->capture_default_str();
  cmp->add_option("--out-report", o.out_report, "Report JSON; CSVs go to the same directory")->required();
  cmp->add_option("--name-a", o.name_a, "Label of model A")->capture_default_str();
  cmp->add_option("--name-b", o.name_b, "Label of model B")->capture_default_str();
  cmp->add_option("--split", o.split, "train, validation or test")->capture_default_str();
  seed_opt(cmp, "Resampling seed (default 1)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kUsage;
  }

  const auto started = std::chrono::steady_clock::now();
  auto* sub = app.get_subcommands().front();
  Manifest man;
  man.command = sub->get_name();
  man.args = args;
  try {
    std::vector<fs::path> inputs, outputs;
    const auto in = [&](const std::string& key, const std::string& p) {
      if (p.empty()) return;
      man.inputs.emplace_back(key, p);
      inputs.emplace_back(p);
    };
    in("data", o.data);
    in("system", o.system);
    in("model", o.model);
    in("in_model", o.in_model);
    in("model_a", o.model_a);
    in("model_b", o.model_b);
    if (!o.train_config.empty()) man.configs.emplace_back("train_config", o.train_config);
    if (!o.train_config.empty()) inputs.emplace_back(o.train_config);
    for (const auto* p : {&o.out, &o.out_model, &o.out_log, &o.out_forecast, &o.out_report})
      if (!p->empty()) outputs.emplace_back(*p);
    check_distinct(inputs, outputs);
    for (const auto& p : outputs)
      if (p.has_parent_path()) fs::create_directories(p.parent_path());

    fs::path primary;
    if (man.command == "gen-data") {
      man.seed = o.seed;
      cmd_gen_data(o, man, out);
      primary = o.out;
    } else if (man.command == "pretrain") {
      cmd_pretrain(o, man, out);
      primary = o.out_model;
    } else if (man.command == "train") {
      cmd_train(o, man, out);
      primary = o.out_model;
    } else if (man.command == "dispatch") {
      cmd_dispatch(o, man, out);
      primary = o.out;
    } else if (man.command == "evaluate") {
      cmd_evaluate(o, man, out);
      primary = o.out_report;
    } else {
      cmd_compare(o, man, out);
      primary = o.out_report;
    }
    man.write(manifest_path(primary), std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
    return kOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataFailure;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataFailure;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return kNumericalFailure;
  }
}

}  // namespace lfednet::cli
