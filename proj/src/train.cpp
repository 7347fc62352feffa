#include "lfednet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace lfednet::train {

namespace {

constexpr double kDivergenceLoss = 1e6;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Matrix gather_columns(const Matrix& m, const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) out.col(static_cast<Eigen::Index>(k - begin)) = m.col(static_cast<Eigen::Index>(order[k]));
  return out;
}

void check_config(const TrainingConfig& c) {
  if (c.pretrain_epochs < 0 || c.n_train < 0) throw DataError("training config: epoch counts must be >= 0");
  if (c.pretrain_batch < 1 || c.task_batch < 1) throw DataError("training config: batch sizes must be >= 1");
  if (!(c.pretrain_lr >= 0.0) || !(c.task_lr >= 0.0)) throw DataError("training config: learning rates must be >= 0");
  if (c.sigma_refresh_epochs < 1) throw DataError("training config: sigma_refresh_epochs must be >= 1");
  if (!(c.max_skip_fraction >= 0.0 && c.max_skip_fraction <= 1.0))
    throw DataError("training config: max_skip_fraction must lie in [0, 1]");
  if (!(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0) || !(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0) ||
      !(c.optimizer.epsilon > 0.0))
    throw DataError("training config: invalid optimizer hyperparameters");
}

}  // namespace

bool optimizer_step(OptimizerState& state, const Vector& grad, Vector& params, double learning_rate,
                    const OptimizerConfig& config) {
  if (grad.size() != params.size())
    throw DataError("optimizer_step: gradient has " + std::to_string(grad.size()) + " entries, parameters " +
                    std::to_string(params.size()));
  if (!grad.allFinite()) return false;
  if (config.kind == OptimizerKind::GradientDescent) {
    params -= learning_rate * grad;
    ++state.steps;
    return true;
  }
  if (state.m.size() != grad.size()) {
    state.m = Vector::Zero(grad.size());
    state.v = Vector::Zero(grad.size());
    state.steps = 0;
  }
  ++state.steps;
  state.m = config.beta1 * state.m + (1.0 - config.beta1) * grad;
  state.v = config.beta2 * state.v + (1.0 - config.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.steps));
  params.array() -= learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + config.epsilon);
  return true;
}

nlohmann::json config_to_json(const TrainingConfig& c) {
  return {
      {"pretrain_epochs", c.pretrain_epochs},
      {"n_train", c.n_train},
      {"pretrain_batch", c.pretrain_batch},
      {"task_batch", c.task_batch},
      {"pretrain_lr", c.pretrain_lr},
      {"task_lr", c.task_lr},
      {"optimizer",
       {{"kind", c.optimizer.kind == OptimizerKind::Adam ? "adam" : "gd"},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.epsilon}}},
      {"seed", c.seed},
      {"include_cost", c.include_cost},
      {"sigma_refresh_epochs", c.sigma_refresh_epochs},
      {"max_skip_fraction", c.max_skip_fraction},
  };
}

TrainingConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("training config must be a JSON object");
  TrainingConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "pretrain_epochs") c.pretrain_epochs = value.get<int>();
      else if (key == "n_train") c.n_train = value.get<int>();
      else if (key == "pretrain_batch") c.pretrain_batch = value.get<int>();
      else if (key == "task_batch") c.task_batch = value.get<int>();
      else if (key == "pretrain_lr") c.pretrain_lr = value.get<double>();
      else if (key == "task_lr") c.task_lr = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "include_cost") c.include_cost = value.get<bool>();
      else if (key == "sigma_refresh_epochs") c.sigma_refresh_epochs = value.get<int>();
      else if (key == "max_skip_fraction") c.max_skip_fraction = value.get<double>();
      else if (key == "optimizer") {
        for (const auto& [okey, ovalue] : value.items()) {
          if (okey == "kind") {
            const auto kind = ovalue.get<std::string>();
            if (kind == "adam") c.optimizer.kind = OptimizerKind::Adam;
            else if (kind == "gd") c.optimizer.kind = OptimizerKind::GradientDescent;
            else throw DataError("training config: unknown optimizer '" + kind + "'");
          } else if (okey == "beta1") c.optimizer.beta1 = ovalue.get<double>();
          else if (okey == "beta2") c.optimizer.beta2 = ovalue.get<double>();
          else if (okey == "epsilon") c.optimizer.epsilon = ovalue.get<double>();
          else throw DataError("training config: unknown optimizer key '" + okey + "'");
        }
      } else if (key.starts_with("_")) {
        // comment keys are ignored
      } else {
        throw DataError("training config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("training config: ") + e.what());
  }
  check_config(c);
  if (c.n_train < 1) throw DataError("training config: n_train must be >= 1");
  if (!(c.pretrain_lr > 0.0) || !(c.task_lr > 0.0)) throw DataError("training config: learning rates must be > 0");
  return c;
}

TrainingConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open training config " + path.string());
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_log(std::ostream& out, const TrainingLog& log, bool include_wall_time) {
  out << kLogHeader << '\n';
  for (const auto& r : log.epochs) {
    out << r.epoch << ',' << format_double(r.pred_loss_train) << ',' << format_double(r.task_loss_train) << ','
        << format_double(r.task_loss_val) << ',' << (include_wall_time ? format_double(r.wall_ms) : "") << ','
        << r.skipped << '\n';
  }
}

void write_log(const std::filesystem::path& path, const TrainingLog& log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_log(out, log);
}

TrainingLog read_log(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kLogHeader) throw DataError("training log: bad header");
  const auto field = [](const std::string& s) {
    return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
  };
  TrainingLog log;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> parts;
    std::stringstream ss(line);
    std::string part;
    while (std::getline(ss, part, ',')) parts.push_back(part);
    if (!line.empty() && line.back() == ',') parts.emplace_back();
    if (parts.size() != 6) throw DataError("training log line " + std::to_string(line_no) + ": expected 6 fields");
    try {
      EpochRecord r;
      r.epoch = std::stoi(parts[0]);
      r.pred_loss_train = field(parts[1]);
      r.task_loss_train = field(parts[2]);
      r.task_loss_val = field(parts[3]);
      r.wall_ms = field(parts[4]);
      r.skipped = std::stoi(parts[5]);
      log.epochs.push_back(r);
    } catch (const std::logic_error&) {
      throw DataError("training log line " + std::to_string(line_no) + ": bad number");
    }
  }
  return log;
}

TrainingLog read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_log(in);
}

PreparedData prepare_dataset(const std::vector<data::HourlyRecord>& records, std::uint64_t split_seed,
                             const data::NormStats* norm) {
  const auto examples = data::build_dataset(records);
  PreparedData out;
  out.split = data::split(examples.size(), split_seed);
  if (norm) {
    out.norm = *norm;
  } else {
    std::vector<data::TrainingExample> train_raw;
    for (auto i : out.split.train) train_raw.push_back(examples[i]);
    out.norm = data::compute_norm_stats(train_raw);
  }
  const auto normalise = [&](const std::vector<std::size_t>& idx) {
    std::vector<data::TrainingExample> v;
    v.reserve(idx.size());
    for (auto i : idx) v.push_back(data::normalize_example(examples[i], out.norm));
    return v;
  };
  out.dataset.train = normalise(out.split.train);
  out.dataset.validation = normalise(out.split.validation);
  out.dataset.test = normalise(out.split.test);
  return out;
}

Matrix stack_features(const std::vector<data::TrainingExample>& examples) {
  if (examples.empty()) return Matrix(data::feature::kDim, 0);
  Matrix x(examples.front().x.size(), static_cast<Eigen::Index>(examples.size()));
  for (std::size_t i = 0; i < examples.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = examples[i].x;
  return x;
}

Matrix stack_targets(const std::vector<data::TrainingExample>& examples) {
  Matrix y(kHoursPerDay, static_cast<Eigen::Index>(examples.size()));
  for (std::size_t i = 0; i < examples.size(); ++i) y.col(static_cast<Eigen::Index>(i)) = examples[i].y;
  return y;
}

double evaluation_loss(const net::NetworkParams& theta, const std::vector<data::TrainingExample>& examples) {
  if (examples.empty()) throw DataError("evaluation_loss: no examples");
  return net::prediction_loss(net::predict(theta, stack_features(examples)), stack_targets(examples));
}

Vector residual_variance(const net::NetworkParams& theta, const std::vector<data::TrainingExample>& examples) {
  const Matrix y = stack_targets(examples);
  return net::estimate_variance(y - net::predict(theta, stack_features(examples)));
}

PretrainResult pretrain(const net::NetworkParams& theta0, const Dataset& dataset, const TrainingConfig& config,
                        const EpochCallback& on_epoch) {
  check_config(config);
  if (dataset.train.empty()) throw DataError("pretrain: empty training split");
  const Matrix x = stack_features(dataset.train);
  const Matrix y = stack_targets(dataset.train);
  const std::size_t n = dataset.train.size();
  const auto batch = static_cast<std::size_t>(config.pretrain_batch);

  PretrainResult out{theta0, Vector(), TrainingLog{}};
  auto& theta = out.theta;
  std::mt19937_64 rng(config.seed);
  OptimizerState opt;
  Vector flat = net::pack(theta);

  for (int epoch = 1; epoch <= config.pretrain_epochs; ++epoch) {
    const auto start = Clock::now();
    const auto order = shuffled(n, rng);
    double loss_sum = 0.0;
    int skipped = 0;
    for (std::size_t b = 0; b < n; b += batch) {
      const std::size_t e = std::min(n, b + batch);
      const Matrix xb = gather_columns(x, order, b, e);
      const Matrix yb = gather_columns(y, order, b, e);
      net::ForwardCache cache;
      const Matrix y_hat = net::forward(theta, xb, net::Mode::Train, &cache);
      const double loss = net::prediction_loss(y_hat, yb);
      if (!std::isfinite(loss) || loss > kDivergenceLoss)
        throw NumericalError("pretraining diverged at epoch " + std::to_string(epoch) + " (batch loss " +
                             format_double(loss) + ")");
      loss_sum += loss * static_cast<double>(e - b);
      const auto grads = net::backward(theta, cache, net::prediction_loss_grad(y_hat, yb));
      if (optimizer_step(opt, net::pack(grads), flat, config.pretrain_lr, config.optimizer))
        net::unpack(flat, theta);
      else
        ++skipped;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.pred_loss_train = loss_sum / static_cast<double>(n);
    rec.task_loss_train = std::numeric_limits<double>::quiet_NaN();
    rec.task_loss_val = std::numeric_limits<double>::quiet_NaN();
    rec.wall_ms = elapsed_ms(start);
    rec.skipped = skipped;
    out.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (dataset.train.size() >= 2) out.sigma2 = residual_variance(theta, dataset.train);
  return out;
}

TaskLossSummary mean_task_loss(const net::NetworkParams& theta, const std::vector<data::TrainingExample>& examples,
                               const taskgrad::TaskContext& ctx, std::vector<std::optional<Vector>>* warm) {
  if (warm && warm->size() != examples.size()) warm->assign(examples.size(), std::nullopt);
  TaskLossSummary s;
  double sum = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto ev = taskgrad::evaluate_task(theta, examples[i], ctx, warm ? (*warm)[i] : std::nullopt);
    if (ev.skipped) {
      ++s.skipped;
      continue;
    }
    if (warm) (*warm)[i] = ev.p_star;
    sum += ev.loss;
    ++used;
  }
  s.mean = used ? sum / used : std::numeric_limits<double>::quiet_NaN();
  return s;
}

TaskTrainResult task_train(const net::NetworkParams& theta_pretrained, const Vector& sigma2, const Dataset& dataset,
                           std::shared_ptr<const sed::DispatchModel> model, const data::NormStats& norm,
                           const TrainingConfig& config, const EpochCallback& on_epoch) {
  check_config(config);
  TaskTrainResult out{theta_pretrained, sigma2, 0, TrainingLog{}};
  if (config.n_train == 0) return out;
  if (dataset.train.empty() || dataset.validation.empty())
    throw DataError("task training needs non-empty training and validation splits");
  if (sigma2.size() != kHoursPerDay) throw DataError("task training: sigma2 must have 24 entries");

  taskgrad::TaskContext ctx{std::move(model), norm, sigma2, config.include_cost, {}};
  net::NetworkParams theta = theta_pretrained;
  std::vector<std::optional<Vector>> warm_train(dataset.train.size());
  std::vector<std::optional<Vector>> warm_val(dataset.validation.size());
  const auto n = dataset.train.size();
  const auto max_skipped = static_cast<double>(n) * config.max_skip_fraction;

  const auto start0 = Clock::now();
  EpochRecord first;
  first.epoch = 0;
  first.pred_loss_train = evaluation_loss(theta, dataset.train);
  const auto train0 = mean_task_loss(theta, dataset.train, ctx, &warm_train);
  const auto val0 = mean_task_loss(theta, dataset.validation, ctx, &warm_val);
  first.task_loss_train = train0.mean;
  first.task_loss_val = val0.mean;
  first.skipped = train0.skipped;
  first.wall_ms = elapsed_ms(start0);
  out.log.epochs.push_back(first);
  if (on_epoch) on_epoch(first);
  double best = val0.mean;

  std::mt19937_64 rng(config.seed);
  OptimizerState opt;
  Vector flat = net::pack(theta);
  const auto batch = static_cast<std::size_t>(config.task_batch);

  for (int epoch = 1; epoch <= config.n_train; ++epoch) {
    const auto start = Clock::now();
    if ((epoch - 1) % config.sigma_refresh_epochs == 0) ctx.sigma2 = residual_variance(theta, dataset.train);
    const auto order = shuffled(n, rng);
    double loss_sum = 0.0;
    int used = 0, skipped = 0;
    for (std::size_t b = 0; b < n; b += batch) {
      const std::size_t e = std::min(n, b + batch);
      Vector grad_sum = Vector::Zero(flat.size());
      int in_batch = 0;
      for (std::size_t k = b; k < e; ++k) {
        const auto idx = order[k];
        const auto tg = taskgrad::task_gradient_theta(dataset.train[idx], theta, ctx, warm_train[idx]);
        if (tg.eval.skipped) {
          ++skipped;
          continue;
        }
        warm_train[idx] = tg.eval.p_star;
        loss_sum += tg.eval.loss;
        ++used;
        grad_sum += net::pack(tg.grad);
        ++in_batch;
      }
      if (skipped > max_skipped)
        throw NumericalError("task training epoch " + std::to_string(epoch) + ": " + std::to_string(skipped) +
                             " of " + std::to_string(n) + " samples failed to dispatch");
      if (in_batch == 0) continue;
      if (optimizer_step(opt, Vector(grad_sum / in_batch), flat, config.task_lr, config.optimizer))
        net::unpack(flat, theta);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.pred_loss_train = evaluation_loss(theta, dataset.train);
    rec.task_loss_train = used ? loss_sum / used : std::numeric_limits<double>::quiet_NaN();
    const auto val = mean_task_loss(theta, dataset.validation, ctx, &warm_val);
    rec.task_loss_val = val.mean;
    rec.skipped = skipped;
    rec.wall_ms = elapsed_ms(start);
    out.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (val.mean < best) {
      best = val.mean;
      out.theta = theta;
      out.sigma2 = ctx.sigma2;
      out.best_epoch = epoch;
    }
  }
  return out;
}

}  // namespace lfednet::train
