#ifndef LFEDNET_TRAIN_HPP
#define LFEDNET_TRAIN_HPP

#include "lfednet/data.hpp"
#include "lfednet/net.hpp"
#include "lfednet/taskgrad.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

namespace lfednet::train {

enum class OptimizerKind { Adam, GradientDescent };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  Vector m;
  Vector v;
  std::int64_t steps = 0;
};

/// One update of `params` with gradient `grad`. Returns false, leaving
/// everything untouched, when the gradient has a non-finite entry.
bool optimizer_step(OptimizerState& state, const Vector& grad, Vector& params, double learning_rate,
                    const OptimizerConfig& config);

struct TrainingConfig {
  int pretrain_epochs = 1000;
  int n_train = 900;  ///< task-training epochs
  int pretrain_batch = 32;
  int task_batch = 8;
  double pretrain_lr = 1e-3;
  double task_lr = 1e-4;
  OptimizerConfig optimizer;
  std::uint64_t seed = 1;
  bool include_cost = true;
  int sigma_refresh_epochs = 1;
  double max_skip_fraction = 0.2;
};

nlohmann::json config_to_json(const TrainingConfig& config);
/// Missing keys keep their defaults; unknown keys are an error.
TrainingConfig config_from_json(const nlohmann::json& j);
TrainingConfig load_config(const std::filesystem::path& path);

struct EpochRecord {
  int epoch = 0;
  double pred_loss_train = 0.0;
  double task_loss_train = 0.0;  ///< NaN when not measured (pretraining)
  double task_loss_val = 0.0;    ///< NaN when not measured (pretraining)
  double wall_ms = 0.0;
  int skipped = 0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
};

inline constexpr const char* kLogHeader = "epoch,pred_loss_train,task_loss_train,task_loss_val,wall_ms,skipped";

/// Unmeasured losses are written as empty fields.
void write_log(std::ostream& out, const TrainingLog& log, bool include_wall_time = true);
void write_log(const std::filesystem::path& path, const TrainingLog& log);
TrainingLog read_log(std::istream& in);
TrainingLog read_log(const std::filesystem::path& path);

/// Normalised examples with the split applied.
struct Dataset {
  std::vector<data::TrainingExample> train;
  std::vector<data::TrainingExample> validation;
  std::vector<data::TrainingExample> test;
};

struct PreparedData {
  Dataset dataset;
  data::NormStats norm;
  data::Split split;  ///< indices into the chronological example list
};

/// Features, split and normalisation. The statistics come from the training
/// split unless `norm` is given.
PreparedData prepare_dataset(const std::vector<data::HourlyRecord>& records, std::uint64_t split_seed,
                             const data::NormStats* norm = nullptr);

/// Stacks the examples' features (columns) and targets.
Matrix stack_features(const std::vector<data::TrainingExample>& examples);
Matrix stack_targets(const std::vector<data::TrainingExample>& examples);

/// Eval-mode prediction loss over a set of examples.
double evaluation_loss(const net::NetworkParams& theta, const std::vector<data::TrainingExample>& examples);

/// Per-hour variance of the eval-mode residuals (normalised units).
Vector residual_variance(const net::NetworkParams& theta, const std::vector<data::TrainingExample>& examples);

using EpochCallback = std::function<void(const EpochRecord&)>;

struct PretrainResult {
  net::NetworkParams theta;
  Vector sigma2;  ///< from the final training residuals; empty for a single example
  TrainingLog log;
};

/// Minibatch prediction-loss training (train-mode batch norm). Throws
/// NumericalError if the loss exceeds 1e6.
PretrainResult pretrain(const net::NetworkParams& theta0, const Dataset& dataset, const TrainingConfig& config,
                        const EpochCallback& on_epoch = {});

struct TaskTrainResult {
  net::NetworkParams theta;  ///< checkpoint with the lowest validation task loss
  Vector sigma2;             ///< variance in effect for that checkpoint
  int best_epoch = 0;
  TrainingLog log;           ///< epoch 0 is the starting point
};

/// Task-loss training through the dispatch. sigma2 is refreshed from the
/// training residuals every `sigma_refresh_epochs` epochs and held constant
/// within an epoch. Throws NumericalError when more than max_skip_fraction of
/// an epoch's samples fail.
TaskTrainResult task_train(const net::NetworkParams& theta_pretrained, const Vector& sigma2, const Dataset& dataset,
                           std::shared_ptr<const sed::DispatchModel> model, const data::NormStats& norm,
                           const TrainingConfig& config, const EpochCallback& on_epoch = {});

/// Mean realised task loss over a set of examples; `warm` caches dispatches
/// between calls and may be empty.
struct TaskLossSummary {
  double mean = 0.0;
  int skipped = 0;
};
TaskLossSummary mean_task_loss(const net::NetworkParams& theta, const std::vector<data::TrainingExample>& examples,
                               const taskgrad::TaskContext& ctx, std::vector<std::optional<Vector>>* warm = nullptr);

}  // namespace lfednet::train

#endif  // LFEDNET_TRAIN_HPP
