#ifndef LFEDNET_NET_HPP
#define LFEDNET_NET_HPP

// Load forecaster: three batch-normalised ReLU hidden layers of width 250, a
// linear output layer to 24 hourly loads and a learned linear residual path
// from the input straight to the output.
//
//   h0 = x
//   h_k = relu(bn_k(W_k h_{k-1} + b_k))        k = 1..3
//   y = W_out h3 + b_out + W_res x
//
// Samples are stored as columns.

#include "lfednet/types.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <random>

namespace lfednet::net {

inline constexpr int kHiddenLayers = 3;
inline constexpr Eigen::Index kHiddenWidth = 250;
inline constexpr Eigen::Index kOutputs = kHoursPerDay;
inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;

struct HiddenLayer {
  Matrix weight;  ///< (out x in)
  Vector bias;
  Vector bn_scale;
  Vector bn_shift;
  Vector running_mean;
  Vector running_var;
};

struct NetworkParams {
  std::array<HiddenLayer, kHiddenLayers> hidden;
  Matrix out_weight;  ///< (24 x 250)
  Vector out_bias;
  Matrix residual;    ///< (24 x input_dim)

  /// Bumped whenever the trainable parameters change, so that a cache taken
  /// before an update is recognised as stale.
  std::uint64_t revision = 0;

  Eigen::Index input_dim() const { return residual.cols(); }
};

/// Gradient with the same layout as the trainable part of NetworkParams.
/// Running statistics are not trainable and stay empty.
using NetworkGrads = NetworkParams;

enum class Mode { Train, Eval };

struct ForwardCache {
  Mode mode = Mode::Eval;
  std::uint64_t revision = 0;
  Matrix input;
  std::array<Matrix, kHiddenLayers> normalized;  ///< x_hat after batch norm
  std::array<Matrix, kHiddenLayers> activation;  ///< relu output
  std::array<Vector, kHiddenLayers> inv_std;
  bool valid = false;
};

/// He-style uniform initialisation (fan-in scaled), deterministic per seed.
NetworkParams init_params(Eigen::Index input_dim, std::uint64_t seed);

/// Forward pass on a batch (one sample per column). Train mode normalises with
/// batch statistics and updates the running statistics; Eval mode uses the
/// running statistics and leaves theta untouched.
Matrix forward(NetworkParams& theta, const Matrix& x, Mode mode, ForwardCache* cache = nullptr);

/// Eval-mode forward; pure function of (theta, x).
Matrix predict(const NetworkParams& theta, const Matrix& x, ForwardCache* cache = nullptr);

/// Reverse pass. `upstream` holds d loss / d y, one column per sample of the
/// cached batch. Throws Error when the cache is missing, does not match the
/// batch, or predates a parameter update.
NetworkGrads backward(const NetworkParams& theta, const ForwardCache& cache, const Matrix& upstream);

/// Mean over every entry of the squared error, (1/N) sum (y_train - y)^2.
double prediction_loss(const Matrix& y_hat, const Matrix& y_train);

/// d prediction_loss / d y_hat.
Matrix prediction_loss_grad(const Matrix& y_hat, const Matrix& y_train);

/// Per-hour mean of squared residuals (rows = hours, columns = samples),
/// floored at kSigma2Floor.
Vector estimate_variance(const Matrix& residuals);

/// Trainable parameters as one flat vector, in a fixed order.
Vector pack(const NetworkParams& theta);
void unpack(const Vector& flat, NetworkParams& theta);
Eigen::Index num_trainable(const NetworkParams& theta);

/// Zero gradient shaped like theta.
NetworkGrads zero_grads(const NetworkParams& theta);

nlohmann::json params_to_json(const NetworkParams& theta);
NetworkParams params_from_json(const nlohmann::json& j);

/// Matrices as {"rows", "cols", "data"} with row-major data.
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

}  // namespace lfednet::net

#endif  // LFEDNET_NET_HPP
