#include "lfednet/net.hpp"

#include <cmath>
#include <string>

namespace lfednet::net {

namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  // Fill row by row so the draw order does not depend on storage order.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
  return m;
}

void check_input(const NetworkParams& theta, const Matrix& x) {
  if (x.rows() != theta.input_dim())
    throw DataError("network expects " + std::to_string(theta.input_dim()) + " input features, got " +
                    std::to_string(x.rows()));
  if (x.cols() == 0) throw DataError("empty input batch");
}

template <typename Fn>
void for_each_trainable(NetworkParams& theta, Fn&& fn) {
  for (auto& layer : theta.hidden) {
    fn(layer.weight);
    fn(layer.bias);
    fn(layer.bn_scale);
    fn(layer.bn_shift);
  }
  fn(theta.out_weight);
  fn(theta.out_bias);
  fn(theta.residual);
}

template <typename Fn>
void for_each_trainable(const NetworkParams& theta, Fn&& fn) {
  for_each_trainable(const_cast<NetworkParams&>(theta), [&](const auto& m) { fn(m); });
}

}  // namespace

NetworkParams init_params(Eigen::Index input_dim, std::uint64_t seed) {
  if (input_dim <= 0) throw DataError("network input dimension must be positive");
  std::mt19937_64 rng(seed);
  NetworkParams theta;
  Eigen::Index fan_in = input_dim;
  for (auto& layer : theta.hidden) {
    layer.weight = uniform_matrix(kHiddenWidth, fan_in, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
    layer.bias = Vector::Zero(kHiddenWidth);
    layer.bn_scale = Vector::Ones(kHiddenWidth);
    layer.bn_shift = Vector::Zero(kHiddenWidth);
    layer.running_mean = Vector::Zero(kHiddenWidth);
    layer.running_var = Vector::Ones(kHiddenWidth);
    fan_in = kHiddenWidth;
  }
  theta.out_weight = uniform_matrix(kOutputs, kHiddenWidth, std::sqrt(3.0 / static_cast<double>(kHiddenWidth)), rng);
  theta.out_bias = Vector::Zero(kOutputs);
  theta.residual = uniform_matrix(kOutputs, input_dim, std::sqrt(3.0 / static_cast<double>(input_dim)), rng);
  return theta;
}

Matrix forward(NetworkParams& theta, const Matrix& x, Mode mode, ForwardCache* cache) {
  check_input(theta, x);
  const auto n = static_cast<double>(x.cols());
  if (cache) {
    cache->mode = mode;
    cache->revision = theta.revision;
    cache->input = x;
    cache->valid = true;
  }
  Matrix h = x;
  for (int k = 0; k < kHiddenLayers; ++k) {
    auto& layer = theta.hidden[static_cast<std::size_t>(k)];
    Matrix z = layer.weight * h;
    z.colwise() += layer.bias;
    Vector mean, var;
    if (mode == Mode::Train) {
      mean = z.rowwise().mean();
      var = (z.colwise() - mean).array().square().rowwise().sum() / n;
      layer.running_mean = (1.0 - kBnMomentum) * layer.running_mean + kBnMomentum * mean;
      layer.running_var = (1.0 - kBnMomentum) * layer.running_var + kBnMomentum * var;
    } else {
      mean = layer.running_mean;
      var = layer.running_var;
    }
    const Vector inv_std = (var.array() + kBnEpsilon).rsqrt();
    Matrix xhat = (z.colwise() - mean).array().colwise() * inv_std.array();
    Matrix a = ((xhat.array().colwise() * layer.bn_scale.array()).colwise() + layer.bn_shift.array()).cwiseMax(0.0);
    if (cache) {
      cache->normalized[static_cast<std::size_t>(k)] = std::move(xhat);
      cache->inv_std[static_cast<std::size_t>(k)] = inv_std;
      cache->activation[static_cast<std::size_t>(k)] = a;
    }
    h = std::move(a);
  }
  Matrix y = theta.out_weight * h + theta.residual * x;
  y.colwise() += theta.out_bias;
  return y;
}

Matrix predict(const NetworkParams& theta, const Matrix& x, ForwardCache* cache) {
  // Eval mode never writes to theta.
  return forward(const_cast<NetworkParams&>(theta), x, Mode::Eval, cache);
}

NetworkGrads backward(const NetworkParams& theta, const ForwardCache& cache, const Matrix& upstream) {
  if (!cache.valid) throw Error("backward called without a forward cache");
  if (cache.revision != theta.revision) throw Error("forward cache is stale: parameters changed since the forward pass");
  if (upstream.rows() != kOutputs || upstream.cols() != cache.input.cols())
    throw DataError("upstream gradient shape does not match the cached batch");

  const auto n = static_cast<double>(upstream.cols());
  NetworkGrads g;
  g.revision = theta.revision;
  const Matrix& h3 = cache.activation[kHiddenLayers - 1];
  g.out_weight = upstream * h3.transpose();
  g.out_bias = upstream.rowwise().sum();
  g.residual = upstream * cache.input.transpose();

  Matrix dh = theta.out_weight.transpose() * upstream;
  for (int k = kHiddenLayers - 1; k >= 0; --k) {
    const auto ks = static_cast<std::size_t>(k);
    const auto& layer = theta.hidden[ks];
    const Matrix& xhat = cache.normalized[ks];
    const Matrix& a = cache.activation[ks];
    auto& gl = g.hidden[ks];

    const Matrix dbn = (a.array() > 0.0).select(dh, 0.0);
    gl.bn_scale = dbn.cwiseProduct(xhat).rowwise().sum();
    gl.bn_shift = dbn.rowwise().sum();
    const Matrix dxhat = dbn.array().colwise() * layer.bn_scale.array();
    Matrix dz;
    if (cache.mode == Mode::Train) {
      const Vector sum_d = dxhat.rowwise().sum();
      const Vector sum_dx = dxhat.cwiseProduct(xhat).rowwise().sum();
      dz = ((n * dxhat).colwise() - sum_d - (xhat.array().colwise() * sum_dx.array()).matrix());
      dz = dz.array().colwise() * (cache.inv_std[ks].array() / n);
    } else {
      dz = dxhat.array().colwise() * cache.inv_std[ks].array();
    }
    const Matrix& h_prev = k == 0 ? cache.input : cache.activation[ks - 1];
    gl.weight = dz * h_prev.transpose();
    gl.bias = dz.rowwise().sum();
    if (k > 0) dh = layer.weight.transpose() * dz;
  }
  return g;
}

double prediction_loss(const Matrix& y_hat, const Matrix& y_train) {
  if (y_hat.size() == 0) throw DataError("prediction loss of an empty batch");
  if (y_hat.rows() != y_train.rows() || y_hat.cols() != y_train.cols())
    throw DataError("prediction and target shapes differ");
  return (y_hat - y_train).squaredNorm() / static_cast<double>(y_hat.size());
}

Matrix prediction_loss_grad(const Matrix& y_hat, const Matrix& y_train) {
  if (y_hat.size() == 0) throw DataError("prediction loss of an empty batch");
  if (y_hat.rows() != y_train.rows() || y_hat.cols() != y_train.cols())
    throw DataError("prediction and target shapes differ");
  return 2.0 * (y_hat - y_train) / static_cast<double>(y_hat.size());
}

Vector estimate_variance(const Matrix& residuals) {
  if (residuals.cols() < 2) throw DataError("variance estimate needs at least 2 samples per hour");
  const Vector var = residuals.array().square().rowwise().sum() / static_cast<double>(residuals.cols());
  return var.cwiseMax(kSigma2Floor);
}

Eigen::Index num_trainable(const NetworkParams& theta) {
  Eigen::Index count = 0;
  for_each_trainable(theta, [&](const auto& m) { count += m.size(); });
  return count;
}

Vector pack(const NetworkParams& theta) {
  Vector flat(num_trainable(theta));
  Eigen::Index pos = 0;
  for_each_trainable(theta, [&](const auto& m) {
    flat.segment(pos, m.size()) = m.reshaped();
    pos += m.size();
  });
  return flat;
}

void unpack(const Vector& flat, NetworkParams& theta) {
  if (flat.size() != num_trainable(theta)) throw DataError("flat parameter vector has the wrong size");
  Eigen::Index pos = 0;
  for_each_trainable(theta, [&](auto& m) {
    m.reshaped() = flat.segment(pos, m.size());
    pos += m.size();
  });
  ++theta.revision;
}

NetworkGrads zero_grads(const NetworkParams& theta) {
  NetworkGrads g;
  g.revision = theta.revision;
  for (std::size_t k = 0; k < theta.hidden.size(); ++k) {
    g.hidden[k].weight = Matrix::Zero(theta.hidden[k].weight.rows(), theta.hidden[k].weight.cols());
    g.hidden[k].bias = Vector::Zero(theta.hidden[k].bias.size());
    g.hidden[k].bn_scale = Vector::Zero(theta.hidden[k].bn_scale.size());
    g.hidden[k].bn_shift = Vector::Zero(theta.hidden[k].bn_shift.size());
  }
  g.out_weight = Matrix::Zero(theta.out_weight.rows(), theta.out_weight.cols());
  g.out_bias = Vector::Zero(theta.out_bias.size());
  g.residual = Matrix::Zero(theta.residual.rows(), theta.residual.cols());
  return g;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw DataError("matrix entry count does not match its shape");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

nlohmann::json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}

nlohmann::json params_to_json(const NetworkParams& theta) {
  nlohmann::json hidden = nlohmann::json::array();
  for (const auto& layer : theta.hidden) {
    hidden.push_back({{"weight", matrix_to_json(layer.weight)},
                      {"bias", vector_to_json(layer.bias)},
                      {"bn_scale", vector_to_json(layer.bn_scale)},
                      {"bn_shift", vector_to_json(layer.bn_shift)},
                      {"running_mean", vector_to_json(layer.running_mean)},
                      {"running_var", vector_to_json(layer.running_var)}});
  }
  return {{"hidden", hidden},
          {"out_weight", matrix_to_json(theta.out_weight)},
          {"out_bias", vector_to_json(theta.out_bias)},
          {"residual", matrix_to_json(theta.residual)}};
}

NetworkParams params_from_json(const nlohmann::json& j) {
  NetworkParams theta;
  try {
    const auto& hidden = j.at("hidden");
    if (hidden.size() != kHiddenLayers) throw DataError("expected " + std::to_string(kHiddenLayers) + " hidden layers");
    for (std::size_t k = 0; k < theta.hidden.size(); ++k) {
      const auto& hj = hidden[k];
      auto& layer = theta.hidden[k];
      layer.weight = matrix_from_json(hj.at("weight"));
      layer.bias = vector_from_json(hj.at("bias"));
      layer.bn_scale = vector_from_json(hj.at("bn_scale"));
      layer.bn_shift = vector_from_json(hj.at("bn_shift"));
      layer.running_mean = vector_from_json(hj.at("running_mean"));
      layer.running_var = vector_from_json(hj.at("running_var"));
    }
    theta.out_weight = matrix_from_json(j.at("out_weight"));
    theta.out_bias = vector_from_json(j.at("out_bias"));
    theta.residual = matrix_from_json(j.at("residual"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed network parameters: ") + e.what());
  }

  // Shape checks.
  Eigen::Index fan_in = theta.residual.cols();
  bool ok = theta.residual.rows() == kOutputs && theta.out_weight.rows() == kOutputs &&
            theta.out_weight.cols() == kHiddenWidth && theta.out_bias.size() == kOutputs;
  for (const auto& layer : theta.hidden) {
    ok = ok && layer.weight.rows() == kHiddenWidth && layer.weight.cols() == fan_in && layer.bias.size() == kHiddenWidth &&
         layer.bn_scale.size() == kHiddenWidth && layer.bn_shift.size() == kHiddenWidth &&
         layer.running_mean.size() == kHiddenWidth && layer.running_var.size() == kHiddenWidth;
    if (ok && (layer.running_var.array() <= 0.0).any()) throw DataError("batch-norm running variance must be positive");
    fan_in = kHiddenWidth;
  }
  if (!ok) throw DataError("network parameter shapes are inconsistent");
  return theta;
}

}  // namespace lfednet::net
