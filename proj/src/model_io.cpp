#include "lfednet/model_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace lfednet::model_io {

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double number_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

nlohmann::json to_json(const ModelFile& m) {
  nlohmann::json log = nlohmann::json::array();
  for (const auto& r : m.log.epochs)
    log.push_back({r.epoch, number_or_null(r.pred_loss_train), number_or_null(r.task_loss_train),
                   number_or_null(r.task_loss_val), r.skipped});
  return {
      {"schema_version", kSchemaVersion},
      {"kind", m.kind},
      {"split_seed", m.split_seed},
      {"sigma2", std::vector<double>(m.sigma2.data(), m.sigma2.data() + m.sigma2.size())},
      {"norm", data::norm_stats_to_json(m.norm)},
      {"training",
       {{"config", train::config_to_json(m.config)},
        {"best_epoch", m.best_epoch},
        {"log_columns", {"epoch", "pred_loss_train", "task_loss_train", "task_loss_val", "skipped"}},
        {"log", log}}},
      {"params", net::params_to_json(m.theta)},
  };
}

ModelFile from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kSchemaVersion)
      throw DataError("model file has schema version " + std::to_string(version) + ", expected " +
                      std::to_string(kSchemaVersion));
    ModelFile m;
    m.kind = j.at("kind").get<std::string>();
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    const auto s2 = j.at("sigma2").get<std::vector<double>>();
    if (s2.size() != static_cast<std::size_t>(kHoursPerDay)) throw DataError("model file: sigma2 must have 24 entries");
    m.sigma2 = Eigen::Map<const Vector>(s2.data(), static_cast<Eigen::Index>(s2.size()));
    m.norm = data::norm_stats_from_json(j.at("norm"));
    const auto& tr = j.at("training");
    m.config = train::config_from_json(tr.at("config"));
    m.best_epoch = tr.at("best_epoch").get<int>();
    for (const auto& row : tr.at("log")) {
      if (!row.is_array() || row.size() != 5) throw DataError("model file: malformed training log row");
      train::EpochRecord r;
      r.epoch = row[0].get<int>();
      r.pred_loss_train = number_from(row[1]);
      r.task_loss_train = number_from(row[2]);
      r.task_loss_val = number_from(row[3]);
      r.wall_ms = std::numeric_limits<double>::quiet_NaN();
      r.skipped = row[4].get<int>();
      m.log.epochs.push_back(r);
    }
    m.theta = net::params_from_json(j.at("params"));
    if (m.theta.input_dim() != m.norm.features.mean.size())
      throw DataError("model file: network input size does not match the normalisation statistics");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
}

void write_atomically(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void save(const std::filesystem::path& path, const ModelFile& model) { write_atomically(path, to_json(model).dump() + "\n"); }

ModelFile load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace lfednet::model_io
