#ifndef LFEDNET_MODEL_IO_HPP
#define LFEDNET_MODEL_IO_HPP

// Model files: network parameters plus everything needed to use them on new
// data (forecast variance, normalisation, split seed) and the training record.

#include "lfednet/data.hpp"
#include "lfednet/net.hpp"
#include "lfednet/train.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace lfednet::model_io {

inline constexpr int kSchemaVersion = 1;

struct ModelFile {
  std::string kind;  ///< "pretrained" or "task-trained"
  net::NetworkParams theta;
  Vector sigma2;     ///< normalised units
  data::NormStats norm;
  std::uint64_t split_seed = 0;
  train::TrainingConfig config;
  int best_epoch = 0;
  train::TrainingLog log;  ///< stored without wall times
};

nlohmann::json to_json(const ModelFile& model);
ModelFile from_json(const nlohmann::json& j);

/// Written to a temporary file and renamed into place.
void save(const std::filesystem::path& path, const ModelFile& model);
ModelFile load(const std::filesystem::path& path);

/// Writes `text` to `path` through a temporary file and a rename.
void write_atomically(const std::filesystem::path& path, const std::string& text);

}  // namespace lfednet::model_io

#endif  // LFEDNET_MODEL_IO_HPP
