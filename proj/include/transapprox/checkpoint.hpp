#pragma once

#include "transapprox/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>

namespace transapprox {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const TransformerConfig& config);
/// Missing fields keep their defaults; unknown fields are rejected.
TransformerConfig config_from_json(const nlohmann::json& j, TransformerConfig base = {});

/// Writes `model.json` (config, seed, tensor manifest) and `model.bin`
/// (little-endian float64 values in manifest order) into `dir`.
void save_checkpoint(const TransformerModel& model, const std::filesystem::path& dir);
TransformerModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace transapprox
