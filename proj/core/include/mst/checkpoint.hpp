#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mst/adamw.hpp"
#include "mst/config.hpp"
#include "mst/model.hpp"

namespace mst {

/// On-disk layout: `manifest.json` (names, shapes, dtype, byte offsets) next
/// to `weights.bin`, a little-endian blob of raw floats. Optimizer moments, if
/// saved, follow the parameters in the same blob.
struct CheckpointTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

struct OptimizerSnapshot {
  std::int64_t step = 0;
  double lr = 0.0;
  std::vector<std::vector<double>> first;   // per parameter, store order
  std::vector<std::vector<double>> second;
};

struct Checkpoint {
  ModelConfig config;
  std::string dtype = "float32";
  std::vector<CheckpointTensor> tensors;
  std::optional<OptimizerSnapshot> optimizer;
  nlohmann::json metadata = nlohmann::json::object();
};

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const MstModel<T>& model, const AdamW<T>* optimizer = nullptr,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Throws FormatError on a malformed or truncated checkpoint.
Checkpoint read_checkpoint(const std::filesystem::path& dir);

/// Copies weights into a model built from the same config (any precision).
template <typename T>
void load_weights(const Checkpoint& ckpt, MstModel<T>& model);

template <typename T>
void load_optimizer(const Checkpoint& ckpt, AdamW<T>& optimizer);

/// Hex SHA-256 of the weights blob.
std::string checkpoint_hash(const std::filesystem::path& dir);

std::string sha256_hex(std::span<const unsigned char> bytes);

}  // namespace mst
