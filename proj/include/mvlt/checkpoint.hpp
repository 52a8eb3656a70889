#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mvlt/config.hpp"
#include "mvlt/model.hpp"
#include "mvlt/optim.hpp"

namespace mvlt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

/// In-memory image of a checkpoint file. Layout is documented in
/// docs/checkpoint_format.md.
struct Checkpoint {
  ModelConfig model;
  std::optional<TrainConfig> train;
  std::vector<NamedTensor> tensors;
  std::optional<AdamWState> optimizer;
  std::uint64_t seed = 0;
  std::uint64_t rng_step = 0;
  std::uint64_t step = 0;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, version mismatch, truncation or trailing
/// bytes. Nothing is returned unless the whole buffer parses.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of the model's parameters, in store order.
Checkpoint capture(const MvltModel& model, const std::optional<TrainConfig>& train = {},
                   const AdamWState* optimizer = nullptr, std::uint64_t seed = 0,
                   std::uint64_t step = 0);

/// Copies the tensor table into `model`. Names and shapes must match the
/// model's parameter store exactly (FormatError otherwise).
void restore_parameters(MvltModel& model, const Checkpoint& ckpt);

/// Builds a model of the stored configuration and restores its weights.
MvltModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mvlt
