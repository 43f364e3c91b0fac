#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "s4ecg/config.hpp"
#include "s4ecg/train.hpp"

namespace s4ecg::checkpoint {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kFormatVersion = 1;

// Everything needed to rebuild and evaluate a model. Tensors are stored as
// little-endian float64 blobs, so a save/load cycle is bit-exact.
struct Checkpoint {
    std::string kind = "supervised";  // supervised | cpc
    KeyValues model_config;
    KeyValues train_config;
    KeyValues cpc_config;  // cpc only
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    train::ModelState state;
    train::ModelState extra;  // forecast heads for cpc checkpoints
};

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);

// Builds a supervised checkpoint from a live model.
Checkpoint from_model(model::S4Classifier& m, const TrainConfig& train, std::uint64_t seed, std::size_t epoch,
                      const std::optional<train::ModelState>& state = std::nullopt);
// Reconstructs the model recorded in a supervised checkpoint.
model::S4Classifier to_model(const Checkpoint& ckpt);

}  // namespace s4ecg::checkpoint
