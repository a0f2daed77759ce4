#pragma once

#include <filesystem>

#include "deformwarp/gan.hpp"
#include "deformwarp/io.hpp"

namespace deformwarp {

inline constexpr double kCheckpointVersion = 1.0;

/// Parameters, Adam moments and step counts of both networks, every config
/// field and the iteration counter.
TensorContainer checkpoint_container(const TrainState& state);
TrainState state_from_container(const TensorContainer& c);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
/// Throws IncompatibleCheckpoint for missing, truncated or foreign files.
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace deformwarp
