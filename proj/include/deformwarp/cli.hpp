#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "deformwarp/error.hpp"
#include "deformwarp/gan.hpp"

namespace deformwarp {

/// Bad flags or config contents; maps to the usage exit code.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitDiverged = 4 };

struct RunConfig {
  Variant variant = Variant::Full;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  TrainConfig train;
  std::optional<std::filesystem::path> manifest;
  int synthetic_pairs = 64;
  std::uint64_t synthetic_seed = 0;
  std::optional<std::filesystem::path> feature_weights;
  long checkpoint_every = 0;  // 0: only at the end
  std::filesystem::path out_dir = "run";
};

/// Applies variant defaults, then the TOML keys. `variant_override` wins over
/// model.variant. Unknown keys raise ConfigError naming the key.
RunConfig parse_run_config(const std::string& toml_text,
                           const std::optional<Variant>& variant_override = std::nullopt,
                           const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::optional<Variant>& variant_override = std::nullopt);

/// Fallback evaluation mask: union of the head and limb regions of a pose.
RegionMask pose_foreground_mask(const Pose& pose, int width, int height);

/// Heat-map container entry name for a sigma, e.g. "heatmap/sigma6".
std::string heatmap_entry_name(double sigma);

/// Runs one command line (args exclude the program name) and returns the exit
/// code. Messages go to `out` / `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace deformwarp
