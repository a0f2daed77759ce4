#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deformwarp/pose.hpp"
#include "deformwarp/tensor.hpp"

namespace deformwarp {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

/// One named array of a tensor container. Exactly one of f32 / f64 holds the
/// payload, matching dtype.
struct ContainerEntry {
  std::string name;
  DType dtype = DType::F64;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;

  std::size_t element_count() const;
  /// Payload widened to double.
  std::vector<double> as_doubles() const;
  /// dims padded on the left to (n, h, w, c); needs ndim <= 4.
  Tensor to_tensor() const;

  static ContainerEntry from_tensor(std::string name, const Tensor& t);
  static ContainerEntry from_doubles(std::string name, std::vector<std::uint32_t> dims,
                                     std::vector<double> values);
  static ContainerEntry scalar(std::string name, double v);

  friend bool operator==(const ContainerEntry&, const ContainerEntry&) = default;
};

/// Binary "DWT1" file: little-endian, entries in insertion order.
class TensorContainer {
 public:
  void add(ContainerEntry entry);
  bool contains(const std::string& name) const;
  const ContainerEntry& get(const std::string& name) const;
  const std::vector<ContainerEntry>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  static TensorContainer deserialize(const std::vector<std::uint8_t>& bytes);

  void write(const std::filesystem::path& path) const;
  static TensorContainer read(const std::filesystem::path& path);

  friend bool operator==(const TensorContainer&, const TensorContainer&) = default;

 private:
  std::vector<ContainerEntry> entries_;
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// Pose with the image size it refers to.
struct PoseFile {
  int width = 0;
  int height = 0;
  Pose pose;
};

PoseFile parse_pose_json(const std::string& text);
std::string pose_to_json(const PoseFile& pf);
PoseFile read_pose(const std::filesystem::path& path);
void write_pose(const std::filesystem::path& path, const PoseFile& pf);

/// 8-bit RGB PNG as a (1, H, W, 3) tensor with v / 127.5 - 1.
Tensor read_png(const std::filesystem::path& path);
/// Inverse mapping with round-to-nearest; values are clamped to [-1, 1].
void write_png(const std::filesystem::path& path, const Tensor& image);
std::uint8_t to_byte(double v);
double from_byte(std::uint8_t b);

/// Any PNG; a pixel is foreground when its first channel is nonzero.
RegionMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const RegionMask& mask);

struct ManifestRow {
  std::filesystem::path image_a, pose_a, image_b, pose_b;
  std::optional<std::filesystem::path> mask_b;
};

/// CSV with header image_a,pose_a,image_b,pose_b[,mask_b]. Relative paths are
/// resolved against the manifest's directory.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

}  // namespace deformwarp
