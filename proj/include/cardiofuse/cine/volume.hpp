#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace cardiofuse::cine {

enum SegClass : std::uint8_t { kBackground = 0, kMyocardium = 1, kFibrosis = 2 };
inline constexpr std::size_t kNumClasses = 3;

// Voxel (h, w, d) lives at (d * height + h) * width + w: frames are stored
// one after another, each row-major.
struct CineVolume {
  std::size_t height = 0, width = 0, depth = 0;
  std::vector<float> voxels;

  CineVolume() = default;
  CineVolume(std::size_t h, std::size_t w, std::size_t d, float fill = 0.0f);

  std::size_t frame_size() const { return height * width; }
  float& at(std::size_t h, std::size_t w, std::size_t d) { return voxels[(d * height + h) * width + w]; }
  float at(std::size_t h, std::size_t w, std::size_t d) const { return voxels[(d * height + h) * width + w]; }
  // Throws unless dims are positive, sizes agree and voxels lie in [0, 1].
  void validate() const;
  bool operator==(const CineVolume&) const = default;
};

struct SegMask {
  std::size_t height = 0, width = 0, depth = 0;
  std::vector<std::uint8_t> classes;

  SegMask() = default;
  SegMask(std::size_t h, std::size_t w, std::size_t d, std::uint8_t fill = kBackground);

  std::uint8_t& at(std::size_t h, std::size_t w, std::size_t d) { return classes[(d * height + h) * width + w]; }
  std::uint8_t at(std::size_t h, std::size_t w, std::size_t d) const { return classes[(d * height + h) * width + w]; }
  std::size_t count(std::uint8_t cls) const;
  void validate() const;
  bool operator==(const SegMask&) const = default;
};

// Nearest-neighbour resample of raw (h, w, d) voxels to the target dims, then
// min-max intensity normalization; a constant volume maps to zeros.
CineVolume preprocess_cine(const std::vector<float>& raw, std::size_t h, std::size_t w, std::size_t d,
                           std::size_t target_h, std::size_t target_w, std::size_t target_d);

// "CFV1" / "CFM1" files: magic, u32 LE height, width, depth, then voxels as
// f32 LE or u8 classes. Readers throw FormatError naming the file.
void write_cfv(const std::filesystem::path& path, const CineVolume& v);
CineVolume read_cfv(const std::filesystem::path& path);
void write_cfm(const std::filesystem::path& path, const SegMask& m);
SegMask read_cfm(const std::filesystem::path& path);

}  // namespace cardiofuse::cine
