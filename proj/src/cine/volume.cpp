#include "cardiofuse/cine/volume.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "cardiofuse/error.hpp"

namespace cardiofuse::cine {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

CineVolume::CineVolume(std::size_t h, std::size_t w, std::size_t d, float fill)
    : height(h), width(w), depth(d), voxels(h * w * d, fill) {}

void CineVolume::validate() const {
  if (height == 0 || width == 0 || depth == 0) throw std::invalid_argument("CineVolume: dimensions must be positive");
  if (voxels.size() != height * width * depth) throw std::invalid_argument("CineVolume: voxel count does not match dims");
  for (float v : voxels)
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("CineVolume: voxel outside [0, 1]");
}

SegMask::SegMask(std::size_t h, std::size_t w, std::size_t d, std::uint8_t fill)
    : height(h), width(w), depth(d), classes(h * w * d, fill) {}

std::size_t SegMask::count(std::uint8_t cls) const {
  return static_cast<std::size_t>(std::count(classes.begin(), classes.end(), cls));
}

void SegMask::validate() const {
  if (height == 0 || width == 0 || depth == 0) throw std::invalid_argument("SegMask: dimensions must be positive");
  if (classes.size() != height * width * depth) throw std::invalid_argument("SegMask: voxel count does not match dims");
  for (auto c : classes)
    if (c >= kNumClasses) throw std::invalid_argument("SegMask: class value " + std::to_string(c) + " out of range");
}

CineVolume preprocess_cine(const std::vector<float>& raw, std::size_t h, std::size_t w, std::size_t d,
                           std::size_t target_h, std::size_t target_w, std::size_t target_d) {
  if (h == 0 || w == 0 || d == 0 || raw.empty()) throw std::invalid_argument("preprocess_cine: empty volume");
  if (raw.size() != h * w * d) throw std::invalid_argument("preprocess_cine: voxel count does not match dims");
  if (target_h == 0 || target_w == 0 || target_d == 0)
    throw std::invalid_argument("preprocess_cine: target dims must be positive");
  CineVolume out(target_h, target_w, target_d);
  // Source index for target i is floor((i + 0.5) * src / dst), the centre rule.
  auto src = [](std::size_t i, std::size_t from, std::size_t to) {
    return std::min(from - 1, static_cast<std::size_t>((static_cast<double>(i) + 0.5) * from / to));
  };
  for (std::size_t z = 0; z < target_d; ++z)
    for (std::size_t y = 0; y < target_h; ++y)
      for (std::size_t x = 0; x < target_w; ++x)
        out.at(y, x, z) = raw[(src(z, d, target_d) * h + src(y, h, target_h)) * w + src(x, w, target_w)];

  const auto [lo, hi] = std::minmax_element(out.voxels.begin(), out.voxels.end());
  const double mn = *lo, mx = *hi;
  if (!std::isfinite(mn) || !std::isfinite(mx)) throw NumericError("preprocess_cine: non-finite voxel");
  if (mx == mn) {
    std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
  } else {
    for (auto& v : out.voxels) v = static_cast<float>(std::clamp((v - mn) / (mx - mn), 0.0, 1.0));
  }
  return out;
}

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

void write_header(std::ofstream& f, const char* magic, std::size_t h, std::size_t w, std::size_t d) {
  f.write(magic, 4);
  put_u32(f, static_cast<std::uint32_t>(h));
  put_u32(f, static_cast<std::uint32_t>(w));
  put_u32(f, static_cast<std::uint32_t>(d));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return f;
}

struct Header {
  std::size_t h, w, d;
};

Header read_header(std::ifstream& f, const char* magic, const std::filesystem::path& path) {
  std::array<char, 4> m{};
  std::array<std::uint32_t, 3> dims{};
  if (!f.read(m.data(), 4)) throw FormatError(path.string() + ": truncated header");
  if (std::memcmp(m.data(), magic, 4) != 0)
    throw FormatError(path.string() + ": bad magic, expected " + std::string(magic, 4));
  if (!f.read(reinterpret_cast<char*>(dims.data()), 12)) throw FormatError(path.string() + ": truncated header");
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw FormatError(path.string() + ": zero dimension");
  return {dims[0], dims[1], dims[2]};
}

void expect_eof(std::ifstream& f, const std::filesystem::path& path) {
  if (f.peek() != std::ifstream::traits_type::eof()) throw FormatError(path.string() + ": trailing bytes after payload");
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path.string() + ": cannot open");
  return f;
}

}  // namespace

void write_cfv(const std::filesystem::path& path, const CineVolume& v) {
  auto f = open_out(path);
  write_header(f, "CFV1", v.height, v.width, v.depth);
  f.write(reinterpret_cast<const char*>(v.voxels.data()), static_cast<std::streamsize>(v.voxels.size() * 4));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

CineVolume read_cfv(const std::filesystem::path& path) {
  auto f = open_in(path);
  const auto hd = read_header(f, "CFV1", path);
  CineVolume v(hd.h, hd.w, hd.d);
  if (!f.read(reinterpret_cast<char*>(v.voxels.data()), static_cast<std::streamsize>(v.voxels.size() * 4)))
    throw FormatError(path.string() + ": truncated voxel payload");
  expect_eof(f, path);
  for (float x : v.voxels)
    if (!std::isfinite(x)) throw FormatError(path.string() + ": non-finite voxel");
  return v;
}

void write_cfm(const std::filesystem::path& path, const SegMask& m) {
  auto f = open_out(path);
  write_header(f, "CFM1", m.height, m.width, m.depth);
  f.write(reinterpret_cast<const char*>(m.classes.data()), static_cast<std::streamsize>(m.classes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

SegMask read_cfm(const std::filesystem::path& path) {
  auto f = open_in(path);
  const auto hd = read_header(f, "CFM1", path);
  SegMask m(hd.h, hd.w, hd.d);
  if (!f.read(reinterpret_cast<char*>(m.classes.data()), static_cast<std::streamsize>(m.classes.size())))
    throw FormatError(path.string() + ": truncated class payload");
  expect_eof(f, path);
  for (auto c : m.classes)
    if (c >= kNumClasses) throw FormatError(path.string() + ": class value " + std::to_string(c) + " out of range");
  return m;
}

}  // namespace cardiofuse::cine
