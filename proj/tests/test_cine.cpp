#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "cardiofuse/cine/metrics.hpp"
#include "cardiofuse/cine/segmenter.hpp"
#include "cardiofuse/error.hpp"
#include "cardiofuse/tensor/grad_check.hpp"
#include "doctest.h"

using namespace cardiofuse;
using namespace cardiofuse::cine;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cardiofuse_test_cine_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

SegMask from_bits(std::uint32_t bits, std::size_t h, std::size_t w, std::size_t d = 1) {
  SegMask m(h, w, d);
  for (std::size_t i = 0; i < h * w * d; ++i) m.classes[i] = (bits >> i) & 1u ? kFibrosis : kBackground;
  return m;
}

struct Point {
  double y, x, z;
};

std::vector<Point> points_of(const SegMask& m, std::uint8_t cls) {
  std::vector<Point> pts;
  for (std::size_t z = 0; z < m.depth; ++z)
    for (std::size_t y = 0; y < m.height; ++y)
      for (std::size_t x = 0; x < m.width; ++x)
        if (m.at(y, x, z) == cls) pts.push_back({double(y), double(x), double(z)});
  return pts;
}

// Brute-force directed distances of every point of a to the set b.
std::vector<double> directed(const std::vector<Point>& a, const std::vector<Point>& b) {
  std::vector<double> out;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      const double dy = p.y - q.y, dx = p.x - q.x, dz = p.z - q.z;
      best = std::min(best, dy * dy + dx * dx + dz * dz);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

HausdorffResult brute_hausdorff(const SegMask& a, const SegMask& b, std::uint8_t cls) {
  const auto pa = points_of(a, cls), pb = points_of(b, cls);
  auto all = directed(pa, pb);
  const auto back = directed(pb, pa);
  all.insert(all.end(), back.begin(), back.end());
  std::sort(all.begin(), all.end());
  const double pos = 0.95 * double(all.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(lo + 1, all.size() - 1);
  return {all.back(), all[lo] + (pos - double(lo)) * (all[hi] - all[lo])};
}

double brute_dice(const SegMask& a, const SegMask& b, std::uint8_t cls) {
  const auto pa = points_of(a, cls), pb = points_of(b, cls);
  std::size_t both = 0;
  for (const auto& p : pa)
    for (const auto& q : pb) both += p.y == q.y && p.x == q.x && p.z == q.z;
  if (pa.empty() && pb.empty()) return 1.0;
  return 2.0 * double(both) / double(pa.size() + pb.size());
}

SegmenterConfig tiny_config() {
  SegmenterConfig cfg;
  cfg.height = 8;
  cfg.width = 8;
  cfg.patch = 2;
  cfg.dims = {4, 6};
  cfg.feature_dim = 5;
  return cfg;
}

CineVolume random_volume(std::size_t h, std::size_t w, std::size_t d, std::uint64_t seed) {
  RngStream rng(seed);
  CineVolume v(h, w, d);
  for (auto& x : v.voxels) x = static_cast<float>(rng.uniform());
  return v;
}

}  // namespace

TEST_CASE("preprocess examples") {
  const auto zeros = preprocess_cine(std::vector<float>(12, 3.5f), 2, 3, 2, 4, 4, 3);
  CHECK(zeros.height == 4);
  CHECK(zeros.width == 4);
  CHECK(zeros.depth == 3);
  for (float v : zeros.voxels) CHECK(v == 0.0f);

  const auto three = preprocess_cine({2, 4, 6}, 1, 3, 1, 1, 3, 1);
  CHECK(three.voxels == std::vector<float>{0.0f, 0.5f, 1.0f});

  const std::vector<float> raw = random_volume(7, 5, 3, 1).voxels;
  for (auto [th, tw, td] : {std::tuple{64, 64, 8}, std::tuple{3, 2, 1}, std::tuple{7, 5, 3}}) {
    const auto out = preprocess_cine(raw, 7, 5, 3, th, tw, td);
    CHECK(out.height == std::size_t(th));
    CHECK(out.width == std::size_t(tw));
    CHECK(out.depth == std::size_t(td));
    out.validate();
  }
  // Identity resample keeps every voxel, so the extremes map to 0 and 1.
  const auto same = preprocess_cine(raw, 7, 5, 3, 7, 5, 3);
  CHECK(*std::min_element(same.voxels.begin(), same.voxels.end()) == 0.0f);
  CHECK(*std::max_element(same.voxels.begin(), same.voxels.end()) == 1.0f);
  CHECK_THROWS_AS(preprocess_cine({}, 0, 0, 0, 4, 4, 1), std::invalid_argument);
}

TEST_CASE("cine and mask files round-trip and reject corruption") {
  const auto dir = scratch_dir("io");
  const auto v = random_volume(5, 4, 3, 2);
  SegMask m(5, 4, 3);
  for (std::size_t i = 0; i < m.classes.size(); ++i) m.classes[i] = static_cast<std::uint8_t>(i % 3);
  write_cfv(dir / "a.cfv", v);
  write_cfm(dir / "a.cfm", m);
  CHECK(read_cfv(dir / "a.cfv") == v);
  CHECK(read_cfm(dir / "a.cfm") == m);
  CHECK(std::filesystem::file_size(dir / "a.cfv") == 16 + 4 * 60);
  CHECK(std::filesystem::file_size(dir / "a.cfm") == 16 + 60);

  CHECK_THROWS_AS(read_cfv(dir / "a.cfm"), FormatError);
  CHECK_THROWS_AS(read_cfv(dir / "missing.cfv"), FormatError);
  std::filesystem::resize_file(dir / "a.cfv", 40);
  CHECK_THROWS_AS(read_cfv(dir / "a.cfv"), FormatError);
  {
    std::ofstream f(dir / "a.cfm", std::ios::binary | std::ios::app);
    f.put('x');
  }
  CHECK_THROWS_AS(read_cfm(dir / "a.cfm"), FormatError);
  m.classes[0] = 7;
  write_cfm(dir / "b.cfm", m);
  CHECK_THROWS_AS(read_cfm(dir / "b.cfm"), FormatError);
}

TEST_CASE("dice examples") {
  const auto a = from_bits(0b1111, 4, 4);
  CHECK(dice(a, a, kFibrosis) == 1.0);
  CHECK(dice(from_bits(0b0011, 4, 4), from_bits(0b1100, 4, 4), kFibrosis) == 0.0);
  // |A| = 4, |B| = 6, overlap 2.
  CHECK(dice(from_bits(0b0000'1111, 4, 4), from_bits(0b1111'1100, 4, 4), kFibrosis) == 0.4);
  CHECK(dice(from_bits(0, 4, 4), from_bits(0, 4, 4), kFibrosis) == 1.0);
  CHECK(iou(from_bits(0b0000'1111, 4, 4), from_bits(0b1111'1100, 4, 4), kFibrosis) == 0.25);
  CHECK(binary_accuracy(from_bits(0b0000'1111, 4, 4), from_bits(0b1111'1100, 4, 4), kFibrosis) == 10.0 / 16.0);
  CHECK_THROWS_AS(dice(a, from_bits(0, 2, 2), kFibrosis), std::invalid_argument);
}

TEST_CASE("hausdorff examples") {
  SegMask a(4, 5, 1), b(4, 5, 1);
  a.at(0, 0, 0) = kFibrosis;
  b.at(3, 4, 0) = kFibrosis;
  CHECK(hausdorff(a, b, kFibrosis).hd == 5.0);
  CHECK(hausdorff(a, a, kFibrosis).hd == 0.0);
  const auto x = from_bits(0b1000'0110'0001, 4, 4), y = from_bits(0b0001'0000'1000'0000, 4, 4);
  CHECK(hausdorff(x, y, kFibrosis).hd == hausdorff(y, x, kFibrosis).hd);
  CHECK(hausdorff(x, y, kFibrosis).hd95 == hausdorff(y, x, kFibrosis).hd95);
  CHECK_THROWS_AS(hausdorff(a, SegMask(4, 5, 1), kFibrosis), std::invalid_argument);
}

TEST_CASE("percentile interpolates linearly") {
  CHECK(percentile({1, 2, 3, 4}, 50) == 2.5);
  CHECK(percentile({0, 10}, 95) == 9.5);
  CHECK(percentile({7}, 95) == 7);
}

TEST_CASE("dice and hausdorff equal brute force on every 4x4x1 mask") {
  std::vector<SegMask> refs;
  for (std::uint32_t bits : {0x0001u, 0x8000u, 0x0660u, 0xF00Fu, 0x1248u, 0xFFFFu, 0x00F0u, 0xA5A5u})
    refs.push_back(from_bits(bits, 4, 4));
  std::size_t checked = 0;
  for (std::uint32_t bits = 0; bits < (1u << 16); ++bits) {
    const auto a = from_bits(bits, 4, 4);
    for (const auto& b : refs) {
      CHECK(dice(a, b, kFibrosis) == brute_dice(a, b, kFibrosis));
      if (bits != 0) {
        const auto got = hausdorff(a, b, kFibrosis), want = brute_hausdorff(a, b, kFibrosis);
        CHECK(got.hd == want.hd);
        CHECK(got.hd95 == want.hd95);
      }
      ++checked;
    }
  }
  CHECK(checked == (1u << 16) * refs.size());
}

TEST_CASE("distance transform equals brute force on random 3-d masks") {
  RngStream rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t h = 1 + rng.below(7), w = 1 + rng.below(7), d = 1 + rng.below(5);
    SegMask a(h, w, d), b(h, w, d);
    const double pa = rng.uniform(0.02, 0.6), pb = rng.uniform(0.02, 0.6);
    for (auto& c : a.classes) c = rng.bernoulli(pa) ? kFibrosis : kMyocardium;
    for (auto& c : b.classes) c = rng.bernoulli(pb) ? kFibrosis : kBackground;
    a.classes[rng.below(a.classes.size())] = kFibrosis;
    b.classes[rng.below(b.classes.size())] = kFibrosis;
    const auto got = hausdorff(a, b, kFibrosis), want = brute_hausdorff(a, b, kFibrosis);
    CHECK(got.hd == want.hd);
    CHECK(got.hd95 == want.hd95);
    CHECK(dice(a, b, kFibrosis) == brute_dice(a, b, kFibrosis));
  }
}

TEST_CASE("dice never decreases as overlap grows at fixed sizes") {
  // All pairs of 3x3 masks, grouped by (|A|, |B|): dice is a nondecreasing
  // function of the overlap count.
  std::vector<std::vector<double>> by_overlap;
  for (std::uint32_t x = 0; x < 512; ++x)
    for (std::uint32_t y = 0; y < 512; ++y) {
      const auto na = std::size_t(__builtin_popcount(x)), nb = std::size_t(__builtin_popcount(y));
      const auto both = std::size_t(__builtin_popcount(x & y));
      const double dsc = dice(from_bits(x, 3, 3), from_bits(y, 3, 3), kFibrosis);
      const std::size_t key = na * 10 + nb;
      if (by_overlap.size() <= key) by_overlap.resize(key + 1);
      auto& row = by_overlap[key];
      if (row.size() <= both) row.resize(both + 1, -1.0);
      if (row[both] >= 0.0) CHECK(row[both] == dsc);
      row[both] = dsc;
    }
  for (const auto& row : by_overlap) {
    double prev = -1.0;
    for (double v : row)
      if (v >= 0.0) {
        CHECK(v >= prev);
        prev = v;
      }
  }
}

TEST_CASE("segmenter output contract") {
  SegmenterConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  Segmenter seg(cfg, 4);
  const auto v = random_volume(32, 32, 2, 5);
  const auto out = seg.segment(v);
  CHECK(out.mask.height == 32);
  CHECK(out.mask.width == 32);
  CHECK(out.mask.depth == 2);
  out.mask.validate();
  for (std::size_t i = 0; i < out.probabilities.rows(); ++i) {
    double s = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) s += out.probabilities.at(i, c);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  CHECK(seg.segment(v).probabilities == out.probabilities);
  CHECK(Segmenter(cfg, 4).segment(v).mask == out.mask);

  const auto feat = seg.extract_cine_feature(v);
  CHECK(feat.shape() == Shape{1, 256});
  CHECK(feat.value().all_finite());

  CHECK_THROWS_AS(seg.segment(random_volume(16, 32, 2, 6)), std::invalid_argument);
  SegmenterConfig bad = cfg;
  bad.height = 36;
  CHECK_THROWS_AS(Segmenter(bad, 1), std::invalid_argument);
}

TEST_CASE("cine feature pools symmetrically over frames") {
  Segmenter seg(tiny_config(), 7);
  const auto frame = random_volume(8, 8, 1, 8);
  CineVolume same(8, 8, 3);
  for (std::size_t d = 0; d < 3; ++d) std::copy(frame.voxels.begin(), frame.voxels.end(), same.voxels.begin() + d * 64);
  CHECK(max_abs_diff(seg.extract_cine_feature(same).value(), seg.extract_cine_feature(frame).value()) < 1e-15);

  const auto v = random_volume(8, 8, 3, 9);
  CineVolume reversed(8, 8, 3);
  for (std::size_t d = 0; d < 3; ++d)
    std::copy_n(v.voxels.begin() + d * 64, 64, reversed.voxels.begin() + (2 - d) * 64);
  CHECK(max_abs_diff(seg.extract_cine_feature(v).value(), seg.extract_cine_feature(reversed).value()) < 1e-12);
}

TEST_CASE("tiny segmenter passes end-to-end gradient checks") {
  Segmenter seg(tiny_config(), 10);
  const auto v = random_volume(8, 8, 2, 11);
  const auto params = nn::vars_of(seg.params());
  RngStream rng(12);
  std::vector<std::size_t> targets(64);
  for (auto& t : targets) t = rng.below(kNumClasses);

  auto seg_loss = [&] {
    Var total = Var::constant(NdArray::scalar(0.0));
    for (std::size_t d = 0; d < v.depth; ++d) {
      const auto logits = seg.forward_frame(Segmenter::frame_of(v, d)).logits;
      total = add(total, scale(sum(pick(log_softmax(logits, 1), targets)), -1.0 / 64.0));
    }
    return total;
  };
  CHECK(grad_check_params(seg_loss, params) < 1e-4);

  NdArray weights({1, 5});
  for (auto& x : weights.values()) x = rng.uniform(-1, 1);
  const auto mix = Var::constant(weights);
  auto feature_loss = [&] { return sum(mul(tanh(seg.extract_cine_feature(v)), mix)); };
  CHECK(grad_check_params(feature_loss, params) < 1e-4);
}
