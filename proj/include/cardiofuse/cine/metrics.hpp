#pragma once

#include <cstdint>
#include <vector>

#include "cardiofuse/cine/volume.hpp"

namespace cardiofuse::cine {

// 2|A n B| / (|A| + |B|) over voxels of class cls; 1 when both are empty.
double dice(const SegMask& a, const SegMask& b, std::uint8_t cls);
// |A n B| / |A u B|; 1 when both are empty.
double iou(const SegMask& a, const SegMask& b, std::uint8_t cls);
// Fraction of voxels on which "is class cls" agrees.
double binary_accuracy(const SegMask& a, const SegMask& b, std::uint8_t cls);

struct HausdorffResult {
  double hd = 0.0;    // max(h(A,B), h(B,A))
  double hd95 = 0.0;  // 95th percentile of both directed distance sets pooled
};

// Euclidean voxel metric with unit spacing on all three axes. Both class sets
// must be nonempty.
HausdorffResult hausdorff(const SegMask& a, const SegMask& b, std::uint8_t cls);

// Squared Euclidean distance from every voxel to the nearest voxel where
// inside[i] is true; exact, separable over axes. Needs at least one inside voxel.
std::vector<double> squared_distance_transform(const std::vector<bool>& inside, std::size_t h, std::size_t w,
                                               std::size_t d);

// Linear-interpolated percentile, q in [0, 100], of a nonempty sample.
double percentile(std::vector<double> values, double q);

}  // namespace cardiofuse::cine
