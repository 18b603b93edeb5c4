#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cardiofuse/tensor/layers.hpp"

namespace cardiofuse::numeric {

// One patient's indicator values, aligned with NumericSchema::names.
using NumericRecord = std::vector<std::optional<double>>;

struct IndicatorStats {
  double median = 0, min = 0, max = 0;
  bool operator==(const IndicatorStats&) const = default;
};

struct NumericSchema {
  std::vector<std::string> names;
  std::vector<IndicatorStats> stats;

  std::size_t features() const { return names.size(); }
  bool operator==(const NumericSchema&) const = default;
};

// Median (midpoint for even counts), min and max of the present values.
// Throws std::invalid_argument for an indicator with no present value, a
// non-finite value or a record of the wrong length.
NumericSchema fit_schema(const std::vector<std::string>& names, const std::vector<NumericRecord>& train);

// Missing values take the median, then (x - min) / (max - min) clamped to
// [0, 1]; constant indicators map to 0.
std::vector<double> impute_and_normalize(const NumericRecord& r, const NumericSchema& s);
NdArray normalize_batch(const std::vector<NumericRecord>& records, const NumericSchema& s);

// Indices of a class-balanced subset: every class is downsampled without
// replacement to the minority count. Returned in ascending order.
std::vector<std::size_t> undersample(const std::vector<std::size_t>& labels, std::size_t num_classes, RngStream& rng);

struct NumericEncoderConfig {
  std::size_t hidden = 512;
  std::size_t out = 256;
  double dropout = 0.2;
};

// Linear -> ReLU -> Dropout -> Linear on rows of normalized indicators.
class NumericEncoder {
 public:
  NumericEncoder() = default;
  NumericEncoder(std::size_t in_features, RngStream& rng, NumericEncoderConfig cfg = {});

  // x is [N x F]. rng is only drawn from when training.
  Var operator()(const Var& x, bool training, RngStream& rng) const;
  Var eval(const Var& x) const;

  std::size_t in_features() const { return fc1_.in_features(); }
  std::size_t out_features() const { return fc2_.out_features(); }
  const NumericEncoderConfig& config() const { return cfg_; }
  void collect(nn::ParamList& out, const std::string& prefix) const;

  nn::Linear& fc1() { return fc1_; }
  nn::Linear& fc2() { return fc2_; }

 private:
  NumericEncoderConfig cfg_;
  nn::Linear fc1_, fc2_;
};

}  // namespace cardiofuse::numeric
