#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cardiofuse/tensor/layers.hpp"

namespace cardiofuse::train {

struct MetricRecord {
  std::size_t epoch = 0;
  double train_loss = 0, test_loss = 0;
  std::optional<double> acc_death, acc_cause, acc_macces, acc_risk, acc_integrated;
  std::optional<double> dsc, hd;
  bool operator==(const MetricRecord&) const = default;
};

struct MetricTrace {
  std::vector<MetricRecord> records;

  // Appends a record; epochs must increase by one from 1.
  void add(const MetricRecord& r);
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
  bool operator==(const MetricTrace&) const = default;
};

// CFW1 binary: magic, tensor count, then per tensor its name, rank, dims and
// float64 values, all little-endian.
void save_params(const std::filesystem::path& path, const nn::ParamList& params);
// Loads into existing parameters by name; names, count and shapes must agree.
// Throws FormatError naming the file.
void load_params(const std::filesystem::path& path, const nn::ParamList& params);

}  // namespace cardiofuse::train
