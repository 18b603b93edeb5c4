#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cardiofuse/train/pipeline.hpp"

namespace cardiofuse::train {

// Everything a run needs, addressable as flat "section.key" strings so the
// same table serves config files, command-line overrides and model.json.
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t split_seed = 7;
  SegTrainConfig seg{};
  TextTrainConfig text{};
  FusionTrainConfig fusion{};
  fusion::AllocationStrategy strategy = fusion::AllocationStrategy::self_reasoning();
  ModalitySubset subset{};
  std::size_t importance_repeats = 5;

  // Sets every component seed.
  void set_seed(std::uint64_t seed);
};

// "desk" (50 segmentation and fusion epochs) or "full" (500 of each, full model widths).
RunConfig preset_config(const std::string& name);

// Throws std::invalid_argument naming the key on an unknown key or a value
// that does not parse.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
std::map<std::string, std::string> settings_of(const RunConfig& cfg);
std::vector<std::string> setting_keys();

// Applies a "preset" key first, if present, then the rest onto base.
RunConfig apply_settings(RunConfig base, const std::map<std::string, std::string>& settings);
// key=value lines; blank lines and lines starting with '#' are skipped.
std::map<std::string, std::string> read_settings(const std::filesystem::path& path);

fusion::AllocationStrategy parse_strategy(const std::string& id);
ModalitySubset parse_subset(const std::string& list);
std::string subset_id(const ModalitySubset& s);  // "text,cine,numeric" order

}  // namespace cardiofuse::train
