#pragma once

#include <filesystem>

#include "cardiofuse/train/config.hpp"

namespace cardiofuse::train {

// A trained segmenter directory: segmenter.json + segmenter.cfw.
void save_segmenter(const std::filesystem::path& dir, const cine::Segmenter& seg);
cine::Segmenter load_segmenter(const std::filesystem::path& dir);

// A trained fusion model directory holding everything needed to featurize
// a cohort and predict: model.json (run config, vocabulary, numeric schema,
// death offset), text.cfw, segmenter.cfw and fusion.cfw.
struct ModelArtifacts {
  RunConfig config;
  TextModel text;
  cine::Segmenter segmenter;
  numeric::NumericSchema schema;
  MultimodalModel model;
};

void save_model(const std::filesystem::path& dir, const ModelArtifacts& a);
// Throws FormatError naming the offending file.
ModelArtifacts load_model(const std::filesystem::path& dir);

}  // namespace cardiofuse::train
