#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "cardiofuse/attention/attention.hpp"
#include "cardiofuse/cine/volume.hpp"

namespace cardiofuse::cine {

struct SegmenterConfig {
  std::size_t height = 64, width = 64;
  std::size_t patch = 4;
  // One encoder stage per entry; each later stage halves the token grid.
  std::vector<std::size_t> dims{32, 64, 128};
  std::size_t classes = kNumClasses;
  std::size_t feature_dim = 256;
  std::size_t heads = 1;

  std::size_t stages() const { return dims.size(); }
  // Token grid side of stage s.
  std::size_t grid_h(std::size_t s) const { return height / patch >> s; }
  std::size_t grid_w(std::size_t s) const { return width / patch >> s; }
  void validate() const;
};

struct SegmentOutput {
  SegMask mask;
  // [depth * height * width x classes], voxel order as in CineVolume.
  NdArray probabilities;
};

// U-shaped attention segmenter applied frame by frame. Encoder: patch
// embedding, then per stage an efficient dual attention block, with patch
// merging between stages. Decoder: per stage a 2x token expansion, skip cross
// attention against the encoder output of that resolution, and a dual
// attention block; a linear head maps each token to patch x patch pixel logits.
class Segmenter {
 public:
  Segmenter() = default;
  Segmenter(SegmenterConfig cfg, std::uint64_t seed);

  const SegmenterConfig& config() const { return cfg_; }

  struct FrameOutput {
    Var logits;      // [height * width x classes], row-major pixels
    Var bottleneck;  // [tokens x dims.back()]
  };
  // frame holds height * width intensities, row-major.
  FrameOutput forward_frame(const NdArray& frame) const;

  // Inference; runs without recording a graph.
  SegmentOutput segment(const CineVolume& v) const;
  // Mean of bottleneck tokens over every frame, [1 x dims.back()]. Records a
  // graph when gradient mode is on.
  Var pooled_bottleneck(const CineVolume& v) const;
  // feature_head applied to the pooled bottleneck, [1 x feature_dim].
  Var extract_cine_feature(const CineVolume& v) const;

  const nn::Linear& feature_head() const { return feature_head_; }
  nn::ParamList params() const;

  static NdArray frame_of(const CineVolume& v, std::size_t d);

 private:
  struct DecoderStage {
    nn::Linear expand;
    nn::LayerNorm expand_norm;
    attn::SkipCrossAttention fuse;
    attn::EfficientDualBlock block;
  };

  void check_volume(const CineVolume& v) const;

  SegmenterConfig cfg_;
  nn::Linear embed_;
  nn::LayerNorm embed_norm_;
  std::vector<attn::EfficientDualBlock> encoder_;
  std::vector<nn::LayerNorm> merge_norm_;
  std::vector<nn::Linear> merge_;
  std::vector<DecoderStage> decoder_;  // decoder_[s] lifts stage s + 1 to stage s
  nn::Linear head_;
  nn::Linear feature_head_;

  using Index = std::shared_ptr<const std::vector<std::size_t>>;
  Index patchify_;
  std::vector<Index> merge_index_;   // stage s grid to stage s + 1 input
  std::vector<Index> expand_index_;  // stage s + 1 expanded features to stage s tokens
  Index unpatchify_;
};

}  // namespace cardiofuse::cine
