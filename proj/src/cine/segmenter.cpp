#include "cardiofuse/cine/segmenter.hpp"

#include <stdexcept>
#include <string>

namespace cardiofuse::cine {

void SegmenterConfig::validate() const {
  if (dims.empty()) throw std::invalid_argument("SegmenterConfig: at least one stage is required");
  for (auto d : dims)
    if (d == 0) throw std::invalid_argument("SegmenterConfig: stage dims must be positive");
  if (patch == 0 || classes < 2 || feature_dim == 0)
    throw std::invalid_argument("SegmenterConfig: patch, classes and feature_dim must be positive");
  if (heads != 1) throw std::invalid_argument("SegmenterConfig: only single-head attention is implemented");
  const std::size_t factor = patch << (stages() - 1);
  if (height == 0 || width == 0 || height % factor != 0 || width % factor != 0)
    throw std::invalid_argument("SegmenterConfig: image " + std::to_string(height) + "x" + std::to_string(width) +
                                " not divisible by patch * 2^(stages-1) = " + std::to_string(factor));
}

namespace {

using Index = std::shared_ptr<const std::vector<std::size_t>>;

Index patchify_index(std::size_t h, std::size_t w, std::size_t p) {
  const std::size_t gw = w / p, gh = h / p;
  std::vector<std::size_t> idx;
  idx.reserve(h * w);
  for (std::size_t ti = 0; ti < gh; ++ti)
    for (std::size_t tj = 0; tj < gw; ++tj)
      for (std::size_t pi = 0; pi < p; ++pi)
        for (std::size_t pj = 0; pj < p; ++pj) idx.push_back((ti * p + pi) * w + tj * p + pj);
  return std::make_shared<const std::vector<std::size_t>>(std::move(idx));
}

// [gh*gw x d] -> [(gh/2)*(gw/2) x 4d], concatenating each 2x2 neighbourhood.
Index merge_index(std::size_t gh, std::size_t gw, std::size_t d) {
  std::vector<std::size_t> idx;
  idx.reserve(gh * gw * d);
  for (std::size_t i = 0; i < gh / 2; ++i)
    for (std::size_t j = 0; j < gw / 2; ++j)
      for (std::size_t di = 0; di < 2; ++di)
        for (std::size_t dj = 0; dj < 2; ++dj)
          for (std::size_t c = 0; c < d; ++c) idx.push_back(((2 * i + di) * gw + 2 * j + dj) * d + c);
  return std::make_shared<const std::vector<std::size_t>>(std::move(idx));
}

// [gh*gw x 4d] -> [(2gh)*(2gw) x d], splitting each token into a 2x2 block.
Index expand_index(std::size_t gh, std::size_t gw, std::size_t d) {
  const std::size_t ow = 2 * gw;
  std::vector<std::size_t> idx;
  idx.reserve(4 * gh * gw * d);
  for (std::size_t y = 0; y < 2 * gh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t c = 0; c < d; ++c)
        idx.push_back(((y / 2) * gw + x / 2) * 4 * d + ((y % 2) * 2 + x % 2) * d + c);
  return std::make_shared<const std::vector<std::size_t>>(std::move(idx));
}

// [gh*gw x p*p*k] token logits -> [h*w x k] pixel logits.
Index unpatchify_index(std::size_t h, std::size_t w, std::size_t p, std::size_t k) {
  const std::size_t gw = w / p;
  std::vector<std::size_t> idx;
  idx.reserve(h * w * k);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < k; ++c)
        idx.push_back(((y / p) * gw + x / p) * p * p * k + ((y % p) * p + x % p) * k + c);
  return std::make_shared<const std::vector<std::size_t>>(std::move(idx));
}

}  // namespace

Segmenter::Segmenter(SegmenterConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  RngStream rng(seed);
  const auto& dims = cfg_.dims;
  const std::size_t stages = cfg_.stages();
  embed_ = nn::Linear(cfg_.patch * cfg_.patch, dims[0], rng);
  embed_norm_ = nn::LayerNorm(dims[0]);
  for (std::size_t s = 0; s < stages; ++s) {
    encoder_.emplace_back(attn::AttentionConfig{.d_model = dims[s], .d_head = dims[s]}, rng);
    if (s + 1 < stages) {
      merge_norm_.emplace_back(4 * dims[s]);
      merge_.emplace_back(4 * dims[s], dims[s + 1], rng);
    }
  }
  for (std::size_t s = 0; s + 1 < stages; ++s) {
    DecoderStage st;
    st.expand = nn::Linear(dims[s + 1], 4 * dims[s], rng);
    st.expand_norm = nn::LayerNorm(dims[s]);
    st.fuse = attn::SkipCrossAttention(dims[s], dims[s], rng);
    st.block = attn::EfficientDualBlock(attn::AttentionConfig{.d_model = dims[s], .d_head = dims[s]}, rng);
    decoder_.push_back(std::move(st));
  }
  head_ = nn::Linear(dims[0], cfg_.patch * cfg_.patch * cfg_.classes, rng);
  feature_head_ = nn::Linear(dims.back(), cfg_.feature_dim, rng);

  patchify_ = patchify_index(cfg_.height, cfg_.width, cfg_.patch);
  for (std::size_t s = 0; s + 1 < stages; ++s) {
    merge_index_.push_back(merge_index(cfg_.grid_h(s), cfg_.grid_w(s), dims[s]));
    expand_index_.push_back(expand_index(cfg_.grid_h(s + 1), cfg_.grid_w(s + 1), dims[s]));
  }
  unpatchify_ = unpatchify_index(cfg_.height, cfg_.width, cfg_.patch, cfg_.classes);
}

Segmenter::FrameOutput Segmenter::forward_frame(const NdArray& frame) const {
  if (frame.size() != cfg_.height * cfg_.width)
    throw std::invalid_argument("Segmenter: frame has " + std::to_string(frame.size()) + " pixels, expected " +
                                std::to_string(cfg_.height * cfg_.width));
  const auto& dims = cfg_.dims;
  const std::size_t stages = cfg_.stages();
  auto tokens = [&](std::size_t s) { return cfg_.grid_h(s) * cfg_.grid_w(s); };

  Var x = gather(Var::constant(frame), patchify_, {tokens(0), cfg_.patch * cfg_.patch});
  x = embed_norm_(embed_(x));
  std::vector<Var> skips;
  for (std::size_t s = 0; s < stages; ++s) {
    x = encoder_[s](x);
    if (s + 1 < stages) {
      skips.push_back(x);
      x = merge_[s](merge_norm_[s](gather(x, merge_index_[s], {tokens(s + 1), 4 * dims[s]})));
    }
  }
  const Var bottleneck = x;
  for (std::size_t s = stages - 1; s-- > 0;) {
    const auto& st = decoder_[s];
    Var up = gather(st.expand(x), expand_index_[s], {tokens(s), dims[s]});
    x = st.block(st.fuse(st.expand_norm(up), skips[s]));
  }
  Var logits = gather(head_(x), unpatchify_, {cfg_.height * cfg_.width, cfg_.classes});
  return {logits, bottleneck};
}

void Segmenter::check_volume(const CineVolume& v) const {
  if (v.height != cfg_.height || v.width != cfg_.width || v.depth == 0)
    throw std::invalid_argument("Segmenter: volume " + std::to_string(v.height) + "x" + std::to_string(v.width) + "x" +
                                std::to_string(v.depth) + " does not match configured " + std::to_string(cfg_.height) +
                                "x" + std::to_string(cfg_.width));
  if (v.voxels.size() != v.height * v.width * v.depth) throw std::invalid_argument("Segmenter: voxel count mismatch");
}

NdArray Segmenter::frame_of(const CineVolume& v, std::size_t d) {
  const std::size_t n = v.height * v.width;
  NdArray f({n});
  for (std::size_t i = 0; i < n; ++i) f[i] = v.voxels[d * n + i];
  return f;
}

SegmentOutput Segmenter::segment(const CineVolume& v) const {
  check_volume(v);
  NoGradGuard ng;
  const std::size_t n = v.height * v.width, k = cfg_.classes;
  SegmentOutput out{SegMask(v.height, v.width, v.depth), NdArray({v.depth * n, k})};
  for (std::size_t d = 0; d < v.depth; ++d) {
    const auto probs = softmax(forward_frame(frame_of(v, d)).logits, 1);
    const auto& p = probs.value();
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 0; c < k; ++c) {
        out.probabilities.at(d * n + i, c) = p.at(i, c);
        if (p.at(i, c) > p.at(i, best)) best = c;
      }
      out.mask.classes[d * n + i] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

Var Segmenter::pooled_bottleneck(const CineVolume& v) const {
  check_volume(v);
  std::vector<Var> frames;
  frames.reserve(v.depth);
  for (std::size_t d = 0; d < v.depth; ++d) frames.push_back(mean_rows(forward_frame(frame_of(v, d)).bottleneck));
  return mean_rows(concat_rows(frames));
}

Var Segmenter::extract_cine_feature(const CineVolume& v) const { return feature_head_(pooled_bottleneck(v)); }

nn::ParamList Segmenter::params() const {
  nn::ParamList out;
  embed_.collect(out, "embed");
  embed_norm_.collect(out, "embed_norm");
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    const std::string p = "encoder" + std::to_string(s);
    encoder_[s].collect(out, p + ".block");
    if (s < merge_.size()) {
      merge_norm_[s].collect(out, p + ".merge_norm");
      merge_[s].collect(out, p + ".merge");
    }
  }
  for (std::size_t s = 0; s < decoder_.size(); ++s) {
    const std::string p = "decoder" + std::to_string(s);
    decoder_[s].expand.collect(out, p + ".expand");
    decoder_[s].expand_norm.collect(out, p + ".expand_norm");
    decoder_[s].fuse.collect(out, p + ".fuse");
    decoder_[s].block.collect(out, p + ".block");
  }
  head_.collect(out, "head");
  feature_head_.collect(out, "feature_head");
  return out;
}

}  // namespace cardiofuse::cine
