#pragma once

#include <cstddef>

#include "cardiofuse/tensor/layers.hpp"

namespace cardiofuse::attn {

struct AttentionConfig {
  std::size_t d_model = 0;
  std::size_t d_head = 0;
  // Channel-attention temperature; 0 selects sqrt(d_head).
  double temperature = 0.0;
  double eps = 1e-5;
  std::size_t heads = 1;

  double tau() const;
  void validate() const;
};

// Bias-free query/key/value maps and an optional output map.
struct ProjectionSet {
  nn::Linear wq, wk, wv;
  nn::Linear wo;  // weight undefined when absent

  ProjectionSet() = default;
  ProjectionSet(std::size_t d_in, std::size_t d_head, std::size_t d_v, RngStream& rng, std::size_t d_out = 0);

  bool has_output() const { return wo.weight.defined(); }
  Var output(const Var& y) const { return has_output() ? wo(y) : y; }
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

// Kernels over already-projected operands.

// softmax(q k^T / sqrt(d)) v. mask, when given, has one {0,1} entry per key.
Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, const NdArray* mask = nullptr);
// softmax_features(q) * (softmax_positions(k)^T v).
Var efficient_attention_kernel(const Var& q, const Var& k, const Var& v);
// v * softmax(q^T k / tau)^T, mixing channels.
Var transpose_attention_kernel(const Var& q, const Var& k, const Var& v, double tau);

Var efficient_attention(const Var& x, const ProjectionSet& proj);
Var transpose_attention(const Var& x, const ProjectionSet& proj, double tau);

// Grouped scaled-dot attention over consecutive runs of g rows, as used for a
// batch of token sets of equal size. q, k are [B*g x d], v is [B*g x dv].
// group_scores gives [B*g x g] with S[i, j] = q_i . k_{g*(i/g) + j}.
Var group_scores(const Var& q, const Var& k, std::size_t g);
// out_i = sum_j a[i, j] v_{g*(i/g) + j}.
Var group_apply(const Var& a, const Var& v, std::size_t g);

// y = x + TA(LN(x)); z = y + EA(LN(y)).
struct EfficientDualBlock {
  nn::LayerNorm norm_channel, norm_spatial;
  ProjectionSet channel, spatial;
  double tau = 1.0;

  EfficientDualBlock() = default;
  EfficientDualBlock(const AttentionConfig& cfg, RngStream& rng);

  Var operator()(const Var& x) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

// Cross attention fusing a decoder stream x1 [n x d1] into skip features
// x2 [n x d2]. x1 is linearly mapped to d2 and serves as values directly;
// queries come from LN(x2), keys from LN of the mapped x1.
struct SkipCrossAttention {
  nn::Linear lift;
  nn::LayerNorm norm_query, norm_key;
  nn::Linear wq, wk;

  SkipCrossAttention() = default;
  SkipCrossAttention(std::size_t d1, std::size_t d2, RngStream& rng);

  Var operator()(const Var& x1, const Var& x2) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

}  // namespace cardiofuse::attn
