#include "cardiofuse/attention/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cardiofuse::attn {

double AttentionConfig::tau() const {
  return temperature > 0.0 ? temperature : std::sqrt(static_cast<double>(d_head));
}

void AttentionConfig::validate() const {
  if (d_model == 0 || d_head == 0 || eps <= 0.0 || temperature < 0.0)
    throw std::invalid_argument("AttentionConfig: dims, eps and temperature must be positive");
  if (heads != 1) throw std::invalid_argument("AttentionConfig: only single-head attention is implemented");
}

ProjectionSet::ProjectionSet(std::size_t d_in, std::size_t d_head, std::size_t d_v, RngStream& rng, std::size_t d_out)
    : wq(d_in, d_head, rng, false), wk(d_in, d_head, rng, false), wv(d_in, d_v, rng, false) {
  if (d_out > 0) wo = nn::Linear(d_v, d_out, rng, false);
}

void ProjectionSet::collect(nn::ParamList& out, const std::string& prefix) const {
  wq.collect(out, prefix + ".wq");
  wk.collect(out, prefix + ".wk");
  wv.collect(out, prefix + ".wv");
  if (has_output()) wo.collect(out, prefix + ".wo");
}

namespace {

void require_matrix(const Var& x, const char* what) {
  if (x.value().rank() != 2) throw std::invalid_argument(std::string(what) + ": expected a matrix");
}

}  // namespace

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, const NdArray* mask) {
  require_matrix(q, "scaled_dot_attention");
  require_matrix(k, "scaled_dot_attention");
  require_matrix(v, "scaled_dot_attention");
  if (k.value().rows() != v.value().rows())
    throw std::invalid_argument("scaled_dot_attention: key and value counts differ");
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
  const Var scores = scale(matmul_nt(q, k), inv);
  const Var weights = mask ? masked_softmax(scores, *mask) : softmax(scores, 1);
  return matmul(weights, v);
}

Var efficient_attention_kernel(const Var& q, const Var& k, const Var& v) {
  require_matrix(q, "efficient_attention");
  require_matrix(k, "efficient_attention");
  if (q.value().rows() == 0) throw std::invalid_argument("efficient_attention: no positions");
  const Var context = matmul_tn(softmax(k, 0), v);
  return matmul(softmax(q, 1), context);
}

Var transpose_attention_kernel(const Var& q, const Var& k, const Var& v, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("transpose_attention: temperature must be positive");
  require_matrix(q, "transpose_attention");
  const Var mix = softmax(scale(matmul_tn(q, k), 1.0 / tau), 1);
  return matmul_nt(v, mix);
}

Var efficient_attention(const Var& x, const ProjectionSet& proj) {
  return proj.output(efficient_attention_kernel(proj.wq(x), proj.wk(x), proj.wv(x)));
}

Var transpose_attention(const Var& x, const ProjectionSet& proj, double tau) {
  return proj.output(transpose_attention_kernel(proj.wq(x), proj.wk(x), proj.wv(x), tau));
}

Var group_scores(const Var& q, const Var& k, std::size_t g) {
  require_matrix(q, "group_scores");
  require_matrix(k, "group_scores");
  const std::size_t n = q.value().rows(), d = q.value().cols();
  if (g == 0 || n % g != 0 || k.value().rows() != n || k.value().cols() != d)
    throw std::invalid_argument("group_scores: shapes " + shape_str(q.shape()) + " and " + shape_str(k.shape()) +
                                " do not split into groups of " + std::to_string(g));
  NdArray s({n, g}, 0.0);
  const double* qd = q.value().data();
  const double* kd = k.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t base = (i / g) * g;
    for (std::size_t j = 0; j < g; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += qd[i * d + c] * kd[(base + j) * d + c];
      s.at(i, j) = acc;
    }
  }
  const NdArray qv = q.value(), kv = k.value();
  return make_result("group_scores", std::move(s), {q, k},
                     [qv, kv, g, n, d](const NdArray& go, std::vector<NdArray*>& grads) {
                       for (std::size_t i = 0; i < n; ++i) {
                         const std::size_t base = (i / g) * g;
                         for (std::size_t j = 0; j < g; ++j) {
                           const double w = go.at(i, j);
                           if (w == 0.0) continue;
                           const std::size_t kr = base + j;
                           if (grads[0])
                             for (std::size_t c = 0; c < d; ++c) (*grads[0])[i * d + c] += w * kv[kr * d + c];
                           if (grads[1])
                             for (std::size_t c = 0; c < d; ++c) (*grads[1])[kr * d + c] += w * qv[i * d + c];
                         }
                       }
                     });
}

Var group_apply(const Var& a, const Var& v, std::size_t g) {
  require_matrix(a, "group_apply");
  require_matrix(v, "group_apply");
  const std::size_t n = a.value().rows(), dv = v.value().cols();
  if (g == 0 || n % g != 0 || a.value().cols() != g || v.value().rows() != n)
    throw std::invalid_argument("group_apply: shapes " + shape_str(a.shape()) + " and " + shape_str(v.shape()) +
                                " do not split into groups of " + std::to_string(g));
  NdArray out({n, dv}, 0.0);
  const double* vd = v.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t base = (i / g) * g;
    for (std::size_t j = 0; j < g; ++j) {
      const double w = a.value().at(i, j);
      for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += w * vd[(base + j) * dv + c];
    }
  }
  const NdArray av = a.value(), vv = v.value();
  return make_result("group_apply", std::move(out), {a, v},
                     [av, vv, g, n, dv](const NdArray& go, std::vector<NdArray*>& grads) {
                       for (std::size_t i = 0; i < n; ++i) {
                         const std::size_t base = (i / g) * g;
                         for (std::size_t j = 0; j < g; ++j) {
                           const std::size_t vr = base + j;
                           if (grads[0]) {
                             double acc = 0.0;
                             for (std::size_t c = 0; c < dv; ++c) acc += go[i * dv + c] * vv[vr * dv + c];
                             (*grads[0])[i * g + j] += acc;
                           }
                           if (grads[1]) {
                             const double w = av[i * g + j];
                             for (std::size_t c = 0; c < dv; ++c) (*grads[1])[vr * dv + c] += w * go[i * dv + c];
                           }
                         }
                       }
                     });
}

EfficientDualBlock::EfficientDualBlock(const AttentionConfig& cfg, RngStream& rng)
    : norm_channel(cfg.d_model, cfg.eps),
      norm_spatial(cfg.d_model, cfg.eps),
      channel(cfg.d_model, cfg.d_model, cfg.d_model, rng, cfg.d_model),
      spatial(cfg.d_model, cfg.d_head, cfg.d_model, rng, cfg.d_model),
      tau(cfg.tau()) {
  cfg.validate();
}

Var EfficientDualBlock::operator()(const Var& x) const {
  const Var y = add(x, transpose_attention(norm_channel(x), channel, tau));
  return add(y, efficient_attention(norm_spatial(y), spatial));
}

void EfficientDualBlock::collect(nn::ParamList& out, const std::string& prefix) const {
  norm_channel.collect(out, prefix + ".norm_channel");
  norm_spatial.collect(out, prefix + ".norm_spatial");
  channel.collect(out, prefix + ".channel");
  spatial.collect(out, prefix + ".spatial");
}

SkipCrossAttention::SkipCrossAttention(std::size_t d1, std::size_t d2, RngStream& rng)
    : lift(d1, d2, rng), norm_query(d2), norm_key(d2), wq(d2, d2, rng, false), wk(d2, d2, rng, false) {}

Var SkipCrossAttention::operator()(const Var& x1, const Var& x2) const {
  require_matrix(x1, "skip_cross_attention");
  require_matrix(x2, "skip_cross_attention");
  if (x1.value().rows() != x2.value().rows())
    throw std::invalid_argument("skip_cross_attention: token counts differ (" + shape_str(x1.shape()) + " vs " +
                                shape_str(x2.shape()) + ")");
  const Var lifted = lift(x1);
  const Var q = wq(norm_query(x2));
  const Var k = wk(norm_key(lifted));
  return add(x2, efficient_attention_kernel(q, k, lifted));
}

void SkipCrossAttention::collect(nn::ParamList& out, const std::string& prefix) const {
  lift.collect(out, prefix + ".lift");
  norm_query.collect(out, prefix + ".norm_query");
  norm_key.collect(out, prefix + ".norm_key");
  wq.collect(out, prefix + ".wq");
  wk.collect(out, prefix + ".wk");
}

}  // namespace cardiofuse::attn
