#include "cardiofuse/fusion/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "cardiofuse/attention/attention.hpp"

namespace cardiofuse::fusion {

const std::array<std::string, kModalities>& modality_names() {
  static const std::array<std::string, kModalities> names{"text", "cine", "numeric"};
  return names;
}

AllocationStrategy AllocationStrategy::fixed(double w_text, double w_cine, double w_num) {
  AllocationStrategy s{Kind::Fixed, {w_text, w_cine, w_num}};
  s.validate();
  return s;
}

void AllocationStrategy::validate() const {
  if (kind == Kind::SelfReasoning) return;
  double sum = 0;
  for (double w : weights) {
    if (!(w >= 0) || !std::isfinite(w)) throw std::invalid_argument("AllocationStrategy: fixed weights must be >= 0");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("AllocationStrategy: fixed weights must sum to 1");
}

std::string AllocationStrategy::id() const {
  if (kind == Kind::SelfReasoning) return "self_reasoning";
  char buf[64];
  std::snprintf(buf, sizeof buf, "fixed_%g_%g_%g", 100 * weights[0], 100 * weights[1], 100 * weights[2]);
  return buf;
}

void ModalityBatch::validate(std::size_t dim) const {
  if (available.rank() != 2 || available.cols() != kModalities)
    throw std::invalid_argument("ModalityBatch: availability must be [B x 3]");
  const std::size_t b = available.rows();
  if (b == 0) throw std::invalid_argument("ModalityBatch: empty batch");
  for (const Var* v : {&text, &cine, &numeric})
    if (!v->defined() || v->value().rank() != 2 || v->value().rows() != b || v->value().cols() != dim)
      throw std::invalid_argument("ModalityBatch: every modality needs [B x " + std::to_string(dim) + "] rows");
  for (std::size_t i = 0; i < b; ++i) {
    double any = 0;
    for (std::size_t m = 0; m < kModalities; ++m) {
      const double a = available.at(i, m);
      if (a != 0.0 && a != 1.0) throw std::invalid_argument("ModalityBatch: availability must be 0 or 1");
      any += a;
    }
    if (any == 0) throw std::invalid_argument("ModalityBatch: row " + std::to_string(i) + " has no available modality");
  }
}

void ResidualBlock::collect(nn::ParamList& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

FusionModel::FusionModel(const FusionConfig& cfg, RngStream& rng)
    : wq(cfg.dim, cfg.d_attn, rng, false),
      wk(cfg.dim, cfg.d_attn, rng, false),
      wv(cfg.dim, cfg.dim, rng, false),
      fusion(cfg.dim, cfg.dim, rng),
      death_head(cfg.dim, 1, rng),
      cause_head(cfg.dim, cfg.cause_classes, rng),
      days_head(cfg.dim, 1, rng),
      macces_head(cfg.dim, cfg.macces_classes, rng),
      cfg_(cfg) {
  for (std::size_t b = 0; b < cfg.residual_blocks; ++b) blocks.emplace_back(cfg.dim, rng);
}

namespace {

// Patient-major token rows: row 3b + m holds modality m of patient b.
Var token_rows(const ModalityBatch& batch) {
  const std::size_t b = batch.size();
  std::vector<std::size_t> order(kModalities * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t m = 0; m < kModalities; ++m) order[kModalities * i + m] = m * b + i;
  return gather_rows(concat_rows({batch.text, batch.cine, batch.numeric}), order);
}

// Reduces each group of three token rows to the weighted sum given by
// weights[B x 3], using one row per group of the grouped product.
Var pool_groups(const Var& values, const NdArray& weights) {
  const std::size_t b = weights.rows();
  NdArray a({kModalities * b, kModalities});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t m = 0; m < kModalities; ++m) a.at(kModalities * i, m) = weights.at(i, m);
  std::vector<std::size_t> first(b);
  for (std::size_t i = 0; i < b; ++i) first[i] = kModalities * i;
  return gather_rows(attn::group_apply(Var::constant(a), values, kModalities), first);
}

}  // namespace

std::pair<Var, NdArray> FusionModel::context(const ModalityBatch& batch, const AllocationStrategy& strategy) const {
  batch.validate(cfg_.dim);
  strategy.validate();
  const std::size_t b = batch.size();
  const NdArray& avail = batch.available;
  const Var tokens = token_rows(batch);
  NdArray allocation({b, kModalities});

  if (strategy.kind == AllocationStrategy::Kind::Fixed) {
    for (std::size_t i = 0; i < b; ++i) {
      double total = 0;
      for (std::size_t m = 0; m < kModalities; ++m) total += strategy.weights[m] * avail.at(i, m);
      if (!(total > 0)) throw std::invalid_argument("fuse: fixed weights put no mass on the available modalities");
      for (std::size_t m = 0; m < kModalities; ++m) allocation.at(i, m) = strategy.weights[m] * avail.at(i, m) / total;
    }
    return {pool_groups(tokens, allocation), allocation};
  }

  NdArray key_mask({kModalities * b, kModalities});
  for (std::size_t r = 0; r < kModalities * b; ++r)
    for (std::size_t m = 0; m < kModalities; ++m) key_mask.at(r, m) = avail.at(r / kModalities, m);
  const Var scores = scale(attn::group_scores(wq(tokens), wk(tokens), kModalities), 1.0 / std::sqrt(double(cfg_.d_attn)));
  const Var a = masked_softmax(scores, key_mask);
  const Var out = attn::group_apply(a, wv(tokens), kModalities);

  // Mean over the available query tokens, both for the received attention
  // mass and for the pooled context.
  NdArray query_weight({b, kModalities});
  const NdArray& av = a.value();
  for (std::size_t i = 0; i < b; ++i) {
    double n = 0;
    for (std::size_t m = 0; m < kModalities; ++m) n += avail.at(i, m);
    for (std::size_t q = 0; q < kModalities; ++q) {
      query_weight.at(i, q) = avail.at(i, q) / n;
      if (avail.at(i, q) == 0) continue;
      for (std::size_t m = 0; m < kModalities; ++m) allocation.at(i, m) += av.at(kModalities * i + q, m) / n;
    }
  }
  return {pool_groups(out, query_weight), allocation};
}

HeadOutputs FusionModel::predict(const Var& fused) const {
  return {death_head(fused), cause_head(fused), scale(softplus(days_head(fused)), cfg_.days_scale), macces_head(fused)};
}

FusionOutput FusionModel::forward(const ModalityBatch& batch, const AllocationStrategy& strategy) const {
  auto [ctx, allocation] = context(batch, strategy);
  Var h = fusion(ctx);
  for (const auto& blk : blocks) h = blk(h);
  return {ctx, h, std::move(allocation), predict(h)};
}

void FusionModel::collect(nn::ParamList& out, const std::string& prefix) const {
  wq.collect(out, prefix + "wq");
  wk.collect(out, prefix + "wk");
  wv.collect(out, prefix + "wv");
  fusion.collect(out, prefix + "fusion");
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(out, prefix + "residual" + std::to_string(b));
  death_head.collect(out, prefix + "death_head");
  cause_head.collect(out, prefix + "cause_head");
  days_head.collect(out, prefix + "days_head");
  macces_head.collect(out, prefix + "macces_head");
}

const char* risk_name(RiskLevel r) {
  switch (r) {
    case RiskLevel::Low: return "low";
    case RiskLevel::Medium: return "medium";
    case RiskLevel::High: return "high";
  }
  return "?";
}

void RiskThresholds::validate() const {
  if (!(0 < low && low < high && high < 1)) throw std::invalid_argument("RiskThresholds: need 0 < low < high < 1");
}

RiskLevel risk_stratify(double p, const RiskThresholds& t) {
  t.validate();
  if (p <= t.low) return RiskLevel::Low;
  if (p <= t.high) return RiskLevel::Medium;
  return RiskLevel::High;
}

namespace {

std::vector<double> row_softmax(const NdArray& logits, std::size_t r) {
  const std::size_t k = logits.cols();
  std::vector<double> p(k);
  double mx = -INFINITY, s = 0;
  for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, logits.at(r, j));
  for (std::size_t j = 0; j < k; ++j) s += p[j] = std::exp(logits.at(r, j) - mx);
  for (auto& x : p) x /= s;
  return p;
}

}  // namespace

std::vector<PredictionBundle> bundles(const FusionOutput& out, const RiskThresholds& t) {
  std::vector<PredictionBundle> res;
  const auto& h = out.heads;
  for (std::size_t i = 0; i < out.allocation.rows(); ++i) {
    PredictionBundle b;
    b.death_probability = 1.0 / (1.0 + std::exp(-h.death_logit.value().at(i, 0)));
    b.cause_probabilities = row_softmax(h.cause_logits.value(), i);
    b.cause = std::max_element(b.cause_probabilities.begin(), b.cause_probabilities.end()) - b.cause_probabilities.begin();
    b.days = h.days.value().at(i, 0);
    b.macces_probabilities = row_softmax(h.macces_logits.value(), i);
    b.macces =
        std::max_element(b.macces_probabilities.begin(), b.macces_probabilities.end()) - b.macces_probabilities.begin();
    b.risk = risk_stratify(b.death_probability, t);
    for (std::size_t m = 0; m < kModalities; ++m) b.allocation[m] = out.allocation.at(i, m);
    res.push_back(std::move(b));
  }
  return res;
}

std::vector<TimelinePoint> interpolate_timeline(const std::vector<double>& times, const std::vector<double>& probabilities,
                                                const std::vector<double>& query, const RiskThresholds& t) {
  if (times.empty()) throw std::invalid_argument("risk_timeline: empty history");
  if (times.size() != probabilities.size()) throw std::invalid_argument("risk_timeline: times and probabilities differ in length");
  if (!std::is_sorted(times.begin(), times.end()) || std::adjacent_find(times.begin(), times.end()) != times.end())
    throw std::invalid_argument("risk_timeline: observation times must be strictly increasing");
  std::vector<TimelinePoint> out;
  for (double q : query) {
    TimelinePoint pt{q, 0, RiskLevel::Low, false};
    auto hi = std::lower_bound(times.begin(), times.end(), q);
    const std::size_t k = static_cast<std::size_t>(hi - times.begin());
    if (hi != times.end() && *hi == q) {
      pt.probability = probabilities[k];
      pt.observed = true;
    } else if (k == 0) {
      pt.probability = probabilities.front();
    } else if (k == times.size()) {
      pt.probability = probabilities.back();
    } else {
      const double f = (q - times[k - 1]) / (times[k] - times[k - 1]);
      pt.probability = (1 - f) * probabilities[k - 1] + f * probabilities[k];
    }
    pt.level = risk_stratify(pt.probability, t);
    out.push_back(pt);
  }
  return out;
}

std::vector<TimelinePoint> risk_timeline(const FusionModel& model, const std::vector<TimedFeatures>& history,
                                         const AllocationStrategy& strategy, double horizon, double step,
                                         const RiskThresholds& t) {
  if (history.empty()) throw std::invalid_argument("risk_timeline: empty history");
  if (!(step > 0)) throw std::invalid_argument("risk_timeline: step must be positive");
  std::vector<double> times, probs;
  NoGradGuard guard;
  for (const auto& h : history) {
    if (h.features.size() != 1) throw std::invalid_argument("risk_timeline: one feature row per observation");
    const auto out = model.forward(h.features, strategy);
    times.push_back(h.time);
    probs.push_back(1.0 / (1.0 + std::exp(-out.heads.death_logit.value()[0])));
  }
  std::vector<double> query;
  for (std::size_t i = 0;; ++i) {
    const double q = times.front() + double(i) * step;
    if (q > horizon + 1e-12) break;
    query.push_back(q);
  }
  for (double x : times) query.push_back(x);
  std::sort(query.begin(), query.end());
  query.erase(std::unique(query.begin(), query.end()), query.end());
  return interpolate_timeline(times, probs, query, t);
}

}  // namespace cardiofuse::fusion
