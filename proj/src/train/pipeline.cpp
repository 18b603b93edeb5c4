#include "cardiofuse/train/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

#include "cardiofuse/cine/metrics.hpp"
#include "cardiofuse/train/losses.hpp"

namespace cardiofuse::train {

using cohort::Cohort;

// ---------------------------------------------------------------- split

Split make_split(const Cohort& c, std::uint64_t seed) {
  const std::size_t n = c.patients.size();
  std::vector<std::size_t> cine, plain;
  for (std::size_t i = 0; i < n; ++i) (c.patients[i].has_cine ? cine : plain).push_back(i);
  const RngStream root = RngStream(seed).substream(0x5b11);
  RngStream rc = root.substream(1), rp = root.substream(2);
  rc.shuffle(std::span<std::size_t>(cine));
  rp.shuffle(std::span<std::size_t>(plain));

  const auto cine_test = static_cast<std::size_t>(std::llround(double(cine.size()) * 36.0 / 136.0));
  const auto total_test = static_cast<std::size_t>(std::llround(0.2 * double(n)));
  const std::size_t plain_test = std::min(plain.size(), total_test > cine_test ? total_test - cine_test : 0);
  Split s;
  s.test.assign(cine.begin(), cine.begin() + static_cast<std::ptrdiff_t>(cine_test));
  s.test.insert(s.test.end(), plain.begin(), plain.begin() + static_cast<std::ptrdiff_t>(plain_test));
  s.train.assign(cine.begin() + static_cast<std::ptrdiff_t>(cine_test), cine.end());
  s.train.insert(s.train.end(), plain.begin() + static_cast<std::ptrdiff_t>(plain_test), plain.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<std::size_t> cine_members(const Cohort& c, const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> out;
  for (auto i : indices)
    if (c.patients.at(i).has_cine) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------- segmentation

void SegTrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("SegTrainConfig: epochs must be >= 1");
  if (!(dice_weight >= 0)) throw std::invalid_argument("SegTrainConfig: dice_weight must be >= 0");
  model.validate();
}

cine::CineVolume prepare_volume(const cine::CineVolume& v, const cine::SegmenterConfig& cfg) {
  return cine::preprocess_cine(v.voxels, v.height, v.width, v.depth, cfg.height, cfg.width, v.depth);
}

namespace {

void check_mask_size(const cine::SegMask& m, const cine::SegmenterConfig& cfg, const std::string& id) {
  if (m.height != cfg.height || m.width != cfg.width)
    throw std::invalid_argument("segmenter: mask of patient " + id + " does not match the frame size");
}

std::vector<std::uint8_t> frame_classes(const cine::SegMask& m, std::size_t d) {
  const std::size_t fs = m.height * m.width;
  return {m.classes.begin() + static_cast<std::ptrdiff_t>(d * fs), m.classes.begin() + static_cast<std::ptrdiff_t>((d + 1) * fs)};
}

Var frame_loss(const Var& logits, const std::vector<std::uint8_t>& classes, double dice_weight) {
  const std::vector<std::size_t> target(classes.begin(), classes.end());
  Var loss = cross_entropy_logits(logits, target);
  if (dice_weight > 0) loss = loss + scale(dice_loss(softmax(logits, 1), classes, cine::kFibrosis), dice_weight);
  return loss;
}

}  // namespace

SegEval evaluate_segmenter(const cine::Segmenter& model, const Cohort& c, const std::vector<std::size_t>& indices,
                           double dice_weight) {
  NoGradGuard guard;
  const auto& cfg = model.config();
  SegEval e;
  double loss = 0;
  std::size_t frames = 0, inter = 0, pred_total = 0, truth_total = 0;
  for (auto i : indices) {
    const auto& p = c.patients.at(i);
    if (!p.has_cine) continue;
    check_mask_size(*p.mask, cfg, p.id);
    const auto vol = prepare_volume(*p.cine, cfg);
    cine::SegMask pred(cfg.height, cfg.width, vol.depth);
    for (std::size_t d = 0; d < vol.depth; ++d) {
      const auto out = model.forward_frame(cine::Segmenter::frame_of(vol, d));
      const auto classes = frame_classes(*p.mask, d);
      loss += frame_loss(out.logits, classes, dice_weight).value().item();
      frames++;
      const NdArray& lg = out.logits.value();
      for (std::size_t r = 0; r < lg.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < lg.cols(); ++k)
          if (lg.at(r, k) > lg.at(r, best)) best = k;
        pred.classes[d * cfg.height * cfg.width + r] = static_cast<std::uint8_t>(best);
      }
    }
    const auto& truth = *p.mask;
    e.dsc += cine::dice(pred, truth, cine::kFibrosis);
    for (std::size_t v = 0; v < truth.classes.size(); ++v) {
      const bool a = pred.classes[v] == cine::kFibrosis, b = truth.classes[v] == cine::kFibrosis;
      inter += a && b;
      pred_total += a;
      truth_total += b;
    }
    if (pred.count(cine::kFibrosis) > 0 && truth.count(cine::kFibrosis) > 0) {
      const auto h = cine::hausdorff(pred, truth, cine::kFibrosis);
      e.hd += h.hd;
      e.hd95 += h.hd95;
      e.hd_volumes++;
    }
    e.volumes++;
  }
  if (e.volumes == 0) throw std::invalid_argument("evaluate_segmenter: no cine volume among the indices");
  e.dsc /= double(e.volumes);
  e.dsc_pooled = pred_total + truth_total == 0 ? 1.0 : 2.0 * double(inter) / double(pred_total + truth_total);
  if (e.hd_volumes > 0) {
    e.hd /= double(e.hd_volumes);
    e.hd95 /= double(e.hd_volumes);
  }
  e.loss = loss / double(frames);
  return e;
}

SegTrainResult train_segmenter(const Cohort& c, const Split& split, const SegTrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const auto train_idx = cine_members(c, split.train), test_idx = cine_members(c, split.test);
  if (train_idx.empty() || test_idx.empty()) throw std::invalid_argument("train_segmenter: need cine patients in both splits");

  SegTrainResult res{cine::Segmenter(cfg.model, cfg.seed), {}, {}, {}};
  const auto params = res.model.params();
  Adam opt(nn::vars_of(params), cfg.adam);

  std::vector<cine::CineVolume> volumes;
  for (auto i : train_idx) {
    check_mask_size(*c.patients[i].mask, cfg.model, c.patients[i].id);
    volumes.push_back(prepare_volume(*c.patients[i].cine, cfg.model));
  }
  res.initial = evaluate_segmenter(res.model, c, test_idx, cfg.dice_weight);

  const RngStream root = RngStream(cfg.seed).substream(0x5e6);
  std::vector<std::size_t> order(train_idx.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle = root.substream(epoch);
    shuffle.shuffle(std::span<std::size_t>(order));
    double total = 0;
    std::size_t frames = 0;
    for (auto k : order) {
      const auto& vol = volumes[k];
      const auto& mask = *c.patients[train_idx[k]].mask;
      for (std::size_t d = 0; d < vol.depth; ++d) {
        const auto out = res.model.forward_frame(cine::Segmenter::frame_of(vol, d));
        const Var loss = frame_loss(out.logits, frame_classes(mask, d), cfg.dice_weight);
        backward(loss);
        total += loss.value().item();
        frames++;
      }
      opt.step(1.0 / double(vol.depth));
    }
    const auto e = evaluate_segmenter(res.model, c, test_idx, cfg.dice_weight);
    MetricRecord r;
    r.epoch = epoch;
    r.train_loss = total / double(frames);
    r.test_loss = e.loss;
    r.dsc = e.dsc;
    r.hd = e.hd95;
    res.trace.add(r);
    res.final = e;
    if (on_epoch) on_epoch(r);
  }
  return res;
}

// ---------------------------------------------------------------- shared heads

namespace {

struct Targets {
  std::vector<double> death;
  std::vector<std::size_t> cause, macces, risk;
  NdArray days;  // [B x 1], in days
};

Targets targets_of(const Cohort& c, const std::vector<std::size_t>& rows) {
  Targets t;
  t.days = NdArray({rows.size(), 1});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& o = c.patients.at(rows[k]).outcome;
    t.death.push_back(o.death);
    t.cause.push_back(o.cause);
    t.macces.push_back(o.macces);
    t.risk.push_back(o.risk);
    t.days[k] = o.days;
  }
  return t;
}

Var head_loss(const fusion::HeadOutputs& h, const Targets& t, const HeadWeights& w, double days_scale) {
  NdArray days = t.days;
  days *= 1.0 / days_scale;
  return scale(binary_cross_entropy_logits(h.death_logit, t.death), w.death) +
         scale(cross_entropy_logits(h.cause_logits, t.cause), w.cause) +
         scale(mse(scale(h.days, 1.0 / days_scale), days), w.days) +
         scale(cross_entropy_logits(h.macces_logits, t.macces), w.macces);
}

std::size_t argmax_row(const NdArray& x, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < x.cols(); ++k)
    if (x.at(r, k) > x.at(r, best)) best = k;
  return best;
}

// Fractions of correct death, cause, MACCES and risk calls.
std::array<double, 4> head_accuracy(const fusion::HeadOutputs& h, const Targets& t, const fusion::RiskThresholds& th) {
  std::array<double, 4> acc{};
  const std::size_t n = t.death.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-h.death_logit.value().at(i, 0)));
    acc[0] += (p > 0.5) == (t.death[i] == 1.0);
    acc[1] += argmax_row(h.cause_logits.value(), i) == t.cause[i];
    acc[2] += argmax_row(h.macces_logits.value(), i) == t.macces[i];
    acc[3] += static_cast<std::size_t>(fusion::risk_stratify(p, th)) == t.risk[i];
  }
  for (auto& a : acc) a /= double(n);
  return acc;
}

}  // namespace

// ---------------------------------------------------------------- text

void TextTrainConfig::validate() const {
  if (epochs == 0 || batch == 0) throw std::invalid_argument("TextTrainConfig: epochs and batch must be >= 1");
}

namespace {

struct TextHeads {
  nn::Linear death, cause, days, macces;
  TextHeads(std::size_t d, RngStream& rng)
      : death(d, 1, rng), cause(d, 4, rng), days(d, 1, rng), macces(d, 5, rng) {}
  fusion::HeadOutputs operator()(const Var& h) const {
    return {death(h), cause(h), scale(softplus(days(h)), 100.0), macces(h)};
  }
  void collect(nn::ParamList& out) const {
    death.collect(out, "death");
    cause.collect(out, "cause");
    days.collect(out, "days");
    macces.collect(out, "macces");
  }
};

}  // namespace

TextModel pretrain_text(const Cohort& c, const Split& split, const TextTrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  std::vector<std::string> corpus;
  for (auto i : split.train) corpus.push_back(cohort::concatenated_text(c.patients.at(i)));
  TextModel m{text::build_vocab(corpus, cfg.vocab_cap), {}};
  auto ecfg = cfg.encoder;
  ecfg.vocab_size = m.vocab.size();
  const RngStream root = RngStream(cfg.seed).substream(0x7e47);
  RngStream init = root.substream(1);
  m.encoder = text::TextEncoder(ecfg, init);
  TextHeads heads(ecfg.projected, init);

  nn::ParamList params;
  m.encoder.collect(params, "text.");
  heads.collect(params);
  Adam opt(nn::vars_of(params), cfg.adam);

  auto tokens_of = [&](const std::vector<std::size_t>& rows) {
    std::vector<text::TokenSeq> out;
    for (auto i : rows) out.push_back(text::tokenize(cohort::concatenated_text(c.patients[i]), m.vocab, ecfg.max_len));
    return out;
  };
  const auto train_tokens = tokens_of(split.train), test_tokens = tokens_of(split.test);
  const Targets test_targets = targets_of(c, split.test);
  const HeadWeights w{};

  std::vector<std::size_t> order(split.train.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    RngStream sh = root.substream(100 + epoch);
    sh.shuffle(std::span<std::size_t>(order));
    double total = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t e = std::min(order.size(), b + cfg.batch);
      std::vector<text::TokenSeq> seqs;
      std::vector<std::size_t> rows;
      for (std::size_t k = b; k < e; ++k) {
        seqs.push_back(train_tokens[order[k]]);
        rows.push_back(split.train[order[k]]);
      }
      const Var loss = head_loss(heads(relu(m.encoder.project(m.encoder.encode(seqs)))), targets_of(c, rows), w, 100.0);
      backward(loss);
      opt.step();
      total += loss.value().item() * double(e - b);
    }
    MetricRecord r;
    r.epoch = epoch;
    r.train_loss = total / double(order.size());
    if (!split.test.empty()) {
      NoGradGuard guard;
      const auto h = heads(relu(m.encoder.project(m.encoder.encode(test_tokens))));
      r.test_loss = head_loss(h, test_targets, w, 100.0).value().item();
      const auto acc = head_accuracy(h, test_targets, {});
      r.acc_death = acc[0];
      r.acc_cause = acc[1];
      r.acc_macces = acc[2];
      r.acc_risk = acc[3];
      r.acc_integrated = (acc[0] + acc[2] + acc[3]) / 3.0;
    }
    if (on_epoch) on_epoch(r);
  }
  return m;
}

// ---------------------------------------------------------------- features

NdArray text_feature(const TextModel& text, const std::string& document) {
  NoGradGuard guard;
  return text.encoder.encode(text::tokenize(document, text.vocab, text.encoder.config().max_len)).value();
}

NdArray cine_feature(const cine::Segmenter& segmenter, const cine::CineVolume& raw) {
  NoGradGuard guard;
  return segmenter.pooled_bottleneck(prepare_volume(raw, segmenter.config())).value();
}

FeatureCache build_features(const std::vector<const cohort::Patient*>& patients, const TextModel& text,
                            const cine::Segmenter& segmenter, const numeric::NumericSchema& schema) {
  const std::size_t n = patients.size(), dt = text.encoder.config().d_model;
  const std::size_t dc = segmenter.config().dims.back();
  FeatureCache f;
  f.text = NdArray({n, dt});
  f.cine = NdArray({n, dc});
  f.has_cine.resize(n);
  f.schema = schema;
  std::vector<numeric::NumericRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = *patients[i];
    const NdArray t = text_feature(text, cohort::concatenated_text(p));
    std::copy(t.data(), t.data() + dt, f.text.data() + i * dt);
    f.has_cine[i] = p.has_cine;
    if (p.has_cine) {
      const NdArray b = cine_feature(segmenter, *p.cine);
      std::copy(b.data(), b.data() + dc, f.cine.data() + i * dc);
    }
    records.push_back(p.numeric);
  }
  f.numeric = numeric::normalize_batch(records, schema);
  return f;
}

FeatureCache build_features(const Cohort& c, const Split& split, const TextModel& text, const cine::Segmenter& segmenter) {
  std::vector<numeric::NumericRecord> train;
  for (auto i : split.train) train.push_back(c.patients.at(i).numeric);
  std::vector<const cohort::Patient*> all;
  for (const auto& p : c.patients) all.push_back(&p);
  return build_features(all, text, segmenter, numeric::fit_schema(c.indicators, train));
}

// ---------------------------------------------------------------- fusion

std::string ModalitySubset::label() const {
  std::vector<std::string> parts;
  if (text) parts.push_back("Textual");
  if (cine) parts.push_back("Cinematic");
  if (numeric) parts.push_back("Numerical");
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : " + ") + p;
  return out;
}

void FusionTrainConfig::validate() const {
  if (epochs == 0 || batch == 0) throw std::invalid_argument("FusionTrainConfig: epochs and batch must be >= 1");
  for (double w : {weights.death, weights.cause, weights.days, weights.macces})
    if (!(w >= 0)) throw std::invalid_argument("FusionTrainConfig: head weights must be >= 0");
  thresholds.validate();
}

MultimodalModel::MultimodalModel(const FusionTrainConfig& cfg, std::size_t text_dim, std::size_t cine_dim,
                                 std::size_t numeric_dim, RngStream& rng)
    : text_proj(text_dim, cfg.fusion.dim, rng),
      cine_proj(cine_dim, cfg.fusion.dim, rng),
      token_norm(cfg.token_norm),
      text_norm(cfg.fusion.dim),
      cine_norm(cfg.fusion.dim),
      numeric_norm(cfg.fusion.dim) {
  auto ncfg = cfg.numeric;
  ncfg.out = cfg.fusion.dim;
  numeric = numeric::NumericEncoder(numeric_dim, rng, ncfg);
  fusion = fusion::FusionModel(cfg.fusion, rng);
}

namespace {

NdArray take_rows(const NdArray& x, const std::vector<std::size_t>& rows) {
  const std::size_t d = x.cols();
  NdArray out({rows.size(), d});
  for (std::size_t k = 0; k < rows.size(); ++k) std::copy(x.data() + rows[k] * d, x.data() + (rows[k] + 1) * d, out.data() + k * d);
  return out;
}

}  // namespace

fusion::FusionOutput MultimodalModel::forward(const FeatureCache& f, const std::vector<std::size_t>& rows,
                                              const ModalitySubset& subset, const fusion::AllocationStrategy& strategy,
                                              bool training, RngStream& rng) const {
  if (!subset.text && !subset.cine && !subset.numeric) throw std::invalid_argument("forward: empty modality subset");
  NdArray avail({rows.size(), fusion::kModalities});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    avail.at(k, fusion::kText) = subset.text;
    avail.at(k, fusion::kCine) = subset.cine && f.has_cine.at(rows[k]);
    avail.at(k, fusion::kNumeric) = subset.numeric;
  }
  Var t = text_proj(Var::constant(take_rows(f.text, rows)));
  Var c = cine_proj(Var::constant(take_rows(f.cine, rows)));
  Var n = numeric(Var::constant(take_rows(f.numeric, rows)), training, rng);
  if (token_norm) {
    t = text_norm(t);
    c = cine_norm(c);
    n = numeric_norm(n);
  }
  fusion::ModalityBatch batch{t, c, n, std::move(avail)};
  auto out = fusion.forward(batch, strategy);
  if (!training && death_offset != 0.0) out.heads.death_logit = add_scalar(out.heads.death_logit, death_offset);
  return out;
}

void MultimodalModel::collect(nn::ParamList& out) const {
  text_proj.collect(out, "text_proj");
  cine_proj.collect(out, "cine_proj");
  numeric.collect(out, "numeric.");
  if (token_norm) {
    text_norm.collect(out, "text_norm");
    cine_norm.collect(out, "cine_norm");
    numeric_norm.collect(out, "numeric_norm");
  }
  fusion.collect(out, "fusion.");
}

EvalResult evaluate(const MultimodalModel& m, const Cohort& c, const FeatureCache& f, const std::vector<std::size_t>& rows,
                    const ModalitySubset& subset, const fusion::AllocationStrategy& strategy, const FusionTrainConfig& cfg) {
  if (rows.empty()) throw std::invalid_argument("evaluate: no rows");
  NoGradGuard guard;
  RngStream unused(0);
  const auto out = m.forward(f, rows, subset, strategy, false, unused);
  const Targets t = targets_of(c, rows);
  EvalResult e;
  e.loss = head_loss(out.heads, t, cfg.weights, cfg.fusion.days_scale).value().item();
  const auto acc = head_accuracy(out.heads, t, cfg.thresholds);
  e.acc_death = acc[0];
  e.acc_cause = acc[1];
  e.acc_macces = acc[2];
  e.acc_risk = acc[3];
  std::array<double, 2> hit{}, count{};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t y = t.death[i] == 1.0;
    const bool pred = out.heads.death_logit.value().at(i, 0) > 0.0;
    count[y] += 1;
    hit[y] += pred == bool(y);
    for (std::size_t k = 0; k < fusion::kModalities; ++k) e.mean_allocation[k] += out.allocation.at(i, k) / double(rows.size());
  }
  for (std::size_t y = 0; y < 2; ++y) e.death_recall[y] = count[y] > 0 ? hit[y] / count[y] : 0.0;
  return e;
}

FusionTrainResult train_fusion(const Cohort& c, const Split& split, const FeatureCache& f, const FusionTrainConfig& cfg,
                               const fusion::AllocationStrategy& strategy, const ModalitySubset& subset,
                               const EpochCallback& on_epoch) {
  cfg.validate();
  strategy.validate();
  if (split.train.empty() || split.test.empty()) throw std::invalid_argument("train_fusion: empty split");
  const RngStream root = RngStream(cfg.seed).substream(0xf05e);
  RngStream init = root.substream(1);
  FusionTrainResult res{MultimodalModel(cfg, f.text.cols(), f.cine.cols(), f.numeric.cols(), init), {}, {}, {}};

  std::vector<std::size_t> rows = split.train;
  if (cfg.undersample) {
    std::vector<std::size_t> labels;
    double dead = 0;
    for (auto i : rows) {
      labels.push_back(static_cast<std::size_t>(c.patients[i].outcome.death));
      dead += c.patients[i].outcome.death;
    }
    RngStream us = root.substream(2);
    const auto keep = numeric::undersample(labels, 2, us);
    std::vector<std::size_t> kept;
    for (auto k : keep) kept.push_back(rows[k]);
    const double prior = dead / double(rows.size());
    res.model.death_offset = std::log(prior / (1.0 - prior));
    rows = std::move(kept);
  }

  nn::ParamList params;
  res.model.collect(params);
  Adam opt(nn::vars_of(params), cfg.adam);
  res.initial = evaluate(res.model, c, f, split.test, subset, strategy, cfg);

  std::vector<std::size_t> order(rows.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    RngStream sh = root.substream(100 + epoch);
    sh.shuffle(std::span<std::size_t>(order));
    RngStream drop = root.substream(100000 + epoch);
    double total = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t e = std::min(order.size(), b + cfg.batch);
      std::vector<std::size_t> batch;
      for (std::size_t k = b; k < e; ++k) batch.push_back(rows[order[k]]);
      const auto out = res.model.forward(f, batch, subset, strategy, true, drop);
      const Var loss = head_loss(out.heads, targets_of(c, batch), cfg.weights, cfg.fusion.days_scale);
      backward(loss);
      opt.step();
      total += loss.value().item() * double(e - b);
    }
    res.final = evaluate(res.model, c, f, split.test, subset, strategy, cfg);
    MetricRecord r;
    r.epoch = epoch;
    r.train_loss = total / double(order.size());
    r.test_loss = res.final.loss;
    r.acc_death = res.final.acc_death;
    r.acc_cause = res.final.acc_cause;
    r.acc_macces = res.final.acc_macces;
    r.acc_risk = res.final.acc_risk;
    r.acc_integrated = res.final.integrated();
    res.trace.add(r);
    if (on_epoch) on_epoch(r);
  }
  return res;
}

std::vector<fusion::TimelinePoint> patient_timeline(const MultimodalModel& m, const TextModel& text,
                                                    const cine::Segmenter& segmenter,
                                                    const numeric::NumericSchema& schema, const cohort::Patient& p,
                                                    std::size_t observations, const ModalitySubset& subset,
                                                    const fusion::AllocationStrategy& strategy,
                                                    const fusion::RiskThresholds& thresholds, double horizon,
                                                    double step) {
  if (observations == 0 || observations > p.text.size())
    throw std::invalid_argument("patient_timeline: patient " + p.id + " has " + std::to_string(p.text.size()) +
                                " observations");
  if (!(step > 0) || !(horizon >= 0)) throw std::invalid_argument("patient_timeline: need step > 0 and horizon >= 0");
  std::vector<cohort::Patient> staged(observations, p);
  std::vector<const cohort::Patient*> ptrs;
  std::vector<double> times;
  for (std::size_t k = 0; k < observations; ++k) {
    staged[k].text.assign(p.text.begin(), p.text.begin() + static_cast<std::ptrdiff_t>(k + 1));
    ptrs.push_back(&staged[k]);
    times.push_back(p.text[k].day);
  }
  const FeatureCache f = build_features(ptrs, text, segmenter, schema);
  std::vector<std::size_t> rows(observations);
  std::iota(rows.begin(), rows.end(), 0);
  NoGradGuard guard;
  RngStream unused(0);
  const auto out = m.forward(f, rows, subset, strategy, false, unused);
  std::vector<double> probs;
  for (std::size_t k = 0; k < observations; ++k) probs.push_back(1.0 / (1.0 + std::exp(-out.heads.death_logit.value().at(k, 0))));
  std::vector<double> grid;
  for (std::size_t i = 0; double(i) * step <= horizon + 1e-9; ++i) grid.push_back(double(i) * step);
  for (double t : times)
    if (std::find(grid.begin(), grid.end(), t) == grid.end()) grid.push_back(t);
  std::sort(grid.begin(), grid.end());
  return fusion::interpolate_timeline(times, probs, grid, thresholds);
}

// ---------------------------------------------------------------- ablation

std::vector<AblationRow> ablation_grid() {
  using fusion::AllocationStrategy;
  const auto sr = AllocationStrategy::self_reasoning();
  std::vector<AblationRow> g;
  g.push_back({"modal_combination", "Textual + Cinematic + Numerical", 96.5, {true, true, true}, sr, {}});
  g.push_back({"modal_combination", "Textual + Cinematic", 94.0, {true, true, false}, sr, {}});
  g.push_back({"modal_combination", "Textual + Numerical", 92.5, {true, false, true}, sr, {}});
  g.push_back({"modal_combination", "Cinematic + Numerical", 86.5, {false, true, true}, sr, {}});
  g.push_back({"attention_allocation", "Self-attention", 96.5, {}, sr, {}});
  g.push_back({"attention_allocation", "Text 50% + Cine 25% + Num 25%", 91.7, {}, AllocationStrategy::fixed(0.5, 0.25, 0.25), {}});
  g.push_back({"attention_allocation", "Text 25% + Cine 50% + Num 25%", 87.7, {}, AllocationStrategy::fixed(0.25, 0.5, 0.25), {}});
  g.push_back({"attention_allocation", "Text 25% + Cine 25% + Num 50%", 84.8, {}, AllocationStrategy::fixed(0.25, 0.25, 0.5), {}});
  return g;
}

AblationReport ablate(const Cohort& c, const Split& split, const FeatureCache& f, const FusionTrainConfig& cfg,
                      const std::function<void(const AblationRow&)>& on_row) {
  AblationReport rep{ablation_grid()};
  for (auto& row : rep.rows) {
    row.result = train_fusion(c, split, f, cfg, row.strategy, row.subset).final;
    if (on_row) on_row(row);
  }
  return rep;
}

std::string AblationReport::json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"column", r.column},
                      {"label", r.label},
                      {"strategy", r.strategy.id()},
                      {"modalities", r.subset.label()},
                      {"accuracy", r.accuracy_percent()},
                      {"reference_accuracy", r.reference},
                      {"acc_death", r.result.acc_death},
                      {"acc_cause", r.result.acc_cause},
                      {"acc_macces", r.result.acc_macces},
                      {"acc_risk", r.result.acc_risk},
                      {"test_loss", r.result.loss},
                      {"mean_allocation", r.result.mean_allocation}});
  }
  return nlohmann::json{{"rows", rows_j}}.dump(2) + "\n";
}

// ---------------------------------------------------------------- importance

std::vector<ImportanceGroup> default_importance_groups() {
  using Kind = ImportanceGroup::Kind;
  std::vector<ImportanceGroup> g{{"therapeutic agents", Kind::Text, {}, 0.376},
                                 {"CMR", Kind::Cine, {}, 0.327},
                                 {"numerical indicators", Kind::NumericColumns, {}, -1},
                                 {"medical indicator", Kind::NumericColumns, {}, -1},
                                 {"Noise Control", Kind::NumericColumns, {}, -1}};
  const auto& table = cohort::default_indicators();
  for (std::size_t j = 0; j < table.size(); ++j) {
    switch (table[j].group) {
      case cohort::NumericGroup::Demographic: g[2].columns.push_back(j); break;
      case cohort::NumericGroup::Laboratory: g[3].columns.push_back(j); break;
      case cohort::NumericGroup::Noise: g[4].columns.push_back(j); break;
    }
  }
  return g;
}

ImportanceResult permutation_importance(const MultimodalModel& m, const Cohort& c, const FeatureCache& f,
                                        const std::vector<std::size_t>& rows, const std::vector<ImportanceGroup>& groups,
                                        const fusion::AllocationStrategy& strategy, const FusionTrainConfig& cfg,
                                        std::size_t repeats, std::uint64_t seed) {
  using Kind = ImportanceGroup::Kind;
  if (repeats == 0) throw std::invalid_argument("permutation_importance: repeats must be >= 1");
  std::size_t text_groups = 0, cine_groups = 0;
  std::vector<int> covered(f.numeric.cols(), 0);
  for (const auto& g : groups) {
    if (g.kind == Kind::Text) text_groups++;
    if (g.kind == Kind::Cine) cine_groups++;
    if (g.kind != Kind::NumericColumns && !g.columns.empty())
      throw std::invalid_argument("permutation_importance: group '" + g.name + "' lists columns for a whole modality");
    for (auto j : g.columns) {
      if (j >= covered.size()) throw std::invalid_argument("permutation_importance: column out of range in '" + g.name + "'");
      covered[j]++;
    }
  }
  if (text_groups != 1 || cine_groups != 1 || std::any_of(covered.begin(), covered.end(), [](int k) { return k != 1; }))
    throw std::invalid_argument("permutation_importance: groups do not partition the inputs");

  const ModalitySubset all{};
  ImportanceResult res{groups, evaluate(m, c, f, rows, all, strategy, cfg).integrated(), {}, {}};
  const auto cine_rows = cine_members(c, rows);
  const RngStream root = RngStream(seed).substream(0x1a9);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    double drop = 0;
    for (std::size_t r = 0; r < repeats; ++r) {
      RngStream rng = root.substream(gi * 100003 + r);
      FeatureCache p = f;
      const auto& members = g.kind == Kind::Cine ? cine_rows : rows;
      std::vector<std::size_t> perm = members;
      rng.shuffle(std::span<std::size_t>(perm));
      auto permute = [&](NdArray& dst, const NdArray& src, const std::vector<std::size_t>& cols) {
        for (std::size_t k = 0; k < members.size(); ++k)
          for (auto j : cols) dst.at(members[k], j) = src.at(perm[k], j);
      };
      std::vector<std::size_t> cols;
      if (g.kind == Kind::Text) {
        cols.resize(f.text.cols());
        std::iota(cols.begin(), cols.end(), 0);
        permute(p.text, f.text, cols);
      } else if (g.kind == Kind::Cine) {
        cols.resize(f.cine.cols());
        std::iota(cols.begin(), cols.end(), 0);
        permute(p.cine, f.cine, cols);
      } else {
        permute(p.numeric, f.numeric, g.columns);
      }
      drop += res.baseline - evaluate(m, c, p, rows, all, strategy, cfg).integrated();
    }
    res.drop.push_back(std::max(0.0, drop / double(repeats)));
  }
  const double total = std::accumulate(res.drop.begin(), res.drop.end(), 0.0);
  for (double d : res.drop) res.share.push_back(total > 0 ? d / total : 0.0);
  return res;
}

std::string ImportanceResult::json() const {
  nlohmann::json g = nlohmann::json::array();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    nlohmann::json row{{"group", groups[i].name}, {"share", share[i]}, {"accuracy_drop", drop[i]}};
    if (groups[i].reference >= 0) row["reference_share"] = groups[i].reference;
    g.push_back(row);
  }
  return nlohmann::json{{"baseline_integrated_accuracy", baseline}, {"groups", g}}.dump(2) + "\n";
}

}  // namespace cardiofuse::train
