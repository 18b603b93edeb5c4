#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cardiofuse/cine/segmenter.hpp"
#include "cardiofuse/cohort/cohort.hpp"
#include "cardiofuse/fusion/fusion.hpp"
#include "cardiofuse/numeric/numeric.hpp"
#include "cardiofuse/text/text.hpp"
#include "cardiofuse/train/optim.hpp"
#include "cardiofuse/train/trace.hpp"

namespace cardiofuse::train {

// Patient indices into Cohort::patients; disjoint and sorted.
struct Split {
  std::vector<std::size_t> train, test;
  bool operator==(const Split&) const = default;
};
// Cine patients are split first with a test share of 36/136; the overall test
// set of round(0.2 n) is then filled from the remaining patients.
Split make_split(const cohort::Cohort& c, std::uint64_t seed);
std::vector<std::size_t> cine_members(const cohort::Cohort& c, const std::vector<std::size_t>& indices);

using EpochCallback = std::function<void(const MetricRecord&)>;

// ---- segmentation ----

struct SegTrainConfig {
  std::size_t epochs = 50;
  AdamConfig adam{};
  std::uint64_t seed = 7;
  cine::SegmenterConfig model{};
  double dice_weight = 1.0;
  void validate() const;
};

struct SegEval {
  double loss = 0;
  double dsc = 0;          // mean over volumes of the fibrosis Dice
  double dsc_pooled = 0;   // Dice over all test voxels at once
  double hd = 0, hd95 = 0; // means over volumes where both fibrosis sets are nonempty
  std::size_t volumes = 0, hd_volumes = 0;
};

// Min-max normalized volume resampled to the segmenter's frame size.
cine::CineVolume prepare_volume(const cine::CineVolume& v, const cine::SegmenterConfig& cfg);
SegEval evaluate_segmenter(const cine::Segmenter& model, const cohort::Cohort& c, const std::vector<std::size_t>& indices,
                           double dice_weight = 1.0);

struct SegTrainResult {
  cine::Segmenter model;
  MetricTrace trace;
  SegEval initial, final;
};
SegTrainResult train_segmenter(const cohort::Cohort& c, const Split& split, const SegTrainConfig& cfg,
                               const EpochCallback& on_epoch = {});

// ---- text pretraining ----

struct TextTrainConfig {
  text::TextEncoderConfig encoder{};  // vocab_size is filled from the vocabulary
  std::size_t vocab_cap = 0;
  std::size_t epochs = 6;
  std::size_t batch = 16;
  AdamConfig adam{};
  std::uint64_t seed = 7;
  void validate() const;
};

struct TextModel {
  text::Vocab vocab;
  text::TextEncoder encoder;
};

// Builds the vocabulary from training texts and fits the encoder with
// outcome heads on the training split; the encoder is then used frozen.
TextModel pretrain_text(const cohort::Cohort& c, const Split& split, const TextTrainConfig& cfg,
                        const EpochCallback& on_epoch = {});

// ---- cached modality inputs ----

struct FeatureCache {
  NdArray text;     // [N x d_model] pooled text states
  NdArray cine;     // [N x bottleneck], zero rows without cine
  NdArray numeric;  // [N x F] imputed and normalized
  std::vector<bool> has_cine;
  numeric::NumericSchema schema;
};
// The numeric schema is fit on split.train only.
FeatureCache build_features(const cohort::Cohort& c, const Split& split, const TextModel& text,
                            const cine::Segmenter& segmenter);
// Same features for an explicit list of patients against a given schema.
FeatureCache build_features(const std::vector<const cohort::Patient*>& patients, const TextModel& text,
                            const cine::Segmenter& segmenter, const numeric::NumericSchema& schema);
NdArray text_feature(const TextModel& text, const std::string& document);  // [1 x d_model]
NdArray cine_feature(const cine::Segmenter& segmenter, const cine::CineVolume& raw);  // [1 x bottleneck]

// ---- fusion ----

struct ModalitySubset {
  bool text = true, cine = true, numeric = true;
  std::string label() const;
  bool operator==(const ModalitySubset&) const = default;
};

struct HeadWeights {
  double death = 1, cause = 1, days = 1, macces = 1;
};

struct FusionTrainConfig {
  std::size_t epochs = 50;
  std::size_t batch = 32;
  AdamConfig adam{};
  std::uint64_t seed = 7;
  HeadWeights weights{};
  bool undersample = true;
  // LayerNorm on each projected modality vector before fusion.
  bool token_norm = true;
  fusion::FusionConfig fusion{};
  numeric::NumericEncoderConfig numeric{};
  fusion::RiskThresholds thresholds{};
  void validate() const;
};

class MultimodalModel {
 public:
  MultimodalModel() = default;
  MultimodalModel(const FusionTrainConfig& cfg, std::size_t text_dim, std::size_t cine_dim, std::size_t numeric_dim,
                  RngStream& rng);

  // training enables dropout and leaves out the death prior offset.
  fusion::FusionOutput forward(const FeatureCache& f, const std::vector<std::size_t>& rows, const ModalitySubset& subset,
                               const fusion::AllocationStrategy& strategy, bool training, RngStream& rng) const;
  void collect(nn::ParamList& out) const;

  nn::Linear text_proj, cine_proj;
  numeric::NumericEncoder numeric;
  bool token_norm = true;
  nn::LayerNorm text_norm, cine_norm, numeric_norm;
  fusion::FusionModel fusion;
  // Added to the death logit outside training to undo the class balance
  // imposed by undersampling.
  double death_offset = 0.0;
};

struct EvalResult {
  double loss = 0;
  double acc_death = 0, acc_cause = 0, acc_macces = 0, acc_risk = 0;
  double integrated() const { return (acc_death + acc_macces + acc_risk) / 3.0; }
  std::array<double, 2> death_recall{};  // alive, dead
  std::array<double, fusion::kModalities> mean_allocation{};
};

// Accuracies are fractions in [0, 1].
EvalResult evaluate(const MultimodalModel& m, const cohort::Cohort& c, const FeatureCache& f,
                    const std::vector<std::size_t>& rows, const ModalitySubset& subset,
                    const fusion::AllocationStrategy& strategy, const FusionTrainConfig& cfg);

struct FusionTrainResult {
  MultimodalModel model;
  MetricTrace trace;
  EvalResult initial, final;
};
FusionTrainResult train_fusion(const cohort::Cohort& c, const Split& split, const FeatureCache& f,
                               const FusionTrainConfig& cfg, const fusion::AllocationStrategy& strategy,
                               const ModalitySubset& subset, const EpochCallback& on_epoch = {});

// Death probability at each of the patient's first `observations` text
// stages (texts accumulate stage by stage; cine and numeric inputs are held),
// interpolated on a grid from day 0 to horizon.
std::vector<fusion::TimelinePoint> patient_timeline(const MultimodalModel& m, const TextModel& text,
                                                    const cine::Segmenter& segmenter,
                                                    const numeric::NumericSchema& schema, const cohort::Patient& p,
                                                    std::size_t observations, const ModalitySubset& subset,
                                                    const fusion::AllocationStrategy& strategy,
                                                    const fusion::RiskThresholds& thresholds, double horizon,
                                                    double step);

// ---- ablation and importance ----

struct AblationRow {
  std::string column;  // "modal_combination" or "attention_allocation"
  std::string label;
  double reference = 0;  // reference accuracy to compare against, percent
  ModalitySubset subset;
  fusion::AllocationStrategy strategy;
  EvalResult result;
  double accuracy_percent() const { return 100.0 * result.integrated(); }
};
struct AblationReport {
  std::vector<AblationRow> rows;
  std::string json() const;
};
std::vector<AblationRow> ablation_grid();
AblationReport ablate(const cohort::Cohort& c, const Split& split, const FeatureCache& f, const FusionTrainConfig& cfg,
                      const std::function<void(const AblationRow&)>& on_row = {});

struct ImportanceGroup {
  enum class Kind { Text, Cine, NumericColumns };
  std::string name;
  Kind kind = Kind::NumericColumns;
  std::vector<std::size_t> columns;
  double reference = -1;  // reference share to compare against, negative if none
};
std::vector<ImportanceGroup> default_importance_groups();

struct ImportanceResult {
  std::vector<ImportanceGroup> groups;
  double baseline = 0;
  std::vector<double> drop;   // mean accuracy drop per group, clamped at 0
  std::vector<double> share;  // drop normalized to sum 1
  std::string json() const;
};
// Evaluated with all three modalities. Throws std::invalid_argument unless
// the groups cover text, cine and every numeric column exactly once.
ImportanceResult permutation_importance(const MultimodalModel& m, const cohort::Cohort& c, const FeatureCache& f,
                                        const std::vector<std::size_t>& rows, const std::vector<ImportanceGroup>& groups,
                                        const fusion::AllocationStrategy& strategy, const FusionTrainConfig& cfg,
                                        std::size_t repeats, std::uint64_t seed);

}  // namespace cardiofuse::train
