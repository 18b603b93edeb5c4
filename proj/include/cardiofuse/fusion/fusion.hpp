#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "cardiofuse/tensor/layers.hpp"

namespace cardiofuse::fusion {

inline constexpr std::size_t kModalities = 3;
enum ModalitySlot : std::size_t { kText = 0, kCine = 1, kNumeric = 2 };
const std::array<std::string, kModalities>& modality_names();

struct AllocationStrategy {
  enum class Kind { SelfReasoning, Fixed };
  Kind kind = Kind::SelfReasoning;
  std::array<double, kModalities> weights{};  // text, cine, numeric; Fixed only

  static AllocationStrategy self_reasoning() { return {}; }
  static AllocationStrategy fixed(double w_text, double w_cine, double w_num);
  void validate() const;
  // "self_reasoning" or "fixed_<text>_<cine>_<num>" in percent.
  std::string id() const;
  bool operator==(const AllocationStrategy&) const = default;
};

// A batch of per-modality feature rows. available is [B x 3] in {0, 1};
// rows of an unavailable modality are ignored.
struct ModalityBatch {
  Var text, cine, numeric;
  NdArray available;

  std::size_t size() const { return available.rows(); }
  void validate(std::size_t dim) const;
};

struct FusionConfig {
  std::size_t dim = 256;
  std::size_t d_attn = 64;
  std::size_t residual_blocks = 2;
  std::size_t cause_classes = 4;
  std::size_t macces_classes = 5;
  // The days head emits softplus(.) times this scale.
  double days_scale = 100.0;
};

struct HeadOutputs {
  Var death_logit;    // [B x 1]
  Var cause_logits;   // [B x cause_classes]
  Var days;           // [B x 1], days_scale * softplus
  Var macces_logits;  // [B x macces_classes]
};

struct FusionOutput {
  Var context;        // [B x dim] before the fusion layer
  Var fused;          // [B x dim] after fusion layer and residual blocks
  NdArray allocation; // [B x 3]
  HeadOutputs heads;
};

struct ResidualBlock {
  nn::Linear fc1, fc2;
  ResidualBlock() = default;
  ResidualBlock(std::size_t dim, RngStream& rng) : fc1(dim, dim, rng), fc2(dim, dim, rng) {}
  Var operator()(const Var& x) const { return x + fc2(relu(fc1(x))); }
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

class FusionModel {
 public:
  FusionModel() = default;
  FusionModel(const FusionConfig& cfg, RngStream& rng);

  // Context and allocation only.
  std::pair<Var, NdArray> context(const ModalityBatch& batch, const AllocationStrategy& strategy) const;
  FusionOutput forward(const ModalityBatch& batch, const AllocationStrategy& strategy) const;
  HeadOutputs predict(const Var& fused) const;

  const FusionConfig& config() const { return cfg_; }
  void collect(nn::ParamList& out, const std::string& prefix) const;

  nn::Linear wq, wk, wv;
  nn::Linear fusion;
  std::vector<ResidualBlock> blocks;
  nn::Linear death_head, cause_head, days_head, macces_head;

 private:
  FusionConfig cfg_;
};

enum class RiskLevel : std::size_t { Low = 0, Medium = 1, High = 2 };
const char* risk_name(RiskLevel r);

struct RiskThresholds {
  double low = 0.33, high = 0.66;
  void validate() const;
};
RiskLevel risk_stratify(double death_probability, const RiskThresholds& t = {});

struct PredictionBundle {
  double death_probability = 0;
  std::size_t cause = 0;
  std::vector<double> cause_probabilities;
  double days = 0;
  std::size_t macces = 0;
  std::vector<double> macces_probabilities;
  RiskLevel risk = RiskLevel::Low;
  std::array<double, kModalities> allocation{};
};
std::vector<PredictionBundle> bundles(const FusionOutput& out, const RiskThresholds& t = {});

struct TimelinePoint {
  double time = 0;
  double probability = 0;
  RiskLevel level = RiskLevel::Low;
  bool observed = false;
  bool operator==(const TimelinePoint&) const = default;
};

// Death probabilities known at observation times, linearly interpolated at
// every query time between observations and held constant outside them.
std::vector<TimelinePoint> interpolate_timeline(const std::vector<double>& times, const std::vector<double>& probabilities,
                                                const std::vector<double>& query, const RiskThresholds& t = {});

struct TimedFeatures {
  double time;
  ModalityBatch features;  // one row
};
// Scores every observation, then fills the grid from the first observation
// to horizon in steps of step.
std::vector<TimelinePoint> risk_timeline(const FusionModel& model, const std::vector<TimedFeatures>& history,
                                         const AllocationStrategy& strategy, double horizon, double step,
                                         const RiskThresholds& t = {});

}  // namespace cardiofuse::fusion
