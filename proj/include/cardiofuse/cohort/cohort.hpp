#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cardiofuse/cine/volume.hpp"
#include "cardiofuse/cohort/indicators.hpp"
#include "cardiofuse/tensor/rng.hpp"

namespace cardiofuse::cohort {

struct LabelSets {
  std::vector<std::string> cause{"none", "pump failure", "arrhythmia", "other"};
  std::vector<std::string> macces{"none", "stroke", "MI", "revascularization", "cardiac death"};
  std::vector<std::string> risk{"low", "medium", "high"};
  bool operator==(const LabelSets&) const = default;
};

struct CohortSpec {
  std::size_t n_clinical = 688;
  std::size_t n_cine = 136;
  std::uint64_t seed = 7;

  // Latent score z = mu + beta_text a + beta_cine b [cine] + beta_num c with
  // a, b, c independent standard normals carried by text, cine and numeric
  // inputs respectively.
  double mu = -0.6;
  double beta_text = 2.4;
  double beta_cine = 1.8;
  double beta_num = 1.2;

  double macces_noise = 0.5;
  std::vector<double> macces_cuts{0.5, 1.5, 2.5, 3.5};
  double risk_low = 0.33, risk_high = 0.66;
  // days = clamp(round(days_base + days_slope z + N(0, days_noise^2)), 0, days_max)
  double days_base = 180, days_slope = -40, days_noise = 15, days_max = 365;
  // Cause of death given death, one row per risk level, over cause labels 1..3.
  std::vector<std::vector<double>> cause_priors{{0.2, 0.3, 0.5}, {0.4, 0.4, 0.2}, {0.6, 0.3, 0.1}};

  double missing_rate = 0.05;
  double text_noise = 0.3;
  std::size_t cine_height = 64, cine_width = 64, cine_depth = 8;
  double cine_noise = 0.04;

  LabelSets labels;

  void validate() const;
  bool operator==(const CohortSpec&) const = default;
};

struct Outcome {
  int death = 0;
  std::size_t cause = 0;
  double days = 0;
  std::size_t macces = 0;
  std::size_t risk = 0;
  bool operator==(const Outcome&) const = default;
};

struct Latent {
  double text = 0, cine = 0, numeric = 0, z = 0;
  bool operator==(const Latent&) const = default;
};

struct TextStage {
  std::string stage;
  int day = 0;
  std::string text;
  bool operator==(const TextStage&) const = default;
};

struct Patient {
  std::string id;
  std::vector<std::optional<double>> numeric;  // aligned with Cohort::indicators
  std::vector<TextStage> text;
  bool has_cine = false;
  std::optional<cine::CineVolume> cine;
  std::optional<cine::SegMask> mask;
  Outcome outcome;
  Latent latent;
  bool operator==(const Patient&) const = default;
};

struct Cohort {
  CohortSpec spec;
  std::vector<std::string> indicators;
  std::vector<Patient> patients;

  const Patient* find(const std::string& id) const;
  bool operator==(const Cohort&) const = default;
};

std::string patient_id(std::size_t index, std::size_t n);

// Numeric indicators for n patients given numeric latents, moment-matched to
// the indicator table; missing cells are blanked at spec.missing_rate.
std::vector<std::vector<std::optional<double>>> generate_numeric(const CohortSpec& spec,
                                                                 const std::vector<double>& latent_numeric,
                                                                 RngStream& rng);
std::vector<TextStage> generate_text(const CohortSpec& spec, double latent_text, RngStream& rng);
struct Phantom {
  cine::CineVolume volume;
  cine::SegMask mask;
};
Phantom generate_cine(const CohortSpec& spec, double latent_cine, RngStream& rng);
// Fraction of the myocardial ring covered by fibrosis for a cine latent.
double fibrosis_fraction(double latent_cine);
Outcome generate_labels(const CohortSpec& spec, double z, RngStream& rng);

std::size_t risk_level(double death_probability, double t_low, double t_high);
std::size_t macces_band(const CohortSpec& spec, double value);

Cohort generate_cohort(const CohortSpec& spec);

// Stage-order concatenation used as the text model's input.
std::string concatenated_text(const Patient& p);

struct OracleAccuracy {
  double death = 0, macces = 0, risk = 0;
  double integrated() const { return (death + macces + risk) / 3.0; }
};
// Bayes-optimal head accuracies when the latent score is known, integrated
// numerically over the latent distribution of a population whose share of
// cine patients is cine_fraction.
OracleAccuracy bayes_oracle(const CohortSpec& spec, double cine_fraction);

enum class Modality { Text, Cine, Numeric };
// Death-head accuracy of the Bayes rule that observes only one modality's
// latent, for a population of cine patients when the modality is Cine.
double single_modality_oracle(const CohortSpec& spec, Modality m);

struct CalibrationRow {
  std::string name;
  double target_mean, sample_mean, target_std, sample_std;
  bool binary;
};
std::vector<CalibrationRow> calibration_summary(const Cohort& c);

void save_cohort(const Cohort& c, const std::filesystem::path& dir);
// Throws FormatError naming the file, and the patient where one is involved.
Cohort load_cohort(const std::filesystem::path& dir);

}  // namespace cardiofuse::cohort
