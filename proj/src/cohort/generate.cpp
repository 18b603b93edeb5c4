#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "cardiofuse/cohort/cohort.hpp"

namespace cardiofuse::cohort {

void CohortSpec::validate() const {
  if (n_clinical == 0) throw std::invalid_argument("CohortSpec: n_clinical must be positive");
  if (n_cine > n_clinical) throw std::invalid_argument("CohortSpec: n_cine exceeds n_clinical");
  if (beta_text < 0 || beta_cine < 0 || beta_num < 0) throw std::invalid_argument("CohortSpec: signal strengths must be >= 0");
  if (!(macces_noise > 0) || macces_cuts.size() + 1 != labels.macces.size() ||
      !std::is_sorted(macces_cuts.begin(), macces_cuts.end()))
    throw std::invalid_argument("CohortSpec: MACCES cuts must be sorted, one fewer than MACCES labels");
  if (!(0 < risk_low && risk_low < risk_high && risk_high < 1))
    throw std::invalid_argument("CohortSpec: risk thresholds must satisfy 0 < low < high < 1");
  if (labels.risk.size() != 3) throw std::invalid_argument("CohortSpec: three risk levels expected");
  if (cause_priors.size() != 3) throw std::invalid_argument("CohortSpec: one cause prior row per risk level");
  for (const auto& row : cause_priors) {
    if (row.size() + 1 != labels.cause.size()) throw std::invalid_argument("CohortSpec: cause prior width mismatch");
    double s = 0;
    for (double p : row) {
      if (p < 0) throw std::invalid_argument("CohortSpec: negative cause prior");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("CohortSpec: cause priors must sum to 1");
  }
  if (!(missing_rate >= 0 && missing_rate < 1)) throw std::invalid_argument("CohortSpec: missing_rate outside [0, 1)");
  if (text_noise < 0 || cine_noise < 0 || days_noise < 0) throw std::invalid_argument("CohortSpec: negative noise");
  if (cine_height < 16 || cine_width < 16 || cine_depth == 0)
    throw std::invalid_argument("CohortSpec: cine volumes must be at least 16x16x1");
}

const Patient* Cohort::find(const std::string& id) const {
  for (const auto& p : patients)
    if (p.id == id) return &p;
  return nullptr;
}

std::string patient_id(std::size_t index, std::size_t n) {
  std::string digits = std::to_string(index + 1);
  const std::size_t width = std::max<std::size_t>(3, std::to_string(n).size());
  return "P" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

namespace {

const boost::math::normal_distribution<double> std_normal(0.0, 1.0);

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double sample_mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

double sample_std(const std::vector<double>& v, double mean) {
  double s = 0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / double(v.size() - 1));
}

// Removes sampling error from the first two moments: affine map onto the
// target moments, clamped to the range, repeated until clamping settles.
void recalibrate(std::vector<double>& v, const IndicatorSpec& ind) {
  if (v.size() < 3) return;
  for (int iter = 0; iter < 100; ++iter) {
    const double m = sample_mean(v), s = sample_std(v, m);
    if (!(s > 0)) return;
    if (std::abs(m - ind.mean) < 1e-10 * ind.mean && std::abs(s - ind.stddev) < 1e-10 * ind.stddev) return;
    for (double& x : v) x = std::clamp(ind.mean + (x - m) * (ind.stddev / s), ind.lo, ind.hi);
  }
}

}  // namespace

std::vector<std::vector<std::optional<double>>> generate_numeric(const CohortSpec& spec,
                                                                 const std::vector<double>& latent_numeric,
                                                                 RngStream& rng) {
  const auto& table = default_indicators();
  std::vector<Marginal> marginals(table.size());
  for (std::size_t j = 0; j < table.size(); ++j)
    if (table[j].family != Family::Bernoulli)
      marginals[j] = Marginal(table[j].family, table[j].mean, table[j].stddev, table[j].lo, table[j].hi);

  const std::size_t n = latent_numeric.size();
  std::vector<std::vector<std::optional<double>>> rows(n, std::vector<std::optional<double>>(table.size()));
  for (std::size_t i = 0; i < n; ++i) {
    RngStream r = rng.substream(i);
    for (std::size_t j = 0; j < table.size(); ++j) {
      const auto& ind = table[j];
      double value;
      if (ind.family == Family::Bernoulli) {
        value = r.bernoulli(ind.mean) ? 1.0 : 0.0;
      } else {
        const double rho = ind.loading;
        const double u = rho * latent_numeric[i] + std::sqrt(1.0 - rho * rho) * r.normal();
        value = marginals[j].quantile(boost::math::cdf(std_normal, u));
      }
      if (!r.bernoulli(spec.missing_rate)) rows[i][j] = value;
    }
  }
  for (std::size_t j = 0; j < table.size(); ++j) {
    if (table[j].family == Family::Bernoulli) continue;
    std::vector<double> present;
    for (const auto& row : rows)
      if (row[j]) present.push_back(*row[j]);
    recalibrate(present, table[j]);
    std::size_t k = 0;
    for (auto& row : rows)
      if (row[j]) row[j] = present[k++];
  }
  return rows;
}

namespace {

constexpr int kDiureticDose[7] = {20, 40, 60, 80, 120, 160, 240};
constexpr int kBetaBlockerDose[7] = {10, 8, 6, 5, 4, 3, 2};
constexpr int kStageDays[3] = {0, 30, 90};
const char* const kDistractors[4] = {"atorvastatin 20 mg", "aspirin 100 mg", "metformin 500 mg", "omeprazole 20 mg"};
constexpr int kArniDose[3] = {50, 100, 200};

int dose_level(double latent, double offset, double noise, RngStream& rng) {
  const double raw = 3.0 + 1.5 * latent + offset + noise * rng.normal();
  return static_cast<int>(std::clamp(std::round(raw), 0.0, 6.0));
}

}  // namespace

std::vector<TextStage> generate_text(const CohortSpec& spec, double latent_text, RngStream& rng) {
  std::vector<TextStage> stages;
  for (int s = 0; s < 3; ++s) {
    const int diuretic = dose_level(latent_text, 0.0, spec.text_noise, rng);
    const int beta = dose_level(latent_text, 0.5, spec.text_noise, rng);
    std::vector<std::string> items;
    items.push_back("furosemide " + std::to_string(kDiureticDose[diuretic]) + " mg");
    items.push_back("bisoprolol " + std::to_string(kBetaBlockerDose[beta]) + " mg");
    const int arni = kArniDose[rng.below(3)];
    items.push_back(diuretic >= 4 ? "sacubitril valsartan " + std::to_string(arni) + " mg" : std::string("enalapril 10 mg"));
    if (rng.bernoulli(0.6)) items.push_back("dapagliflozin 10 mg");
    if (rng.bernoulli(0.5)) items.push_back(kDistractors[rng.below(4)]);
    std::string text;
    for (const auto& it : items) text += (text.empty() ? "" : ", ") + it;
    stages.push_back({"stage " + std::to_string(s + 1), kStageDays[s], text});
  }
  return stages;
}

double fibrosis_fraction(double latent_cine) { return std::clamp(0.18 + 0.07 * latent_cine, 0.04, 0.40); }

Phantom generate_cine(const CohortSpec& spec, double latent_cine, RngStream& rng) {
  const std::size_t h = spec.cine_height, w = spec.cine_width, d = spec.cine_depth;
  const double sc = double(std::min(h, w)) / 64.0;
  const double cy = double(h) / 2.0 + 1.5 * sc * rng.normal();
  const double cx = double(w) / 2.0 + 1.5 * sc * rng.normal();
  const double r_in = rng.uniform(11.0, 14.0) * sc;
  const double thick = rng.uniform(5.0, 7.0) * sc;
  const double theta0 = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double half = std::numbers::pi * fibrosis_fraction(latent_cine);

  Phantom out{cine::CineVolume(h, w, d), cine::SegMask(h, w, d)};
  for (std::size_t z = 0; z < d; ++z) {
    const double phase = 2.0 * std::numbers::pi * double(z) / double(d);
    const double inner = r_in * (1.0 + 0.1 * std::cos(phase));
    const double outer = inner + thick * (1.0 - 0.05 * std::cos(phase));
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = double(y) - cy, dx = double(x) - cx;
        const double r = std::hypot(dy, dx);
        double base = 0.1;
        std::uint8_t cls = cine::kBackground;
        if (r < inner) {
          base = 0.25;
        } else if (r <= outer) {
          double delta = std::abs(std::atan2(dy, dx) - theta0);
          if (delta > std::numbers::pi) delta = 2.0 * std::numbers::pi - delta;
          cls = delta <= half ? cine::kFibrosis : cine::kMyocardium;
          base = cls == cine::kFibrosis ? 0.85 : 0.45;
        }
        out.volume.at(y, x, z) = static_cast<float>(std::clamp(base + spec.cine_noise * rng.normal(), 0.0, 1.0));
        out.mask.at(y, x, z) = cls;
      }
  }
  return out;
}

std::size_t risk_level(double p, double t_low, double t_high) {
  if (!(0 < t_low && t_low < t_high && t_high < 1)) throw std::invalid_argument("risk_level: invalid thresholds");
  if (p <= t_low) return 0;
  if (p <= t_high) return 1;
  return 2;
}

std::size_t macces_band(const CohortSpec& spec, double value) {
  return static_cast<std::size_t>(std::upper_bound(spec.macces_cuts.begin(), spec.macces_cuts.end(), value) -
                                  spec.macces_cuts.begin());
}

Outcome generate_labels(const CohortSpec& spec, double z, RngStream& rng) {
  Outcome o;
  const double p = sigmoid(z);
  o.death = rng.bernoulli(p) ? 1 : 0;
  o.risk = risk_level(p, spec.risk_low, spec.risk_high);
  o.macces = macces_band(spec, z + spec.macces_noise * rng.normal());
  const double u = rng.uniform();
  if (o.death) {
    const auto& row = spec.cause_priors[o.risk];
    double acc = 0;
    o.cause = row.size();
    for (std::size_t k = 0; k < row.size(); ++k) {
      acc += row[k];
      if (u < acc) {
        o.cause = k + 1;
        break;
      }
    }
  }
  o.days = std::clamp(std::round(spec.days_base + spec.days_slope * z + spec.days_noise * rng.normal()), 0.0,
                      spec.days_max);
  return o;
}

Cohort generate_cohort(const CohortSpec& spec) {
  spec.validate();
  Cohort c;
  c.spec = spec;
  for (const auto& ind : default_indicators()) c.indicators.push_back(ind.name);

  const RngStream base(spec.seed);
  std::vector<std::size_t> order(spec.n_clinical);
  std::iota(order.begin(), order.end(), 0);
  RngStream pick = base.substream(1);
  pick.shuffle(std::span<std::size_t>(order));
  std::vector<bool> cine(spec.n_clinical, false);
  for (std::size_t k = 0; k < spec.n_cine; ++k) cine[order[k]] = true;

  std::vector<double> numeric_latent(spec.n_clinical);
  c.patients.resize(spec.n_clinical);
  for (std::size_t i = 0; i < spec.n_clinical; ++i) {
    Patient& p = c.patients[i];
    p.id = patient_id(i, spec.n_clinical);
    p.has_cine = cine[i];
    RngStream r = base.substream(1000 + i);
    p.latent.text = r.normal();
    p.latent.cine = r.normal();
    p.latent.numeric = r.normal();
    if (!p.has_cine) p.latent.cine = 0.0;
    p.latent.z = spec.mu + spec.beta_text * p.latent.text + spec.beta_cine * p.latent.cine +
                 spec.beta_num * p.latent.numeric;
    numeric_latent[i] = p.latent.numeric;

    RngStream text_rng = r.substream(1);
    p.text = generate_text(spec, p.latent.text, text_rng);
    if (p.has_cine) {
      RngStream cine_rng = r.substream(2);
      auto ph = generate_cine(spec, p.latent.cine, cine_rng);
      p.cine = std::move(ph.volume);
      p.mask = std::move(ph.mask);
    }
    RngStream label_rng = r.substream(3);
    p.outcome = generate_labels(spec, p.latent.z, label_rng);
  }
  RngStream numeric_rng = base.substream(2);
  auto rows = generate_numeric(spec, numeric_latent, numeric_rng);
  for (std::size_t i = 0; i < spec.n_clinical; ++i) c.patients[i].numeric = std::move(rows[i]);
  return c;
}

std::string concatenated_text(const Patient& p) {
  std::string out;
  for (const auto& s : p.text) {
    if (!out.empty()) out += ' ';
    out += s.stage + ' ' + s.text;
  }
  return out;
}

OracleAccuracy bayes_oracle(const CohortSpec& spec, double cine_fraction) {
  spec.validate();
  if (!(cine_fraction >= 0 && cine_fraction <= 1)) throw std::invalid_argument("bayes_oracle: cine_fraction outside [0, 1]");
  const double base_var = spec.beta_text * spec.beta_text + spec.beta_num * spec.beta_num;
  const double cine_var = base_var + spec.beta_cine * spec.beta_cine;

  auto macces_best = [&](double z) {
    double best = 0, lo_cdf = 0;
    for (std::size_t k = 0; k <= spec.macces_cuts.size(); ++k) {
      const double hi_cdf =
          k < spec.macces_cuts.size() ? boost::math::cdf(std_normal, (spec.macces_cuts[k] - z) / spec.macces_noise) : 1.0;
      best = std::max(best, hi_cdf - lo_cdf);
      lo_cdf = hi_cdf;
    }
    return best;
  };
  // Composite Simpson over +-12 standard deviations of each mixture component.
  auto integrate = [&](double var, auto&& f) {
    const double sd = std::sqrt(var);
    const int n = 24000;
    const double a = spec.mu - 12 * sd, h = 24 * sd / n;
    double s = 0;
    for (int i = 0; i <= n; ++i) {
      const double z = a + i * h;
      const double wgt = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
      s += wgt * f(z) * boost::math::pdf(std_normal, (z - spec.mu) / sd) / sd;
    }
    return s * h / 3.0;
  };
  auto death_best = [](double z) {
    const double p = sigmoid(z);
    return std::max(p, 1.0 - p);
  };
  OracleAccuracy o;
  o.death = (1 - cine_fraction) * integrate(base_var, death_best) + cine_fraction * integrate(cine_var, death_best);
  o.macces = (1 - cine_fraction) * integrate(base_var, macces_best) + cine_fraction * integrate(cine_var, macces_best);
  o.risk = 1.0;
  return o;
}

double single_modality_oracle(const CohortSpec& spec, Modality m) {
  spec.validate();
  const double bt = spec.beta_text, bn = spec.beta_num, bc = spec.beta_cine;
  double beta = 0, rest_var = 0;
  switch (m) {
    case Modality::Text: beta = bt; rest_var = bn * bn + bc * bc * spec.n_cine / spec.n_clinical; break;
    case Modality::Cine: beta = bc; rest_var = bt * bt + bn * bn; break;
    case Modality::Numeric: beta = bn; rest_var = bt * bt + bc * bc * spec.n_cine / spec.n_clinical; break;
  }
  // The unobserved remainder is treated as Gaussian with the pooled variance.
  const double rest_sd = std::sqrt(rest_var);
  const int n = 800;
  auto expected_death = [&](double x) {
    if (rest_sd == 0) return sigmoid(spec.mu + beta * x);
    double s = 0;
    const double h = 16.0 / n;
    for (int i = 0; i <= n; ++i) {
      const double r = -8.0 + i * h;
      const double wgt = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
      s += wgt * sigmoid(spec.mu + beta * x + rest_sd * r) * boost::math::pdf(std_normal, r);
    }
    return s * h / 3.0;
  };
  double acc = 0;
  const double h = 16.0 / n;
  for (int i = 0; i <= n; ++i) {
    const double x = -8.0 + i * h;
    const double wgt = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    const double p = expected_death(x);
    acc += wgt * std::max(p, 1.0 - p) * boost::math::pdf(std_normal, x);
  }
  return acc * h / 3.0;
}

std::vector<CalibrationRow> calibration_summary(const Cohort& c) {
  const auto& table = default_indicators();
  std::vector<CalibrationRow> rows;
  for (std::size_t j = 0; j < table.size(); ++j) {
    std::vector<double> present;
    for (const auto& p : c.patients)
      if (j < p.numeric.size() && p.numeric[j]) present.push_back(*p.numeric[j]);
    CalibrationRow row{table[j].name, table[j].mean, NAN, table[j].stddev, NAN, table[j].family == Family::Bernoulli};
    if (present.size() >= 2) {
      row.sample_mean = sample_mean(present);
      row.sample_std = sample_std(present, row.sample_mean);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace cardiofuse::cohort
