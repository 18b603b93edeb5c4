#pragma once

#include <string>
#include <vector>

namespace cardiofuse::cohort {

enum class Family { Bernoulli, TruncatedNormal, ShiftedGamma };

// Importance groups over the numeric columns.
enum class NumericGroup { Demographic, Laboratory, Noise };

struct IndicatorSpec {
  std::string name;
  double mean, stddev, lo, hi;
  Family family;
  // Gaussian-copula loading on the numeric latent factor.
  double loading;
  NumericGroup group;
};

// The cohort's clinical indicators with their target moments and ranges,
// followed by one pure-noise control column.
const std::vector<IndicatorSpec>& default_indicators();

// A continuous marginal on [lo, hi] whose mean and standard deviation equal
// the targets. Truncated normal where its moments can reach the targets,
// otherwise lo plus a gamma variable truncated at hi - lo.
class Marginal {
 public:
  Marginal() = default;
  Marginal(Family family, double mean, double stddev, double lo, double hi);

  double quantile(double p) const;
  double cdf(double x) const;
  // Exact moments of the fitted distribution.
  double mean() const;
  double stddev() const;

  Family family() const { return family_; }
  // Location/scale of the normal, or shape/scale of the gamma.
  double param1() const { return p1_; }
  double param2() const { return p2_; }

 private:
  Family family_ = Family::TruncatedNormal;
  double lo_ = 0, hi_ = 1, p1_ = 0, p2_ = 1;
  double cdf_lo_ = 0, cdf_hi_ = 1;

  void refresh_bounds();
  double raw_cdf(double x) const;
  double raw_quantile(double p) const;
  void moments(double& m, double& s) const;
};

}  // namespace cardiofuse::cohort
