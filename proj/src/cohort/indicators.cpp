#include "cardiofuse/cohort/indicators.hpp"

#include <algorithm>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <stdexcept>

namespace cardiofuse::cohort {

const std::vector<IndicatorSpec>& default_indicators() {
  using enum Family;
  using enum NumericGroup;
  static const std::vector<IndicatorSpec> table = {
      {"Gender", 0.801471, 0.400367, 0, 1, Bernoulli, 0.0, Demographic},
      {"Age", 52.36765, 14.39126, 18, 79, TruncatedNormal, 0.0, Demographic},
      {"Weight", 73.00625, 16.87795, 42.0, 121.2, TruncatedNormal, 0.8, Demographic},
      {"Heart Rate (bpm)", 85.60294, 19.33152, 43, 153, TruncatedNormal, 0.8, Demographic},
      {"Diastolic BP", 85.24265, 18.89013, 39, 144, TruncatedNormal, 0.8, Demographic},
      {"Myocardial Infarction", 0.117647, 0.323381, 0, 1, Bernoulli, 0.0, Demographic},
      {"Pacemaker", 0.044118, 0.206116, 0, 1, Bernoulli, 0.0, Demographic},
      {"IVSTd", 0.939134, 0.225375, 0.5, 1.87, TruncatedNormal, 0.8, Laboratory},
      {"ALT", 38.26544, 42.40809, 5.3, 340.8, ShiftedGamma, 0.0, Laboratory},
      {"AST", 30.63382, 26.28811, 10.8, 235.0, ShiftedGamma, 0.0, Laboratory},
      {"Albumin/Globulin Ratio", 1.628088, 0.291198, 0.76, 2.32, TruncatedNormal, -0.8, Laboratory},
      {"LDL-C", 2.507852, 0.910413, 0.46, 5.07, TruncatedNormal, 0.8, Laboratory},
      {"Apo-AI", 0.906593, 0.204342, 0.46, 1.63, TruncatedNormal, -0.8, Laboratory},
      {"HbA1c%", 6.245528, 1.163675, 4.3, 11.3, TruncatedNormal, 0.8, Laboratory},
      {"Noise Control", 0.5, 0.15, 0.0, 1.0, TruncatedNormal, 0.0, Noise},
  };
  return table;
}

namespace {

const boost::math::normal_distribution<double> std_normal(0.0, 1.0);

}  // namespace

Marginal::Marginal(Family family, double mean, double stddev, double lo, double hi)
    : family_(family), lo_(lo), hi_(hi) {
  if (family == Family::Bernoulli) throw std::invalid_argument("Marginal: Bernoulli indicators have no continuous marginal");
  if (!(lo < mean && mean < hi && stddev > 0.0)) throw std::invalid_argument("Marginal: need lo < mean < hi and stddev > 0");

  // Fixed-point search on the untruncated moments: shift the mean by the
  // truncated-mean error and scale the spread by the truncated-std ratio.
  double um = family == Family::ShiftedGamma ? mean - lo : mean;
  double us = stddev;
  for (int iter = 0; iter < 2000; ++iter) {
    if (family == Family::TruncatedNormal) {
      p1_ = um;
      p2_ = us;
    } else {
      if (um <= 0.0) throw std::invalid_argument("Marginal: gamma fit left the feasible region");
      p1_ = um * um / (us * us);
      p2_ = us * us / um;
    }
    refresh_bounds();
    if (!(cdf_hi_ - cdf_lo_ > 0.0)) break;
    double m, s;
    moments(m, s);
    if (std::abs(m - mean) < 1e-11 * std::abs(mean) + 1e-13 && std::abs(s - stddev) < 1e-11 * stddev) return;
    um += mean - m;
    us *= stddev / s;
    if (!std::isfinite(um) || !std::isfinite(us) || !(us > 0.0)) break;
  }
  throw std::invalid_argument("Marginal: no distribution of this family on the range reaches the target moments");
}

void Marginal::refresh_bounds() {
  cdf_lo_ = raw_cdf(lo_);
  cdf_hi_ = raw_cdf(hi_);
}

double Marginal::raw_cdf(double x) const {
  if (family_ == Family::TruncatedNormal) return boost::math::cdf(std_normal, (x - p1_) / p2_);
  const double g = x - lo_;
  if (g <= 0.0) return 0.0;
  return boost::math::gamma_p(p1_, g / p2_);
}

double Marginal::raw_quantile(double p) const {
  p = std::clamp(p, 1e-300, 1.0 - 1e-16);
  if (family_ == Family::TruncatedNormal) return p1_ + p2_ * boost::math::quantile(std_normal, p);
  return lo_ + p2_ * boost::math::gamma_p_inv(p1_, p);
}

double Marginal::cdf(double x) const {
  if (x <= lo_) return 0.0;
  if (x >= hi_) return 1.0;
  return (raw_cdf(x) - cdf_lo_) / (cdf_hi_ - cdf_lo_);
}

double Marginal::quantile(double p) const {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("Marginal::quantile: p outside [0, 1]");
  return std::clamp(raw_quantile(cdf_lo_ + p * (cdf_hi_ - cdf_lo_)), lo_, hi_);
}

void Marginal::moments(double& m, double& s) const {
  const double z = cdf_hi_ - cdf_lo_;
  if (family_ == Family::TruncatedNormal) {
    const double a = (lo_ - p1_) / p2_, b = (hi_ - p1_) / p2_;
    const double pa = boost::math::pdf(std_normal, a), pb = boost::math::pdf(std_normal, b);
    const double shift = (pa - pb) / z;
    m = p1_ + p2_ * shift;
    s = p2_ * std::sqrt(std::max(0.0, 1.0 + (a * pa - b * pb) / z - shift * shift));
    return;
  }
  // Lower-truncated at 0 by construction, upper-truncated at t = hi - lo.
  const double k = p1_, th = p2_, t = (hi_ - lo_) / th;
  const double e1 = k * th * boost::math::gamma_p(k + 1.0, t) / z;
  const double e2 = k * (k + 1.0) * th * th * boost::math::gamma_p(k + 2.0, t) / z;
  m = lo_ + e1;
  s = std::sqrt(std::max(0.0, e2 - e1 * e1));
}

double Marginal::mean() const {
  double m, s;
  moments(m, s);
  return m;
}

double Marginal::stddev() const {
  double m, s;
  moments(m, s);
  return s;
}

}  // namespace cardiofuse::cohort
