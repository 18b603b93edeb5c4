#include "cardiofuse/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cardiofuse/tensor/rng.hpp"

namespace cardiofuse {

namespace {

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric));
}

double scalar_of(const Var& v) {
  if (v.size() != 1) throw std::invalid_argument("grad_check: function must be scalar-valued");
  return v.value()[0];
}

}  // namespace

double grad_check(const std::function<Var(const Var&)>& f, const NdArray& x, double step) {
  Var input = Var::parameter(x);
  Var out = f(input);
  scalar_of(out);
  backward(out);
  const NdArray analytic = input.grad();

  double worst = 0.0;
  NdArray probe = x;
  NoGradGuard ng;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = scalar_of(f(Var::constant(probe)));
    probe[i] = orig - step;
    const double down = scalar_of(f(Var::constant(probe)));
    probe[i] = orig;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * step)));
  }
  return worst;
}

double grad_check_params(const std::function<Var()>& loss, const std::vector<Var>& params, double step,
                         std::size_t max_coords, std::uint64_t seed) {
  std::vector<Var> ps = params;
  for (auto& p : ps) p.zero_grad();
  Var out = loss();
  scalar_of(out);
  backward(out);
  std::vector<NdArray> analytic;
  for (const auto& p : ps) analytic.push_back(p.grad());

  RngStream rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& value = ps[k].mutable_value();
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && coords.size() > max_coords) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(max_coords);
    }
    for (std::size_t i : coords) {
      const double orig = value[i];
      double up, down;
      {
        NoGradGuard ng;
        value[i] = orig + step;
        up = scalar_of(loss());
        value[i] = orig - step;
        down = scalar_of(loss());
      }
      value[i] = orig;
      worst = std::max(worst, rel_err(analytic[k][i], (up - down) / (2.0 * step)));
    }
    ps[k].zero_grad();
  }
  return worst;
}

}  // namespace cardiofuse
