#include "cardiofuse/tensor/layers.hpp"

#include <cmath>

namespace cardiofuse::nn {

NdArray xavier_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  NdArray w({fan_in, fan_out});
  for (auto& v : w.values()) v = rng.uniform(-limit, limit);
  return w;
}

Linear::Linear(std::size_t in, std::size_t out, RngStream& rng, bool with_bias)
    : weight(Var::parameter(xavier_uniform(in, out, rng))) {
  if (with_bias) bias = Var::parameter(NdArray({out}, 0.0));
}

Var Linear::operator()(const Var& x) const {
  Var y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t dim, double eps_)
    : gain(Var::parameter(NdArray({dim}, 1.0))), bias(Var::parameter(NdArray({dim}, 0.0))), eps(eps_) {}

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

std::vector<Var> vars_of(const ParamList& params) {
  std::vector<Var> v;
  v.reserve(params.size());
  for (const auto& p : params) v.push_back(p.var);
  return v;
}

}  // namespace cardiofuse::nn
