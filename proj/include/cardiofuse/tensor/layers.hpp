#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cardiofuse/tensor/ops.hpp"
#include "cardiofuse/tensor/rng.hpp"

namespace cardiofuse::nn {

struct NamedParam {
  std::string name;
  Var var;
};
using ParamList = std::vector<NamedParam>;

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
NdArray xavier_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng);

// y = x W + b with W [in x out].
struct Linear {
  Var weight;
  Var bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, RngStream& rng, bool with_bias = true);

  std::size_t in_features() const { return weight.value().rows(); }
  std::size_t out_features() const { return weight.value().cols(); }
  Var operator()(const Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNorm {
  Var gain;
  Var bias;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim, double eps = 1e-5);

  Var operator()(const Var& x) const { return layer_norm(x, gain, bias, eps); }
  void collect(ParamList& out, const std::string& prefix) const;
};

std::vector<Var> vars_of(const ParamList& params);

}  // namespace cardiofuse::nn
