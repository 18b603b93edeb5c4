#include "cardiofuse/train/losses.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace cardiofuse::train {

namespace {

void check_targets(const Var& x, const std::vector<std::size_t>& target, const char* who) {
  if (x.value().rank() != 2 || x.value().rows() != target.size() || target.empty())
    throw std::invalid_argument(std::string(who) + ": one target per row expected");
  for (auto t : target)
    if (t >= x.value().cols()) throw std::invalid_argument(std::string(who) + ": target class out of range");
}

std::atomic<bool> warned_clamp{false};

}  // namespace

Var cross_entropy(const Var& probabilities, const std::vector<std::size_t>& target) {
  check_targets(probabilities, target, "cross_entropy");
  const Var picked = pick(probabilities, target);
  const std::size_t n = target.size();
  NdArray out({1}, 0.0);
  bool clamped = false;
  for (std::size_t i = 0; i < n; ++i) {
    double p = picked.value()[i];
    if (p < 1e-12) {
      p = 1e-12;
      clamped = true;
    }
    out[0] -= std::log(p) / double(n);
  }
  if (clamped && !warned_clamp.exchange(true))
    std::cerr << "warning: cross_entropy clamped a target probability at 1e-12\n";
  const NdArray pv = picked.value();
  return make_result("cross_entropy", std::move(out), {picked}, [pv, n](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < n; ++i)
      if (pv[i] >= 1e-12) (*gi[0])[i] -= g[0] / (double(n) * pv[i]);
  });
}

Var cross_entropy_logits(const Var& logits, const std::vector<std::size_t>& target) {
  check_targets(logits, target, "cross_entropy_logits");
  return scale(mean(pick(log_softmax(logits, 1), target)), -1.0);
}

Var binary_cross_entropy_logits(const Var& logit, const std::vector<double>& target) {
  if (logit.value().rank() != 2 || logit.value().cols() != 1 || logit.value().rows() != target.size() || target.empty())
    throw std::invalid_argument("binary_cross_entropy_logits: expected [B x 1] logits with B targets");
  NdArray y({target.size(), 1}, target);
  // log(1 + e^z) - y z
  return mean(softplus(logit) - logit * Var::constant(std::move(y)));
}

Var dice_loss(const Var& probabilities, const std::vector<std::uint8_t>& classes, std::uint8_t cls, double smooth) {
  const NdArray& p = probabilities.value();
  if (p.rank() != 2 || p.rows() != classes.size() || cls >= p.cols())
    throw std::invalid_argument("dice_loss: probabilities must be [N x C] with one class per row");
  NdArray truth(p.shape(), 0.0), column(p.shape(), 0.0);
  double truth_sum = 0;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    column.at(i, cls) = 1.0;
    if (classes[i] == cls) {
      truth.at(i, cls) = 1.0;
      truth_sum += 1.0;
    }
  }
  const Var inter = sum(probabilities * Var::constant(std::move(truth)));
  const Var mass = sum(probabilities * Var::constant(std::move(column)));
  const Var ratio = mul(add_scalar(scale(inter, 2.0), smooth), exp(scale(log(add_scalar(mass, truth_sum + smooth)), -1.0)));
  return add_scalar(scale(ratio, -1.0), 1.0);
}

Var mse(const Var& prediction, const NdArray& target) {
  if (prediction.shape() != target.shape()) throw std::invalid_argument("mse: shape mismatch");
  return mean(square(prediction - Var::constant(target)));
}

}  // namespace cardiofuse::train
