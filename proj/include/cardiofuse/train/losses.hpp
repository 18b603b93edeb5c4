#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cardiofuse/tensor/ops.hpp"

namespace cardiofuse::train {

// Mean of -log p[i, target[i]] over rows of a probability matrix. Target
// probabilities below 1e-12 are clamped there, with a one-time warning on
// stderr.
Var cross_entropy(const Var& probabilities, const std::vector<std::size_t>& target);
// Same loss from unnormalized logits through log-softmax.
Var cross_entropy_logits(const Var& logits, const std::vector<std::size_t>& target);
// Mean binary cross-entropy of sigmoid(logit) against {0, 1} targets; logit is [B x 1].
Var binary_cross_entropy_logits(const Var& logit, const std::vector<double>& target);
// 1 - soft Dice of class cls: 1 - (2 sum p y + s) / (sum p + sum y + s) with
// smoothing s. probabilities is [N x C], classes has N entries.
Var dice_loss(const Var& probabilities, const std::vector<std::uint8_t>& classes, std::uint8_t cls, double smooth = 1.0);
Var mse(const Var& prediction, const NdArray& target);

}  // namespace cardiofuse::train
