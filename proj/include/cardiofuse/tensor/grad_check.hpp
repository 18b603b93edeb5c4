#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "cardiofuse/tensor/autodiff.hpp"

namespace cardiofuse {

// Compares reverse-mode gradients of a scalar map against central finite
// differences. Returns max over coordinates of
//   |analytic - numeric| / max(1e-6, |analytic| + |numeric|).
// The floor keeps coordinates whose true gradient is zero from being judged
// on finite-difference roundoff alone.
double grad_check(const std::function<Var(const Var&)>& f, const NdArray& x, double step = 1e-4);

// Same measure for a loss over existing parameters, which are perturbed in
// place and restored. max_coords > 0 checks that many randomly chosen
// coordinates per parameter instead of all of them.
double grad_check_params(const std::function<Var()>& loss, const std::vector<Var>& params, double step = 1e-4,
                         std::size_t max_coords = 0, std::uint64_t seed = 0);

}  // namespace cardiofuse
