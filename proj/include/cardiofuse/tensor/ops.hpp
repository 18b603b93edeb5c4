#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "cardiofuse/tensor/autodiff.hpp"
#include "cardiofuse/tensor/rng.hpp"

namespace cardiofuse {

// Matrix products. Rank-1 operands are read as single rows.
Var matmul(const Var& a, const Var& b);     // a * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var matmul_tn(const Var& a, const Var& b);  // a^T * b

// Elementwise, same shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// x is [m x n]; bias is [n] or [1 x n], added to every row.
Var add_bias(const Var& x, const Var& bias);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
// log(1 + e^x), evaluated without overflow.
Var softplus(const Var& x);
Var square(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
// Column sums / means of a matrix, shape [1 x n].
Var sum_rows(const Var& x);
Var mean_rows(const Var& x);

// Max-subtracted softmax along any axis.
Var softmax(const Var& x, std::size_t axis);
Var log_softmax(const Var& x, std::size_t axis);
// Row softmax of a matrix restricted to entries with mask == 1; masked
// entries are exactly 0 and receive no gradient. mask is [m x n] or [n].
// A row with no unmasked entry is an error.
Var masked_softmax(const Var& x, const NdArray& mask);

// Normalizes over the last axis; gain and bias have that axis' length.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// Inverted dropout: survivors are scaled by 1/(1-p). Returns x itself when
// training is false or p == 0. Requires 0 <= p < 1.
Var dropout(const Var& x, double p, RngStream& rng, bool training);

Var reshape(const Var& x, Shape shape);
// out.flat[i] = x.flat[(*indices)[i]]; gradients scatter-add back.
Var gather(const Var& x, std::shared_ptr<const std::vector<std::size_t>> indices, Shape shape);
// Rows of table [v x d] selected by ids, shape [ids.size() x d].
Var gather_rows(const Var& table, const std::vector<std::size_t>& ids);
// One entry per row: out[i] = x[i, index[i]], shape [m x 1].
Var pick(const Var& x, const std::vector<std::size_t>& index);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);

}  // namespace cardiofuse
