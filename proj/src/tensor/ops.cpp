#include "cardiofuse/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cardiofuse {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC as_mat(const NdArray& a) {
  return MapC(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}
Map as_mat(NdArray& a) {
  return Map(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_same(const std::string& op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

void require_matrix(const std::string& op, const Var& a) {
  if (a.value().rank() > 2) throw std::invalid_argument(op + ": expected a matrix, got " + shape_str(a.shape()));
}

template <typename F, typename D>
Var unary(const char* op, const Var& x, F f, D df) {
  NdArray out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  auto xn = x.node();
  return make_result(op, std::move(out), {x}, [xn, df](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    const auto& xv = xn->value;
    auto& gx = *gi[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.value().cols() != b.value().rows()) shape_error("matmul", a.shape(), b.shape());
  NdArray out({a.value().rows(), b.value().cols()});
  as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value());
  auto an = a.node(), bn = b.node();
  return make_result("matmul", std::move(out), {a, b}, [an, bn](const NdArray& g, std::vector<NdArray*>& gi) {
    if (gi[0]) as_mat(*gi[0]).noalias() += as_mat(g) * as_mat(bn->value).transpose();
    if (gi[1]) as_mat(*gi[1]).noalias() += as_mat(an->value).transpose() * as_mat(g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  if (a.value().cols() != b.value().cols()) shape_error("matmul_nt", a.shape(), b.shape());
  NdArray out({a.value().rows(), b.value().rows()});
  as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value()).transpose();
  auto an = a.node(), bn = b.node();
  return make_result("matmul_nt", std::move(out), {a, b}, [an, bn](const NdArray& g, std::vector<NdArray*>& gi) {
    if (gi[0]) as_mat(*gi[0]).noalias() += as_mat(g) * as_mat(bn->value);
    if (gi[1]) as_mat(*gi[1]).noalias() += as_mat(g).transpose() * as_mat(an->value);
  });
}

Var matmul_tn(const Var& a, const Var& b) {
  require_matrix("matmul_tn", a);
  require_matrix("matmul_tn", b);
  if (a.value().rows() != b.value().rows()) shape_error("matmul_tn", a.shape(), b.shape());
  NdArray out({a.value().cols(), b.value().cols()});
  as_mat(out).noalias() = as_mat(a.value()).transpose() * as_mat(b.value());
  auto an = a.node(), bn = b.node();
  return make_result("matmul_tn", std::move(out), {a, b}, [an, bn](const NdArray& g, std::vector<NdArray*>& gi) {
    if (gi[0]) as_mat(*gi[0]).noalias() += as_mat(bn->value) * as_mat(g).transpose();
    if (gi[1]) as_mat(*gi[1]).noalias() += as_mat(an->value) * as_mat(g);
  });
}

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  NdArray out = a.value();
  out += b.value();
  return make_result("add", std::move(out), {a, b}, [](const NdArray& g, std::vector<NdArray*>& gi) {
    if (gi[0]) *gi[0] += g;
    if (gi[1]) *gi[1] += g;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  NdArray out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result("sub", std::move(out), {a, b}, [](const NdArray& g, std::vector<NdArray*>& gi) {
    if (gi[0]) *gi[0] += g;
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  NdArray out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto an = a.node(), bn = b.node();
  return make_result("mul", std::move(out), {a, b}, [an, bn](const NdArray& g, std::vector<NdArray*>& gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bn->value[i];
    if (gi[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * an->value[i];
  });
}

Var scale(const Var& a, double s) {
  NdArray out = a.value();
  out *= s;
  return make_result("scale", std::move(out), {a}, [s](const NdArray& g, std::vector<NdArray*>& gi) {
    if (gi[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += s * g[i];
  });
}

Var add_scalar(const Var& a, double s) {
  NdArray out = a.value();
  for (auto& v : out.values()) v += s;
  return make_result("add_scalar", std::move(out), {a}, [](const NdArray& g, std::vector<NdArray*>& gi) {
    if (gi[0]) *gi[0] += g;
  });
}

Var add_bias(const Var& x, const Var& bias) {
  require_matrix("add_bias", x);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (bias.size() != n) shape_error("add_bias", x.shape(), bias.shape());
  NdArray out = x.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  return make_result("add_bias", std::move(out), {x, bias}, [m, n](const NdArray& g, std::vector<NdArray*>& gi) {
    if (gi[0]) *gi[0] += g;
    if (gi[1])
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) (*gi[1])[c] += g[r * n + c];
  });
}

Var relu(const Var& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  auto f = [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
  return unary("sigmoid", x, f, [f](double v) {
    const double s = f(v);
    return s * (1.0 - s);
  });
}

Var tanh(const Var& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double v) {
    const double t = std::tanh(v);
    return 1.0 - t * t;
  });
}

Var exp(const Var& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var log(const Var& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Var softplus(const Var& x) {
  return unary(
      "softplus", x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

Var square(const Var& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_result("sum", NdArray::scalar(s), {x}, [](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    const double gv = g[0];
    for (auto& v : gi[0]->values()) v += gv;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var sum_rows(const Var& x) {
  require_matrix("sum_rows", x);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  NdArray out({1, n});
  const auto& xv = x.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += xv[r * n + c];
  return make_result("sum_rows", std::move(out), {x}, [m, n](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) (*gi[0])[r * n + c] += g[c];
  });
}

Var mean_rows(const Var& x) { return scale(sum_rows(x), 1.0 / static_cast<double>(x.value().rows())); }

namespace {

struct AxisLayout {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size())
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                                shape_str(shape));
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

Var softmax(const Var& x, std::size_t axis) {
  const auto l = axis_layout(x.shape(), axis, "softmax");
  NdArray out(x.shape());
  const auto& xv = x.value();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < l.len; ++k) mx = std::max(mx, xv[base + k * l.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < l.len; ++k) {
        const double e = std::exp(xv[base + k * l.inner] - mx);
        out[base + k * l.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < l.len; ++k) out[base + k * l.inner] /= z;
    }
  auto self = std::make_shared<NdArray>(out);
  return make_result("softmax", std::move(out), {x}, [self, l](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    const auto& p = *self;
    auto& gx = *gi[0];
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < l.len; ++k) dot += g[base + k * l.inner] * p[base + k * l.inner];
        for (std::size_t k = 0; k < l.len; ++k) {
          const std::size_t i = base + k * l.inner;
          gx[i] += p[i] * (g[i] - dot);
        }
      }
  });
}

Var log_softmax(const Var& x, std::size_t axis) {
  const auto l = axis_layout(x.shape(), axis, "log_softmax");
  NdArray out(x.shape());
  const auto& xv = x.value();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < l.len; ++k) mx = std::max(mx, xv[base + k * l.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < l.len; ++k) z += std::exp(xv[base + k * l.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < l.len; ++k) out[base + k * l.inner] = xv[base + k * l.inner] - lse;
    }
  auto self = std::make_shared<NdArray>(out);
  return make_result("log_softmax", std::move(out), {x}, [self, l](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    const auto& lp = *self;
    auto& gx = *gi[0];
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        double gs = 0.0;
        for (std::size_t k = 0; k < l.len; ++k) gs += g[base + k * l.inner];
        for (std::size_t k = 0; k < l.len; ++k) {
          const std::size_t i = base + k * l.inner;
          gx[i] += g[i] - std::exp(lp[i]) * gs;
        }
      }
  });
}

Var masked_softmax(const Var& x, const NdArray& mask) {
  require_matrix("masked_softmax", x);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  const bool per_row = mask.size() == m * n;
  if (!per_row && mask.size() != n) shape_error("masked_softmax", x.shape(), mask.shape());
  NdArray out(x.shape(), 0.0);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < m; ++r) {
    const double* mk = mask.data() + (per_row ? r * n : 0);
    double mx = -INFINITY;
    for (std::size_t c = 0; c < n; ++c)
      if (mk[c] != 0.0) mx = std::max(mx, xv[r * n + c]);
    if (mx == -INFINITY) throw std::invalid_argument("masked_softmax: row " + std::to_string(r) + " has every key masked");
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c)
      if (mk[c] != 0.0) {
        const double e = std::exp(xv[r * n + c] - mx);
        out[r * n + c] = e;
        z += e;
      }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  auto self = std::make_shared<NdArray>(out);
  return make_result("masked_softmax", std::move(out), {x}, [self, m, n](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    const auto& p = *self;
    auto& gx = *gi[0];
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * p[r * n + c];
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t i = r * n + c;
        gx[i] += p[i] * (g[i] - dot);
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const std::size_t n = x.shape().back();
  if (gain.size() != n || bias.size() != n) shape_error("layer_norm", x.shape(), gain.shape());
  const std::size_t m = x.size() / n;
  NdArray out(x.shape());
  auto xhat = std::make_shared<NdArray>(x.shape());
  auto inv_sd = std::make_shared<std::vector<double>>(m);
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = gv[c] * h + bv[c];
    }
  }
  auto gn = gain.node();
  return make_result("layer_norm", std::move(out), {x, gain, bias},
                     [xhat, inv_sd, gn, m, n](const NdArray& g, std::vector<NdArray*>& gi) {
                       const auto& h = *xhat;
                       const auto& gv = gn->value;
                       if (gi[1])
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) (*gi[1])[c] += g[r * n + c] * h[r * n + c];
                       if (gi[2])
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) (*gi[2])[c] += g[r * n + c];
                       if (!gi[0]) return;
                       auto& gx = *gi[0];
                       const double inv_n = 1.0 / static_cast<double>(n);
                       for (std::size_t r = 0; r < m; ++r) {
                         double s1 = 0.0, s2 = 0.0;
                         for (std::size_t c = 0; c < n; ++c) {
                           const double dh = g[r * n + c] * gv[c];
                           s1 += dh;
                           s2 += dh * h[r * n + c];
                         }
                         s1 *= inv_n;
                         s2 *= inv_n;
                         const double is = (*inv_sd)[r];
                         for (std::size_t c = 0; c < n; ++c) {
                           const double dh = g[r * n + c] * gv[c];
                           gx[r * n + c] += is * (dh - s1 - h[r * n + c] * s2);
                         }
                       }
                     });
}

Var dropout(const Var& x, double p, RngStream& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<NdArray>(x.shape());
  NdArray out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double k = rng.uniform() >= p ? keep_scale : 0.0;
    (*mask)[i] = k;
    out[i] *= k;
  }
  return make_result("dropout", std::move(out), {x}, [mask](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * (*mask)[i];
  });
}

Var reshape(const Var& x, Shape shape) {
  NdArray out = x.value().reshaped(std::move(shape));
  return make_result("reshape", std::move(out), {x}, [](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    auto& gx = *gi[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var gather(const Var& x, std::shared_ptr<const std::vector<std::size_t>> indices, Shape shape) {
  if (shape_size(shape) != indices->size())
    throw std::invalid_argument("gather: " + std::to_string(indices->size()) + " indices for shape " + shape_str(shape));
  NdArray out(std::move(shape));
  const auto& xv = x.value();
  const auto& idx = *indices;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= xv.size()) throw std::out_of_range("gather: index out of range");
    out[i] = xv[idx[i]];
  }
  return make_result("gather", std::move(out), {x}, [indices](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    const auto& idx = *indices;
    auto& gx = *gi[0];
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
  });
}

Var gather_rows(const Var& table, const std::vector<std::size_t>& ids) {
  require_matrix("gather_rows", table);
  const std::size_t v = table.value().rows(), d = table.value().cols();
  if (ids.empty()) throw std::invalid_argument("gather_rows: no ids");
  NdArray out({ids.size(), d});
  const auto& tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v)
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v));
    std::copy_n(tv.data() + ids[i] * d, d, out.data() + i * d);
  }
  return make_result("gather_rows", std::move(out), {table}, [ids, d](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    auto& gt = *gi[0];
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) gt[ids[i] * d + c] += g[i * d + c];
  });
}

Var pick(const Var& x, const std::vector<std::size_t>& index) {
  require_matrix("pick", x);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (index.size() != m) throw std::invalid_argument("pick: need one index per row");
  NdArray out({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    if (index[r] >= n) throw std::out_of_range("pick: class index out of range");
    out[r] = x.value()[r * n + index[r]];
  }
  return make_result("pick", std::move(out), {x}, [index, n](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    for (std::size_t r = 0; r < index.size(); ++r) (*gi[0])[r * n + index[r]] += g[r];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: nothing to concatenate");
  const std::size_t n = parts[0].value().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_matrix("concat_rows", p);
    if (p.value().cols() != n) shape_error("concat_rows", parts[0].shape(), p.shape());
    m += p.value().rows();
  }
  NdArray out({m, n});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off);
    off += p.size();
  }
  return make_result("concat_rows", std::move(out), parts, [offsets](const NdArray& g, std::vector<NdArray*>& gi) {
    for (std::size_t k = 0; k < gi.size(); ++k) {
      if (!gi[k]) continue;
      auto& gk = *gi[k];
      for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[offsets[k] + i];
    }
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", x);
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (begin >= end || end > m) throw std::out_of_range("slice_rows: bad row range");
  NdArray out({end - begin, n});
  std::copy_n(x.value().data() + begin * n, (end - begin) * n, out.data());
  return make_result("slice_rows", std::move(out), {x}, [begin, n](const NdArray& g, std::vector<NdArray*>& gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[begin * n + i] += g[i];
  });
}

}  // namespace cardiofuse
