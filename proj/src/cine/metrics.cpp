#include "cardiofuse/cine/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cardiofuse::cine {

namespace {

void require_same_dims(const SegMask& a, const SegMask& b, const char* what) {
  if (a.height != b.height || a.width != b.width || a.depth != b.depth || a.classes.size() != b.classes.size())
    throw std::invalid_argument(std::string(what) + ": mask dimensions differ");
}

struct Counts {
  std::size_t a = 0, b = 0, both = 0;
};

Counts count(const SegMask& a, const SegMask& b, std::uint8_t cls) {
  Counts c;
  for (std::size_t i = 0; i < a.classes.size(); ++i) {
    const bool in_a = a.classes[i] == cls, in_b = b.classes[i] == cls;
    c.a += in_a;
    c.b += in_b;
    c.both += in_a && in_b;
  }
  return c;
}

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) on one line.
void edt_line(const double* f, double* out, std::size_t n, std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q)
    if (f[q] < inf) {
      first = q;
      break;
    }
  if (first == n) {
    std::fill(out, out + n, inf);
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (!(f[q] < inf)) continue;
    const double fq = f[q] + static_cast<double>(q * q);
    auto meet = [&](std::size_t p) {
      return (fq - (f[p] + static_cast<double>(p * p))) / (2.0 * static_cast<double>(q) - 2.0 * static_cast<double>(p));
    };
    double s = meet(v[k]);
    while (s <= z[k]) s = meet(v[--k]);  // z[0] = -inf stops the walk
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

double dice(const SegMask& a, const SegMask& b, std::uint8_t cls) {
  require_same_dims(a, b, "dice");
  const auto c = count(a, b, cls);
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

double iou(const SegMask& a, const SegMask& b, std::uint8_t cls) {
  require_same_dims(a, b, "iou");
  const auto c = count(a, b, cls);
  const std::size_t uni = c.a + c.b - c.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.both) / static_cast<double>(uni);
}

double binary_accuracy(const SegMask& a, const SegMask& b, std::uint8_t cls) {
  require_same_dims(a, b, "binary_accuracy");
  if (a.classes.empty()) throw std::invalid_argument("binary_accuracy: empty masks");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.classes.size(); ++i) agree += (a.classes[i] == cls) == (b.classes[i] == cls);
  return static_cast<double>(agree) / static_cast<double>(a.classes.size());
}

std::vector<double> squared_distance_transform(const std::vector<bool>& inside, std::size_t h, std::size_t w,
                                               std::size_t d) {
  if (inside.size() != h * w * d) throw std::invalid_argument("squared_distance_transform: size mismatch");
  if (std::find(inside.begin(), inside.end(), true) == inside.end())
    throw std::invalid_argument("squared_distance_transform: no inside voxel");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(inside.size());
  for (std::size_t i = 0; i < inside.size(); ++i) g[i] = inside[i] ? 0.0 : inf;

  std::vector<std::size_t> v;
  std::vector<double> z, line, res;
  // One pass per axis; each line is len voxels spaced stride apart.
  auto pass = [&](std::size_t len, std::size_t stride, auto&& line_starts) {
    line.resize(len);
    res.resize(len);
    for (std::size_t start : line_starts) {
      for (std::size_t i = 0; i < len; ++i) line[i] = g[start + i * stride];
      edt_line(line.data(), res.data(), len, v, z);
      for (std::size_t i = 0; i < len; ++i) g[start + i * stride] = res[i];
    }
  };
  std::vector<std::size_t> starts;
  for (std::size_t zz = 0; zz < d; ++zz)
    for (std::size_t y = 0; y < h; ++y) starts.push_back((zz * h + y) * w);
  pass(w, 1, starts);
  starts.clear();
  for (std::size_t zz = 0; zz < d; ++zz)
    for (std::size_t x = 0; x < w; ++x) starts.push_back(zz * h * w + x);
  pass(h, w, starts);
  starts.clear();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) starts.push_back(y * w + x);
  pass(d, h * w, starts);
  return g;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty sample");
  if (!(q >= 0.0 && q <= 100.0)) throw std::invalid_argument("percentile: q outside [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

HausdorffResult hausdorff(const SegMask& a, const SegMask& b, std::uint8_t cls) {
  require_same_dims(a, b, "hausdorff");
  std::vector<bool> in_a(a.classes.size()), in_b(b.classes.size());
  for (std::size_t i = 0; i < a.classes.size(); ++i) {
    in_a[i] = a.classes[i] == cls;
    in_b[i] = b.classes[i] == cls;
  }
  if (std::find(in_a.begin(), in_a.end(), true) == in_a.end() || std::find(in_b.begin(), in_b.end(), true) == in_b.end())
    throw std::invalid_argument("hausdorff: class set is empty on at least one side");
  const auto to_b = squared_distance_transform(in_b, a.height, a.width, a.depth);
  const auto to_a = squared_distance_transform(in_a, a.height, a.width, a.depth);
  std::vector<double> directed;
  double worst = 0.0;
  for (std::size_t i = 0; i < in_a.size(); ++i) {
    if (in_a[i]) directed.push_back(std::sqrt(to_b[i]));
    if (in_b[i]) directed.push_back(std::sqrt(to_a[i]));
  }
  for (double x : directed) worst = std::max(worst, x);
  return {worst, percentile(std::move(directed), 95.0)};
}

}  // namespace cardiofuse::cine
