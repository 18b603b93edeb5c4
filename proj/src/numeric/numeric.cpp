#include "cardiofuse/numeric/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cardiofuse::numeric {

NumericSchema fit_schema(const std::vector<std::string>& names, const std::vector<NumericRecord>& train) {
  NumericSchema s;
  s.names = names;
  std::vector<std::vector<double>> columns(names.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].size() != names.size())
      throw std::invalid_argument("fit_schema: record " + std::to_string(i) + " has " + std::to_string(train[i].size()) +
                                  " values, expected " + std::to_string(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
      if (!train[i][j]) continue;
      if (!std::isfinite(*train[i][j])) throw std::invalid_argument("fit_schema: non-finite value for " + names[j]);
      columns[j].push_back(*train[i][j]);
    }
  }
  for (std::size_t j = 0; j < names.size(); ++j) {
    auto& col = columns[j];
    if (col.empty()) throw std::invalid_argument("fit_schema: indicator '" + names[j] + "' is missing in every training record");
    std::sort(col.begin(), col.end());
    const std::size_t n = col.size();
    const double median = n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
    s.stats.push_back({median, col.front(), col.back()});
  }
  return s;
}

std::vector<double> impute_and_normalize(const NumericRecord& r, const NumericSchema& s) {
  if (r.size() != s.features())
    throw std::invalid_argument("impute_and_normalize: record has " + std::to_string(r.size()) + " values, schema " +
                                std::to_string(s.features()));
  std::vector<double> out(r.size());
  for (std::size_t j = 0; j < r.size(); ++j) {
    const auto& st = s.stats[j];
    const double x = r[j] ? *r[j] : st.median;
    if (!std::isfinite(x)) throw std::invalid_argument("impute_and_normalize: non-finite value for " + s.names[j]);
    out[j] = st.max > st.min ? std::clamp((x - st.min) / (st.max - st.min), 0.0, 1.0) : 0.0;
  }
  return out;
}

NdArray normalize_batch(const std::vector<NumericRecord>& records, const NumericSchema& s) {
  NdArray out({records.size(), s.features()});
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto row = impute_and_normalize(records[i], s);
    std::copy(row.begin(), row.end(), out.data() + i * s.features());
  }
  return out;
}

std::vector<std::size_t> undersample(const std::vector<std::size_t>& labels, std::size_t num_classes, RngStream& rng) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw std::invalid_argument("undersample: label out of range");
    by_class[labels[i]].push_back(i);
  }
  std::size_t keep = labels.size();
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (by_class[k].empty()) throw std::invalid_argument("undersample: class " + std::to_string(k) + " is empty");
    keep = std::min(keep, by_class[k].size());
  }
  std::vector<std::size_t> out;
  for (auto& members : by_class) {
    rng.shuffle(std::span<std::size_t>(members));
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::sort(out.begin(), out.end());
  return out;
}

NumericEncoder::NumericEncoder(std::size_t in_features, RngStream& rng, NumericEncoderConfig cfg)
    : cfg_(cfg), fc1_(in_features, cfg.hidden, rng), fc2_(cfg.hidden, cfg.out, rng) {
  if (in_features == 0) throw std::invalid_argument("NumericEncoder: no input features");
  if (cfg.dropout < 0 || cfg.dropout >= 1) throw std::invalid_argument("NumericEncoder: dropout outside [0, 1)");
}

Var NumericEncoder::operator()(const Var& x, bool training, RngStream& rng) const {
  if (x.value().rank() != 2 || x.value().cols() != in_features())
    throw std::invalid_argument("NumericEncoder: expected [N x " + std::to_string(in_features()) + "] input");
  return fc2_(dropout(relu(fc1_(x)), cfg_.dropout, rng, training));
}

Var NumericEncoder::eval(const Var& x) const {
  RngStream unused(0);
  return (*this)(x, false, unused);
}

void NumericEncoder::collect(nn::ParamList& out, const std::string& prefix) const {
  fc1_.collect(out, prefix + "fc1");
  fc2_.collect(out, prefix + "fc2");
}

}  // namespace cardiofuse::numeric
