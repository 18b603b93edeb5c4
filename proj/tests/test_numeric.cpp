#include <algorithm>
#include <cmath>
#include <map>

#include "cardiofuse/cohort/cohort.hpp"
#include "cardiofuse/numeric/numeric.hpp"
#include "cardiofuse/tensor/grad_check.hpp"
#include "doctest.h"

using namespace cardiofuse;
using namespace cardiofuse::numeric;

namespace {

std::vector<NumericRecord> column(std::initializer_list<std::optional<double>> values) {
  std::vector<NumericRecord> out;
  for (auto v : values) out.push_back({v});
  return out;
}

}  // namespace

TEST_CASE("fit_schema examples") {
  auto s = fit_schema({"x"}, column({1.0, 2.0, 3.0}));
  CHECK(s.stats[0] == IndicatorStats{2.0, 1.0, 3.0});
  s = fit_schema({"x"}, column({4.0, 1.0, 3.0, 2.0}));
  CHECK(s.stats[0].median == 2.5);
  s = fit_schema({"x"}, column({5.0}));
  CHECK(s.stats[0] == IndicatorStats{5.0, 5.0, 5.0});
  s = fit_schema({"x"}, column({std::nullopt, 7.0, std::nullopt}));
  CHECK(s.stats[0].median == 7.0);
}

TEST_CASE("fit_schema errors") {
  CHECK_THROWS_AS(fit_schema({"x"}, column({std::nullopt, std::nullopt})), std::invalid_argument);
  CHECK_THROWS_AS(fit_schema({"x"}, {}), std::invalid_argument);
  CHECK_THROWS_AS(fit_schema({"x"}, column({NAN})), std::invalid_argument);
  CHECK_THROWS_AS(fit_schema({"x", "y"}, column({1.0})), std::invalid_argument);
  try {
    fit_schema({"Age"}, column({std::nullopt}));
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("Age") != std::string::npos);
  }
}

TEST_CASE("impute_and_normalize examples") {
  NumericSchema s{{"Age", "Gender"}, {{50.0, 18.0, 79.0}, {1.0, 0.0, 1.0}}};
  auto v = impute_and_normalize({52.36765, 1.0}, s);
  CHECK(v[0] == doctest::Approx(0.5634).epsilon(1e-4));
  CHECK(v[0] == doctest::Approx((52.36765 - 18.0) / 61.0).epsilon(1e-15));
  CHECK(v[1] == 1.0);
  CHECK(impute_and_normalize({0.0, 0.0}, s)[1] == 0.0);
  v = impute_and_normalize({std::nullopt, std::nullopt}, s);
  CHECK(v[0] == doctest::Approx((50.0 - 18.0) / 61.0));
  CHECK(v[1] == 1.0);
  v = impute_and_normalize({200.0, -3.0}, s);
  CHECK(v[0] == 1.0);
  CHECK(v[1] == 0.0);
  NumericSchema flat{{"c"}, {{5.0, 5.0, 5.0}}};
  CHECK(impute_and_normalize({9.0}, flat)[0] == 0.0);
  CHECK_THROWS_AS(impute_and_normalize({1.0}, s), std::invalid_argument);
}

TEST_CASE("normalized output stays in the unit cube and the schema is untouched") {
  RngStream rng(17);
  std::vector<std::string> names{"a", "b", "c", "d"};
  std::vector<NumericRecord> train;
  for (int i = 0; i < 50; ++i) {
    NumericRecord r;
    for (std::size_t j = 0; j < names.size(); ++j)
      r.push_back(rng.bernoulli(0.2) ? std::nullopt : std::optional<double>(rng.normal(double(j), 1.0 + j)));
    train.push_back(r);
  }
  const auto schema = fit_schema(names, train);
  const auto before = schema;
  for (int t = 0; t < 2000; ++t) {
    NumericRecord r;
    for (std::size_t j = 0; j < names.size(); ++j)
      r.push_back(rng.bernoulli(0.2) ? std::nullopt : std::optional<double>(rng.normal(0.0, 50.0)));
    for (double x : impute_and_normalize(r, schema)) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
  CHECK(schema == before);
  for (std::size_t j = 0; j < names.size(); ++j) {
    CHECK(schema.stats[j].min <= schema.stats[j].median);
    CHECK(schema.stats[j].median <= schema.stats[j].max);
  }
}

TEST_CASE("cohort records normalize against a train-only schema") {
  cohort::CohortSpec spec;
  spec.n_clinical = 60;
  spec.n_cine = 0;
  const auto c = cohort::generate_cohort(spec);
  std::vector<NumericRecord> train, test;
  for (std::size_t i = 0; i < c.patients.size(); ++i) (i < 40 ? train : test).push_back(c.patients[i].numeric);
  const auto schema = fit_schema(c.indicators, train);
  const NdArray x = normalize_batch(test, schema);
  CHECK(x.shape() == Shape{20, c.indicators.size()});
  for (double v : x.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("undersample examples") {
  std::vector<std::size_t> labels(100, 0);
  labels.resize(120, 1);
  RngStream rng(4);
  const auto keep = undersample(labels, 2, rng);
  std::size_t a = 0, b = 0;
  for (auto i : keep) (labels[i] ? b : a)++;
  CHECK(a == 20);
  CHECK(b == 20);
  CHECK(std::is_sorted(keep.begin(), keep.end()));
  CHECK(std::adjacent_find(keep.begin(), keep.end()) == keep.end());

  std::vector<std::size_t> balanced{0, 1, 2, 0, 1, 2};
  RngStream r2(9);
  const auto all = undersample(balanced, 3, r2);
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});

  RngStream x(12), y(12), z(13);
  CHECK(undersample(labels, 2, x) == undersample(labels, 2, y));
  CHECK_FALSE(undersample(labels, 2, x) == undersample(labels, 2, z));

  RngStream e(1);
  CHECK_THROWS_AS(undersample({0, 0, 2}, 3, e), std::invalid_argument);
  CHECK_THROWS_AS(undersample({0, 5}, 3, e), std::invalid_argument);
}

TEST_CASE("undersample brute force on small sets") {
  RngStream gen(21);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + gen.below(3), n = k + gen.below(12);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i < k ? i : gen.below(k);
    std::map<std::size_t, std::size_t> count;
    for (auto l : labels) count[l]++;
    std::size_t minority = n;
    for (auto [l, m] : count) minority = std::min(minority, m);

    RngStream rng(trial);
    const auto keep = undersample(labels, k, rng);
    CHECK(keep.size() == k * minority);
    std::map<std::size_t, std::size_t> kept;
    for (auto i : keep) {
      REQUIRE(i < n);
      kept[labels[i]]++;
    }
    for (std::size_t l = 0; l < k; ++l) CHECK(kept[l] == minority);
  }
}

TEST_CASE("numeric encoder contract") {
  RngStream rng(2);
  NumericEncoder enc(15, rng);
  CHECK(enc.out_features() == 256);
  CHECK(enc.config().hidden == 512);
  nn::ParamList params;
  enc.collect(params, "numeric.");
  CHECK(params.size() == 4);
  CHECK(params[0].name == "numeric.fc1.weight");

  RngStream xs(3);
  NdArray x({4, 15});
  for (auto& v : x.values()) v = xs.uniform();
  const Var in = Var::constant(x);
  const auto a = enc.eval(in).value(), b = enc.eval(in).value();
  CHECK(a.shape() == Shape{4, 256});
  CHECK(a == b);
  RngStream d1(5), d2(6);
  CHECK_FALSE(enc(in, true, d1).value() == enc(in, true, d2).value());

  CHECK_THROWS_AS(enc.eval(Var::constant(NdArray({4, 14}))), std::invalid_argument);
  CHECK_THROWS_AS(NumericEncoder(15, rng, {512, 256, 1.0}), std::invalid_argument);
}

TEST_CASE("zero input with zero biases gives zero output") {
  RngStream rng(8);
  NumericEncoder enc(6, rng);
  for (auto& p : {enc.fc1().bias, enc.fc2().bias}) p.node()->value.fill(0.0);
  const auto y = enc.eval(Var::constant(NdArray({3, 6}))).value();
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("numeric encoder gradients") {
  RngStream rng(10);
  NumericEncoder enc(5, rng, {12, 7, 0.2});
  NdArray x({3, 5});
  for (auto& v : x.values()) v = rng.uniform();
  NdArray mix({3, 7});
  for (auto& v : mix.values()) v = rng.normal();
  const Var w = Var::constant(mix);
  const double err_x = grad_check([&](const Var& in) { return sum(tanh(enc.eval(in)) * w); }, x);
  CHECK(err_x < 1e-4);
  // Dropout masks replayed from the same seed make the training-mode map deterministic.
  auto loss = [&] {
    RngStream d(77);
    return sum(tanh(enc(Var::constant(x), true, d)) * w);
  };
  nn::ParamList params;
  enc.collect(params, "");
  CHECK(grad_check_params(loss, nn::vars_of(params)) < 1e-4);
}
