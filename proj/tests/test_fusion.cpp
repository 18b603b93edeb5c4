#include <algorithm>
#include <cmath>

#include "cardiofuse/fusion/fusion.hpp"
#include "cardiofuse/tensor/grad_check.hpp"
#include "doctest.h"

using namespace cardiofuse;
using namespace cardiofuse::fusion;

namespace {

FusionConfig small_config() {
  FusionConfig c;
  c.dim = 6;
  c.d_attn = 4;
  return c;
}

NdArray random_rows(std::size_t b, std::size_t d, RngStream& rng, double sd = 1.0) {
  NdArray x({b, d});
  for (auto& v : x.values()) v = sd * rng.normal();
  return x;
}

NdArray availability(std::size_t b, RngStream& rng) {
  NdArray a({b, kModalities});
  for (std::size_t i = 0; i < b; ++i) {
    do {
      for (std::size_t m = 0; m < kModalities; ++m) a.at(i, m) = rng.bernoulli(0.7) ? 1.0 : 0.0;
    } while (a.at(i, 0) + a.at(i, 1) + a.at(i, 2) == 0);
  }
  return a;
}

ModalityBatch batch_of(const NdArray& t, const NdArray& c, const NdArray& n, const NdArray& avail) {
  return {Var::constant(t), Var::constant(c), Var::constant(n), avail};
}

NdArray all_available(std::size_t b) { return NdArray({b, kModalities}, 1.0); }

}  // namespace

TEST_CASE("strategy validation and ids") {
  CHECK(AllocationStrategy::self_reasoning().id() == "self_reasoning");
  CHECK(AllocationStrategy::fixed(0.5, 0.25, 0.25).id() == "fixed_50_25_25");
  CHECK_THROWS_AS(AllocationStrategy::fixed(0.5, 0.5, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(AllocationStrategy::fixed(1.2, -0.2, 0.0), std::invalid_argument);
}

TEST_CASE("fixed context example") {
  RngStream rng(1);
  FusionModel model(small_config(), rng);
  const NdArray a = random_rows(2, 6, rng), b = random_rows(2, 6, rng), c = random_rows(2, 6, rng);
  auto [ctx, alloc] = model.context(batch_of(a, b, c, all_available(2)), AllocationStrategy::fixed(0.5, 0.25, 0.25));
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(ctx.value()[i] == doctest::Approx(0.5 * a[i] + 0.25 * b[i] + 0.25 * c[i]).epsilon(1e-14));
  CHECK(alloc.at(0, 0) == 0.5);
  CHECK(alloc.at(1, 2) == 0.25);
}

TEST_CASE("fixed weights renormalize over availability") {
  RngStream rng(2);
  FusionModel model(small_config(), rng);
  const NdArray a = random_rows(1, 6, rng), b = random_rows(1, 6, rng), c = random_rows(1, 6, rng);
  NdArray avail({1, 3}, std::vector<double>{1, 0, 1});
  auto [ctx, alloc] = model.context(batch_of(a, b, c, avail), AllocationStrategy::fixed(0.5, 0.25, 0.25));
  CHECK(alloc[1] == 0.0);
  CHECK(alloc[0] == doctest::Approx(2.0 / 3.0));
  for (std::size_t i = 0; i < 6; ++i) CHECK(ctx.value()[i] == doctest::Approx((0.5 * a[i] + 0.25 * c[i]) / 0.75));
  NdArray only_cine({1, 3}, std::vector<double>{0, 1, 0});
  CHECK_THROWS_AS(model.context(batch_of(a, b, c, only_cine), AllocationStrategy::fixed(0.5, 0.0, 0.5)),
                  std::invalid_argument);
}

TEST_CASE("fixed context is linear in the features") {
  RngStream rng(3);
  FusionModel model(small_config(), rng);
  const auto s = AllocationStrategy::fixed(0.3, 0.2, 0.5);
  for (int trial = 0; trial < 50; ++trial) {
    const NdArray av = availability(3, rng);
    NdArray f[2][3], sum[3];
    for (int m = 0; m < 3; ++m) {
      f[0][m] = random_rows(3, 6, rng);
      f[1][m] = random_rows(3, 6, rng);
      sum[m] = f[0][m];
      sum[m] += f[1][m];
    }
    const auto c0 = model.context(batch_of(f[0][0], f[0][1], f[0][2], av), s).first.value();
    const auto c1 = model.context(batch_of(f[1][0], f[1][1], f[1][2], av), s).first.value();
    const auto cs = model.context(batch_of(sum[0], sum[1], sum[2], av), s).first.value();
    for (std::size_t i = 0; i < cs.size(); ++i) CHECK(cs[i] == doctest::Approx(c0[i] + c1[i]).epsilon(1e-12));
  }
}

TEST_CASE("self-reasoning with identical features allocates equally") {
  RngStream rng(4);
  FusionModel model(small_config(), rng);
  const NdArray x = random_rows(5, 6, rng);
  auto [ctx, alloc] = model.context(batch_of(x, x, x, all_available(5)), AllocationStrategy::self_reasoning());
  for (double w : alloc.values()) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("masked numeric modality gets zero allocation") {
  RngStream rng(5);
  FusionModel model(small_config(), rng);
  NdArray avail({2, 3}, std::vector<double>{1, 1, 0, 1, 0, 0});
  auto [ctx, alloc] = model.context(batch_of(random_rows(2, 6, rng), random_rows(2, 6, rng), random_rows(2, 6, rng), avail),
                                    AllocationStrategy::self_reasoning());
  CHECK(alloc.at(0, 2) == 0.0);
  CHECK(alloc.at(0, 0) + alloc.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(alloc.at(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("allocation invariants over random inputs") {
  RngStream rng(6);
  FusionModel model(small_config(), rng);
  std::size_t draws = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t b = 20;
    const NdArray av = availability(b, rng);
    const double sd = 0.1 + 5.0 * rng.uniform();
    const auto batch = batch_of(random_rows(b, 6, rng, sd), random_rows(b, 6, rng, sd), random_rows(b, 6, rng, sd), av);
    for (const auto& s : {AllocationStrategy::self_reasoning(), AllocationStrategy::fixed(0.55, 0.3, 0.15)}) {
      const auto alloc = model.context(batch, s).second;
      for (std::size_t i = 0; i < b; ++i) {
        double total = 0;
        for (std::size_t m = 0; m < kModalities; ++m) {
          CHECK(alloc.at(i, m) >= 0.0);
          if (av.at(i, m) == 0) CHECK(alloc.at(i, m) == 0.0);
          total += alloc.at(i, m);
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
        draws++;
      }
    }
  }
  CHECK(draws == 20000);
}

TEST_CASE("context ignores unavailable feature rows") {
  RngStream rng(7);
  FusionModel model(small_config(), rng);
  NdArray avail({1, 3}, std::vector<double>{1, 0, 1});
  const NdArray t = random_rows(1, 6, rng), n = random_rows(1, 6, rng);
  const auto base = model.forward(batch_of(t, random_rows(1, 6, rng), n, avail), AllocationStrategy::self_reasoning());
  const auto other = model.forward(batch_of(t, random_rows(1, 6, rng, 9.0), n, avail), AllocationStrategy::self_reasoning());
  CHECK(base.fused.value() == other.fused.value());
  CHECK(base.allocation == other.allocation);
}

TEST_CASE("self-reasoning is equivariant under slot permutation") {
  RngStream rng(8);
  FusionModel model(small_config(), rng);
  const std::array<std::array<std::size_t, 3>, 6> perms{
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  for (int trial = 0; trial < 40; ++trial) {
    const NdArray av = availability(4, rng);
    const NdArray f[3] = {random_rows(4, 6, rng), random_rows(4, 6, rng), random_rows(4, 6, rng)};
    auto [ctx, alloc] = model.context(batch_of(f[0], f[1], f[2], av), AllocationStrategy::self_reasoning());
    for (const auto& p : perms) {
      // Slot s of the permuted batch holds modality p[s].
      NdArray pav({4, 3});
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t s = 0; s < 3; ++s) pav.at(i, s) = av.at(i, p[s]);
      auto [pctx, palloc] = model.context(batch_of(f[p[0]], f[p[1]], f[p[2]], pav), AllocationStrategy::self_reasoning());
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t s = 0; s < 3; ++s) CHECK(palloc.at(i, s) == doctest::Approx(alloc.at(i, p[s])).epsilon(1e-12));
      CHECK(max_abs_diff(pctx.value(), ctx.value()) < 1e-12);
    }
  }
}

TEST_CASE("batch validation") {
  RngStream rng(9);
  FusionModel model(small_config(), rng);
  const NdArray x = random_rows(2, 6, rng);
  CHECK_THROWS_AS(model.forward(batch_of(x, x, x, NdArray({2, 3})), AllocationStrategy::self_reasoning()),
                  std::invalid_argument);
  CHECK_THROWS_AS(model.forward(batch_of(x, x, random_rows(2, 5, rng), all_available(2)), AllocationStrategy::self_reasoning()),
                  std::invalid_argument);
  NdArray half({2, 3}, 0.5);
  CHECK_THROWS_AS(model.forward(batch_of(x, x, x, half), AllocationStrategy::self_reasoning()), std::invalid_argument);
}

TEST_CASE("head ranges over random inputs") {
  RngStream rng(10);
  FusionConfig cfg = small_config();
  FusionModel model(cfg, rng);
  NoGradGuard guard;
  std::size_t count = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double sd = 0.1 + 20.0 * rng.uniform();
    const auto out = model.forward(batch_of(random_rows(100, 6, rng, sd), random_rows(100, 6, rng, sd),
                                            random_rows(100, 6, rng, sd), availability(100, rng)),
                                   AllocationStrategy::self_reasoning());
    for (const auto& b : bundles(out)) {
      CHECK(b.death_probability >= 0.0);
      CHECK(b.death_probability <= 1.0);
      CHECK(b.days >= 0.0);
      CHECK(b.cause < cfg.cause_classes);
      CHECK(b.macces < cfg.macces_classes);
      double s = 0;
      for (double p : b.cause_probabilities) s += p;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      count++;
    }
  }
  CHECK(count == 10000);
}

TEST_CASE("default shapes") {
  RngStream rng(11);
  FusionModel model(FusionConfig{}, rng);
  const auto out = model.forward(batch_of(random_rows(3, 256, rng), random_rows(3, 256, rng), random_rows(3, 256, rng),
                                          all_available(3)),
                                 AllocationStrategy::self_reasoning());
  CHECK(out.fused.value().shape() == Shape{3, 256});
  CHECK(out.heads.cause_logits.value().shape() == Shape{3, 4});
  CHECK(out.heads.macces_logits.value().shape() == Shape{3, 5});
  CHECK(out.heads.days.value().shape() == Shape{3, 1});
}

TEST_CASE("risk stratification") {
  CHECK(risk_stratify(0.0) == RiskLevel::Low);
  CHECK(risk_stratify(1.0) == RiskLevel::High);
  CHECK(risk_stratify(0.5) == RiskLevel::Medium);
  CHECK(risk_stratify(0.33) == RiskLevel::Low);
  CHECK(risk_stratify(0.66) == RiskLevel::Medium);
  CHECK(std::string(risk_name(RiskLevel::High)) == "high");
  CHECK_THROWS_AS(risk_stratify(0.5, {0.7, 0.6}), std::invalid_argument);
  CHECK_THROWS_AS(risk_stratify(0.5, {0.0, 0.6}), std::invalid_argument);
}

TEST_CASE("timeline interpolation") {
  const auto pts = interpolate_timeline({0, 10}, {0.2, 0.6}, {0, 5, 10, 20});
  CHECK(pts[1].probability == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(pts[1].level == RiskLevel::Medium);
  CHECK_FALSE(pts[1].observed);
  CHECK(pts[0].observed);
  CHECK(pts[0].level == RiskLevel::Low);
  CHECK(pts[3].probability == 0.6);
  const auto flat = interpolate_timeline({3}, {0.9}, {0, 3, 7});
  for (const auto& p : flat) {
    CHECK(p.probability == 0.9);
    CHECK(p.level == RiskLevel::High);
  }
  CHECK_THROWS_AS(interpolate_timeline({}, {}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(interpolate_timeline({2, 1}, {0.1, 0.2}, {1}), std::invalid_argument);
}

TEST_CASE("model timeline") {
  RngStream rng(12);
  FusionModel model(small_config(), rng);
  std::vector<TimedFeatures> history;
  for (double t : {0.0, 30.0, 90.0})
    history.push_back({t, batch_of(random_rows(1, 6, rng), random_rows(1, 6, rng), random_rows(1, 6, rng), all_available(1))});
  const auto a = risk_timeline(model, history, AllocationStrategy::self_reasoning(), 120, 7);
  const auto b = risk_timeline(model, history, AllocationStrategy::self_reasoning(), 120, 7);
  CHECK(a == b);
  CHECK(a.front().time == 0);
  CHECK(a.back().time == 119);
  CHECK(std::count_if(a.begin(), a.end(), [](const TimelinePoint& p) { return p.observed; }) == 3);
  CHECK(a.back().probability == std::find_if(a.begin(), a.end(), [](const TimelinePoint& p) { return p.time == 90; })->probability);
  CHECK_THROWS_AS(risk_timeline(model, {}, AllocationStrategy::self_reasoning(), 10, 1), std::invalid_argument);
}

TEST_CASE("fuse and predict gradients") {
  RngStream rng(13);
  FusionModel model(small_config(), rng);
  NdArray av({3, 3}, std::vector<double>{1, 1, 1, 1, 0, 1, 0, 1, 1});
  const NdArray t = random_rows(3, 6, rng), c = random_rows(3, 6, rng), n = random_rows(3, 6, rng);
  const NdArray mix_cause = random_rows(3, 4, rng), mix_macces = random_rows(3, 5, rng);
  for (const auto& s : {AllocationStrategy::self_reasoning(), AllocationStrategy::fixed(0.5, 0.25, 0.25)}) {
    auto objective = [&](const Var& text) {
      const auto out = model.forward({text, Var::constant(c), Var::constant(n), av}, s);
      return sum(sigmoid(out.heads.death_logit)) + sum(out.heads.days) * 0.001 +
             sum(softmax(out.heads.cause_logits, 1) * Var::constant(mix_cause)) +
             sum(log_softmax(out.heads.macces_logits, 1) * Var::constant(mix_macces));
    };
    CHECK(grad_check(objective, t) < 1e-4);
    nn::ParamList params;
    model.collect(params, "fusion.");
    CHECK(grad_check_params([&] { return objective(Var::constant(t)); }, nn::vars_of(params)) < 1e-4);
  }
}
