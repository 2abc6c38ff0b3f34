#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"

#include "aspectmf/config.hpp"
#include "aspectmf/error.hpp"
#include "aspectmf/eval.hpp"
#include "aspectmf/trainer.hpp"

using namespace aspectmf;

namespace {

struct Fixture {
  SyntheticData data;
  Split split;
  HyperParams h;
};

Fixture small_problem() {
  Fixture fx;
  SyntheticConfig sc;
  sc.num_users = 40;
  sc.num_items = 50;
  sc.rating_density = 0.15;
  sc.trust_density = 0.05;
  fx.data = generate_synthetic(sc);
  fx.split = split_random(fx.data.ratings, 0.8, 1);
  fx.h = shipped_hyperparams();
  fx.h.max_iter = 5;
  return fx;
}

}  // namespace

TEST_CASE("mae and rmse") {
  std::vector<PredictionPair> perfect{{3, 3}, {4.5, 4.5}};
  CHECK(mae(perfect) == 0.0);
  CHECK(rmse(perfect) == 0.0);

  std::vector<PredictionPair> two{{3, 4}, {4, 2}};
  CHECK(mae(two) == doctest::Approx(1.5));
  CHECK(rmse(two) == doctest::Approx(std::sqrt(2.5)));

  std::vector<PredictionPair> shifted{{1.25, 1}, {3.25, 3}, {0.25, 0}};
  CHECK(mae(shifted) == doctest::Approx(0.25));
  CHECK(rmse(shifted) == doctest::Approx(0.25));

  CHECK_THROWS_AS(mae(std::vector<PredictionPair>{}), UsageError);
  CHECK_THROWS_AS(rmse(std::vector<PredictionPair>{}), UsageError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> r(1, 5);
  for (int k = 0; k < 200; ++k) {
    std::vector<PredictionPair> v(1 + k % 17);
    for (auto& x : v) x = {r(rng), r(rng)};
    CHECK(rmse(v) >= mae(v));
  }
}

TEST_CASE("evaluate") {
  RatingDataset train({{0, 0, 3.0, 0}, {1, 0, 4.0, 0}}, 2, 1, {1, 5});
  RatingDataset test({{0, 0, 4.0, 0}}, 2, 1, {1, 5});
  auto ctx = build_temporal_context(train, 0.4, 1);
  HyperParams h;
  h.num_factors = 2;
  auto p = init_params(train, h).zeros_like();
  p.mu = 3.5;
  const auto cfg = AspectConfig::from_label("static");

  auto none = evaluate(p, train, TrustNetwork({}, 2), test, {}, ctx, cfg);
  CHECK_FALSE(none.cold);
  CHECK(none.all.mae == doctest::Approx(0.5));
  CHECK(none.all.rmse == doctest::Approx(0.5));
  CHECK(none.all.count == 1);

  std::vector<UserId> cold{0, 1};
  auto both = evaluate(p, train, TrustNetwork({}, 2), test, cold, ctx, cfg);
  REQUIRE(both.cold);
  CHECK(both.cold->count == 1);

  p.mu = 7.0;
  CHECK(evaluate(p, train, TrustNetwork({}, 2), test, {}, ctx, cfg).all.mae == doctest::Approx(1.0));
  CHECK(evaluate(p, train, TrustNetwork({}, 2), test, {}, ctx, cfg, false).all.mae ==
        doctest::Approx(3.0));

  CHECK_THROWS_AS(evaluate(p, train, TrustNetwork({}, 2), RatingDataset({}, 2, 1, {1, 5}), {}, ctx,
                           cfg),
                  UsageError);
}

TEST_CASE("evaluate is order invariant") {
  auto fx = small_problem();
  const auto cfg = AspectConfig::from_label("bffv");
  auto ctx = build_temporal_context(fx.split.train, fx.h.beta, fx.h.num_bins);
  auto res = train(fx.split.train, fx.data.trust, fx.h, cfg, ctx);
  auto cold = cold_start_users(fx.split.train);

  auto recs = fx.split.test.records();
  std::reverse(recs.begin(), recs.end());
  RatingDataset rev(recs, fx.split.test.num_users(), fx.split.test.num_items(), fx.split.test.scale());
  auto a = evaluate(res.params, fx.split.train, fx.data.trust, fx.split.test, cold, ctx, cfg);
  auto b = evaluate(res.params, fx.split.train, fx.data.trust, rev, cold, ctx, cfg);
  CHECK(a.all.mae == doctest::Approx(b.all.mae).epsilon(1e-13));
  CHECK(a.all.rmse == doctest::Approx(b.all.rmse).epsilon(1e-13));
}

TEST_CASE("welch_t_test") {
  SUBCASE("reference values") {
    struct Case {
      std::vector<double> a, b;
      double t, p;
    };
    const std::vector<Case> cases{
        {{2.1, 2.0, 1.9}, {2.4, 2.5, 2.6}, -6.12372435695794, 0.0036022326091040163},
        {{0.81, 0.83, 0.79, 0.86, 0.80},
         {0.84, 0.88, 0.82, 0.90, 0.87, 0.85},
         -2.449489742783174,
         0.03743179573596205},
        {{1.0, 3.0, 2.5, 4.2},
         {2.2, 2.9, 3.1, 3.0, 2.7, 3.3, 2.4},
         -0.18412978534048152,
         0.8646462353492134},
    };
    for (const auto& c : cases) {
      auto r = welch_t_test(c.a, c.b);
      CHECK(std::abs(r.t_statistic - c.t) < 1e-9);
      CHECK(std::abs(r.p_value - c.p) < 1e-9);
      auto s = welch_t_test(c.b, c.a);
      CHECK(s.t_statistic == doctest::Approx(-r.t_statistic).epsilon(1e-14));
      CHECK(s.p_value == doctest::Approx(r.p_value).epsilon(1e-14));
    }
  }
  SUBCASE("identical samples") {
    std::vector<double> a{1, 2, 3};
    auto r = welch_t_test(a, a);
    CHECK(r.t_statistic == 0.0);
    CHECK(r.p_value == 1.0);
  }
  SUBCASE("separated samples") {
    std::vector<double> a{1, 2, 3}, b{11, 12, 13};
    auto r = welch_t_test(a, b);
    CHECK(std::abs(r.t_statistic) > 10);
    CHECK(r.p_value < 1e-3);
  }
  CHECK_THROWS_AS(welch_t_test(std::vector<double>{1}, std::vector<double>{1, 2}), UsageError);
}

TEST_CASE("percent_increase and summarize") {
  CHECK(percent_increase(0.80, 0.84) == doctest::Approx(5.0));
  CHECK(percent_increase(0.9, 0.9) == 0.0);

  std::vector<double> one{0.5};
  auto s1 = summarize(one);
  CHECK(s1.n == 1);
  CHECK(s1.mean == 0.5);
  CHECK_FALSE(s1.stddev);
  std::vector<double> three{1, 2, 3};
  auto s3 = summarize(three);
  CHECK(s3.mean == 2.0);
  CHECK(*s3.stddev == doctest::Approx(1.0));
}

TEST_CASE("aspect_sweep") {
  auto fx = small_problem();
  AspectConfig base;

  SUBCASE("static row equals a direct run") {
    std::vector<std::uint64_t> seeds{4};
    SweepOptions opt;
    opt.combinations = {"static"};
    auto sw = aspect_sweep(fx.split.train, fx.data.trust, fx.split.test, fx.h, base, seeds, opt);
    REQUIRE(sw.rows.size() == 1);
    REQUIRE(sw.cells.size() == 1);
    CHECK_FALSE(sw.rows[0].metrics[1]->stddev);

    auto h = fx.h;
    h.seed = 4;
    auto cfg = AspectConfig::from_label("static", base);
    auto ctx = build_temporal_context(fx.split.train, h.beta, h.num_bins);
    auto res = train(fx.split.train, fx.data.trust, h, cfg, ctx);
    auto ev = evaluate(res.params, fx.split.train, fx.data.trust, fx.split.test,
                       cold_start_users(fx.split.train), ctx, cfg);
    for (auto m : kAllMetrics) CHECK(metric_value(*sw.cells[0].report, m) == metric_value(ev, m));
  }
  SUBCASE("identical seeds have zero spread") {
    std::vector<std::uint64_t> seeds{2, 2};
    SweepOptions opt;
    opt.combinations = {"b", "fv"};
    opt.workers = 2;
    auto sw = aspect_sweep(fx.split.train, fx.data.trust, fx.split.test, fx.h, base, seeds, opt);
    CHECK(sw.cells.size() == 4);
    REQUIRE(sw.rows.size() == 2);
    for (const auto& row : sw.rows) CHECK(*row.metrics[1]->stddev == 0.0);
  }
  SUBCASE("all combinations by default") {
    std::vector<std::uint64_t> seeds{1};
    auto h = fx.h;
    h.max_iter = 1;
    auto sw = aspect_sweep(fx.split.train, fx.data.trust, fx.split.test, h, base, seeds);
    CHECK(sw.rows.size() == 8);
  }
  SUBCASE("bad input") {
    std::vector<std::uint64_t> none;
    CHECK_THROWS_AS(aspect_sweep(fx.split.train, fx.data.trust, fx.split.test, fx.h, base, none),
                    UsageError);
    std::vector<std::uint64_t> seeds{1};
    SweepOptions opt;
    opt.combinations = {"q"};
    CHECK_THROWS_AS(
        aspect_sweep(fx.split.train, fx.data.trust, fx.split.test, fx.h, base, seeds, opt),
        UsageError);
  }
}

TEST_CASE("robustness_experiment") {
  auto fx = small_problem();
  std::vector<double> fractions{0.8, 0.6, 0.4};
  std::vector<std::uint64_t> seeds{1, 2};
  auto r = robustness_experiment(fx.data.ratings, fx.data.trust, fx.h,
                                 AspectConfig::from_label("b"), fractions, seeds);
  CHECK(r.cells.size() == 6);
  CHECK(r.rows.size() == 3);
  CHECK(r.increases.size() == 8);
  for (const auto& inc : r.increases) {
    if (!inc.percent) continue;
    const auto m = static_cast<std::size_t>(inc.metric);
    const std::size_t f = inc.from_fraction == 0.8 ? 0 : 1;
    CHECK(*inc.percent == doctest::Approx(percent_increase(r.rows[f].metrics[m]->mean,
                                                           r.rows[f + 1].metrics[m]->mean)));
  }
  for (std::size_t m = 0; m < 2; ++m) {
    CHECK(r.increases[m].percent);
    CHECK(r.increases[4 + m].percent);
  }
}

TEST_CASE("scaling_benchmark") {
  auto h = shipped_hyperparams();
  std::vector<SyntheticConfig> sizes{sized_synthetic(2000, 0, 20, 3), sized_synthetic(4000, 0, 20, 3)};
  auto pts = scaling_benchmark(sizes, h, AspectConfig::from_label("bffv"), 2);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].num_edges == 0);
  CHECK(pts[0].num_ratings > 1500);
  CHECK(pts[1].num_ratings > pts[0].num_ratings);
  for (const auto& p : pts) CHECK(p.seconds_per_iteration > 0.0);
  CHECK_THROWS_AS(scaling_benchmark(std::span(sizes).first(1), h, AspectConfig{}), UsageError);
}
