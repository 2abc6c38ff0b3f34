#include <cmath>
#include <vector>

#include "doctest.h"

#include "aspectmf/error.hpp"
#include "aspectmf/temporal.hpp"

using namespace aspectmf;

TEST_CASE("day_index") {
  CHECK(day_index(0) == 0);
  CHECK(day_index(86'399) == 0);
  CHECK(day_index(86'400) == 1);
  CHECK(day_index(1'000'000) == 11);
  CHECK(day_index(7200, 3600) == 2);
  for (std::int64_t ts = 0; ts < 400'000; ts += 997) CHECK(day_index(ts) <= day_index(ts + 997));
}

TEST_CASE("mean_rating_day") {
  std::vector<std::int64_t> one{50}, three{10, 20, 30}, two{0, 1};
  CHECK(mean_rating_day(one) == 50.0);
  CHECK(mean_rating_day(three) == 20.0);
  CHECK(mean_rating_day(two) == 0.5);
  CHECK_THROWS_AS(mean_rating_day(std::vector<std::int64_t>{}), UsageError);
}

TEST_CASE("deviation") {
  CHECK(deviation(12.0, 12.0, 0.4) == 0.0);
  CHECK(deviation(16.0, 0.0, 0.4) == doctest::Approx(3.0314331330207964).epsilon(1e-12));
  CHECK(deviation(0.0, 16.0, 0.4) == doctest::Approx(-3.0314331330207964).epsilon(1e-12));
  CHECK(deviation(116.0, 100.0, 0.4) == doctest::Approx(3.0314331330207964).epsilon(1e-12));
  const double tu = 40.25;
  for (double d = 0; d < 100; d += 3.5) CHECK(deviation(tu + d, tu, 0.4) == -deviation(tu - d, tu, 0.4));
  for (double t = -20; t < 100; t += 1.5) CHECK(deviation(t, tu, 0.4) < deviation(t + 1.5, tu, 0.4));
}

TEST_CASE("bin_index") {
  TemporalContext ctx;
  SUBCASE("hand example") {
    ctx.t_min = 0;
    ctx.t_max = 99;
    ctx.num_bins = 10;
    CHECK(bin_index(37, ctx) == 3);
    CHECK(bin_index(0, ctx) == 0);
    CHECK(bin_index(99, ctx) == 9);
    CHECK(bin_index(-5, ctx) == 0);
    CHECK(bin_index(500, ctx) == 9);
  }
  SUBCASE("one bin") {
    ctx.t_min = 3;
    ctx.t_max = 300;
    ctx.num_bins = 1;
    for (std::int64_t t = -10; t < 400; t += 7) CHECK(bin_index(t, ctx) == 0);
  }
  SUBCASE("thirty years in thirty bins") {
    ctx.t_min = 0;
    ctx.t_max = 30 * 365 - 1;
    ctx.num_bins = 30;
    for (int year = 0; year < 30; ++year) {
      CHECK(bin_index(year * 365, ctx) == year);
      CHECK(bin_index(year * 365 + 364, ctx) == year);
    }
  }
  SUBCASE("monotone and in range") {
    ctx.t_min = 17;
    ctx.t_max = 1234;
    ctx.num_bins = 13;
    int last = 0;
    for (std::int64_t t = -100; t < 1500; ++t) {
      const int b = bin_index(t, ctx);
      CHECK(b >= last);
      CHECK(b < 13);
      last = b;
    }
  }
}

TEST_CASE("build_temporal_context") {
  std::vector<RatingRecord> recs{{0, 0, 3, 10 * kSecondsPerDay},
                                 {0, 1, 4, 20 * kSecondsPerDay},
                                 {1, 0, 2, 40 * kSecondsPerDay}};
  RatingDataset d(recs, 3, 2, {1, 5});
  auto ctx = build_temporal_context(d, 0.4, 5);
  CHECK(ctx.t_min == 10);
  CHECK(ctx.t_max == 40);
  CHECK(ctx.mean_day(0) == 15.0);
  CHECK(ctx.mean_day(1) == 40.0);
  CHECK(ctx.mean_day(2) == doctest::Approx(70.0 / 3.0));
}
