#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"

#include "aspectmf/data.hpp"
#include "aspectmf/error.hpp"
#include "aspectmf/synthetic.hpp"

using namespace aspectmf;

namespace {

RatingDataset ratings_from(const std::string& text, RatingScale scale = {1, 5}) {
  std::istringstream in(text);
  return parse_ratings(in, ParseFormat{}, scale);
}

RatingDataset grid(std::size_t users, std::size_t items) {
  std::vector<RatingRecord> recs;
  for (UserId u = 0; u < users; ++u)
    for (ItemId j = 0; j < items; ++j)
      recs.push_back({u, j, 1.0 + (u + j) % 5, 86'400 * static_cast<std::int64_t>(u + j)});
  return RatingDataset(std::move(recs), users, items, {1, 5});
}

}  // namespace

TEST_CASE("parse_ratings singleton") {
  auto d = ratings_from("0 0 3.0 1000\n");
  CHECK(d.num_users() == 1);
  CHECK(d.num_items() == 1);
  REQUIRE(d.size() == 1);
  CHECK(d.records()[0].rating == 3.0);
  CHECK(d.records()[0].timestamp == 1000);
}

TEST_CASE("parse_ratings keeps the latest duplicate") {
  auto d = ratings_from("0 0 3 10\n0 0 4 20\n");
  REQUIRE(d.size() == 1);
  CHECK(d.records()[0].rating == 4.0);
  CHECK(d.records()[0].timestamp == 20);

  auto e = ratings_from("0 0 4 20\n1 0 2 5\n0 0 3 10\n");
  REQUIRE(e.size() == 2);
  CHECK(e.records()[0].rating == 4.0);
  CHECK(e.records()[0].timestamp == 20);
}

TEST_CASE("parse_ratings formats") {
  SUBCASE("comments and blank lines") {
    auto d = ratings_from("# header\n\n7 9 2 100\n");
    CHECK(d.size() == 1);
    CHECK(d.user_ids().raw(0) == "7");
    CHECK(d.item_ids().raw(0) == "9");
  }
  SUBCASE("custom delimiter") {
    std::istringstream in("1,2,5,10\n2,1,3,11\n");
    auto d = parse_ratings(in, ParseFormat{','}, {1, 5});
    CHECK(d.size() == 2);
    CHECK(d.num_users() == 2);
  }
  SUBCASE("numeric ids are ordered numerically") {
    auto d = ratings_from("10 1 3 0\n9 1 3 0\n100 1 3 0\n");
    CHECK(d.user_ids().raw(0) == "9");
    CHECK(d.user_ids().raw(1) == "10");
    CHECK(d.user_ids().raw(2) == "100");
  }
  SUBCASE("malformed lines are data errors") {
    CHECK_THROWS_AS(ratings_from("0 0 3\n"), DataError);
    CHECK_THROWS_AS(ratings_from("0 0 x 1\n"), DataError);
    CHECK_THROWS_AS(ratings_from("0 0 9 1\n"), DataError);
  }
}

TEST_CASE("parse_trust") {
  SUBCASE("empty file") {
    IdMap users;
    std::istringstream in("");
    auto t = parse_trust(in, ParseFormat{}, users);
    CHECK(t.size() == 0);
    CHECK(t.out_degree(0) == 0);
    CHECK(t.in_degree(0) == 0);
  }
  SUBCASE("directed degrees") {
    IdMap users;
    std::istringstream in("1 2\n2 1\n");
    auto t = parse_trust(in, ParseFormat{}, users);
    CHECK(t.size() == 2);
    const auto one = *users.find("1");
    const auto two = *users.find("2");
    CHECK(t.in_degree(one) == 1);
    CHECK(t.in_degree(two) == 1);
    CHECK(t.out_degree(one) == 1);
  }
  SUBCASE("weights, duplicates and self loops") {
    IdMap users;
    std::istringstream in("1 2 0.5\n1 2 0.9\n3 3\n2 3\n");
    auto t = parse_trust(in, ParseFormat{}, users);
    CHECK(t.size() == 2);
    CHECK(t.edges()[0].weight == 0.5);
    CHECK(t.edges()[1].weight == 1.0);
    CHECK(t.skipped_self_loops() == 1);
  }
}

TEST_CASE("round trip through the canonical writer") {
  SyntheticConfig sc;
  sc.num_users = 20;
  sc.num_items = 30;
  sc.rating_density = 0.2;
  sc.trust_density = 0.05;
  auto data = generate_synthetic(sc);

  std::ostringstream rout, tout;
  write_ratings(rout, data.ratings);
  write_trust(tout, data.trust, data.ratings.user_ids());
  std::istringstream rin(rout.str());
  auto back = parse_ratings(rin, ParseFormat{}, data.ratings.scale());
  CHECK(back == data.ratings);

  IdMap users = back.user_ids();
  std::istringstream tin(tout.str());
  auto trust = parse_trust(tin, ParseFormat{}, users);
  CHECK(trust.edges() == data.trust.edges());
}

TEST_CASE("dataset_stats densities") {
  SUBCASE("single rating") {
    auto d = ratings_from("0 0 3 0\n");
    auto s = dataset_stats(d, TrustNetwork({}, 1));
    CHECK(s.rating_density == doctest::Approx(1.0));
    CHECK(s.trust_density == 0.0);
  }
  SUBCASE("two by two") {
    auto d = ratings_from("0 0 3 0\n1 1 4 0\n");
    TrustNetwork t({{0, 1, 1.0}}, 2);
    auto s = dataset_stats(d, t);
    CHECK(s.rating_density == doctest::Approx(0.5));
    CHECK(s.trust_density == doctest::Approx(0.5));
    CHECK(s.num_cold_users == 2);
    CHECK(*s.mean_ratings_per_cold_user == doctest::Approx(1.0));
  }
  SUBCASE("published dataset sizes") {
    // user, item, rating and edge counts of the two public datasets
    const double ciao_r = 35'835.0 / (2'248.0 * 16'861.0);
    const double ciao_t = 57'544.0 / (2'248.0 * 2'247.0);
    CHECK(100 * ciao_r == doctest::Approx(0.0945).epsilon(1e-3));
    CHECK(100 * ciao_t == doctest::Approx(1.139).epsilon(1e-3));
  }
  SUBCASE("universe denominators") {
    auto d = ratings_from("0 0 3 0\n1 1 4 0\n");
    auto s = dataset_stats(d, TrustNetwork({{0, 1, 1.0}}, 2), 5, std::pair{10, 20});
    CHECK(s.rating_density == doctest::Approx(2.0 / 200.0));
    CHECK(s.trust_density == doctest::Approx(1.0 / 90.0));
  }
}

TEST_CASE("split_random") {
  auto d = grid(10, 10);
  for (double frac : {0.8, 0.6, 0.4}) {
    auto s = split_random(d, frac, 3);
    CHECK(s.train.size() == static_cast<std::size_t>(frac * 100 + 0.5));
    CHECK(s.train.size() + s.test.size() == 100);
    CHECK(s.train.num_users() == d.num_users());

    std::multiset<std::pair<UserId, ItemId>> all, parts;
    for (const auto& r : d.records()) all.insert({r.user, r.item});
    for (const auto& r : s.train.records()) parts.insert({r.user, r.item});
    for (const auto& r : s.test.records()) parts.insert({r.user, r.item});
    CHECK(all == parts);
  }
  CHECK(split_random(d, 0.8, 11).train == split_random(d, 0.8, 11).train);
  CHECK_FALSE(split_random(d, 0.8, 11).train == split_random(d, 0.8, 12).train);
  CHECK_THROWS_AS(split_random(d, 1.0, 1), UsageError);
  CHECK_THROWS_AS(split_random(d, 0.0, 1), UsageError);
}

TEST_CASE("cold_start_users boundaries") {
  std::string text;
  for (int j = 0; j < 4; ++j) text += "0 " + std::to_string(j) + " 3 0\n";
  for (int j = 0; j < 5; ++j) text += "1 " + std::to_string(j) + " 3 0\n";
  auto d = ratings_from(text);
  d.extend_users(3);

  auto cold = cold_start_users(d);
  CHECK(cold == std::vector<UserId>{0, 2});
  CHECK(cold_start_users(d, 1) == std::vector<UserId>{2});

  auto big = grid(6, 8);
  auto s = split_random(big, 0.4, 5);
  for (std::size_t k = 1; k < 10; ++k) {
    auto a = cold_start_users(s.train, k);
    auto b = cold_start_users(s.train, k + 1);
    CHECK(std::includes(b.begin(), b.end(), a.begin(), a.end()));
  }
}

TEST_CASE("generate_synthetic") {
  SUBCASE("static noiseless ratings are constant over time") {
    SyntheticConfig sc;
    sc.num_users = 15;
    sc.num_items = 10;
    sc.rating_density = 1.0;
    sc.noise_std = 0.0;
    auto a = generate_synthetic(sc);
    sc.base_epoch += 50 * kSecondsPerDay;
    auto c = generate_synthetic(sc);
    // same planted model, shifted dates
    REQUIRE(a.ratings.size() == c.ratings.size());
    for (std::size_t i = 0; i < a.ratings.size(); ++i) {
      CHECK(a.ratings.records()[i].rating == c.ratings.records()[i].rating);
      CHECK(a.ratings.records()[i].timestamp != c.ratings.records()[i].timestamp);
    }
  }
  SUBCASE("positive bias slope raises late ratings") {
    SyntheticConfig sc;
    sc.num_users = 40;
    sc.num_items = 200;
    sc.rating_density = 0.5;
    sc.noise_std = 0.0;
    sc.drift.bias = true;
    sc.drift.bias_slope_std = 0.3;
    auto data = generate_synthetic(sc);
    const auto& truth = data.truth;
    int checked = 0;
    for (UserId u = 0; u < sc.num_users; ++u) {
      if (truth.params.alpha[u] < 0.1) continue;
      std::vector<const RatingRecord*> recs;
      for (auto pos : data.ratings.user_records(u)) recs.push_back(&data.ratings.records()[pos]);
      std::sort(recs.begin(), recs.end(),
                [](auto* x, auto* y) { return x->timestamp < y->timestamp; });
      const std::int64_t lo = sc.base_epoch + sc.time_span_days * kSecondsPerDay / 10;
      const std::int64_t hi = sc.base_epoch + sc.time_span_days * kSecondsPerDay * 9 / 10;
      double early = 0, late = 0;
      int ne = 0, nl = 0;
      for (auto* r : recs) {
        if (r->timestamp < lo) early += r->rating, ++ne;
        if (r->timestamp >= hi) late += r->rating, ++nl;
      }
      if (ne < 3 || nl < 3) continue;
      ++checked;
      CHECK(late / nl > early / ne);
    }
    CHECK(checked > 0);
  }
  SUBCASE("zero trust density") {
    SyntheticConfig sc;
    sc.trust_density = 0.0;
    CHECK(generate_synthetic(sc).trust.empty());
  }
  SUBCASE("determinism") {
    SyntheticConfig sc;
    sc.drift.feature = true;
    auto a = generate_synthetic(sc);
    auto b = generate_synthetic(sc);
    std::ostringstream x, y;
    write_ratings(x, a.ratings);
    write_ratings(y, b.ratings);
    CHECK(x.str() == y.str());
    CHECK(a.trust == b.trust);
  }
  SUBCASE("sized configs") {
    auto sc = sized_synthetic(20'000, 20'000, 20, 5);
    CHECK(sc.num_users == 1000);
    CHECK(sc.num_items == 1000);
    CHECK(sc.trust_density == doctest::Approx(20'000.0 / (1000.0 * 999.0)));
    CHECK_THROWS_AS(sized_synthetic(0, 10, 20, 5), UsageError);
  }
}
