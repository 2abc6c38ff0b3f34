#include "aspectmf/check_instance.hpp"

#include <algorithm>
#include <random>

namespace aspectmf {

CheckInstance make_check_instance(std::uint64_t seed) {
  constexpr std::size_t kUsers = 5, kItems = 8, kFactors = 3, kPerUser = 4;
  constexpr std::int64_t kSpanDays = 100;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rating(1.0, 5.0);
  std::uniform_int_distribution<std::int64_t> day(0, kSpanDays - 1);
  std::uniform_int_distribution<std::int64_t> second(0, kSecondsPerDay - 1);

  std::vector<RatingRecord> recs;
  std::vector<ItemId> items(kItems);
  for (std::size_t u = 0; u < kUsers; ++u) {
    for (std::size_t j = 0; j < kItems; ++j) items[j] = static_cast<ItemId>(j);
    std::shuffle(items.begin(), items.end(), rng);
    // Users 0 and 1 rate twice on one day so day slots hold several ratings.
    const std::int64_t shared = day(rng);
    for (std::size_t k = 0; k < kPerUser; ++k) {
      const std::int64_t d = (u < 2 && k < 2) ? shared : day(rng);
      recs.push_back({static_cast<UserId>(u), items[k], rating(rng),
                      d * kSecondsPerDay + second(rng)});
    }
  }

  CheckInstance c;
  c.train = RatingDataset(std::move(recs), kUsers, kItems, RatingScale{1.0, 5.0});
  c.trust = TrustNetwork({{0, 1, 1.0}, {0, 3, 1.0}, {2, 1, 0.5}}, kUsers);

  auto& h = c.hyper;
  h.num_factors = kFactors;
  h.num_bins = 4;
  std::uniform_real_distribution<double> lam(0.01, 0.1);
  for (auto& r : h.rates) {
    r.lambda = lam(rng);
    r.gamma = 0.01;
  }
  h.lambda_T = 0.03;
  h.lambda_t = 0.5;
  h.eta_P = 1.0;
  h.eta_W = 0.7;
  h.eta_Z = 0.4;
  h.init_std = 0.3;
  h.seed = seed;

  c.cfg.dynamic_bias = c.cfg.dynamic_feature = c.cfg.dynamic_feature_value = true;
  c.cfg.social = c.cfg.conditional = c.cfg.implicit_feedback = true;
  c.ctx = build_temporal_context(c.train, h.beta, h.num_bins);

  // Random values everywhere, so no gradient is trivially zero.
  auto& p = c.params = init_params(c.train, h);
  std::normal_distribution<double> gauss(0.0, 0.2);
  for (auto g : all_groups()) {
    if (g == ParamGroup::kP || g == ParamGroup::kQ || g == ParamGroup::kImplicit ||
        g == ParamGroup::kOmega || g == ParamGroup::kBu || g == ParamGroup::kBi)
      continue;
    for (auto& x : p.values(g)) x += gauss(rng);
  }
  for (std::size_t f = 0; f < kFactors; ++f) {
    p.Y(f, f) = 0.0;
    for (std::size_t k = f + 1; k < kFactors; ++k) p.Y(k, f) = p.Y(f, k);
  }
  return c;
}

}  // namespace aspectmf
