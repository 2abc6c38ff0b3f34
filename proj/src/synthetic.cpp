#include "aspectmf/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <unordered_set>

#include "aspectmf/error.hpp"

namespace aspectmf {

namespace {

// Visits the positions of a Bernoulli(p) subset of [0, n) in increasing order.
template <class Rng, class Fn>
void bernoulli_positions(std::uint64_t n, double p, Rng& rng, Fn&& fn) {
  if (p <= 0.0 || n == 0) return;
  if (p >= 1.0) {
    for (std::uint64_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double log_q = std::log1p(-p);
  std::uint64_t k = 0;
  while (true) {
    const double x = 1.0 - unif(rng);  // (0, 1]
    const double skip = std::floor(std::log(x) / log_q);
    if (skip >= static_cast<double>(n - k)) return;
    k += static_cast<std::uint64_t>(skip);
    fn(k);
    if (++k >= n) return;
  }
}

}  // namespace

void SyntheticConfig::validate() const {
  if (num_users < 1 || num_items < 1 || num_factors < 1)
    throw UsageError("synthetic counts must be positive");
  if (time_span_days < 1) throw UsageError("time span must be at least one day");
  if (base_epoch < 0) throw UsageError("base epoch must be >= 0");
  if (!(scale.min < scale.max)) throw UsageError("rating scale must have min < max");
  if (ratings_per_user == 0 && !(rating_density > 0.0 && rating_density <= 1.0))
    throw UsageError("rating density must lie in (0, 1]");
  if (!(trust_density >= 0.0 && trust_density <= 1.0))
    throw UsageError("trust density must lie in [0, 1]");
  if (!(noise_std >= 0.0) || !(factor_std >= 0.0) || !(bias_std >= 0.0))
    throw UsageError("standard deviations must be >= 0");
  if (!(drift.bias_slope_std >= 0.0) || !(drift.feature_slope_std >= 0.0) ||
      !(drift.feature_value_slope_std >= 0.0) || !(drift.day_noise_std >= 0.0))
    throw UsageError("drift magnitudes must be >= 0");
}

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.num_users, m = cfg.num_items, d = cfg.num_factors;
  std::mt19937_64 rng(cfg.seed);

  // Which (user, item) pairs are rated.
  std::vector<std::pair<UserId, ItemId>> pairs;
  if (cfg.ratings_per_user > 0) {
    const std::size_t c = std::min(cfg.ratings_per_user, m);
    pairs.reserve(n * c);
    std::vector<ItemId> chosen;
    std::unordered_set<ItemId> seen;
    for (std::size_t u = 0; u < n; ++u) {
      chosen.clear();
      seen.clear();
      // Floyd's sampling of c distinct items.
      for (std::size_t k = m - c; k < m; ++k) {
        std::uniform_int_distribution<std::size_t> pick(0, k);
        auto t = static_cast<ItemId>(pick(rng));
        if (!seen.insert(t).second) t = static_cast<ItemId>(k), seen.insert(t);
        chosen.push_back(t);
      }
      std::sort(chosen.begin(), chosen.end());
      for (auto j : chosen) pairs.emplace_back(static_cast<UserId>(u), j);
    }
  } else {
    bernoulli_positions(static_cast<std::uint64_t>(n) * m, cfg.rating_density, rng,
                        [&](std::uint64_t k) {
                          pairs.emplace_back(static_cast<UserId>(k / m),
                                             static_cast<ItemId>(k % m));
                        });
  }

  // Timestamps.
  std::uniform_int_distribution<std::int64_t> when(0, cfg.time_span_days * kSecondsPerDay - 1);
  std::vector<RatingRecord> records;
  records.reserve(pairs.size());
  for (auto [u, j] : pairs) records.push_back({u, j, 0.0, cfg.base_epoch + when(rng)});

  // Time reference of the planted model.
  ModelBundle truth;
  auto& ctx = truth.ctx;
  ctx.beta = 0.4;
  ctx.num_bins = 1;
  ctx.day_length = kSecondsPerDay;
  std::vector<double> day_sum(n, 0.0);
  std::vector<std::size_t> day_cnt(n, 0);
  std::vector<std::pair<UserId, std::int64_t>> slot_pairs;
  slot_pairs.reserve(records.size());
  double all_sum = 0.0;
  ctx.t_min = records.empty() ? 0 : std::numeric_limits<std::int64_t>::max();
  ctx.t_max = records.empty() ? 0 : std::numeric_limits<std::int64_t>::min();
  for (const auto& r : records) {
    const auto day = day_index(r.timestamp);
    day_sum[r.user] += static_cast<double>(day);
    ++day_cnt[r.user];
    all_sum += static_cast<double>(day);
    ctx.t_min = std::min(ctx.t_min, day);
    ctx.t_max = std::max(ctx.t_max, day);
    slot_pairs.emplace_back(r.user, day);
  }
  const double global_mean = records.empty() ? 0.0 : all_sum / static_cast<double>(records.size());
  ctx.user_mean_day.resize(n);
  for (std::size_t u = 0; u < n; ++u)
    ctx.user_mean_day[u] =
        day_cnt[u] ? day_sum[u] / static_cast<double>(day_cnt[u]) : global_mean;

  auto& cf = truth.cfg;
  cf.dynamic_bias = cfg.drift.bias;
  cf.dynamic_feature = cfg.drift.feature;
  cf.dynamic_feature_value = cfg.drift.feature_value;
  cf.social = cf.conditional = cf.implicit_feedback = false;

  // Planted parameters.
  auto& p = truth.params;
  p.num_users = n;
  p.num_items = m;
  p.num_factors = d;
  p.num_bins = 1;
  p.mu = 0.5 * (cfg.scale.min + cfg.scale.max);
  p.slots = DaySlots::from_pairs(n, std::move(slot_pairs));
  const std::size_t ns = p.slots.size();
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&](std::span<double> v, double sd) {
    for (auto& x : v) x = sd * gauss(rng);
  };
  p.bu.assign(n, 0.0);
  p.bi.assign(m, 0.0);
  p.P = Matrix(n, d);
  p.Q = Matrix(m, d);
  draw(p.bu, cfg.bias_std);
  draw(p.bi, cfg.bias_std);
  draw(p.P.flat(), cfg.factor_std);
  draw(p.Q.flat(), cfg.factor_std);
  p.W = Matrix(n, d, 1.0);
  p.Z = Matrix(n, d);
  p.omega = Matrix(n, d);
  p.y = Matrix(m, d);
  p.Y = Matrix(d, d);
  p.C.assign(n, 1.0);
  p.alpha.assign(n, 0.0);
  p.alphaP.assign(n, 0.0);
  p.alphaW.assign(n, 0.0);
  p.alphaZ.assign(n, 0.0);
  p.but.assign(ns, 0.0);
  p.Ct.assign(ns, 0.0);
  p.bit = Matrix(m, 1);
  p.Pt = Matrix(ns, d);
  p.Wt = Matrix(ns, d);
  p.Zt = Matrix(ns, d);
  const double day_sd = cfg.drift.day_noise_std;
  if (cfg.drift.bias) {
    draw(p.alpha, cfg.drift.bias_slope_std);
    draw(p.but, day_sd);
  }
  if (cfg.drift.feature) {
    draw(p.alphaP, cfg.drift.feature_slope_std);
    draw(p.Pt.flat(), day_sd);
  }
  if (cfg.drift.feature_value) {
    draw(p.alphaW, cfg.drift.feature_value_slope_std);
    draw(p.alphaZ, cfg.drift.feature_value_slope_std);
    draw(p.Wt.flat(), day_sd);
    draw(p.Zt.flat(), day_sd);
  }

  // Ratings.
  const RatingDataset no_history;
  const TrustNetwork no_trust;
  for (auto& r : records) {
    double v = predict(p, no_history, no_trust, r.user, r.item, day_index(r.timestamp), ctx, cf);
    if (cfg.noise_std > 0.0) v += cfg.noise_std * gauss(rng);
    r.rating = cfg.scale.clip(v);
  }

  // Trust edges over ordered pairs u != v.
  std::vector<TrustEdge> edges;
  if (n > 1) {
    const std::uint64_t others = n - 1;
    bernoulli_positions(static_cast<std::uint64_t>(n) * others, cfg.trust_density, rng,
                        [&](std::uint64_t k) {
                          const auto u = static_cast<UserId>(k / others);
                          auto v = static_cast<UserId>(k % others);
                          if (v >= u) ++v;
                          edges.push_back({u, v, 1.0});
                        });
  }

  SyntheticData out;
  out.ratings = RatingDataset(std::move(records), n, m, cfg.scale);
  out.trust = TrustNetwork(std::move(edges), n);
  out.truth = std::move(truth);
  return out;
}

SyntheticConfig sized_synthetic(std::size_t num_ratings, std::size_t num_edges,
                                std::size_t ratings_per_user, std::size_t num_factors,
                                std::uint64_t seed) {
  if (num_ratings == 0 || ratings_per_user == 0) throw UsageError("sized_synthetic needs ratings");
  SyntheticConfig c;
  c.num_users = std::max<std::size_t>(2, (num_ratings + ratings_per_user - 1) / ratings_per_user);
  c.num_items = std::max(c.num_users, 2 * ratings_per_user);
  c.num_factors = num_factors;
  c.ratings_per_user = ratings_per_user;
  const double pairs = static_cast<double>(c.num_users) * static_cast<double>(c.num_users - 1);
  c.trust_density = static_cast<double>(num_edges) / pairs;
  if (c.trust_density > 1.0) throw UsageError("too many edges for the user count");
  c.seed = seed;
  return c;
}

}  // namespace aspectmf
