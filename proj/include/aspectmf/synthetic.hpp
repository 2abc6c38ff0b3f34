#pragma once

#include <cstddef>
#include <cstdint>

#include "aspectmf/data.hpp"
#include "aspectmf/serialize.hpp"

namespace aspectmf {

// Which drift shapes the planted model carries, and how strongly.
struct DriftProfile {
  bool bias = false;           // bu_u(t): α_u dev + but
  bool feature = false;        // P_u(t): α^P_u dev + Pt
  bool feature_value = false;  // W_u(t), Z_u(t)
  double bias_slope_std = 0.15;
  double feature_slope_std = 0.15;
  double feature_value_slope_std = 0.05;
  double day_noise_std = 0.0;  // std of the day-specific offsets
};

struct SyntheticConfig {
  std::size_t num_users = 100;
  std::size_t num_items = 200;
  std::size_t num_factors = 3;
  RatingScale scale{1.0, 5.0};
  std::int64_t time_span_days = 365;
  std::int64_t base_epoch = 1'000'000'000;  // timestamp of day 0
  DriftProfile drift;
  // Ratings per user when > 0; otherwise each (u, j) is rated with
  // probability rating_density.
  std::size_t ratings_per_user = 0;
  double rating_density = 0.05;
  double trust_density = 0.01;  // 0 allowed
  double noise_std = 0.1;
  double factor_std = 0.5;
  double bias_std = 0.3;
  std::uint64_t seed = 1;

  // Throws UsageError on invalid values.
  void validate() const;
};

struct SyntheticData {
  RatingDataset ratings;
  TrustNetwork trust;
  ModelBundle truth;  // planted parameters, t_u, and drift switches
};

// Ratings follow the planted predictor μ + bu(t) + bi + P_u(t)·(W_u(t)∘Q_j + Z_u(t))
// plus Gaussian noise, clipped to the scale. μ is the scale midpoint.
SyntheticData generate_synthetic(const SyntheticConfig& cfg);

// Static config with about `num_ratings` ratings and `num_edges` expected
// edges. Users = ceil(num_ratings / ratings_per_user), items = max(users,
// 2 * ratings_per_user).
SyntheticConfig sized_synthetic(std::size_t num_ratings, std::size_t num_edges,
                                std::size_t ratings_per_user, std::size_t num_factors,
                                std::uint64_t seed = 1);

}  // namespace aspectmf
