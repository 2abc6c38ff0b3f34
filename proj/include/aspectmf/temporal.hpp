#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "aspectmf/data.hpp"

namespace aspectmf {

inline constexpr std::int64_t kSecondsPerDay = 86'400;

// Time bounds and per-user reference days of a training set.
struct TemporalContext {
  double beta = 0.4;
  int num_bins = 30;
  std::int64_t t_min = 0;  // day index
  std::int64_t t_max = 0;  // day index
  std::int64_t day_length = kSecondsPerDay;
  std::vector<double> user_mean_day;  // t_u

  double mean_day(UserId u) const;
};

std::int64_t day_index(std::int64_t timestamp, std::int64_t day_length = kSecondsPerDay);

// Arithmetic mean of day indexes. Throws on an empty list.
double mean_rating_day(std::span<const std::int64_t> days);

// sign(t - t_u) |t - t_u|^beta.
double deviation(double t, double t_u, double beta);

// Equal-width bin of [t_min, t_max]; out-of-range days clamp to the end bins.
int bin_index(std::int64_t day, const TemporalContext& ctx);

// Builds bounds and t_u from `train`. Users without training ratings get the
// mean over all training days.
TemporalContext build_temporal_context(const RatingDataset& train, double beta, int num_bins,
                                       std::int64_t day_length = kSecondsPerDay);

}  // namespace aspectmf
