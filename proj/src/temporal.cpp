#include "aspectmf/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aspectmf/error.hpp"

namespace aspectmf {

double TemporalContext::mean_day(UserId u) const {
  if (u < user_mean_day.size()) return user_mean_day[u];
  return 0.5 * static_cast<double>(t_min + t_max);
}

std::int64_t day_index(std::int64_t timestamp, std::int64_t day_length) {
  if (timestamp < 0) throw UsageError("negative timestamp");
  return timestamp / day_length;
}

double mean_rating_day(std::span<const std::int64_t> days) {
  if (days.empty()) throw UsageError("mean_rating_day of an empty list");
  long double s = 0;
  for (auto d : days) s += static_cast<long double>(d);
  return static_cast<double>(s / static_cast<long double>(days.size()));
}

double deviation(double t, double t_u, double beta) {
  const double d = t - t_u;
  if (d == 0.0) return 0.0;
  const double mag = std::pow(std::fabs(d), beta);
  return d > 0.0 ? mag : -mag;
}

int bin_index(std::int64_t day, const TemporalContext& ctx) {
  if (ctx.num_bins <= 1 || day <= ctx.t_min) return 0;
  if (day >= ctx.t_max) return ctx.num_bins - 1;
  const std::int64_t width = ctx.t_max - ctx.t_min + 1;
  const auto b = (day - ctx.t_min) * ctx.num_bins / width;
  return static_cast<int>(std::min<std::int64_t>(b, ctx.num_bins - 1));
}

TemporalContext build_temporal_context(const RatingDataset& train, double beta, int num_bins,
                                       std::int64_t day_length) {
  if (!(beta > 0.0)) throw UsageError("beta must be positive");
  if (num_bins < 1) throw UsageError("num_bins must be >= 1");
  TemporalContext ctx;
  ctx.beta = beta;
  ctx.num_bins = num_bins;
  ctx.day_length = day_length;
  ctx.user_mean_day.assign(train.num_users(), 0.0);
  if (train.empty()) return ctx;

  std::int64_t lo = std::numeric_limits<std::int64_t>::max();
  std::int64_t hi = std::numeric_limits<std::int64_t>::min();
  long double all = 0;
  for (const auto& r : train.records()) {
    auto d = day_index(r.timestamp, day_length);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
    all += static_cast<long double>(d);
  }
  ctx.t_min = lo;
  ctx.t_max = hi;
  const double global_mean = static_cast<double>(all / static_cast<long double>(train.size()));

  std::vector<std::int64_t> days;
  for (UserId u = 0; u < train.num_users(); ++u) {
    auto recs = train.user_records(u);
    if (recs.empty()) {
      ctx.user_mean_day[u] = global_mean;
      continue;
    }
    days.clear();
    for (auto r : recs) days.push_back(day_index(train.records()[r].timestamp, day_length));
    ctx.user_mean_day[u] = mean_rating_day(days);
  }
  return ctx;
}

}  // namespace aspectmf
