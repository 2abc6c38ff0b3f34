#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aspectmf/data.hpp"
#include "aspectmf/model.hpp"
#include "aspectmf/synthetic.hpp"
#include "aspectmf/temporal.hpp"

namespace aspectmf {

struct PredictionPair {
  double predicted = 0.0;
  double actual = 0.0;
};

// Both throw UsageError on an empty list.
double mae(std::span<const PredictionPair> pairs);
double rmse(std::span<const PredictionPair> pairs);

struct SliceMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  SliceMetrics all;
  std::optional<SliceMetrics> cold;  // absent when no test record is cold
};

// Predicts each test record at its own timestamp. `cold_users` must be
// sorted. Predictions are clipped to the test scale when `clip` is set.
EvalReport evaluate(const ModelParams& p, const RatingDataset& train, const TrustNetwork& trust,
                    const RatingDataset& test, std::span<const UserId> cold_users,
                    const TemporalContext& ctx, const AspectConfig& cfg, bool clip = true);

struct TTestResult {
  double t_statistic = 0.0;
  double p_value = 1.0;
  double degrees_of_freedom = 0.0;
  double mean_a = 0.0, mean_b = 0.0;
  double var_a = 0.0, var_b = 0.0;  // sample variances
};

// Two-sided Welch test. Throws UsageError unless both samples have >= 2 values.
TTestResult welch_t_test(std::span<const double> a, std::span<const double> b);

// 100 (lower - higher) / higher.
double percent_increase(double higher_fraction_error, double lower_fraction_error);

struct MetricSummary {
  double mean = 0.0;
  std::optional<double> stddev;  // sample std, absent for n = 1
  std::size_t n = 0;
};

MetricSummary summarize(std::span<const double> values);

enum class Metric { kMaeAll, kRmseAll, kMaeCold, kRmseCold };
inline constexpr std::array<Metric, 4> kAllMetrics = {Metric::kMaeAll, Metric::kRmseAll,
                                                      Metric::kMaeCold, Metric::kRmseCold};
std::string_view metric_name(Metric m);   // "mae" / "rmse"
std::string_view metric_slice(Metric m);  // "all" / "cold"
std::optional<double> metric_value(const EvalReport& r, Metric m);

struct SweepCell {
  std::string combination;
  std::uint64_t seed = 0;
  double fraction = 0.0;
  std::optional<EvalReport> report;
  std::optional<std::string> error;  // divergence message
};

struct SweepRow {
  std::string combination;
  double fraction = 0.0;
  std::array<std::optional<MetricSummary>, 4> metrics;  // indexed like kAllMetrics
  std::size_t failures = 0;
};

struct SweepOptions {
  std::vector<std::string> combinations;  // empty: all eight
  bool best_iteration = false;  // evaluate every iteration and keep the best value
  std::size_t workers = 1;
  bool clip = true;
  std::size_t cold_threshold = 5;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepRow> rows;
};

// Trains and evaluates every (combination, seed) cell on one fixed split.
SweepResult aspect_sweep(const RatingDataset& train, const TrustNetwork& trust,
                         const RatingDataset& test, const HyperParams& hyper,
                         const AspectConfig& base_cfg, std::span<const std::uint64_t> seeds,
                         const SweepOptions& options = {});

struct RobustnessIncrease {
  double from_fraction = 0.0;
  double to_fraction = 0.0;
  Metric metric{};
  std::optional<double> percent;  // absent if either side lacks the slice
};

struct RobustnessResult {
  std::vector<SweepCell> cells;
  std::vector<SweepRow> rows;  // one per fraction
  std::vector<RobustnessIncrease> increases;
};

// For each seed the split is redrawn with that seed.
RobustnessResult robustness_experiment(const RatingDataset& data, const TrustNetwork& trust,
                                       const HyperParams& hyper, const AspectConfig& cfg,
                                       std::span<const double> fractions,
                                       std::span<const std::uint64_t> seeds,
                                       const SweepOptions& options = {});

struct ScalingPoint {
  std::size_t num_ratings = 0;
  std::size_t num_edges = 0;
  double seconds_per_iteration = 0.0;  // fastest timed iteration
};

// Times full training iterations at each generated size with the same D.
// At least `timed_iterations` are timed, more until `min_seconds` of timed
// work has accumulated.
std::vector<ScalingPoint> scaling_benchmark(std::span<const SyntheticConfig> sizes,
                                            const HyperParams& hyper, const AspectConfig& cfg,
                                            int timed_iterations = 5, double min_seconds = 0.25);

}  // namespace aspectmf
