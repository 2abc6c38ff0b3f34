#include "aspectmf/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "aspectmf/error.hpp"
#include "aspectmf/trainer.hpp"

namespace aspectmf {

double mae(std::span<const PredictionPair> pairs) {
  if (pairs.empty()) throw UsageError("mae of an empty list");
  double s = 0.0;
  for (const auto& x : pairs) s += std::fabs(x.predicted - x.actual);
  return s / static_cast<double>(pairs.size());
}

double rmse(std::span<const PredictionPair> pairs) {
  if (pairs.empty()) throw UsageError("rmse of an empty list");
  double s = 0.0;
  for (const auto& x : pairs) s += (x.predicted - x.actual) * (x.predicted - x.actual);
  return std::sqrt(s / static_cast<double>(pairs.size()));
}

EvalReport evaluate(const ModelParams& p, const RatingDataset& train, const TrustNetwork& trust,
                    const RatingDataset& test, std::span<const UserId> cold_users,
                    const TemporalContext& ctx, const AspectConfig& cfg, bool clip) {
  if (test.empty()) throw UsageError("test set is empty");
  std::vector<PredictionPair> all, cold;
  all.reserve(test.size());
  const auto scale = test.scale();
  for (const auto& r : test.records()) {
    double v = predict(p, train, trust, r.user, r.item, day_index(r.timestamp, ctx.day_length),
                       ctx, cfg);
    if (clip) v = scale.clip(v);
    all.push_back({v, r.rating});
    if (std::binary_search(cold_users.begin(), cold_users.end(), r.user))
      cold.push_back({v, r.rating});
  }
  EvalReport out;
  out.all = {mae(all), rmse(all), all.size()};
  if (!cold.empty()) out.cold = SliceMetrics{mae(cold), rmse(cold), cold.size()};
  return out;
}

TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw UsageError("welch_t_test needs at least 2 values per sample");
  auto moments = [](std::span<const double> x, double& mean, double& var) {
    mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size() - 1);
  };
  TTestResult r;
  moments(a, r.mean_a, r.var_a);
  moments(b, r.mean_b, r.var_b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double qa = r.var_a / na, qb = r.var_b / nb;
  const double se2 = qa + qb;
  const double diff = r.mean_a - r.mean_b;
  if (se2 == 0.0) {
    r.degrees_of_freedom = na + nb - 2.0;
    if (diff == 0.0) {
      r.t_statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.t_statistic = diff > 0 ? std::numeric_limits<double>::infinity()
                               : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    }
    return r;
  }
  r.t_statistic = diff / std::sqrt(se2);
  r.degrees_of_freedom = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  boost::math::students_t dist(r.degrees_of_freedom);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t_statistic)));
  r.p_value = std::clamp(r.p_value, 0.0, 1.0);
  return r;
}

double percent_increase(double higher_fraction_error, double lower_fraction_error) {
  return 100.0 * (lower_fraction_error - higher_fraction_error) / higher_fraction_error;
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  s.n = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

std::string_view metric_name(Metric m) {
  return (m == Metric::kMaeAll || m == Metric::kMaeCold) ? "mae" : "rmse";
}

std::string_view metric_slice(Metric m) {
  return (m == Metric::kMaeAll || m == Metric::kRmseAll) ? "all" : "cold";
}

std::optional<double> metric_value(const EvalReport& r, Metric m) {
  switch (m) {
    case Metric::kMaeAll: return r.all.mae;
    case Metric::kRmseAll: return r.all.rmse;
    case Metric::kMaeCold: return r.cold ? std::optional<double>(r.cold->mae) : std::nullopt;
    case Metric::kRmseCold: return r.cold ? std::optional<double>(r.cold->rmse) : std::nullopt;
  }
  return std::nullopt;
}

namespace {

// Element-wise minimum over iterations, slice by slice.
void keep_best(std::optional<EvalReport>& best, const EvalReport& r) {
  if (!best) {
    best = r;
    return;
  }
  best->all.mae = std::min(best->all.mae, r.all.mae);
  best->all.rmse = std::min(best->all.rmse, r.all.rmse);
  if (best->cold && r.cold) {
    best->cold->mae = std::min(best->cold->mae, r.cold->mae);
    best->cold->rmse = std::min(best->cold->rmse, r.cold->rmse);
  }
}

struct CellJob {
  const RatingDataset* train = nullptr;
  const RatingDataset* test = nullptr;
  std::vector<UserId> cold;
  AspectConfig cfg;
  HyperParams hyper;
};

void run_cell(const CellJob& job, const TrustNetwork& trust, const SweepOptions& opt,
              SweepCell& cell) {
  try {
    const auto ctx = build_temporal_context(*job.train, job.hyper.beta, job.hyper.num_bins);
    TrainOptions topt;
    std::optional<EvalReport> best;
    if (opt.best_iteration) {
      topt.on_iteration = [&](const IterationRecord&, const ModelParams& p) {
        keep_best(best, evaluate(p, *job.train, trust, *job.test, job.cold, ctx, job.cfg, opt.clip));
      };
    }
    auto result = train(*job.train, trust, job.hyper, job.cfg, ctx, topt);
    if (opt.best_iteration)
      cell.report = best;
    else
      cell.report = evaluate(result.params, *job.train, trust, *job.test, job.cold, ctx, job.cfg,
                             opt.clip);
  } catch (const DivergenceError& e) {
    cell.error = e.what();
  }
}

void run_all(std::vector<CellJob>& jobs, std::vector<SweepCell>& cells, const TrustNetwork& trust,
             const SweepOptions& opt) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(opt.workers, jobs.size()));
  if (workers == 1) {
    for (std::size_t k = 0; k < jobs.size(); ++k) run_cell(jobs[k], trust, opt, cells[k]);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) {
        try {
          run_cell(jobs[k], trust, opt, cells[k]);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

SweepRow aggregate(const std::string& combination, double fraction,
                   const std::vector<const SweepCell*>& cells) {
  SweepRow row;
  row.combination = combination;
  row.fraction = fraction;
  for (std::size_t m = 0; m < kAllMetrics.size(); ++m) {
    std::vector<double> vals;
    for (const auto* c : cells)
      if (c->report)
        if (auto v = metric_value(*c->report, kAllMetrics[m])) vals.push_back(*v);
    if (!vals.empty()) row.metrics[m] = summarize(vals);
  }
  for (const auto* c : cells) row.failures += c->error ? 1 : 0;
  return row;
}

std::vector<std::string> resolve_combinations(const SweepOptions& opt) {
  if (!opt.combinations.empty()) {
    for (const auto& c : opt.combinations) (void)AspectConfig::from_label(c);
    return opt.combinations;
  }
  std::vector<std::string> out;
  for (auto l : combination_labels()) out.emplace_back(l);
  return out;
}

}  // namespace

SweepResult aspect_sweep(const RatingDataset& train_set, const TrustNetwork& trust,
                         const RatingDataset& test, const HyperParams& hyper,
                         const AspectConfig& base_cfg, std::span<const std::uint64_t> seeds,
                         const SweepOptions& options) {
  if (seeds.empty()) throw UsageError("aspect_sweep needs at least one seed");
  const auto combos = resolve_combinations(options);
  const auto cold = cold_start_users(train_set, options.cold_threshold);
  std::vector<CellJob> jobs;
  SweepResult out;
  for (const auto& c : combos) {
    for (auto seed : seeds) {
      CellJob job;
      job.train = &train_set;
      job.test = &test;
      job.cold = cold;
      job.cfg = AspectConfig::from_label(c, base_cfg);
      job.hyper = hyper;
      job.hyper.seed = seed;
      jobs.push_back(std::move(job));
      SweepCell cell;
      cell.combination = c;
      cell.seed = seed;
      out.cells.push_back(cell);
    }
  }
  run_all(jobs, out.cells, trust, options);
  for (std::size_t k = 0; k < combos.size(); ++k) {
    std::vector<const SweepCell*> group;
    for (std::size_t s = 0; s < seeds.size(); ++s) group.push_back(&out.cells[k * seeds.size() + s]);
    out.rows.push_back(aggregate(combos[k], 0.0, group));
  }
  return out;
}

RobustnessResult robustness_experiment(const RatingDataset& data, const TrustNetwork& trust,
                                       const HyperParams& hyper, const AspectConfig& cfg,
                                       std::span<const double> fractions,
                                       std::span<const std::uint64_t> seeds,
                                       const SweepOptions& options) {
  if (seeds.empty()) throw UsageError("robustness_experiment needs at least one seed");
  if (fractions.empty()) throw UsageError("robustness_experiment needs at least one fraction");
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    if (!(fractions[k] > 0.0 && fractions[k] < 1.0))
      throw UsageError("training fractions must lie in (0, 1)");
    if (k > 0 && !(fractions[k] < fractions[k - 1]))
      throw UsageError("training fractions must be strictly decreasing");
  }
  std::vector<Split> splits;
  splits.reserve(fractions.size() * seeds.size());
  for (double f : fractions)
    for (auto seed : seeds) splits.push_back(split_random(data, f, seed));

  RobustnessResult out;
  std::vector<CellJob> jobs;
  const auto label = cfg.label();
  for (std::size_t k = 0; k < splits.size(); ++k) {
    CellJob job;
    job.train = &splits[k].train;
    job.test = &splits[k].test;
    job.cold = cold_start_users(splits[k].train, options.cold_threshold);
    job.cfg = cfg;
    job.hyper = hyper;
    job.hyper.seed = seeds[k % seeds.size()];
    job.hyper.split_seed = seeds[k % seeds.size()];
    jobs.push_back(std::move(job));
    SweepCell cell;
    cell.combination = label;
    cell.seed = seeds[k % seeds.size()];
    cell.fraction = fractions[k / seeds.size()];
    out.cells.push_back(cell);
  }
  run_all(jobs, out.cells, trust, options);
  for (std::size_t f = 0; f < fractions.size(); ++f) {
    std::vector<const SweepCell*> group;
    for (std::size_t s = 0; s < seeds.size(); ++s) group.push_back(&out.cells[f * seeds.size() + s]);
    out.rows.push_back(aggregate(label, fractions[f], group));
  }
  for (std::size_t f = 1; f < fractions.size(); ++f) {
    for (std::size_t m = 0; m < kAllMetrics.size(); ++m) {
      RobustnessIncrease inc;
      inc.from_fraction = fractions[f - 1];
      inc.to_fraction = fractions[f];
      inc.metric = kAllMetrics[m];
      const auto& hi = out.rows[f - 1].metrics[m];
      const auto& lo = out.rows[f].metrics[m];
      if (hi && lo) inc.percent = percent_increase(hi->mean, lo->mean);
      out.increases.push_back(inc);
    }
  }
  return out;
}

std::vector<ScalingPoint> scaling_benchmark(std::span<const SyntheticConfig> sizes,
                                            const HyperParams& hyper, const AspectConfig& cfg,
                                            int timed_iterations, double min_seconds) {
  if (sizes.size() < 2) throw UsageError("scaling_benchmark needs at least two sizes");
  if (timed_iterations < 1) throw UsageError("timed_iterations must be >= 1");
  struct Run {
    SyntheticData data;
    TemporalContext ctx;
    ModelParams p;
    TrainerState st;
    std::vector<double> times;
    double total = 0.0;
  };
  std::vector<Run> runs;
  runs.reserve(sizes.size());
  for (const auto& sc : sizes) {
    Run r;
    r.data = generate_synthetic(sc);
    r.ctx = build_temporal_context(r.data.ratings, hyper.beta, hyper.num_bins);
    r.p = init_params(r.data.ratings, hyper, r.ctx.day_length);
    r.st = make_trainer_state(r.p, r.data.ratings, r.data.trust, hyper, r.ctx);
    runs.push_back(std::move(r));
  }
  auto step = [&](Run& r) {
    intrinsic_pass(r.p, r.st, r.data.ratings, r.data.trust, hyper, cfg);
    social_pass(r.p, r.st, r.data.trust, hyper, cfg);
    apply_updates(r.p, r.st, hyper, cfg);
  };
  // Rounds visit every size in turn so slow spells hit all of them.
  auto done = [&] {
    for (const auto& r : runs)
      if (static_cast<int>(r.times.size()) < timed_iterations ||
          (r.total < min_seconds && r.times.size() < 1000))
        return false;
    return true;
  };
  while (!done()) {
    for (auto& r : runs) {
      step(r);  // warm-up
      const auto t0 = std::chrono::steady_clock::now();
      step(r);
      const auto t1 = std::chrono::steady_clock::now();
      r.times.push_back(std::chrono::duration<double>(t1 - t0).count());
      r.total += r.times.back();
    }
  }
  std::vector<ScalingPoint> out;
  for (const auto& r : runs) {
    const double fastest = *std::min_element(r.times.begin(), r.times.end());
    out.push_back({r.data.ratings.size(), r.data.trust.size(), fastest});
  }
  return out;
}

}  // namespace aspectmf
