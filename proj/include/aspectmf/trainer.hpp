#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "aspectmf/data.hpp"
#include "aspectmf/model.hpp"
#include "aspectmf/temporal.hpp"

namespace aspectmf {

struct LossBreakdown {
  double total = 0.0;   // E
  double rating = 0.0;  // E_R
  double trust = 0.0;   // E_T
};

// E = E_R + E_T of the current parameters. Accumulated in extended precision.
LossBreakdown total_loss(const ModelParams& p, const RatingDataset& train,
                         const TrustNetwork& trust, const HyperParams& hyper,
                         const AspectConfig& cfg, const TemporalContext& ctx);

// Per-record and per-user quantities that stay fixed during training.
struct TrainingIndex {
  struct Record {
    UserId user = 0;
    ItemId item = 0;
    double rating = 0.0;
    std::int64_t slot = -1;  // -1 when (user, day) has no slot
    int bin = 0;
    double dev = 0.0;
  };
  std::vector<Record> records;
  std::vector<double> w_user;        // |I_u|^-1/2
  std::vector<double> w_item;        // |U_j|^-1/2
  std::vector<double> w_trust;       // |T_u|^-1/2
  std::vector<double> w_trusted;     // |T_v+|^-1/2
  std::vector<double> mean_dev;      // mean of dev over u's days
  std::vector<std::size_t> slot_ratings;  // ratings per day slot
  std::vector<double> implicit_touches;   // ratings whose prediction reads y_i
  std::vector<std::size_t> bin_ratings;   // ratings per (item, bin)
};

TrainingIndex build_training_index(const ModelParams& p, const RatingDataset& train,
                                   const TrustNetwork& trust, const TemporalContext& ctx);

struct IterationRecord {
  int iteration = 0;  // 1-based
  double loss = 0.0;
  double loss_rating = 0.0;
  double loss_trust = 0.0;
  double seconds = 0.0;  // wall time of the three passes
  double lr_scale = 1.0;
};

// Gradient accumulators of the deferred groups plus loop bookkeeping.
struct TrainerState {
  ModelParams acc;    // same shape as the model; only deferred groups are used
  ModelParams reg;    // per-entry regularizer coefficients
  std::optional<AspectConfig> reg_cfg;  // config `reg` was built for
  Matrix omega_user;  // per-truster rating-side ω gradient, spread over T_u
  TrainingIndex index;
  int iteration = 0;
  double lr_scale = 1.0;
  std::uint64_t shuffle_seed = 1;
  std::vector<IterationRecord> history;
};

TrainerState make_trainer_state(const ModelParams& p, const RatingDataset& train,
                                const TrustNetwork& trust, const HyperParams& hyper,
                                const TemporalContext& ctx);

// One sweep over the ratings in seeded random order. Immediate groups are
// stepped per rating with an implicit share of their regularizer; deferred
// groups' data gradients are accumulated into `state`.
void intrinsic_pass(ModelParams& p, TrainerState& state, const RatingDataset& train,
                    const TrustNetwork& trust, const HyperParams& hyper,
                    const AspectConfig& cfg);

// One sweep over the trust edges, accumulating the trust-residual gradients.
// No-op unless cfg.social.
void social_pass(const ModelParams& p, TrainerState& state, const TrustNetwork& trust,
                 const HyperParams& hyper, const AspectConfig& cfg);

// X <- (X - s * X^S) / (1 + s * c_X) with s = gamma_X * lr_scale for every
// deferred group, where X^S holds the data gradients and c_X the regularizer
// coefficients. Then resets the accumulators.
void apply_updates(ModelParams& p, TrainerState& state, const HyperParams& hyper,
                   const AspectConfig& cfg);

struct TrainReport {
  std::vector<IterationRecord> history;
  std::optional<int> best_iteration;  // set when snapshotting
  double best_loss = 0.0;
};

struct TrainOptions {
  bool snapshot_best = false;
  // Called after every iteration with the current parameters.
  std::function<void(const IterationRecord&, const ModelParams&)> on_iteration;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

// init_params followed by hyper.max_iter iterations. Throws DivergenceError on a
// non-finite loss.
TrainResult train(const RatingDataset& train, const TrustNetwork& trust, const HyperParams& hyper,
                  const AspectConfig& cfg, const TemporalContext& ctx,
                  const TrainOptions& options = {});
TrainResult train_from(ModelParams init, const RatingDataset& train, const TrustNetwork& trust,
                       const HyperParams& hyper, const AspectConfig& cfg,
                       const TemporalContext& ctx, const TrainOptions& options = {});

// Exact gradient of E. Inactive groups are zero. For Y both mirrored entries
// hold dE/dY_ff' of the shared pair.
ModelParams analytic_gradient(const ModelParams& p, const RatingDataset& train,
                              const TrustNetwork& trust, const HyperParams& hyper,
                              const AspectConfig& cfg, const TemporalContext& ctx);

// p <- p - step_size * grad E over all active groups.
void full_batch_step(ModelParams& p, const RatingDataset& train, const TrustNetwork& trust,
                     const HyperParams& hyper, const AspectConfig& cfg,
                     const TemporalContext& ctx, double step_size);

struct GroupCheck {
  ParamGroup group{};
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GroupCheck> groups;  // active groups only
  double tolerance = 1e-4;
  double max_rel_error() const;
  bool passed() const;
};

// Central differences of total_loss against analytic_gradient, entry by entry.
GradCheckReport gradient_check(const ModelParams& p, const RatingDataset& train,
                               const TrustNetwork& trust, const HyperParams& hyper,
                               const AspectConfig& cfg, const TemporalContext& ctx,
                               double epsilon = 1e-5, double tolerance = 1e-4);

// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

}  // namespace aspectmf
