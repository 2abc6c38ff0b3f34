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
#include "aspectmf/temporal.hpp"

namespace aspectmf {

// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Trainable parameter groups. The day-keyed groups (but, Ct, Pt, Wt, Zt) have
// one row per observed (user, day) slot.
enum class ParamGroup : int {
  kBu,
  kAlpha,
  kBut,
  kBi,
  kBit,
  kC,
  kCt,
  kP,
  kPt,
  kAlphaP,
  kQ,
  kW,
  kWt,
  kAlphaW,
  kZ,
  kZt,
  kAlphaZ,
  kCondY,     // Y, symmetric inter-feature dependencies
  kOmega,     // ω, social influence vectors
  kImplicit,  // y, implicit-feedback item vectors
};

inline constexpr std::size_t kNumParamGroups = 20;

std::string_view group_name(ParamGroup g);
std::optional<ParamGroup> group_from_name(std::string_view name);
std::array<ParamGroup, kNumParamGroups> all_groups();

// Switches for the temporal, social, conditional and implicit components.
struct AspectConfig {
  bool dynamic_bias = false;           // b
  bool dynamic_feature = false;        // f
  bool dynamic_feature_value = false;  // fv
  bool social = true;
  bool conditional = true;
  bool implicit_feedback = true;

  bool any_dynamic() const { return dynamic_bias || dynamic_feature || dynamic_feature_value; }

  // "static", "b", "bf", "bffv", "bfv", "f", "ffv", "fv". Only the dynamic
  // flags are replaced; the other switches come from `base`.
  static AspectConfig from_label(std::string_view label, const AspectConfig& base);
  static AspectConfig from_label(std::string_view label);
  std::string label() const;

  friend bool operator==(const AspectConfig&, const AspectConfig&) = default;
};

// The seven dynamic combinations followed by "static".
const std::array<std::string_view, 8>& combination_labels();

inline AspectConfig AspectConfig::from_label(std::string_view label) {
  return from_label(label, AspectConfig{});
}

// Whether a group takes part in prediction and loss under `cfg`.
bool group_active(ParamGroup g, const AspectConfig& cfg);

// True for groups updated in the main loop from accumulated gradients.
bool group_deferred(ParamGroup g);

struct GroupRates {
  double gamma = 0.0;   // learning rate
  double lambda = 0.0;  // regularizer
};

struct HyperParams {
  std::size_t num_factors = 5;
  std::array<GroupRates, kNumParamGroups> rates{};
  double lambda_T = 0.0;   // trust-side regularizer weight
  double gamma_T = 0.0;    // accepted for completeness; no group uses it
  double lambda_t = 0.0;   // weight of the trust-reconstruction loss
  double eta_P = 1.0;
  double eta_W = 1.0;
  double eta_Z = 1.0;
  double beta = 0.4;
  int num_bins = 30;
  int max_iter = 100;
  double lr_decay = 1.0;
  double init_mean = 0.0;
  double init_std = 1.0;
  std::uint64_t seed = 1;        // initialization and visit order
  std::uint64_t split_seed = 1;  // train/test partition

  GroupRates& operator[](ParamGroup g) { return rates[static_cast<int>(g)]; }
  const GroupRates& operator[](ParamGroup g) const { return rates[static_cast<int>(g)]; }

  void set_all_gamma(double gamma);
  void set_all_lambda(double lambda);
  // Throws UsageError when an invariant is violated.
  void validate() const;
};

// Observed (user, day) pairs of a training set, grouped by user with days
// ascending. Slot rows index the day-keyed parameter tables.
class DaySlots {
 public:
  DaySlots() = default;
  static DaySlots from_dataset(const RatingDataset& train, std::int64_t day_length);
  static DaySlots from_pairs(std::size_t num_users,
                             std::vector<std::pair<UserId, std::int64_t>> pairs);

  std::size_t size() const { return days_.size(); }
  std::size_t num_users() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::optional<std::size_t> find(UserId u, std::int64_t day) const;
  // Slot range of user u: [begin, end).
  std::pair<std::size_t, std::size_t> user_range(UserId u) const {
    if (u >= num_users()) return {0, 0};
    return {offsets_[u], offsets_[u + 1]};
  }
  std::int64_t day(std::size_t slot) const { return days_[slot]; }
  UserId user(std::size_t slot) const { return users_[slot]; }

  friend bool operator==(const DaySlots&, const DaySlots&) = default;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<std::int64_t> days_;
  std::vector<UserId> users_;
};

struct ModelParams {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_factors = 0;
  int num_bins = 1;
  double mu = 0.0;
  DaySlots slots;

  std::vector<double> bu, alpha, C;  // per user
  std::vector<double> but, Ct;       // per slot
  std::vector<double> bi;            // per item
  Matrix bit;                        // item x bin
  Matrix P, W, Z, omega;             // user x factor
  Matrix Pt, Wt, Zt;                 // slot x factor
  std::vector<double> alphaP, alphaW, alphaZ;  // per user
  Matrix Q, y;                       // item x factor
  Matrix Y;                          // factor x factor, symmetric, zero diagonal

  // Flat storage of a group. For kCondY this is the full D x D matrix.
  std::span<double> values(ParamGroup g);
  std::span<const double> values(ParamGroup g) const;

  // Same shape with every value zero.
  ModelParams zeros_like() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Gaussian(init_mean, init_std) for P, Q, y, ω, bu, bi; W = 1, C = 1; every
// other group 0; μ = mean training rating. Deterministic given hyper.seed.
ModelParams init_params(const RatingDataset& train, const HyperParams& hyper,
                        std::int64_t day_length = kSecondsPerDay);

enum class Aspect { kP, kW, kZ };

double dynamic_user_bias(const ModelParams& p, UserId u, std::int64_t day,
                         const TemporalContext& ctx, const AspectConfig& cfg);
double dynamic_item_bias(const ModelParams& p, UserId u, ItemId j, std::int64_t day,
                         const TemporalContext& ctx, const AspectConfig& cfg);
double aspect_at_time(const ModelParams& p, Aspect which, UserId u, std::size_t f,
                      std::int64_t day, const TemporalContext& ctx, const AspectConfig& cfg);

// Predicted rating of item j by user u on `day`. `train` supplies I_u and
// `trust` supplies T_u. Ids outside the model fall back to μ plus whatever
// bias exists.
double predict(const ModelParams& p, const RatingDataset& train, const TrustNetwork& trust,
               UserId u, ItemId j, std::int64_t day, const TemporalContext& ctx,
               const AspectConfig& cfg);

struct TrustTriplet {
  double t_hat = 0.0;  // via P(t)
  double s_hat = 0.0;  // via 1 - W(t)
  double g_hat = 0.0;  // via Z(t)
};

// Time-averaged influence of v on u over u's rating days. An empty day list
// yields (0, 0, 0).
TrustTriplet estimate_trust_triplet(const ModelParams& p, UserId u, UserId v,
                                    std::span<const std::int64_t> days,
                                    const TemporalContext& ctx, const AspectConfig& cfg);

// Distinct training days of u (I_u^t), ascending.
std::vector<std::int64_t> user_days(const ModelParams& p, UserId u);

}  // namespace aspectmf
