#include "aspectmf/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>

#include "aspectmf/error.hpp"

namespace aspectmf {

namespace {

constexpr std::array<std::string_view, kNumParamGroups> kGroupNames = {
    "bu", "alpha", "but", "bi", "bit", "C", "Ct", "P", "Pt", "alphaP",
    "Q",  "W",     "Wt",  "alphaW", "Z", "Zt", "alphaZ", "Y", "omega", "y"};

constexpr std::array<std::string_view, 8> kLabels = {"b",   "bf", "bffv", "bfv",
                                                     "f",   "ffv", "fv",  "static"};

}  // namespace

std::string_view group_name(ParamGroup g) { return kGroupNames[static_cast<int>(g)]; }

std::optional<ParamGroup> group_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kGroupNames.size(); ++i)
    if (kGroupNames[i] == name) return static_cast<ParamGroup>(i);
  return std::nullopt;
}

std::array<ParamGroup, kNumParamGroups> all_groups() {
  std::array<ParamGroup, kNumParamGroups> out{};
  for (std::size_t i = 0; i < kNumParamGroups; ++i) out[i] = static_cast<ParamGroup>(i);
  return out;
}

const std::array<std::string_view, 8>& combination_labels() { return kLabels; }

AspectConfig AspectConfig::from_label(std::string_view label, const AspectConfig& base) {
  AspectConfig c = base;
  c.dynamic_bias = c.dynamic_feature = c.dynamic_feature_value = false;
  if (label == "static") return c;
  if (std::find(kLabels.begin(), kLabels.end(), label) == kLabels.end())
    throw UsageError("unknown aspect combination '" + std::string(label) + "'");
  std::string_view rest = label;
  if (rest.starts_with("b")) {
    c.dynamic_bias = true;
    rest.remove_prefix(1);
  }
  if (rest.starts_with("ffv")) {
    c.dynamic_feature = c.dynamic_feature_value = true;
  } else if (rest.starts_with("fv")) {
    c.dynamic_feature_value = true;
  } else if (rest.starts_with("f")) {
    c.dynamic_feature = true;
  }
  return c;
}

std::string AspectConfig::label() const {
  std::string s;
  if (dynamic_bias) s += "b";
  if (dynamic_feature) s += "f";
  if (dynamic_feature_value) s += "fv";
  return s.empty() ? "static" : s;
}

bool group_active(ParamGroup g, const AspectConfig& cfg) {
  switch (g) {
    case ParamGroup::kAlpha:
    case ParamGroup::kBut:
    case ParamGroup::kBit:
    case ParamGroup::kC:
    case ParamGroup::kCt:
      return cfg.dynamic_bias;
    case ParamGroup::kPt:
    case ParamGroup::kAlphaP:
      return cfg.dynamic_feature;
    case ParamGroup::kWt:
    case ParamGroup::kAlphaW:
    case ParamGroup::kZt:
    case ParamGroup::kAlphaZ:
      return cfg.dynamic_feature_value;
    case ParamGroup::kCondY:
      return cfg.conditional;
    case ParamGroup::kOmega:
      return cfg.social;
    case ParamGroup::kImplicit:
      return cfg.implicit_feedback;
    default:
      return true;
  }
}

bool group_deferred(ParamGroup g) {
  switch (g) {
    case ParamGroup::kP:
    case ParamGroup::kPt:
    case ParamGroup::kAlphaP:
    case ParamGroup::kW:
    case ParamGroup::kWt:
    case ParamGroup::kAlphaW:
    case ParamGroup::kZ:
    case ParamGroup::kZt:
    case ParamGroup::kAlphaZ:
    case ParamGroup::kOmega:
      return true;
    default:
      return false;
  }
}

// ---------------------------------------------------------------------------

void HyperParams::set_all_gamma(double gamma) {
  for (auto& r : rates) r.gamma = gamma;
}

void HyperParams::set_all_lambda(double lambda) {
  for (auto& r : rates) r.lambda = lambda;
}

void HyperParams::validate() const {
  if (num_factors < 1) throw UsageError("D must be >= 1");
  for (std::size_t i = 0; i < kNumParamGroups; ++i) {
    auto name = std::string(kGroupNames[i]);
    if (!(rates[i].gamma >= 0.0)) throw UsageError("gamma_" + name + " must be >= 0");
    if (!(rates[i].lambda >= 0.0)) throw UsageError("lambda_" + name + " must be >= 0");
  }
  if (!(lambda_T >= 0.0) || !(lambda_t >= 0.0)) throw UsageError("lambda_T/lambda_t must be >= 0");
  if (!(eta_P >= 0.0) || !(eta_W >= 0.0) || !(eta_Z >= 0.0))
    throw UsageError("eta weights must be >= 0");
  if (!(beta > 0.0)) throw UsageError("beta must be > 0");
  if (num_bins < 1) throw UsageError("num_bins must be >= 1");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw UsageError("lr_decay must lie in (0, 1]");
  if (!(init_std >= 0.0)) throw UsageError("init_std must be >= 0");
}

// ---------------------------------------------------------------------------

DaySlots DaySlots::from_dataset(const RatingDataset& train, std::int64_t day_length) {
  std::vector<std::pair<UserId, std::int64_t>> pairs;
  pairs.reserve(train.size());
  for (const auto& r : train.records()) pairs.emplace_back(r.user, day_index(r.timestamp, day_length));
  return from_pairs(train.num_users(), std::move(pairs));
}

DaySlots DaySlots::from_pairs(std::size_t num_users,
                              std::vector<std::pair<UserId, std::int64_t>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  DaySlots s;
  s.offsets_.assign(num_users + 1, 0);
  s.days_.reserve(pairs.size());
  s.users_.reserve(pairs.size());
  for (const auto& [u, d] : pairs) {
    if (u >= num_users) throw DataError("day slot user out of range");
    ++s.offsets_[u + 1];
    s.days_.push_back(d);
    s.users_.push_back(u);
  }
  for (std::size_t u = 0; u < num_users; ++u) s.offsets_[u + 1] += s.offsets_[u];
  return s;
}

std::optional<std::size_t> DaySlots::find(UserId u, std::int64_t day) const {
  if (u >= num_users()) return std::nullopt;
  auto b = days_.begin() + static_cast<std::ptrdiff_t>(offsets_[u]);
  auto e = days_.begin() + static_cast<std::ptrdiff_t>(offsets_[u + 1]);
  auto it = std::lower_bound(b, e, day);
  if (it == e || *it != day) return std::nullopt;
  return static_cast<std::size_t>(it - days_.begin());
}

// ---------------------------------------------------------------------------

std::span<double> ModelParams::values(ParamGroup g) {
  auto c = std::as_const(*this).values(g);
  return {const_cast<double*>(c.data()), c.size()};
}

std::span<const double> ModelParams::values(ParamGroup g) const {
  switch (g) {
    case ParamGroup::kBu: return bu;
    case ParamGroup::kAlpha: return alpha;
    case ParamGroup::kBut: return but;
    case ParamGroup::kBi: return bi;
    case ParamGroup::kBit: return bit.flat();
    case ParamGroup::kC: return C;
    case ParamGroup::kCt: return Ct;
    case ParamGroup::kP: return P.flat();
    case ParamGroup::kPt: return Pt.flat();
    case ParamGroup::kAlphaP: return alphaP;
    case ParamGroup::kQ: return Q.flat();
    case ParamGroup::kW: return W.flat();
    case ParamGroup::kWt: return Wt.flat();
    case ParamGroup::kAlphaW: return alphaW;
    case ParamGroup::kZ: return Z.flat();
    case ParamGroup::kZt: return Zt.flat();
    case ParamGroup::kAlphaZ: return alphaZ;
    case ParamGroup::kCondY: return Y.flat();
    case ParamGroup::kOmega: return omega.flat();
    case ParamGroup::kImplicit: return y.flat();
  }
  return {};
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto g : all_groups()) {
    auto v = z.values(g);
    std::fill(v.begin(), v.end(), 0.0);
  }
  return z;
}

ModelParams init_params(const RatingDataset& train, const HyperParams& hyper,
                        std::int64_t day_length) {
  hyper.validate();
  const std::size_t n = train.num_users(), m = train.num_items(), d = hyper.num_factors;
  if (n < 1 || m < 1) throw UsageError("init_params requires N, M >= 1");
  ModelParams p;
  p.num_users = n;
  p.num_items = m;
  p.num_factors = d;
  p.num_bins = hyper.num_bins;
  p.mu = train.mean_rating();
  p.slots = DaySlots::from_dataset(train, day_length);
  const std::size_t s = p.slots.size();

  p.P = Matrix(n, d);
  p.Q = Matrix(m, d);
  p.y = Matrix(m, d);
  p.omega = Matrix(n, d);
  p.bu.assign(n, 0.0);
  p.bi.assign(m, 0.0);

  std::mt19937_64 rng(hyper.seed);
  std::normal_distribution<double> gauss(hyper.init_mean, hyper.init_std);
  auto fill = [&](std::span<double> v) {
    if (hyper.init_std == 0.0) {
      std::fill(v.begin(), v.end(), hyper.init_mean);
      return;
    }
    for (auto& x : v) x = gauss(rng);
  };
  fill(p.P.flat());
  fill(p.Q.flat());
  fill(p.y.flat());
  fill(p.omega.flat());
  fill(p.bu);
  fill(p.bi);

  p.W = Matrix(n, d, 1.0);
  p.Z = Matrix(n, d, 0.0);
  p.Y = Matrix(d, d, 0.0);
  p.alpha.assign(n, 0.0);
  p.alphaP.assign(n, 0.0);
  p.alphaW.assign(n, 0.0);
  p.alphaZ.assign(n, 0.0);
  p.C.assign(n, 1.0);
  p.but.assign(s, 0.0);
  p.Ct.assign(s, 0.0);
  p.Pt = Matrix(s, d);
  p.Wt = Matrix(s, d);
  p.Zt = Matrix(s, d);
  p.bit = Matrix(m, static_cast<std::size_t>(hyper.num_bins));
  return p;
}

// ---------------------------------------------------------------------------

double dynamic_user_bias(const ModelParams& p, UserId u, std::int64_t day,
                         const TemporalContext& ctx, const AspectConfig& cfg) {
  if (u >= p.num_users) return 0.0;
  double b = p.bu[u];
  if (!cfg.dynamic_bias) return b;
  b += p.alpha[u] * deviation(static_cast<double>(day), ctx.mean_day(u), ctx.beta);
  if (auto s = p.slots.find(u, day)) b += p.but[*s];
  return b;
}

double dynamic_item_bias(const ModelParams& p, UserId u, ItemId j, std::int64_t day,
                         const TemporalContext& ctx, const AspectConfig& cfg) {
  if (j >= p.num_items) return 0.0;
  if (!cfg.dynamic_bias) return p.bi[j];
  const double item = p.bi[j] + p.bit(j, static_cast<std::size_t>(bin_index(day, ctx)));
  if (u >= p.num_users) return item;
  double scale = p.C[u];
  if (auto s = p.slots.find(u, day)) scale += p.Ct[*s];
  return item * scale;
}

double aspect_at_time(const ModelParams& p, Aspect which, UserId u, std::size_t f,
                      std::int64_t day, const TemporalContext& ctx, const AspectConfig& cfg) {
  const Matrix* base = nullptr;
  const Matrix* daily = nullptr;
  const std::vector<double>* slope = nullptr;
  bool dynamic = false;
  switch (which) {
    case Aspect::kP:
      base = &p.P, daily = &p.Pt, slope = &p.alphaP, dynamic = cfg.dynamic_feature;
      break;
    case Aspect::kW:
      base = &p.W, daily = &p.Wt, slope = &p.alphaW, dynamic = cfg.dynamic_feature_value;
      break;
    case Aspect::kZ:
      base = &p.Z, daily = &p.Zt, slope = &p.alphaZ, dynamic = cfg.dynamic_feature_value;
      break;
  }
  double v = (*base)(u, f);
  if (!dynamic) return v;
  v += (*slope)[u] * deviation(static_cast<double>(day), ctx.mean_day(u), ctx.beta);
  if (auto s = p.slots.find(u, day)) v += (*daily)(*s, f);
  return v;
}

double predict(const ModelParams& p, const RatingDataset& train, const TrustNetwork& trust,
               UserId u, ItemId j, std::int64_t day, const TemporalContext& ctx,
               const AspectConfig& cfg) {
  const bool user_ok = u < p.num_users;
  const bool item_ok = j < p.num_items;
  double r = p.mu;
  if (user_ok) r += dynamic_user_bias(p, u, day, ctx, cfg);
  if (item_ok) r += dynamic_item_bias(p, u, j, day, ctx, cfg);
  if (!user_ok || !item_ok) return r;

  const std::size_t d = p.num_factors;
  const double dev = deviation(static_cast<double>(day), ctx.mean_day(u), ctx.beta);
  const auto slot = p.slots.find(u, day);

  std::vector<double> a(d), s(d);
  for (std::size_t f = 0; f < d; ++f) {
    double pf = p.P(u, f), wf = p.W(u, f), zf = p.Z(u, f);
    if (cfg.dynamic_feature) {
      pf += p.alphaP[u] * dev;
      if (slot) pf += p.Pt(*slot, f);
    }
    if (cfg.dynamic_feature_value) {
      wf += p.alphaW[u] * dev;
      zf += p.alphaZ[u] * dev;
      if (slot) {
        wf += p.Wt(*slot, f);
        zf += p.Zt(*slot, f);
      }
    }
    a[f] = wf * p.Q(j, f) + zf;
    s[f] = pf;
  }
  if (cfg.implicit_feedback && u < train.num_users()) {
    auto items = train.user_items(u);
    if (!items.empty()) {
      const double w = 1.0 / std::sqrt(static_cast<double>(items.size()));
      for (auto i : items)
        for (std::size_t f = 0; f < d; ++f) s[f] += w * p.y(i, f);
    }
  }
  if (cfg.social) {
    auto vs = trust.trustees(u);
    if (!vs.empty()) {
      const double w = 1.0 / std::sqrt(static_cast<double>(vs.size()));
      for (auto v : vs)
        for (std::size_t f = 0; f < d; ++f) s[f] += w * p.omega(v, f);
    }
  }
  for (std::size_t f = 0; f < d; ++f) r += s[f] * a[f];
  if (cfg.conditional) {
    for (std::size_t f = 0; f < d; ++f)
      for (std::size_t g = 0; g < d; ++g) r += a[f] * p.Y(f, g) * a[g];
  }
  return r;
}

TrustTriplet estimate_trust_triplet(const ModelParams& p, UserId u, UserId v,
                                    std::span<const std::int64_t> days,
                                    const TemporalContext& ctx, const AspectConfig& cfg) {
  TrustTriplet out;
  if (days.empty()) return out;
  for (auto day : days) {
    for (std::size_t f = 0; f < p.num_factors; ++f) {
      const double w = p.omega(v, f);
      out.t_hat += aspect_at_time(p, Aspect::kP, u, f, day, ctx, cfg) * w;
      out.s_hat += (1.0 - aspect_at_time(p, Aspect::kW, u, f, day, ctx, cfg)) * w;
      out.g_hat += aspect_at_time(p, Aspect::kZ, u, f, day, ctx, cfg) * w;
    }
  }
  const double n = static_cast<double>(days.size());
  out.t_hat /= n;
  out.s_hat /= n;
  out.g_hat /= n;
  return out;
}

std::vector<std::int64_t> user_days(const ModelParams& p, UserId u) {
  auto [b, e] = p.slots.user_range(u);
  std::vector<std::int64_t> out;
  out.reserve(e - b);
  for (auto s = b; s < e; ++s) out.push_back(p.slots.day(s));
  return out;
}

}  // namespace aspectmf
