#include "aspectmf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "aspectmf/error.hpp"

namespace aspectmf {

namespace {

using Record = TrainingIndex::Record;

double inv_sqrt(std::size_t n) { return n ? 1.0 / std::sqrt(static_cast<double>(n)) : 0.0; }

template <class T>
struct Scratch {
  std::vector<T> a;    // W(t) Q_j + Z(t)
  std::vector<T> s;    // P(t) + implicit + social
  std::vector<T> w;    // W(t)
  std::vector<T> g;    // dR/da
  std::vector<T> imp;  // implicit sum of the current user
  std::vector<T> soc;  // social sum of the current user

  explicit Scratch(std::size_t d) : a(d), s(d), w(d), g(d), imp(d), soc(d) {}
};

// Prediction of one record with the current parameters. Also leaves a, s, w
// and g in `sc`, the unscaled item bias in `item_base`, and the item bias
// scale C_u + Ct in `scale`.
template <class T>
T forward(const ModelParams& p, const AspectConfig& cfg, const Record& rc, bool use_imp,
          bool use_soc, Scratch<T>& sc, T& item_base, T& scale) {
  const std::size_t d = p.num_factors;
  const UserId u = rc.user;
  const ItemId j = rc.item;
  const bool has_slot = rc.slot >= 0;
  const std::size_t s = has_slot ? static_cast<std::size_t>(rc.slot) : 0;
  const T dev = rc.dev;

  T r = static_cast<T>(p.mu) + p.bu[u];
  item_base = p.bi[j];
  scale = 1;
  if (cfg.dynamic_bias) {
    r += p.alpha[u] * dev;
    if (has_slot) r += p.but[s];
    item_base += p.bit(j, static_cast<std::size_t>(rc.bin));
    scale = p.C[u];
    if (has_slot) scale += p.Ct[s];
  }
  r += item_base * scale;

  const double* P = &p.P(u, 0);
  const double* W = &p.W(u, 0);
  const double* Z = &p.Z(u, 0);
  const double* Q = &p.Q(j, 0);
  for (std::size_t f = 0; f < d; ++f) {
    T pf = P[f], wf = W[f], zf = Z[f];
    if (cfg.dynamic_feature) {
      pf += p.alphaP[u] * dev;
      if (has_slot) pf += p.Pt(s, f);
    }
    if (cfg.dynamic_feature_value) {
      wf += p.alphaW[u] * dev;
      zf += p.alphaZ[u] * dev;
      if (has_slot) {
        wf += p.Wt(s, f);
        zf += p.Zt(s, f);
      }
    }
    if (use_imp) pf += sc.imp[f];
    if (use_soc) pf += sc.soc[f];
    sc.w[f] = wf;
    sc.a[f] = wf * Q[f] + zf;
    sc.s[f] = pf;
  }
  for (std::size_t f = 0; f < d; ++f) {
    r += sc.s[f] * sc.a[f];
    sc.g[f] = sc.s[f];
  }
  if (cfg.conditional) {
    for (std::size_t f = 0; f < d; ++f) {
      T ya = 0;
      for (std::size_t h = 0; h < d; ++h) ya += p.Y(f, h) * sc.a[h];
      r += sc.a[f] * ya;
      sc.g[f] += 2 * ya;
    }
  }
  return r;
}

template <class T>
void implicit_sum(const ModelParams& p, const RatingDataset& train, const TrainingIndex& ix,
                  UserId u, std::vector<T>& out) {
  std::fill(out.begin(), out.end(), T(0));
  if (u >= train.num_users()) return;
  const double w = ix.w_user[u];
  if (w == 0.0) return;
  const std::size_t d = p.num_factors;
  for (auto i : train.user_items(u)) {
    const double* y = &p.y(i, 0);
    for (std::size_t f = 0; f < d; ++f) out[f] += y[f];
  }
  for (auto& x : out) x *= w;
}

template <class T>
void social_sum(const ModelParams& p, const TrustNetwork& trust, const TrainingIndex& ix,
                UserId u, std::vector<T>& out) {
  std::fill(out.begin(), out.end(), T(0));
  const double w = u < ix.w_trust.size() ? ix.w_trust[u] : 0.0;
  if (w == 0.0) return;
  const std::size_t d = p.num_factors;
  for (auto v : trust.trustees(u)) {
    const double* o = &p.omega(v, 0);
    for (std::size_t f = 0; f < d; ++f) out[f] += o[f];
  }
  for (auto& x : out) x *= w;
}

// Time-averaged P, W, Z of user u over its day slots.
template <class T>
void user_averages(const ModelParams& p, const TrainingIndex& ix, const AspectConfig& cfg,
                   UserId u, T* pbar, T* wbar, T* zbar) {
  const std::size_t d = p.num_factors;
  auto [b, e] = p.slots.user_range(u);
  const T inv_n = e > b ? T(1) / static_cast<T>(e - b) : T(0);
  for (std::size_t f = 0; f < d; ++f) {
    T pf = p.P(u, f), wf = p.W(u, f), zf = p.Z(u, f);
    if (cfg.dynamic_feature) {
      T sum = 0;
      for (auto s = b; s < e; ++s) sum += p.Pt(s, f);
      pf += p.alphaP[u] * static_cast<T>(ix.mean_dev[u]) + sum * inv_n;
    }
    if (cfg.dynamic_feature_value) {
      T sw = 0, sz = 0;
      for (auto s = b; s < e; ++s) {
        sw += p.Wt(s, f);
        sz += p.Zt(s, f);
      }
      wf += p.alphaW[u] * static_cast<T>(ix.mean_dev[u]) + sw * inv_n;
      zf += p.alphaZ[u] * static_cast<T>(ix.mean_dev[u]) + sz * inv_n;
    }
    pbar[f] = pf;
    wbar[f] = wf;
    zbar[f] = zf;
  }
}

std::size_t num_days(const ModelParams& p, UserId u) {
  auto [b, e] = p.slots.user_range(u);
  return e - b;
}

void check_shapes(const ModelParams& p, const RatingDataset& train, const TrustNetwork& trust,
                  const TemporalContext& ctx) {
  if (p.num_users != train.num_users() || p.num_items != train.num_items())
    throw UsageError("model and training data disagree on N or M");
  if (trust.num_users() > p.num_users)
    throw UsageError("trust network refers to users outside the model");
  if (ctx.num_bins != p.num_bins) throw UsageError("model and context disagree on num_bins");
}

// Deferred-group gradient of one rating: P, Pt, αP, W, Wt, αW, Z, Zt, αZ.
// `coef` is dE/dR for the rating (−e).
void accumulate_deferred(ModelParams& G, const ModelParams& p, const AspectConfig& cfg,
                         const Record& rc, double coef, const Scratch<double>& sc) {
  const std::size_t d = p.num_factors;
  const UserId u = rc.user;
  const bool has_slot = rc.slot >= 0;
  const auto s = static_cast<std::size_t>(has_slot ? rc.slot : 0);
  const double* Q = &p.Q(rc.item, 0);
  double sum_a = 0.0, sum_gq = 0.0, sum_g = 0.0;
  for (std::size_t f = 0; f < d; ++f) {
    const double ga = coef * sc.a[f];
    const double gw = coef * sc.g[f] * Q[f];
    const double gz = coef * sc.g[f];
    G.P(u, f) += ga;
    G.W(u, f) += gw;
    G.Z(u, f) += gz;
    if (has_slot && cfg.dynamic_feature) G.Pt(s, f) += ga;
    if (has_slot && cfg.dynamic_feature_value) {
      G.Wt(s, f) += gw;
      G.Zt(s, f) += gz;
    }
    sum_a += sc.a[f];
    sum_gq += sc.g[f] * Q[f];
    sum_g += sc.g[f];
  }
  if (cfg.dynamic_feature) G.alphaP[u] += coef * rc.dev * sum_a;
  if (cfg.dynamic_feature_value) {
    G.alphaW[u] += coef * rc.dev * sum_gq;
    G.alphaZ[u] += coef * rc.dev * sum_g;
  }
}

// Rating-side ω gradient collected per truster, moved onto the trustees.
void spread_omega(Matrix& omega_user, const TrustNetwork& trust, const TrainingIndex& ix,
                  ModelParams& G) {
  const std::size_t d = G.num_factors;
  for (UserId u = 0; u < omega_user.rows(); ++u) {
    const double w = u < ix.w_trust.size() ? ix.w_trust[u] : 0.0;
    if (w != 0.0) {
      const double* ou = &omega_user(u, 0);
      for (auto v : trust.trustees(u)) {
        double* gv = &G.omega(v, 0);
        for (std::size_t f = 0; f < d; ++f) gv[f] += w * ou[f];
      }
    }
    auto row = omega_user.row(u);
    std::fill(row.begin(), row.end(), 0.0);
  }
}

// x <- (x - step * grad) / (1 + step * c): explicit data step, implicit
// regularizer step.
inline void prox(double& x, double step, double grad, double c) {
  x = (x - step * grad) / (1.0 + step * c);
}

// Every regularizer in E is c * x^2 / 2 per entry; this fills c. The gradient
// of the regularizers is C * p elementwise.
void regularizer_coefficients(const ModelParams& p, const TrainingIndex& ix, const HyperParams& h,
                              const AspectConfig& cfg, ModelParams& C) {
  const std::size_t d = p.num_factors;
  const bool db = cfg.dynamic_bias, df = cfg.dynamic_feature, dfv = cfg.dynamic_feature_value;
  auto add = [](std::span<double> dst, double c) {
    for (auto& x : dst) x += c;
  };
  for (UserId u = 0; u < p.num_users; ++u) {
    double w = ix.w_user[u];
    const double rw = cfg.social ? h.lambda_T * ix.w_trust[u] : 0.0;
    auto [b, e] = p.slots.user_range(u);
    if (w != 0.0) {
      C.bu[u] += h[ParamGroup::kBu].lambda * w;
      if (db) {
        C.alpha[u] += h[ParamGroup::kAlpha].lambda * w;
        C.C[u] += h[ParamGroup::kC].lambda * w;
        for (auto s = b; s < e; ++s) {
          C.but[s] += h[ParamGroup::kBut].lambda * w;
          C.Ct[s] += h[ParamGroup::kCt].lambda * w;
        }
      }
    }
    add(C.P.row(u), h[ParamGroup::kP].lambda * w + rw);
    add(C.W.row(u), h[ParamGroup::kW].lambda * w + rw);
    add(C.Z.row(u), h[ParamGroup::kZ].lambda * w + rw);
    if (df) C.alphaP[u] += h[ParamGroup::kAlphaP].lambda * w + rw;
    if (dfv) {
      C.alphaW[u] += h[ParamGroup::kAlphaW].lambda * w + rw;
      C.alphaZ[u] += h[ParamGroup::kAlphaZ].lambda * w + rw;
    }
    for (auto s = b; s < e; ++s) {
      if (df) add(C.Pt.row(s), h[ParamGroup::kPt].lambda * w + rw);
      if (dfv) {
        add(C.Wt.row(s), h[ParamGroup::kWt].lambda * w + rw);
        add(C.Zt.row(s), h[ParamGroup::kZt].lambda * w + rw);
      }
    }
  }
  const auto nb = static_cast<std::size_t>(p.num_bins);
  for (ItemId j = 0; j < p.num_items; ++j) {
    const double w = ix.w_item[j];
    add(C.Q.row(j), h[ParamGroup::kQ].lambda);
    C.bi[j] += h[ParamGroup::kBi].lambda * w;
    if (cfg.implicit_feedback) add(C.y.row(j), h[ParamGroup::kImplicit].lambda * w);
    if (db)
      for (std::size_t b = 0; b < nb; ++b)
        C.bit(j, b) += h[ParamGroup::kBit].lambda * w * static_cast<double>(ix.bin_ratings[j * nb + b]);
  }
  if (cfg.conditional)
    for (std::size_t f = 0; f < d; ++f)
      for (std::size_t g = 0; g < d; ++g)
        if (f != g) C.Y(f, g) += 2.0 * h[ParamGroup::kCondY].lambda;
  if (cfg.social)
    for (UserId v = 0; v < p.num_users; ++v)
      add(C.omega.row(v), h[ParamGroup::kOmega].lambda * ix.w_trusted[v]);
}

// Trust-loss residual gradient, added into G.
void social_gradients(const ModelParams& p, const TrainingIndex& ix, const TrustNetwork& trust,
                      const HyperParams& h, const AspectConfig& cfg, ModelParams& G) {
  if (!cfg.social) return;
  const std::size_t d = p.num_factors;
  const bool df = cfg.dynamic_feature, dfv = cfg.dynamic_feature_value;
  std::vector<double> pbar(d), wbar(d), zbar(d), gp(d), gw(d), gz(d);
  const double lt = h.lambda_t;
  for (UserId u = 0; u < p.num_users; ++u) {
    const auto edges = trust.out_edges(u);
    if (edges.empty()) continue;
    const std::size_t n = num_days(p, u);

    if (n > 0 && lt != 0.0) {
      user_averages(p, ix, cfg, u, pbar.data(), wbar.data(), zbar.data());
      std::fill(gp.begin(), gp.end(), 0.0);
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gz.begin(), gz.end(), 0.0);
      for (auto k : edges) {
        const auto& edge = trust.edges()[k];
        const double* o = &p.omega(edge.trustee, 0);
        double t_hat = 0.0, s_hat = 0.0, g_hat = 0.0;
        for (std::size_t f = 0; f < d; ++f) {
          t_hat += pbar[f] * o[f];
          s_hat += (1.0 - wbar[f]) * o[f];
          g_hat += zbar[f] * o[f];
        }
        const double e1 = lt * h.eta_P * (edge.weight - t_hat);
        const double e2 = lt * h.eta_W * (edge.weight - s_hat);
        const double e3 = lt * h.eta_Z * (edge.weight - g_hat);
        double* go = &G.omega(edge.trustee, 0);
        for (std::size_t f = 0; f < d; ++f) {
          gp[f] -= e1 * o[f];
          gw[f] += e2 * o[f];
          gz[f] -= e3 * o[f];
          go[f] -= e1 * pbar[f] + e2 * (1.0 - wbar[f]) + e3 * zbar[f];
        }
      }
      const double inv_n = 1.0 / static_cast<double>(n);
      const double md = ix.mean_dev[u];
      auto [b, e] = p.slots.user_range(u);
      double sp = 0.0, sw = 0.0, sz = 0.0;
      for (std::size_t f = 0; f < d; ++f) {
        G.P(u, f) += gp[f];
        G.W(u, f) += gw[f];
        G.Z(u, f) += gz[f];
        sp += gp[f];
        sw += gw[f];
        sz += gz[f];
        for (auto s = b; s < e; ++s) {
          if (df) G.Pt(s, f) += gp[f] * inv_n;
          if (dfv) {
            G.Wt(s, f) += gw[f] * inv_n;
            G.Zt(s, f) += gz[f] * inv_n;
          }
        }
      }
      if (df) G.alphaP[u] += md * sp;
      if (dfv) {
        G.alphaW[u] += md * sw;
        G.alphaZ[u] += md * sz;
      }
    }
  }
}

long double squared_norm(std::span<const double> v) {
  long double s = 0;
  for (double x : v) s += static_cast<long double>(x) * x;
  return s;
}

struct LossParts {
  long double rating = 0;
  long double trust = 0;
};

LossParts loss_parts(const ModelParams& p, const RatingDataset& train, const TrustNetwork& trust,
                     const HyperParams& h, const AspectConfig& cfg, const TrainingIndex& ix) {
  using LD = long double;
  const std::size_t d = p.num_factors;
  const bool db = cfg.dynamic_bias, df = cfg.dynamic_feature, dfv = cfg.dynamic_feature_value;
  LossParts out;
  Scratch<LD> sc(d);
  LD item_base = 0, scale = 0;

  LD sse = 0;
  for (UserId u = 0; u < p.num_users; ++u) {
    const auto recs = train.user_records(u);
    if (recs.empty()) continue;
    if (cfg.implicit_feedback) implicit_sum(p, train, ix, u, sc.imp);
    if (cfg.social) social_sum(p, trust, ix, u, sc.soc);
    for (auto r : recs) {
      const auto& rc = ix.records[r];
      const LD e = static_cast<LD>(rc.rating) -
                   forward<LD>(p, cfg, rc, cfg.implicit_feedback, cfg.social, sc, item_base, scale);
      sse += e * e;
    }
  }
  LD reg = 0;
  reg += h[ParamGroup::kQ].lambda * squared_norm(p.Q.flat());
  if (cfg.implicit_feedback)
    for (ItemId i = 0; i < p.num_items; ++i)
      reg += h[ParamGroup::kImplicit].lambda * ix.w_item[i] * squared_norm(p.y.row(i));
  for (ItemId j = 0; j < p.num_items; ++j)
    reg += h[ParamGroup::kBi].lambda * ix.w_item[j] * static_cast<LD>(p.bi[j]) * p.bi[j];
  if (db)
    for (const auto& rc : ix.records) {
      const LD b = p.bit(rc.item, static_cast<std::size_t>(rc.bin));
      reg += h[ParamGroup::kBit].lambda * ix.w_item[rc.item] * b * b;
    }
  if (cfg.conditional) reg += h[ParamGroup::kCondY].lambda * squared_norm(p.Y.flat());

  // Per-user norms, weighted by |I_u|^-1/2 here and by |T_u|^-1/2 in E_T.
  LD trust_reg = 0;
  for (UserId u = 0; u < p.num_users; ++u) {
    const double w = ix.w_user[u];
    const double wt = cfg.social ? h.lambda_T * ix.w_trust[u] : 0.0;
    if (w == 0.0 && wt == 0.0) continue;
    auto [b, e] = p.slots.user_range(u);
    const LD np = squared_norm(p.P.row(u)), nw = squared_norm(p.W.row(u)),
             nz = squared_norm(p.Z.row(u));
    LD npt = 0, nwt = 0, nzt = 0, nbut = 0, nct = 0;
    for (auto s = b; s < e; ++s) {
      if (df) npt += squared_norm(p.Pt.row(s));
      if (dfv) {
        nwt += squared_norm(p.Wt.row(s));
        nzt += squared_norm(p.Zt.row(s));
      }
      if (db) {
        nbut += static_cast<LD>(p.but[s]) * p.but[s];
        nct += static_cast<LD>(p.Ct[s]) * p.Ct[s];
      }
    }
    const LD nap = df ? static_cast<LD>(p.alphaP[u]) * p.alphaP[u] : 0;
    const LD naw = dfv ? static_cast<LD>(p.alphaW[u]) * p.alphaW[u] : 0;
    const LD naz = dfv ? static_cast<LD>(p.alphaZ[u]) * p.alphaZ[u] : 0;

    LD ur = h[ParamGroup::kP].lambda * np + h[ParamGroup::kW].lambda * nw +
            h[ParamGroup::kZ].lambda * nz + h[ParamGroup::kBu].lambda * static_cast<LD>(p.bu[u]) * p.bu[u];
    if (df) ur += h[ParamGroup::kPt].lambda * npt + h[ParamGroup::kAlphaP].lambda * nap;
    if (dfv)
      ur += h[ParamGroup::kWt].lambda * nwt + h[ParamGroup::kAlphaW].lambda * naw +
            h[ParamGroup::kZt].lambda * nzt + h[ParamGroup::kAlphaZ].lambda * naz;
    if (db)
      ur += h[ParamGroup::kAlpha].lambda * static_cast<LD>(p.alpha[u]) * p.alpha[u] +
            h[ParamGroup::kC].lambda * static_cast<LD>(p.C[u]) * p.C[u] +
            h[ParamGroup::kBut].lambda * nbut + h[ParamGroup::kCt].lambda * nct;
    reg += w * ur;
    if (wt != 0.0) trust_reg += wt * (np + nw + nz + npt + nwt + nzt + nap + naw + naz);
  }
  out.rating = 0.5L * sse + 0.5L * reg;
  if (!cfg.social) return out;

  LD res = 0;
  std::vector<LD> pbar(d), wbar(d), zbar(d);
  for (UserId u = 0; u < p.num_users; ++u) {
    const auto edges = trust.out_edges(u);
    if (edges.empty() || num_days(p, u) == 0) continue;
    user_averages(p, ix, cfg, u, pbar.data(), wbar.data(), zbar.data());
    for (auto k : edges) {
      const auto& edge = trust.edges()[k];
      LD t_hat = 0, s_hat = 0, g_hat = 0;
      for (std::size_t f = 0; f < d; ++f) {
        const LD o = p.omega(edge.trustee, f);
        t_hat += pbar[f] * o;
        s_hat += (1 - wbar[f]) * o;
        g_hat += zbar[f] * o;
      }
      const LD e1 = edge.weight - t_hat, e2 = edge.weight - s_hat, e3 = edge.weight - g_hat;
      res += h.eta_P * e1 * e1 + h.eta_W * e2 * e2 + h.eta_Z * e3 * e3;
    }
  }
  LD omega_reg = 0;
  for (UserId v = 0; v < p.num_users; ++v)
    if (ix.w_trusted[v] != 0.0) omega_reg += ix.w_trusted[v] * squared_norm(p.omega.row(v));
  out.trust = 0.5L * h.lambda_t * res + 0.5L * trust_reg +
              0.5L * h[ParamGroup::kOmega].lambda * omega_reg;
  return out;
}

std::string first_nonfinite_group(const ModelParams& p, const AspectConfig& cfg) {
  for (auto g : all_groups()) {
    if (!group_active(g, cfg)) continue;
    for (double x : p.values(g))
      if (!std::isfinite(x)) return std::string(group_name(g));
  }
  return "loss";
}

}  // namespace

// ---------------------------------------------------------------------------

TrainingIndex build_training_index(const ModelParams& p, const RatingDataset& train,
                                   const TrustNetwork& trust, const TemporalContext& ctx) {
  check_shapes(p, train, trust, ctx);
  TrainingIndex ix;
  const std::size_t n = p.num_users, m = p.num_items;
  const auto nb = static_cast<std::size_t>(p.num_bins);
  ix.records.reserve(train.size());
  ix.slot_ratings.assign(p.slots.size(), 0);
  ix.bin_ratings.assign(m * nb, 0);
  for (const auto& r : train.records()) {
    Record rc;
    rc.user = r.user;
    rc.item = r.item;
    rc.rating = r.rating;
    const auto day = day_index(r.timestamp, ctx.day_length);
    if (auto s = p.slots.find(r.user, day)) {
      rc.slot = static_cast<std::int64_t>(*s);
      ++ix.slot_ratings[*s];
    }
    rc.bin = bin_index(day, ctx);
    rc.dev = deviation(static_cast<double>(day), ctx.mean_day(r.user), ctx.beta);
    ++ix.bin_ratings[r.item * nb + static_cast<std::size_t>(rc.bin)];
    ix.records.push_back(rc);
  }
  ix.w_user.resize(n);
  ix.w_trust.resize(n);
  ix.w_trusted.resize(n);
  ix.mean_dev.assign(n, 0.0);
  for (UserId u = 0; u < n; ++u) {
    ix.w_user[u] = inv_sqrt(train.user_count(u));
    ix.w_trust[u] = inv_sqrt(trust.out_degree(u));
    ix.w_trusted[u] = inv_sqrt(trust.in_degree(u));
    auto [b, e] = p.slots.user_range(u);
    if (e > b) {
      double s = 0.0;
      for (auto k = b; k < e; ++k)
        s += deviation(static_cast<double>(p.slots.day(k)), ctx.mean_day(u), ctx.beta);
      ix.mean_dev[u] = s / static_cast<double>(e - b);
    }
  }
  ix.w_item.resize(m);
  ix.implicit_touches.assign(m, 0.0);
  for (ItemId j = 0; j < m; ++j) ix.w_item[j] = inv_sqrt(train.item_count(j));
  for (UserId u = 0; u < n; ++u) {
    const auto c = static_cast<double>(train.user_count(u));
    for (auto i : train.user_items(u)) ix.implicit_touches[i] += c;
  }
  return ix;
}

LossBreakdown total_loss(const ModelParams& p, const RatingDataset& train,
                         const TrustNetwork& trust, const HyperParams& hyper,
                         const AspectConfig& cfg, const TemporalContext& ctx) {
  const auto ix = build_training_index(p, train, trust, ctx);
  const auto parts = loss_parts(p, train, trust, hyper, cfg, ix);
  return {static_cast<double>(parts.rating + parts.trust), static_cast<double>(parts.rating),
          static_cast<double>(parts.trust)};
}

TrainerState make_trainer_state(const ModelParams& p, const RatingDataset& train,
                                const TrustNetwork& trust, const HyperParams& hyper,
                                const TemporalContext& ctx) {
  TrainerState st;
  st.index = build_training_index(p, train, trust, ctx);
  st.acc = p.zeros_like();
  st.omega_user = Matrix(p.num_users, p.num_factors);
  st.shuffle_seed = hyper.seed;
  return st;
}

void intrinsic_pass(ModelParams& p, TrainerState& state, const RatingDataset& train,
                    const TrustNetwork& trust, const HyperParams& h, const AspectConfig& cfg) {
  const auto& ix = state.index;
  const std::size_t d = p.num_factors;
  const double lr = state.lr_scale;
  const bool db = cfg.dynamic_bias;
  ModelParams& G = state.acc;

  // ω is deferred, so each user's social sum is fixed for the whole pass.
  Matrix soc;
  if (cfg.social) {
    soc = Matrix(p.num_users, d);
    std::vector<double> tmp(d);
    for (UserId u = 0; u < p.num_users; ++u) {
      social_sum(p, trust, ix, u, tmp);
      std::copy(tmp.begin(), tmp.end(), soc.row(u).begin());
    }
  }

  std::vector<std::uint32_t> order(ix.records.size());
  std::iota(order.begin(), order.end(), 0u);
  std::mt19937_64 rng(state.shuffle_seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(state.iteration + 1));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Record> visit(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) visit[k] = ix.records[order[k]];

  if (state.reg_cfg != cfg) {
    state.reg = p.zeros_like();
    regularizer_coefficients(p, ix, h, cfg, state.reg);
    state.reg_cfg = cfg;
  }
  const ModelParams& R = state.reg;
  std::vector<double> y_share;
  if (cfg.implicit_feedback) {
    y_share.resize(p.num_items);
    for (ItemId i = 0; i < p.num_items; ++i)
      y_share[i] = ix.implicit_touches[i] > 0 ? R.y(i, 0) / ix.implicit_touches[i] : 0.0;
  }

  const double g_bu = h[ParamGroup::kBu].gamma * lr;
  const double g_al = h[ParamGroup::kAlpha].gamma * lr;
  const double g_but = h[ParamGroup::kBut].gamma * lr;
  const double g_bi = h[ParamGroup::kBi].gamma * lr;
  const double g_bit = h[ParamGroup::kBit].gamma * lr;
  const double g_c = h[ParamGroup::kC].gamma * lr;
  const double g_ct = h[ParamGroup::kCt].gamma * lr;
  const double g_q = h[ParamGroup::kQ].gamma * lr;
  const double g_y = h[ParamGroup::kImplicit].gamma * lr;
  const double g_Y = h[ParamGroup::kCondY].gamma * lr;
  const double n_ratings = static_cast<double>(std::max<std::size_t>(ix.records.size(), 1));

  Scratch<double> sc(d);
  double item_base = 0.0, scale = 0.0;
  // The visit order is random, so rows of later ratings are fetched ahead.
  constexpr std::size_t kAheadRows = 8;
  const std::size_t n_order = order.size();
  auto fetch = [](const void* a) { __builtin_prefetch(a); };
  auto fetch_rows = [&](const Record& q) {
    fetch(&p.P(q.user, 0));
    fetch(&p.W(q.user, 0));
    fetch(&p.Z(q.user, 0));
    fetch(&p.Q(q.item, 0));
    fetch(&G.P(q.user, 0));
    fetch(&G.W(q.user, 0));
    fetch(&G.Z(q.user, 0));
    if (cfg.implicit_feedback) fetch(train.user_items(q.user).data());
    if (cfg.social) {
      fetch(&soc(q.user, 0));
      fetch(&state.omega_user(q.user, 0));
    }
    if (q.slot < 0) return;
    const auto qs = static_cast<std::size_t>(q.slot);
    if (db) {
      fetch(&p.but[qs]);
      fetch(&p.Ct[qs]);
      fetch(&ix.slot_ratings[qs]);
    }
    if (cfg.dynamic_feature) {
      fetch(&p.Pt(qs, 0));
      fetch(&G.Pt(qs, 0));
    }
    if (cfg.dynamic_feature_value) {
      fetch(&p.Wt(qs, 0));
      fetch(&p.Zt(qs, 0));
      fetch(&G.Wt(qs, 0));
      fetch(&G.Zt(qs, 0));
    }
  };
  for (std::size_t pos = 0; pos < n_order; ++pos) {
    if (pos + kAheadRows < n_order) fetch_rows(visit[pos + kAheadRows]);
    const auto& rc = visit[pos];
    const UserId u = rc.user;
    const ItemId j = rc.item;
    if (cfg.implicit_feedback) implicit_sum(p, train, ix, u, sc.imp);
    if (cfg.social) std::copy(soc.row(u).begin(), soc.row(u).end(), sc.soc.begin());
    const double pred = forward<double>(p, cfg, rc, cfg.implicit_feedback, cfg.social, sc,
                                        item_base, scale);
    const double e = rc.rating - pred;
    const double coef = -e;

    accumulate_deferred(G, p, cfg, rc, coef, sc);
    if (cfg.social) {
      double* ou = &state.omega_user(u, 0);
      for (std::size_t f = 0; f < d; ++f) ou[f] += coef * sc.a[f];
    }

    // Immediate groups: data gradient step, with this rating's share of the
    // regularizer applied as an implicit shrink.
    const double cu = static_cast<double>(train.user_count(u));
    const double cj = static_cast<double>(train.item_count(j));
    const bool has_slot = rc.slot >= 0;
    const auto s = static_cast<std::size_t>(has_slot ? rc.slot : 0);

    if (db) {
      const auto bin = static_cast<std::size_t>(rc.bin);
      const double cnt = static_cast<double>(ix.bin_ratings[j * static_cast<std::size_t>(p.num_bins) + bin]);
      prox(p.alpha[u], g_al, coef * rc.dev, R.alpha[u] / cu);
      prox(p.bit(j, bin), g_bit, coef * scale, R.bit(j, bin) / cnt);
      prox(p.C[u], g_c, coef * item_base, R.C[u] / cu);
      if (has_slot) {
        const double sr = static_cast<double>(ix.slot_ratings[s]);
        prox(p.but[s], g_but, coef, h[ParamGroup::kBut].lambda * ix.w_user[u] / sr);
        prox(p.Ct[s], g_ct, coef * item_base, h[ParamGroup::kCt].lambda * ix.w_user[u] / sr);
      }
    }
    prox(p.bu[u], g_bu, coef, R.bu[u] / cu);
    prox(p.bi[j], g_bi, coef * scale, R.bi[j] / cj);

    double* Q = &p.Q(j, 0);
    const double q_share = h[ParamGroup::kQ].lambda / cj;
    for (std::size_t f = 0; f < d; ++f) prox(Q[f], g_q, coef * sc.g[f] * sc.w[f], q_share);

    if (cfg.implicit_feedback && g_y != 0.0) {
      const double wu = ix.w_user[u];
      for (auto i : train.user_items(u)) {
        double* y = &p.y(i, 0);
        const double share = y_share[i];
        for (std::size_t f = 0; f < d; ++f) prox(y[f], g_y, coef * wu * sc.a[f], share);
      }
    }
    if (cfg.conditional && g_Y != 0.0) {
      for (std::size_t f = 0; f < d; ++f)
        for (std::size_t k = f + 1; k < d; ++k) {
          prox(p.Y(f, k), g_Y, 2.0 * coef * sc.a[f] * sc.a[k], R.Y(f, k) / n_ratings);
          p.Y(k, f) = p.Y(f, k);
        }
    }
  }

  // Items nobody rated still carry the Q regularizer.
  for (ItemId j = 0; j < p.num_items; ++j)
    if (train.item_count(j) == 0)
      for (std::size_t f = 0; f < d; ++f) prox(p.Q(j, f), g_q, 0.0, R.Q(j, f));

  if (cfg.social) spread_omega(state.omega_user, trust, ix, G);
}

void social_pass(const ModelParams& p, TrainerState& state, const TrustNetwork& trust,
                 const HyperParams& hyper, const AspectConfig& cfg) {
  social_gradients(p, state.index, trust, hyper, cfg, state.acc);
}

void apply_updates(ModelParams& p, TrainerState& state, const HyperParams& hyper,
                   const AspectConfig& cfg) {
  for (auto g : all_groups()) {
    if (!group_deferred(g)) continue;
    auto acc = state.acc.values(g);
    if (group_active(g, cfg)) {
      auto v = p.values(g);
      const double step = hyper[g].gamma * state.lr_scale;
      auto c = state.reg.values(g);
      const bool have_reg = c.size() == v.size();
      for (std::size_t k = 0; k < v.size(); ++k) prox(v[k], step, acc[k], have_reg ? c[k] : 0.0);
    }
    std::fill(acc.begin(), acc.end(), 0.0);
  }
  for (auto& x : state.omega_user.flat()) x = 0.0;
  state.lr_scale *= hyper.lr_decay;
  ++state.iteration;
}

TrainResult train(const RatingDataset& train_set, const TrustNetwork& trust,
                  const HyperParams& hyper, const AspectConfig& cfg, const TemporalContext& ctx,
                  const TrainOptions& options) {
  if (hyper.max_iter < 1) throw UsageError("max_iter must be >= 1");
  return train_from(init_params(train_set, hyper, ctx.day_length), train_set, trust, hyper, cfg,
                    ctx, options);
}

TrainResult train_from(ModelParams init, const RatingDataset& train_set, const TrustNetwork& trust,
                       const HyperParams& hyper, const AspectConfig& cfg,
                       const TemporalContext& ctx, const TrainOptions& options) {
  hyper.validate();
  if (hyper.max_iter < 1) throw UsageError("max_iter must be >= 1");
  TrainResult out;
  out.params = std::move(init);
  ModelParams& p = out.params;
  TrainerState st = make_trainer_state(p, train_set, trust, hyper, ctx);
  ModelParams best;

  for (int it = 1; it <= hyper.max_iter; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    rec.lr_scale = st.lr_scale;
    const auto t0 = std::chrono::steady_clock::now();
    intrinsic_pass(p, st, train_set, trust, hyper, cfg);
    social_pass(p, st, trust, hyper, cfg);
    apply_updates(p, st, hyper, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    rec.seconds = std::chrono::duration<double>(t1 - t0).count();

    const auto parts = loss_parts(p, train_set, trust, hyper, cfg, st.index);
    rec.loss_rating = static_cast<double>(parts.rating);
    rec.loss_trust = static_cast<double>(parts.trust);
    rec.loss = static_cast<double>(parts.rating + parts.trust);
    if (!std::isfinite(rec.loss)) {
      auto group = first_nonfinite_group(p, cfg);
      throw DivergenceError("training diverged at iteration " + std::to_string(it) +
                                ": non-finite values in group " + group,
                            group);
    }
    st.history.push_back(rec);
    if (options.snapshot_best && (!out.report.best_iteration || rec.loss < out.report.best_loss)) {
      out.report.best_iteration = it;
      out.report.best_loss = rec.loss;
      best = p;
    }
    if (options.on_iteration) options.on_iteration(rec, p);
  }
  out.report.history = std::move(st.history);
  if (options.snapshot_best) p = std::move(best);
  return out;
}

ModelParams analytic_gradient(const ModelParams& p, const RatingDataset& train,
                              const TrustNetwork& trust, const HyperParams& h,
                              const AspectConfig& cfg, const TemporalContext& ctx) {
  const auto ix = build_training_index(p, train, trust, ctx);
  const std::size_t d = p.num_factors;
  ModelParams G = p.zeros_like();
  Matrix omega_user(p.num_users, d);
  Scratch<double> sc(d);
  double item_base = 0.0, scale = 0.0;

  for (UserId u = 0; u < p.num_users; ++u) {
    const auto recs = train.user_records(u);
    if (recs.empty()) continue;
    if (cfg.implicit_feedback) implicit_sum(p, train, ix, u, sc.imp);
    if (cfg.social) social_sum(p, trust, ix, u, sc.soc);
    for (auto r : recs) {
      const auto& rc = ix.records[r];
      const ItemId j = rc.item;
      const double coef =
          forward<double>(p, cfg, rc, cfg.implicit_feedback, cfg.social, sc, item_base, scale) -
          rc.rating;
      accumulate_deferred(G, p, cfg, rc, coef, sc);
      const bool has_slot = rc.slot >= 0;
      const auto s = static_cast<std::size_t>(has_slot ? rc.slot : 0);
      G.bu[u] += coef;
      G.bi[j] += coef * scale;
      if (cfg.dynamic_bias) {
        G.alpha[u] += coef * rc.dev;
        G.bit(j, static_cast<std::size_t>(rc.bin)) += coef * scale;
        G.C[u] += coef * item_base;
        if (has_slot) {
          G.but[s] += coef;
          G.Ct[s] += coef * item_base;
        }
      }
      for (std::size_t f = 0; f < d; ++f) G.Q(j, f) += coef * sc.g[f] * sc.w[f];
      if (cfg.implicit_feedback) {
        const double wu = ix.w_user[u];
        for (auto i : train.user_items(u))
          for (std::size_t f = 0; f < d; ++f) G.y(i, f) += coef * wu * sc.a[f];
      }
      if (cfg.social)
        for (std::size_t f = 0; f < d; ++f) omega_user(u, f) += coef * sc.a[f];
      if (cfg.conditional)
        for (std::size_t f = 0; f < d; ++f)
          for (std::size_t k = f + 1; k < d; ++k) {
            G.Y(f, k) += 2.0 * coef * sc.a[f] * sc.a[k];
            G.Y(k, f) = G.Y(f, k);
          }
    }
  }
  if (cfg.social) spread_omega(omega_user, trust, ix, G);
  social_gradients(p, ix, trust, h, cfg, G);
  ModelParams C = p.zeros_like();
  regularizer_coefficients(p, ix, h, cfg, C);
  for (auto g : all_groups()) {
    auto gv = G.values(g);
    if (!group_active(g, cfg)) {
      std::fill(gv.begin(), gv.end(), 0.0);
      continue;
    }
    auto c = C.values(g);
    auto v = p.values(g);
    for (std::size_t k = 0; k < gv.size(); ++k) gv[k] += c[k] * v[k];
  }
  return G;
}

void full_batch_step(ModelParams& p, const RatingDataset& train, const TrustNetwork& trust,
                     const HyperParams& hyper, const AspectConfig& cfg,
                     const TemporalContext& ctx, double step_size) {
  if (!(step_size > 0.0)) throw UsageError("step size must be > 0");
  const auto G = analytic_gradient(p, train, trust, hyper, cfg, ctx);
  for (auto g : all_groups()) {
    if (!group_active(g, cfg)) continue;
    auto v = p.values(g);
    auto dv = G.values(g);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] -= step_size * dv[k];
  }
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
  return std::fabs(analytic - numeric) / denom;
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& g : groups) m = std::max(m, g.max_rel_error);
  return m;
}

bool GradCheckReport::passed() const {
  return std::all_of(groups.begin(), groups.end(), [](const GroupCheck& g) { return g.passed; });
}

GradCheckReport gradient_check(const ModelParams& p, const RatingDataset& train,
                               const TrustNetwork& trust, const HyperParams& hyper,
                               const AspectConfig& cfg, const TemporalContext& ctx,
                               double epsilon, double tolerance) {
  if (!(epsilon > 0.0)) throw UsageError("epsilon must be > 0");
  const auto ix = build_training_index(p, train, trust, ctx);
  const auto G = analytic_gradient(p, train, trust, hyper, cfg, ctx);
  ModelParams q = p;
  auto loss = [&] {
    const auto parts = loss_parts(q, train, trust, hyper, cfg, ix);
    return parts.rating + parts.trust;
  };

  GradCheckReport report;
  report.tolerance = tolerance;
  const std::size_t d = p.num_factors;
  for (auto g : all_groups()) {
    if (!group_active(g, cfg)) continue;
    GroupCheck gc;
    gc.group = g;
    auto v = q.values(g);
    auto a = G.values(g);
    auto check = [&](std::size_t k, std::optional<std::size_t> mirror) {
      const double orig = v[k];
      auto set = [&](double x) {
        v[k] = x;
        if (mirror) v[*mirror] = x;
      };
      set(orig + epsilon);
      const long double lp = loss();
      set(orig - epsilon);
      const long double lm = loss();
      set(orig);
      const double numeric = static_cast<double>((lp - lm) / (2.0L * epsilon));
      gc.max_rel_error = std::max(gc.max_rel_error, relative_error(a[k], numeric));
      gc.max_abs_error = std::max(gc.max_abs_error, std::fabs(a[k] - numeric));
      ++gc.entries;
    };
    if (g == ParamGroup::kCondY) {
      for (std::size_t f = 0; f < d; ++f)
        for (std::size_t k = f + 1; k < d; ++k) check(f * d + k, k * d + f);
    } else {
      for (std::size_t k = 0; k < v.size(); ++k) check(k, std::nullopt);
    }
    gc.passed = gc.max_rel_error < tolerance;
    report.groups.push_back(gc);
  }
  return report;
}

}  // namespace aspectmf
