#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"

#include "aspectmf/check_instance.hpp"
#include "aspectmf/config.hpp"
#include "aspectmf/error.hpp"
#include "aspectmf/synthetic.hpp"
#include "aspectmf/trainer.hpp"

using namespace aspectmf;

namespace {

// User 0 rates item 0 on day 100 and trusts user 1, who rates nothing.
struct OneRating {
  RatingDataset train;
  TrustNetwork trust;
  TemporalContext ctx;
  HyperParams h;
  ModelParams p;
};

OneRating one_rating(double rating = 4.0) {
  OneRating o;
  o.train = RatingDataset({{0, 0, rating, 100 * kSecondsPerDay}}, 2, 1, {1, 5});
  o.trust = TrustNetwork({{0, 1, 1.0}}, 2);
  o.ctx = build_temporal_context(o.train, 0.4, 1);
  o.h.num_factors = 1;
  o.h.num_bins = 1;
  o.h.max_iter = 1;
  o.p = init_params(o.train, o.h).zeros_like();
  return o;
}

bool all_zero(const ModelParams& m) {
  for (auto g : all_groups())
    for (double v : m.values(g))
      if (v != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("total_loss examples") {
  auto o = one_rating(4.0);
  const auto cfg = AspectConfig::from_label("bffv");

  o.p.mu = 4.0;
  CHECK(total_loss(o.p, o.train, TrustNetwork({}, 2), o.h, cfg, o.ctx).total == 0.0);

  o.p.mu = 3.0;
  auto l = total_loss(o.p, o.train, TrustNetwork({}, 2), o.h, cfg, o.ctx);
  CHECK(l.total == doctest::Approx(0.5));
  CHECK(l.rating == doctest::Approx(0.5));
  CHECK(l.trust == 0.0);

  o.h.lambda_t = 2.0;
  auto off = cfg;
  off.social = false;
  CHECK(total_loss(o.p, o.train, o.trust, o.h, off, o.ctx).trust == 0.0);
  // T_01 = 1 against three zero estimates
  CHECK(total_loss(o.p, o.train, o.trust, o.h, cfg, o.ctx).trust == doctest::Approx(3.0));
}

TEST_CASE("intrinsic_pass") {
  const auto cfg = AspectConfig::from_label("bffv");
  SUBCASE("zero learning rates leave parameters but fill accumulators") {
    auto ci = make_check_instance(42);
    for (auto g : all_groups()) ci.hyper[g].gamma = 0.0;
    auto p = ci.params;
    auto st = make_trainer_state(p, ci.train, ci.trust, ci.hyper, ci.ctx);
    intrinsic_pass(p, st, ci.train, ci.trust, ci.hyper, ci.cfg);
    CHECK(p == ci.params);
    CHECK_FALSE(all_zero(st.acc));
  }
  SUBCASE("bu step equals gamma times the residual") {
    auto o = one_rating(4.0);
    o.p.mu = 3.0;
    o.p.bu[0] = 0.25;
    o.h[ParamGroup::kBu].gamma = 0.1;
    auto st = make_trainer_state(o.p, o.train, o.trust, o.h, o.ctx);
    intrinsic_pass(o.p, st, o.train, o.trust, o.h, cfg);
    CHECK(o.p.bu[0] == doctest::Approx(0.25 + 0.1 * 0.75).epsilon(1e-15));
  }
  SUBCASE("regularizer share is applied implicitly") {
    auto o = one_rating(4.0);
    o.p.mu = 3.0;
    o.p.bu[0] = 0.25;
    o.h[ParamGroup::kBu].gamma = 0.1;
    o.h[ParamGroup::kBu].lambda = 0.5;
    auto st = make_trainer_state(o.p, o.train, o.trust, o.h, o.ctx);
    intrinsic_pass(o.p, st, o.train, o.trust, o.h, cfg);
    CHECK(o.p.bu[0] == doctest::Approx((0.25 + 0.1 * 0.75) / (1 + 0.1 * 0.5)).epsilon(1e-15));
  }
  SUBCASE("zero residual and no regularizers give no gradient") {
    auto o = one_rating(4.0);
    o.p.mu = 4.0;
    o.p.P(0, 0) = 0.7;
    o.p.omega(1, 0) = 0.3;
    o.p.W(0, 0) = 1.0;
    o.p.C[0] = 1.0;
    o.h.set_all_gamma(0.1);
    const auto before = o.p;
    auto st = make_trainer_state(o.p, o.train, o.trust, o.h, o.ctx);
    intrinsic_pass(o.p, st, o.train, o.trust, o.h, cfg);
    CHECK(all_zero(st.acc));
    CHECK(o.p == before);
  }
}

TEST_CASE("social_pass") {
  auto cfg = AspectConfig::from_label("static");
  SUBCASE("no edges") {
    auto o = one_rating();
    o.h.lambda_t = 1.0;
    o.p.P(0, 0) = 0.5;
    o.p.omega(1, 0) = 1.0;
    TrustNetwork none({}, 2);
    auto st = make_trainer_state(o.p, o.train, none, o.h, o.ctx);
    social_pass(o.p, st, none, o.h, cfg);
    CHECK(all_zero(st.acc));
  }
  SUBCASE("omega receives the trust residual gradient") {
    auto o = one_rating();
    o.h.lambda_t = 0.5;
    o.p.P(0, 0) = 0.5;
    o.p.W(0, 0) = 0.8;
    o.p.Z(0, 0) = 0.2;
    o.p.omega(1, 0) = 1.5;
    auto st = make_trainer_state(o.p, o.train, o.trust, o.h, o.ctx);
    social_pass(o.p, st, o.trust, o.h, cfg);
    const double e1 = 1 - 0.5 * 1.5, e2 = 1 - 0.2 * 1.5, e3 = 1 - 0.2 * 1.5;
    const double expect = 0.5 * (e1 * 0.5 + e2 * (1 - 0.8) + e3 * 0.2);
    // accumulators hold dE/dω, the negated descent direction
    CHECK(st.acc.omega(1, 0) == doctest::Approx(-expect).epsilon(1e-14));
    CHECK(st.acc.omega(1, 0) == doctest::Approx(-0.2025).epsilon(1e-14));
  }
  SUBCASE("zero weights give no accumulation") {
    auto o = one_rating();
    o.h.lambda_t = 0.5;
    o.h.eta_P = o.h.eta_W = o.h.eta_Z = 0.0;
    o.p.P(0, 0) = 0.5;
    o.p.omega(1, 0) = 1.5;
    auto st = make_trainer_state(o.p, o.train, o.trust, o.h, o.ctx);
    social_pass(o.p, st, o.trust, o.h, cfg);
    CHECK(all_zero(st.acc));
  }
}

TEST_CASE("apply_updates") {
  auto o = one_rating();
  const auto cfg = AspectConfig::from_label("bffv");
  o.h[ParamGroup::kP].gamma = 0.2;
  o.p.P(0, 0) = 1.0;
  auto st = make_trainer_state(o.p, o.train, o.trust, o.h, o.ctx);

  auto before = o.p;
  apply_updates(o.p, st, o.h, cfg);
  CHECK(o.p == before);

  st.acc.P(0, 0) = 0.5;
  apply_updates(o.p, st, o.h, cfg);
  CHECK(o.p.P(0, 0) == doctest::Approx(1.0 - 0.2 * 0.5).epsilon(1e-15));
  CHECK(st.acc.P(0, 0) == 0.0);

  SUBCASE("learning-rate decay halves the second step") {
    o.h.lr_decay = 0.5;
    auto s2 = make_trainer_state(o.p, o.train, o.trust, o.h, o.ctx);
    const double x0 = o.p.P(0, 0);
    s2.acc.P(0, 0) = 0.5;
    apply_updates(o.p, s2, o.h, cfg);
    const double x1 = o.p.P(0, 0);
    s2.acc.P(0, 0) = 0.5;
    apply_updates(o.p, s2, o.h, cfg);
    const double x2 = o.p.P(0, 0);
    CHECK((x1 - x2) == doctest::Approx(0.5 * (x0 - x1)).epsilon(1e-12));
    CHECK(s2.lr_scale == 0.25);
  }
}

TEST_CASE("deferred updates match an exact gradient step") {
  auto o = one_rating(4.0);
  const auto cfg = AspectConfig::from_label("bffv");
  o.h.lambda_t = 0.7;
  o.p.mu = 3.0;
  o.p.bu[0] = 0.1;
  o.p.bi[0] = -0.2;
  o.p.C[0] = 1.0;
  o.p.P(0, 0) = 0.6;
  o.p.W(0, 0) = 0.9;
  o.p.Z(0, 0) = 0.1;
  o.p.Q(0, 0) = 0.8;
  o.p.omega(1, 0) = 0.4;
  o.p.y(0, 0) = 0.3;
  o.p.alphaP[0] = 0.05;
  o.p.Pt(0, 0) = 0.02;
  double gamma = 0.01;
  for (auto g : all_groups()) o.h[g].gamma = (gamma += 0.003);
  const auto p0 = o.p;
  const auto grad = analytic_gradient(p0, o.train, o.trust, o.h, cfg, o.ctx);

  auto st = make_trainer_state(o.p, o.train, o.trust, o.h, o.ctx);
  intrinsic_pass(o.p, st, o.train, o.trust, o.h, cfg);
  social_pass(o.p, st, o.trust, o.h, cfg);
  apply_updates(o.p, st, o.h, cfg);

  for (auto g : all_groups()) {
    if (!group_deferred(g)) continue;
    auto a = o.p.values(g);
    auto b = p0.values(g), gr = grad.values(g);
    for (std::size_t k = 0; k < a.size(); ++k) {
      INFO(group_name(g), " ", k);
      CHECK(a[k] == doctest::Approx(b[k] - o.h[g].gamma * gr[k]).epsilon(1e-13));
    }
  }
  const double e = 4.0 - predict(p0, o.train, o.trust, 0, 0, 100, o.ctx, cfg);
  CHECK(o.p.bu[0] == doctest::Approx(p0.bu[0] + o.h[ParamGroup::kBu].gamma * e).epsilon(1e-14));
}

TEST_CASE("train") {
  SyntheticConfig sc;
  sc.num_users = 30;
  sc.num_items = 40;
  sc.num_factors = 1;
  sc.rating_density = 0.3;
  sc.trust_density = 0.05;
  auto data = generate_synthetic(sc);
  auto h = shipped_hyperparams();
  h.num_factors = 1;
  h.max_iter = 20;
  auto ctx = build_temporal_context(data.ratings, h.beta, h.num_bins);
  const auto st = AspectConfig::from_label("static");

  SUBCASE("iteration count") {
    auto h0 = h;
    h0.max_iter = 0;
    CHECK_THROWS_AS(train(data.ratings, data.trust, h0, st, ctx), UsageError);
    h0.max_iter = 1;
    CHECK(train(data.ratings, data.trust, h0, st, ctx).report.history.size() == 1);
  }
  SUBCASE("zero learning rates return the initialization") {
    auto h0 = h;
    h0.set_all_gamma(0.0);
    h0.max_iter = 3;
    auto res = train(data.ratings, data.trust, h0, AspectConfig::from_label("bffv"), ctx);
    CHECK(res.params == init_params(data.ratings, h0));
  }
  SUBCASE("loss falls on planted static data") {
    auto res = train(data.ratings, data.trust, h, st, ctx);
    REQUIRE(res.report.history.size() == 20);
    CHECK(res.report.history.back().loss < res.report.history.front().loss);
  }
  SUBCASE("determinism") {
    auto a = train(data.ratings, data.trust, h, AspectConfig::from_label("bffv"), ctx);
    auto b = train(data.ratings, data.trust, h, AspectConfig::from_label("bffv"), ctx);
    REQUIRE(a.report.history.size() == b.report.history.size());
    for (std::size_t i = 0; i < a.report.history.size(); ++i)
      CHECK(a.report.history[i].loss == b.report.history[i].loss);
    CHECK(a.params == b.params);
  }
  SUBCASE("disabled aspects keep their groups untouched") {
    for (auto lab : combination_labels()) {
      auto cfg = AspectConfig::from_label(lab);
      cfg.conditional = false;
      auto init = init_params(data.ratings, h);
      auto res = train(data.ratings, data.trust, h, cfg, ctx);
      for (auto g : all_groups()) {
        if (group_active(g, cfg)) continue;
        INFO(lab, " ", group_name(g));
        auto a = res.params.values(g), b = init.values(g);
        CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
      }
    }
  }
  SUBCASE("snapshot keeps the best iteration") {
    TrainOptions opt;
    opt.snapshot_best = true;
    int calls = 0;
    opt.on_iteration = [&](const IterationRecord&, const ModelParams&) { ++calls; };
    auto res = train(data.ratings, data.trust, h, st, ctx, opt);
    CHECK(calls == 20);
    REQUIRE(res.report.best_iteration);
    double lowest = res.report.history.front().loss;
    for (const auto& r : res.report.history) lowest = std::min(lowest, r.loss);
    CHECK(res.report.best_loss == lowest);
  }
  SUBCASE("divergence names a group") {
    auto h0 = h;
    h0.set_all_gamma(50.0);
    CHECK_THROWS_AS(train(data.ratings, data.trust, h0, AspectConfig::from_label("bffv"), ctx),
                    DivergenceError);
  }
}

TEST_CASE("full_batch_step") {
  auto ci = make_check_instance(42);
  SUBCASE("descent on the standard instance") {
    auto p = ci.params;
    double last = total_loss(p, ci.train, ci.trust, ci.hyper, ci.cfg, ci.ctx).total;
    for (int k = 0; k < 10; ++k) {
      full_batch_step(p, ci.train, ci.trust, ci.hyper, ci.cfg, ci.ctx, ci.step_size);
      const double now = total_loss(p, ci.train, ci.trust, ci.hyper, ci.cfg, ci.ctx).total;
      CHECK(now < last);
      last = now;
    }
  }
  SUBCASE("vanishing step") {
    const double l0 = total_loss(ci.params, ci.train, ci.trust, ci.hyper, ci.cfg, ci.ctx).total;
    double prev = 1e300, first = 0.0;
    for (double step : {1e-4, 1e-6, 1e-8}) {
      auto p = ci.params;
      full_batch_step(p, ci.train, ci.trust, ci.hyper, ci.cfg, ci.ctx, step);
      const double change = std::abs(total_loss(p, ci.train, ci.trust, ci.hyper, ci.cfg, ci.ctx).total - l0);
      CHECK(change < prev);
      if (first == 0.0) first = change;
      prev = change;
    }
    CHECK(prev < 1e-3 * first);
  }
  SUBCASE("stationary point") {
    auto o = one_rating(3.0);
    o.p.mu = 3.0;
    o.h.lambda_t = 0.0;
    const auto before = o.p;
    full_batch_step(o.p, o.train, o.trust, o.h, AspectConfig::from_label("bffv"), o.ctx, 0.1);
    CHECK(o.p == before);
  }
}

TEST_CASE("gradient_check") {
  SUBCASE("standard instance") {
    auto ci = make_check_instance(42);
    auto rep = gradient_check(ci.params, ci.train, ci.trust, ci.hyper, ci.cfg, ci.ctx, 1e-5);
    CHECK(rep.groups.size() == kNumParamGroups);
    CHECK(rep.passed());
    CHECK(rep.max_rel_error() < 1e-4);
  }
  SUBCASE("bias only without regularizers") {
    auto o = one_rating(4.0);
    o.p.mu = 3.0;
    o.p.bu[0] = 0.3;
    auto cfg = AspectConfig::from_label("static");
    cfg.social = cfg.conditional = cfg.implicit_feedback = false;
    auto rep = gradient_check(o.p, o.train, o.trust, o.h, cfg, o.ctx, 1e-5);
    for (const auto& g : rep.groups)
      if (g.group == ParamGroup::kBu) CHECK(g.max_rel_error < 1e-6);
  }
  SUBCASE("zero data and parameters") {
    auto o = one_rating(0.0);
    o.train = RatingDataset({{0, 0, 0.0, 100 * kSecondsPerDay}}, 2, 1, {0, 5});
    o.p.mu = 0.0;
    TrustNetwork none({}, 2);
    auto rep = gradient_check(o.p, o.train, none, o.h, AspectConfig::from_label("bffv"), o.ctx);
    CHECK(rep.max_rel_error() == 0.0);
    for (const auto& g : rep.groups) CHECK(g.max_abs_error == 0.0);
  }
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 1e-9) == doctest::Approx(0.1));
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
}
