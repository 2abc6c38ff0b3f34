#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aspectmf/check_instance.hpp"
#include "aspectmf/config.hpp"
#include "aspectmf/data.hpp"
#include "aspectmf/error.hpp"
#include "aspectmf/eval.hpp"
#include "aspectmf/serialize.hpp"
#include "aspectmf/synthetic.hpp"
#include "aspectmf/trainer.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aspectmf;

namespace {

struct Common {
  std::string out_dir;
  bool json = false;
};

struct DataFlags {
  std::string ratings;
  std::string trust;
  std::string delimiter;
  std::string scale = "1,5";
};

struct HyperFlags {
  std::string config;
  std::optional<int> max_iter;
  std::optional<double> gamma_all;
  std::vector<std::string> settings;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--out-dir", c.out_dir, "Output directory (default $ASPECTMF_OUT or ./out)");
  app->add_flag("--json", c.json, "Write structured JSON instead of delimited tables");
}

void add_data(CLI::App* app, DataFlags& d, bool require_ratings) {
  auto* r = app->add_option("--ratings", d.ratings, "Ratings file: user item rating timestamp");
  if (require_ratings) r->required();
  app->add_option("--trust", d.trust, "Trust file: truster trustee [weight]");
  app->add_option("--delimiter", d.delimiter, "Single-character field separator (default whitespace)");
  app->add_option("--scale", d.scale, "Rating scale as min,max")->capture_default_str();
}

void add_hyper(CLI::App* app, HyperFlags& h) {
  app->add_option("--config", h.config, "Hyperparameter file (default: shipped config)");
  app->add_option("--max-iter", h.max_iter, "Override max_iter");
  app->add_option("--gamma-all", h.gamma_all, "Set every learning rate");
  app->add_option("--set", h.settings, "Extra config setting key=value (repeatable)");
}

fs::path out_dir(const Common& c) {
  if (!c.out_dir.empty()) return c.out_dir;
  if (const char* env = std::getenv("ASPECTMF_OUT"); env && *env) return env;
  return "out";
}

RatingScale parse_scale(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw UsageError("--scale expects min,max");
  try {
    RatingScale sc{std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
    if (!(sc.min < sc.max)) throw UsageError("--scale needs min < max");
    return sc;
  } catch (const std::logic_error&) {
    throw UsageError("--scale expects min,max");
  }
}

ParseFormat parse_format(const DataFlags& d) {
  ParseFormat f;
  if (!d.delimiter.empty()) {
    if (d.delimiter.size() != 1) throw UsageError("--delimiter must be one character");
    f.delimiter = d.delimiter[0];
  }
  return f;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::istringstream ts(tok);
    T v{};
    if (!(ts >> v) || !ts.eof()) throw UsageError(std::string("bad value in ") + what + ": " + tok);
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(std::string(what) + " is empty");
  return out;
}

HyperParams resolve_hyper(const HyperFlags& f) {
  HyperParams h = f.config.empty() ? shipped_hyperparams() : load_hyperparams(f.config);
  if (f.gamma_all) h.set_all_gamma(*f.gamma_all);
  for (const auto& kv : f.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    apply_setting(h, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.max_iter) h.max_iter = *f.max_iter;
  h.validate();
  return h;
}

struct Loaded {
  RatingDataset ratings;
  TrustNetwork trust;
  bool has_trust = false;
};

Loaded load(const DataFlags& d, cli::Manifest& m) {
  const auto fmt = parse_format(d);
  const auto scale = parse_scale(d.scale);
  std::optional<fs::path> trust_path;
  if (!d.trust.empty()) {
    if (fs::exists(d.trust)) {
      trust_path = d.trust;
    } else {
      const std::string w = "trust file " + d.trust + " not found";
      std::cerr << "warning: " << w << '\n';
      m.add_warning(w);
    }
  }
  auto data = load_dataset(d.ratings, trust_path, fmt, scale);
  m.add_input("ratings", d.ratings);
  if (trust_path) m.add_input("trust", *trust_path);
  return {std::move(data.ratings), std::move(data.trust), trust_path.has_value()};
}

AspectConfig resolve_cfg(const std::string& aspects, bool has_trust, bool no_conditional,
                         bool no_implicit, cli::Manifest& m) {
  AspectConfig base;
  base.conditional = !no_conditional;
  base.implicit_feedback = !no_implicit;
  base.social = has_trust;
  if (!has_trust) {
    const std::string w = "no trust network; social terms disabled";
    std::cerr << "warning: " << w << '\n';
    m.add_warning(w);
  }
  return AspectConfig::from_label(aspects, base);
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::string opt_str(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

void write_text(const fs::path& path, const std::string& body, cli::Manifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << body;
  if (!out) throw DataError("write failed: " + path.string());
  m.add_output(path);
}

void write_json(const fs::path& path, const json& doc, cli::Manifest& m) {
  write_text(path, doc.dump(2) + "\n", m);
}

json report_json(const EvalReport& r) {
  json j;
  j["all"] = {{"mae", r.all.mae}, {"rmse", r.all.rmse}, {"count", r.all.count}};
  if (r.cold)
    j["cold"] = {{"mae", r.cold->mae}, {"rmse", r.cold->rmse}, {"count", r.cold->count}};
  else
    j["cold"] = nullptr;
  return j;
}

// Re-keys a separately parsed test set onto the training ids. Unseen raw ids
// get fresh ids past the training range.
RatingDataset align_to(const RatingDataset& train, const RatingDataset& test) {
  std::map<std::string, UserId> new_users;
  std::map<std::string, ItemId> new_items;
  std::vector<RatingRecord> recs;
  std::size_t n = train.num_users(), mcount = train.num_items();
  for (auto r : test.records()) {
    const auto& ru = test.user_ids().raw(r.user);
    const auto& ri = test.item_ids().raw(r.item);
    if (auto u = train.user_ids().find(ru)) {
      r.user = *u;
    } else {
      auto [it, fresh] = new_users.emplace(ru, static_cast<UserId>(n));
      if (fresh) ++n;
      r.user = it->second;
    }
    if (auto j = train.item_ids().find(ri)) {
      r.item = *j;
    } else {
      auto [it, fresh] = new_items.emplace(ri, static_cast<ItemId>(mcount));
      if (fresh) ++mcount;
      r.item = it->second;
    }
    recs.push_back(r);
  }
  return RatingDataset(std::move(recs), n, mcount, test.scale());
}

// ---- synth ----

struct SynthFlags {
  Common common;
  std::size_t users = 200, items = 300, factors = 3, ratings_per_user = 0;
  std::int64_t days = 365;
  std::string drift = "none";
  double noise = 0.3, trust_density = 0.02, rating_density = 0.3;
  std::string scale = "1,5";
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthFlags& f, cli::Manifest& m) {
  SyntheticConfig c;
  c.num_users = f.users;
  c.num_items = f.items;
  c.num_factors = f.factors;
  c.time_span_days = f.days;
  c.ratings_per_user = f.ratings_per_user;
  c.rating_density = f.rating_density;
  c.trust_density = f.trust_density;
  c.noise_std = f.noise;
  c.scale = parse_scale(f.scale);
  c.seed = f.seed;
  if (f.drift != "none") {
    for (const auto& d : parse_list<std::string>(f.drift, "--drift")) {
      if (d == "b") c.drift.bias = true;
      else if (d == "f") c.drift.feature = true;
      else if (d == "fv") c.drift.feature_value = true;
      else throw UsageError("--drift takes none or a list of b,f,fv");
    }
  }
  c.validate();
  const auto data = generate_synthetic(c);
  const auto dir = out_dir(f.common);
  fs::create_directories(dir);
  write_ratings(dir / "ratings.txt", data.ratings);
  m.add_output(dir / "ratings.txt");
  write_trust(dir / "trust.txt", data.trust, data.ratings.user_ids());
  m.add_output(dir / "trust.txt");
  save_model(dir / "truth.model", data.truth);
  m.add_output(dir / "truth.model");
  m.add_seed(f.seed);
  m.set_option("users", f.users);
  m.set_option("items", f.items);
  m.set_option("factors", f.factors);
  m.set_option("days", f.days);
  m.set_option("drift", f.drift);
  m.set_option("noise", f.noise);
  m.set_option("trust_density", f.trust_density);
  m.set_option("rating_density", f.rating_density);
  m.set_option("ratings_per_user", f.ratings_per_user);
  m.set_option("scale", f.scale);
  std::cout << "wrote " << data.ratings.size() << " ratings and " << data.trust.size()
            << " edges to " << dir.string() << '\n';
  return 0;
}

// ---- train ----

struct TrainFlags {
  Common common;
  DataFlags data;
  HyperFlags hyper;
  std::string aspects = "bffv";
  std::optional<std::uint64_t> seed;
  std::optional<double> train_fraction;
  std::optional<std::uint64_t> split_seed;
  bool no_conditional = false, no_implicit = false;
};

int cmd_train(const TrainFlags& f, cli::Manifest& m) {
  auto h = resolve_hyper(f.hyper);
  if (f.seed) h.seed = *f.seed;
  if (f.split_seed) h.split_seed = *f.split_seed;
  auto in = load(f.data, m);
  const auto cfg = resolve_cfg(f.aspects, in.has_trust, f.no_conditional, f.no_implicit, m);
  RatingDataset train_set = in.ratings;
  if (f.train_fraction) train_set = split_random(in.ratings, *f.train_fraction, h.split_seed).train;
  const auto ctx = build_temporal_context(train_set, h.beta, h.num_bins);
  m.set_config(hyperparam_entries(h));
  m.set_option("aspects", cfg.label());
  m.set_option("social", cfg.social);
  m.set_option("conditional", cfg.conditional);
  m.set_option("implicit_feedback", cfg.implicit_feedback);
  m.set_option("train_fraction", f.train_fraction ? json(*f.train_fraction) : json(nullptr));
  m.add_seed(h.seed);
  if (f.train_fraction) m.add_seed(h.split_seed);

  const auto dir = out_dir(f.common);
  fs::create_directories(dir);
  auto result = train(train_set, in.trust, h, cfg, ctx);
  save_model(dir / "model.txt", ModelBundle{result.params, ctx, cfg});
  m.add_output(dir / "model.txt");

  if (f.common.json) {
    json rows = json::array();
    for (const auto& r : result.report.history)
      rows.push_back({{"iteration", r.iteration}, {"loss", r.loss}, {"loss_rating", r.loss_rating},
                      {"loss_trust", r.loss_trust}, {"lr_scale", r.lr_scale}});
    write_json(dir / "report.json", {{"aspects", cfg.label()}, {"history", rows}}, m);
  } else {
    std::ostringstream os;
    os << "iteration\tloss\tloss_rating\tloss_trust\tlr_scale\n";
    for (const auto& r : result.report.history)
      os << r.iteration << '\t' << num(r.loss) << '\t' << num(r.loss_rating) << '\t'
         << num(r.loss_trust) << '\t' << num(r.lr_scale) << '\n';
    write_text(dir / "report.tsv", os.str(), m);
  }
  const auto& last = result.report.history.back();
  std::cout << cfg.label() << ": " << last.iteration << " iterations, final loss " << num(last.loss)
            << '\n';
  return 0;
}

// ---- eval ----

struct EvalFlags {
  Common common;
  DataFlags data;
  std::string model, test;
  std::optional<double> train_fraction;
  std::uint64_t split_seed = 1;
  std::size_t cold_threshold = 5;
  bool no_clip = false;
};

int cmd_eval(const EvalFlags& f, cli::Manifest& m) {
  if (f.test.empty() == !f.train_fraction)
    throw UsageError("eval needs exactly one of --test or --train-fraction");
  const auto bundle = load_model(f.model);
  m.add_input("model", f.model);
  auto in = load(f.data, m);
  RatingDataset train_set, test_set;
  if (f.train_fraction) {
    auto sp = split_random(in.ratings, *f.train_fraction, f.split_seed);
    train_set = std::move(sp.train);
    test_set = std::move(sp.test);
    m.add_seed(f.split_seed);
  } else {
    train_set = in.ratings;
    m.add_input("test", f.test);
    test_set = align_to(train_set, parse_ratings(f.test, parse_format(f.data), in.ratings.scale()));
  }
  if (bundle.params.num_users > train_set.num_users() || bundle.params.num_items != train_set.num_items())
    throw DataError("model shape does not match the training ratings");
  const auto cold = cold_start_users(train_set, f.cold_threshold);
  const auto rep = evaluate(bundle.params, train_set, in.trust, test_set, cold, bundle.ctx,
                            bundle.cfg, !f.no_clip);
  m.set_option("cold_threshold", f.cold_threshold);
  m.set_option("clip", !f.no_clip);
  m.set_option("aspects", bundle.cfg.label());

  const auto dir = out_dir(f.common);
  fs::create_directories(dir);
  if (f.common.json) {
    write_json(dir / "eval.json", report_json(rep), m);
  } else {
    std::ostringstream os;
    os << "metric\tslice\tvalue\tcount\n";
    os << "mae\tall\t" << num(rep.all.mae) << '\t' << rep.all.count << '\n';
    os << "rmse\tall\t" << num(rep.all.rmse) << '\t' << rep.all.count << '\n';
    if (rep.cold) {
      os << "mae\tcold\t" << num(rep.cold->mae) << '\t' << rep.cold->count << '\n';
      os << "rmse\tcold\t" << num(rep.cold->rmse) << '\t' << rep.cold->count << '\n';
    }
    write_text(dir / "eval.tsv", os.str(), m);
  }
  std::cout << "rmse_all " << num(rep.all.rmse) << " mae_all " << num(rep.all.mae) << '\n';
  return 0;
}

// ---- gradcheck ----

struct GradFlags {
  Common common;
  std::uint64_t seed = 42;
  double eps = 1e-5, tol = 1e-4;
};

int cmd_gradcheck(const GradFlags& f, cli::Manifest& m) {
  const auto ci = make_check_instance(f.seed);
  const auto rep = gradient_check(ci.params, ci.train, ci.trust, ci.hyper, ci.cfg, ci.ctx, f.eps, f.tol);
  m.add_seed(f.seed);
  m.set_option("eps", f.eps);
  m.set_option("tolerance", f.tol);
  const auto dir = out_dir(f.common);
  fs::create_directories(dir);
  if (f.common.json) {
    json rows = json::array();
    for (const auto& g : rep.groups)
      rows.push_back({{"group", std::string(group_name(g.group))}, {"entries", g.entries},
                      {"max_rel_error", g.max_rel_error}, {"max_abs_error", g.max_abs_error},
                      {"passed", g.passed}});
    write_json(dir / "gradcheck.json",
               {{"groups", rows}, {"max_rel_error", rep.max_rel_error()}, {"passed", rep.passed()}}, m);
  } else {
    std::ostringstream os;
    os << "group\tentries\tmax_rel_error\tmax_abs_error\tpassed\n";
    for (const auto& g : rep.groups)
      os << group_name(g.group) << '\t' << g.entries << '\t' << num(g.max_rel_error) << '\t'
         << num(g.max_abs_error) << '\t' << (g.passed ? "yes" : "no") << '\n';
    write_text(dir / "gradcheck.tsv", os.str(), m);
  }
  std::cout << "max relative error " << num(rep.max_rel_error()) << (rep.passed() ? " (pass)" : " (FAIL)")
            << '\n';
  return rep.passed() ? 0 : static_cast<int>(ExitCode::kVerification);
}

// ---- sweep / robustness ----

struct SweepFlags {
  Common common;
  DataFlags data;
  HyperFlags hyper;
  std::string combinations;
  std::string seeds = "1,2,3";
  double train_fraction = 0.8;
  std::uint64_t split_seed = 1;
  std::size_t workers = 1;
  bool best_iteration = false, no_clip = false, no_conditional = false, no_implicit = false;
  std::string fractions = "0.8,0.6,0.4";
  std::string aspects = "bffv";
};

SweepOptions sweep_options(const SweepFlags& f) {
  SweepOptions o;
  if (!f.combinations.empty()) o.combinations = parse_list<std::string>(f.combinations, "--combinations");
  o.workers = f.workers;
  o.best_iteration = f.best_iteration;
  o.clip = !f.no_clip;
  return o;
}

json summary_json(const SweepRow& row) {
  json j = {{"combination", row.combination}, {"fraction", row.fraction}, {"failures", row.failures}};
  json ms = json::array();
  for (std::size_t k = 0; k < kAllMetrics.size(); ++k) {
    const auto& s = row.metrics[k];
    ms.push_back({{"metric", std::string(metric_name(kAllMetrics[k]))},
                  {"slice", std::string(metric_slice(kAllMetrics[k]))},
                  {"mean", s ? json(s->mean) : json(nullptr)},
                  {"std", s ? opt_json(s->stddev) : json(nullptr)},
                  {"n", s ? s->n : 0}});
  }
  j["metrics"] = ms;
  return j;
}

std::string cells_tsv(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  os << "combination\tseed\tfraction\tmae_all\trmse_all\tmae_cold\trmse_cold\tstatus\n";
  for (const auto& c : cells) {
    os << c.combination << '\t' << c.seed << '\t' << num(c.fraction);
    for (auto mt : kAllMetrics)
      os << '\t' << (c.report ? opt_str(metric_value(*c.report, mt)) : "NA");
    os << '\t' << (c.error ? "diverged" : "ok") << '\n';
  }
  return os.str();
}

json cells_json(const std::vector<SweepCell>& cells) {
  json out = json::array();
  for (const auto& c : cells) {
    json j = {{"combination", c.combination}, {"seed", c.seed}, {"fraction", c.fraction}};
    if (c.report) {
      for (auto mt : kAllMetrics)
        j[std::string(metric_name(mt)) + "_" + std::string(metric_slice(mt))] =
            opt_json(metric_value(*c.report, mt));
    }
    j["error"] = c.error ? json(*c.error) : json(nullptr);
    out.push_back(std::move(j));
  }
  return out;
}

std::string summary_tsv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "combination\tfraction\tmetric\tslice\tmean\tstd\tn\tfailures\n";
  for (const auto& r : rows)
    for (std::size_t k = 0; k < kAllMetrics.size(); ++k) {
      const auto& s = r.metrics[k];
      os << r.combination << '\t' << num(r.fraction) << '\t' << metric_name(kAllMetrics[k]) << '\t'
         << metric_slice(kAllMetrics[k]) << '\t' << (s ? num(s->mean) : "NA") << '\t'
         << (s ? opt_str(s->stddev) : "NA") << '\t' << (s ? s->n : 0) << '\t' << r.failures << '\n';
    }
  return os.str();
}

constexpr const char* kTestNote =
    "t-tests are unpaired two-sided Welch tests of each combination against static across seeds; "
    "whether the original repetitions were paired is unknown";

struct TestRow {
  std::string combination;
  Metric metric;
  TTestResult t;
};

std::vector<TestRow> tests_vs_static(const std::vector<SweepCell>& cells) {
  std::map<std::string, std::map<int, std::vector<double>>> vals;
  std::vector<std::string> order;
  for (const auto& c : cells) {
    if (!vals.count(c.combination)) order.push_back(c.combination);
    auto& per = vals[c.combination];
    if (!c.report) continue;
    for (std::size_t k = 0; k < kAllMetrics.size(); ++k)
      if (auto v = metric_value(*c.report, kAllMetrics[k])) per[int(k)].push_back(*v);
  }
  std::vector<TestRow> out;
  if (!vals.count("static")) return out;
  for (const auto& name : order) {
    if (name == "static") continue;
    for (std::size_t k = 0; k < kAllMetrics.size(); ++k) {
      const auto& a = vals[name][int(k)];
      const auto& b = vals["static"][int(k)];
      if (a.size() < 2 || b.size() < 2) continue;
      out.push_back({name, kAllMetrics[k], welch_t_test(a, b)});
    }
  }
  return out;
}

void write_tests(const fs::path& dir, const std::vector<TestRow>& tests, bool as_json,
                 cli::Manifest& m) {
  if (as_json) return;
  std::ostringstream os;
  os << "# " << kTestNote << '\n';
  os << "combination\tmetric\tslice\tt\tp\tdf\n";
  for (const auto& t : tests)
    os << t.combination << '\t' << metric_name(t.metric) << '\t' << metric_slice(t.metric) << '\t'
       << num(t.t.t_statistic) << '\t' << num(t.t.p_value) << '\t' << num(t.t.degrees_of_freedom)
       << '\n';
  write_text(dir / "ttests.tsv", os.str(), m);
}

json tests_json(const std::vector<TestRow>& tests) {
  json out = json::array();
  for (const auto& t : tests)
    out.push_back({{"combination", t.combination}, {"metric", std::string(metric_name(t.metric))},
                   {"slice", std::string(metric_slice(t.metric))}, {"t", t.t.t_statistic},
                   {"p", t.t.p_value}, {"df", t.t.degrees_of_freedom}});
  return out;
}

int cmd_sweep(const SweepFlags& f, cli::Manifest& m) {
  auto h = resolve_hyper(f.hyper);
  h.split_seed = f.split_seed;
  const auto seeds = parse_list<std::uint64_t>(f.seeds, "--seeds");
  auto in = load(f.data, m);
  const auto base = resolve_cfg("static", in.has_trust, f.no_conditional, f.no_implicit, m);
  const auto sp = split_random(in.ratings, f.train_fraction, f.split_seed);
  const auto opt = sweep_options(f);
  auto res = aspect_sweep(sp.train, in.trust, sp.test, h, base, seeds, opt);
  for (auto& c : res.cells) c.fraction = f.train_fraction;
  for (auto& r : res.rows) r.fraction = f.train_fraction;
  m.set_config(hyperparam_entries(h));
  for (auto s : seeds) m.add_seed(s);
  m.set_option("train_fraction", f.train_fraction);
  m.set_option("split_seed", f.split_seed);
  m.set_option("best_iteration", f.best_iteration);
  m.set_option("workers", f.workers);
  m.set_option("social", base.social);

  const auto tests = tests_vs_static(res.cells);
  const auto dir = out_dir(f.common);
  fs::create_directories(dir);
  if (f.common.json) {
    json rows = json::array();
    for (const auto& r : res.rows) rows.push_back(summary_json(r));
    write_json(dir / "sweep.json",
               {{"note", kTestNote}, {"cells", cells_json(res.cells)}, {"summary", rows},
                {"tests", tests_json(tests)}},
               m);
  } else {
    write_text(dir / "cells.tsv", cells_tsv(res.cells), m);
    write_text(dir / "summary.tsv", summary_tsv(res.rows), m);
    write_tests(dir, tests, false, m);
  }
  std::size_t failures = 0;
  for (const auto& r : res.rows) {
    failures += r.failures;
    const auto& s = r.metrics[1];
    std::cout << r.combination << "\trmse_all " << (s ? num(s->mean) : "NA") << '\n';
  }
  return failures == 0 ? 0 : static_cast<int>(ExitCode::kDivergence);
}

int cmd_robustness(const SweepFlags& f, cli::Manifest& m) {
  auto h = resolve_hyper(f.hyper);
  const auto seeds = parse_list<std::uint64_t>(f.seeds, "--seeds");
  const auto fractions = parse_list<double>(f.fractions, "--fractions");
  auto in = load(f.data, m);
  const auto cfg = resolve_cfg(f.aspects, in.has_trust, f.no_conditional, f.no_implicit, m);
  auto res = robustness_experiment(in.ratings, in.trust, h, cfg, fractions, seeds, sweep_options(f));
  m.set_config(hyperparam_entries(h));
  for (auto s : seeds) m.add_seed(s);
  m.set_option("aspects", cfg.label());
  m.set_option("fractions", fractions);

  const auto dir = out_dir(f.common);
  fs::create_directories(dir);
  if (f.common.json) {
    json rows = json::array(), inc = json::array();
    for (const auto& r : res.rows) rows.push_back(summary_json(r));
    for (const auto& x : res.increases)
      inc.push_back({{"from", x.from_fraction}, {"to", x.to_fraction},
                     {"metric", std::string(metric_name(x.metric))},
                     {"slice", std::string(metric_slice(x.metric))}, {"percent", opt_json(x.percent)}});
    write_json(dir / "robustness.json",
               {{"cells", cells_json(res.cells)}, {"summary", rows}, {"increases", inc}}, m);
  } else {
    write_text(dir / "cells.tsv", cells_tsv(res.cells), m);
    write_text(dir / "summary.tsv", summary_tsv(res.rows), m);
    std::ostringstream os;
    os << "from_fraction\tto_fraction\tmetric\tslice\tpercent_increase\n";
    for (const auto& x : res.increases)
      os << num(x.from_fraction) << '\t' << num(x.to_fraction) << '\t' << metric_name(x.metric)
         << '\t' << metric_slice(x.metric) << '\t' << opt_str(x.percent) << '\n';
    write_text(dir / "increases.tsv", os.str(), m);
  }
  for (const auto& x : res.increases)
    if (x.metric == Metric::kRmseAll)
      std::cout << num(x.from_fraction) << " -> " << num(x.to_fraction) << ": rmse_all "
                << opt_str(x.percent) << "%\n";
  std::size_t failures = 0;
  for (const auto& r : res.rows) failures += r.failures;
  return failures == 0 ? 0 : static_cast<int>(ExitCode::kDivergence);
}

// ---- bench ----

struct BenchFlags {
  Common common;
  HyperFlags hyper;
  std::string rating_sizes = "20000,40000,80000";
  std::string edge_sizes = "20000,40000,80000";
  std::size_t ratings_per_user = 20, factors = 5;
  std::size_t edge_base_ratings = 500, edge_base_rpu = 1;  // ratings held fixed in the edge series
  int iterations = 9;
  std::string aspects = "bffv";
  std::uint64_t seed = 1;
};

int cmd_bench(const BenchFlags& f, cli::Manifest& m) {
  auto h = resolve_hyper(f.hyper);
  h.num_factors = f.factors;
  const auto rs = parse_list<std::size_t>(f.rating_sizes, "--rating-sizes");
  const auto es = parse_list<std::size_t>(f.edge_sizes, "--edge-sizes");
  const auto cfg = AspectConfig::from_label(f.aspects);
  struct Series {
    std::string name;
    std::vector<ScalingPoint> points;
  };
  std::vector<Series> series;
  {
    std::vector<SyntheticConfig> sizes;
    for (auto r : rs) sizes.push_back(sized_synthetic(r, es.front(), f.ratings_per_user, f.factors, f.seed));
    series.push_back({"ratings", scaling_benchmark(sizes, h, cfg, f.iterations)});
  }
  {
    std::vector<SyntheticConfig> sizes;
    for (auto e : es)
      sizes.push_back(sized_synthetic(f.edge_base_ratings, e, f.edge_base_rpu, f.factors, f.seed));
    series.push_back({"edges", scaling_benchmark(sizes, h, cfg, f.iterations)});
  }
  m.set_config(hyperparam_entries(h));
  m.add_seed(f.seed);
  m.set_option("aspects", cfg.label());
  m.set_option("ratings_per_user", f.ratings_per_user);
  m.set_option("edge_base_ratings", f.edge_base_ratings);
  m.set_option("edge_base_rpu", f.edge_base_rpu);
  m.set_option("timed_iterations", f.iterations);

  const auto dir = out_dir(f.common);
  fs::create_directories(dir);
  json doc = json::array();
  std::ostringstream os;
  os << "series\tnum_ratings\tnum_edges\tseconds_per_iteration\tratio\n";
  for (const auto& s : series) {
    for (std::size_t k = 0; k < s.points.size(); ++k) {
      const auto& p = s.points[k];
      std::optional<double> ratio;
      if (k > 0) ratio = p.seconds_per_iteration / s.points[k - 1].seconds_per_iteration;
      os << s.name << '\t' << p.num_ratings << '\t' << p.num_edges << '\t'
         << num(p.seconds_per_iteration) << '\t' << opt_str(ratio) << '\n';
      doc.push_back({{"series", s.name}, {"num_ratings", p.num_ratings}, {"num_edges", p.num_edges},
                     {"seconds_per_iteration", p.seconds_per_iteration}, {"ratio", opt_json(ratio)}});
    }
  }
  if (f.common.json)
    write_json(dir / "bench.json", doc, m);
  else
    write_text(dir / "bench.tsv", os.str(), m);
  std::cout << os.str();
  return 0;
}

// ---- stats ----

struct StatsFlags {
  Common common;
  DataFlags data;
  std::size_t cold_threshold = 5;
  std::optional<std::size_t> universe_users, universe_items;
};

int cmd_stats(const StatsFlags& f, cli::Manifest& m) {
  auto in = load(f.data, m);
  std::optional<std::pair<std::size_t, std::size_t>> universe;
  if (f.universe_users || f.universe_items) {
    if (!f.universe_users || !f.universe_items)
      throw UsageError("--universe-users and --universe-items go together");
    universe = std::pair{*f.universe_users, *f.universe_items};
  }
  const auto s = dataset_stats(in.ratings, in.trust, f.cold_threshold, universe);
  m.set_option("cold_threshold", f.cold_threshold);
  const auto dir = out_dir(f.common);
  fs::create_directories(dir);
  std::vector<std::pair<std::string, json>> kv = {
      {"num_users", s.num_users},
      {"num_items", s.num_items},
      {"num_ratings", s.num_ratings},
      {"num_edges", s.num_edges},
      {"rating_density", s.rating_density},
      {"trust_density", s.trust_density},
      {"mean_ratings_per_user", s.mean_ratings_per_user},
      {"num_cold_users", s.num_cold_users},
      {"mean_ratings_per_cold_user", opt_json(s.mean_ratings_per_cold_user)},
      {"skipped_self_loops", in.trust.skipped_self_loops()}};
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << '\t' << (v.is_null() ? "NA" : v.dump()) << '\n';
  if (f.common.json) {
    json doc = json::object();
    for (const auto& [k, v] : kv) doc[k] = v;
    write_json(dir / "stats.json", doc, m);
  } else {
    write_text(dir / "stats.tsv", "key\tvalue\n" + os.str(), m);
  }
  std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal trust-aware matrix factorization"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);

  SynthFlags synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset with planted drift");
  add_common(s, synth.common);
  s->add_option("--users", synth.users)->capture_default_str();
  s->add_option("--items", synth.items)->capture_default_str();
  s->add_option("--factors", synth.factors)->capture_default_str();
  s->add_option("--days", synth.days)->capture_default_str();
  s->add_option("--drift", synth.drift, "none or a list of b,f,fv")->capture_default_str();
  s->add_option("--noise", synth.noise)->capture_default_str();
  s->add_option("--trust-density", synth.trust_density)->capture_default_str();
  s->add_option("--rating-density", synth.rating_density)->capture_default_str();
  s->add_option("--ratings-per-user", synth.ratings_per_user, "Fixed count; overrides density");
  s->add_option("--scale", synth.scale)->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();

  TrainFlags tr;
  auto* t = app.add_subcommand("train", "Train a model and write it with its loss history");
  add_common(t, tr.common);
  add_data(t, tr.data, true);
  add_hyper(t, tr.hyper);
  t->add_option("--aspects", tr.aspects, "static, b, bf, bffv, bfv, f, ffv or fv")->capture_default_str();
  t->add_option("--seed", tr.seed, "Initialization and shuffle seed");
  t->add_option("--train-fraction", tr.train_fraction, "Train on a random split of the ratings");
  t->add_option("--split-seed", tr.split_seed);
  t->add_flag("--no-conditional", tr.no_conditional);
  t->add_flag("--no-implicit", tr.no_implicit);

  EvalFlags ev;
  auto* e = app.add_subcommand("eval", "Evaluate a trained model");
  add_common(e, ev.common);
  add_data(e, ev.data, true);
  e->add_option("--model", ev.model)->required();
  e->add_option("--test", ev.test, "Test ratings file");
  e->add_option("--train-fraction", ev.train_fraction, "Recreate the split used for training");
  e->add_option("--split-seed", ev.split_seed)->capture_default_str();
  e->add_option("--cold-threshold", ev.cold_threshold)->capture_default_str();
  e->add_flag("--no-clip", ev.no_clip);

  GradFlags gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check on the small random instance");
  add_common(g, gc.common);
  g->add_option("--seed", gc.seed)->capture_default_str();
  g->add_option("--eps", gc.eps)->capture_default_str();
  g->add_option("--tol", gc.tol)->capture_default_str();

  SweepFlags sw;
  auto* w = app.add_subcommand("sweep", "Train and evaluate aspect combinations over seeds");
  add_common(w, sw.common);
  add_data(w, sw.data, true);
  add_hyper(w, sw.hyper);
  w->add_option("--combinations", sw.combinations, "Comma list (default: all eight)");
  w->add_option("--seeds", sw.seeds)->capture_default_str();
  w->add_option("--train-fraction", sw.train_fraction)->capture_default_str();
  w->add_option("--split-seed", sw.split_seed)->capture_default_str();
  w->add_option("--workers", sw.workers)->capture_default_str();
  w->add_flag("--best-iteration", sw.best_iteration, "Keep the best value seen over iterations");
  w->add_flag("--no-clip", sw.no_clip);
  w->add_flag("--no-conditional", sw.no_conditional);
  w->add_flag("--no-implicit", sw.no_implicit);

  SweepFlags rb;
  auto* r = app.add_subcommand("robustness", "Error increase as the training fraction shrinks");
  add_common(r, rb.common);
  add_data(r, rb.data, true);
  add_hyper(r, rb.hyper);
  r->add_option("--aspects", rb.aspects)->capture_default_str();
  r->add_option("--fractions", rb.fractions)->capture_default_str();
  r->add_option("--seeds", rb.seeds)->capture_default_str();
  r->add_option("--workers", rb.workers)->capture_default_str();
  r->add_flag("--best-iteration", rb.best_iteration);
  r->add_flag("--no-clip", rb.no_clip);
  r->add_flag("--no-conditional", rb.no_conditional);
  r->add_flag("--no-implicit", rb.no_implicit);

  BenchFlags bf;
  auto* b = app.add_subcommand("bench", "Per-iteration time against |R| and |T|");
  add_common(b, bf.common);
  add_hyper(b, bf.hyper);
  b->add_option("--rating-sizes", bf.rating_sizes)->capture_default_str();
  b->add_option("--edge-sizes", bf.edge_sizes)->capture_default_str();
  b->add_option("--ratings-per-user", bf.ratings_per_user)->capture_default_str();
  b->add_option("--edge-base-ratings", bf.edge_base_ratings, "Fixed |R| of the edge series")
      ->capture_default_str();
  b->add_option("--edge-base-rpu", bf.edge_base_rpu, "Ratings per user of the edge series")
      ->capture_default_str();
  b->add_option("--factors", bf.factors)->capture_default_str();
  b->add_option("--iterations", bf.iterations, "Timed iterations per size")->capture_default_str();
  b->add_option("--aspects", bf.aspects)->capture_default_str();
  b->add_option("--seed", bf.seed)->capture_default_str();

  StatsFlags st;
  auto* d = app.add_subcommand("stats", "Dataset densities and cold-start figures");
  add_common(d, st.common);
  add_data(d, st.data, true);
  d->add_option("--cold-threshold", st.cold_threshold)->capture_default_str();
  d->add_option("--universe-users", st.universe_users, "User count of the parent population");
  d->add_option("--universe-items", st.universe_items, "Item count of the parent population");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  const auto* sub = app.get_subcommands().front();
  cli::Manifest manifest(sub->get_name(), args);
  fs::path dir = out_dir(synth.common);
  int rc = 0;
  try {
    if (sub == s) { dir = out_dir(synth.common); rc = cmd_synth(synth, manifest); }
    else if (sub == t) { dir = out_dir(tr.common); rc = cmd_train(tr, manifest); }
    else if (sub == e) { dir = out_dir(ev.common); rc = cmd_eval(ev, manifest); }
    else if (sub == g) { dir = out_dir(gc.common); rc = cmd_gradcheck(gc, manifest); }
    else if (sub == w) { dir = out_dir(sw.common); rc = cmd_sweep(sw, manifest); }
    else if (sub == r) { dir = out_dir(rb.common); rc = cmd_robustness(rb, manifest); }
    else if (sub == b) { dir = out_dir(bf.common); rc = cmd_bench(bf, manifest); }
    else if (sub == d) { dir = out_dir(st.common); rc = cmd_stats(st, manifest); }
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    rc = static_cast<int>(err.code());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    rc = static_cast<int>(ExitCode::kData);
  }
  try {
    manifest.write(dir, rc);
  } catch (const std::exception& err) {
    std::cerr << "error: manifest: " << err.what() << '\n';
    if (rc == 0) rc = static_cast<int>(ExitCode::kData);
  }
  return rc;
}
