#include "aspectmf/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "aspectmf/error.hpp"
#include "aspectmf/shipped_config.hpp"

namespace aspectmf {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double to_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw UsageError("config key '" + std::string(key) + "': bad number '" + std::string(v) + "'");
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw UsageError("config key '" + std::string(key) + "': bad integer '" + std::string(v) + "'");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

void apply_setting(HyperParams& h, std::string_view key, std::string_view value) {
  value = trim(value);
  if (key.starts_with("lambda_") || key.starts_with("gamma_")) {
    const bool is_lambda = key.starts_with("lambda_");
    auto rest = key.substr(is_lambda ? 7 : 6);
    if (rest == "all") {
      is_lambda ? h.set_all_lambda(to_real(key, value)) : h.set_all_gamma(to_real(key, value));
      return;
    }
    if (rest == "T") {
      (is_lambda ? h.lambda_T : h.gamma_T) = to_real(key, value);
      return;
    }
    if (rest == "t" && is_lambda) {
      h.lambda_t = to_real(key, value);
      return;
    }
    if (auto g = group_from_name(rest)) {
      auto& r = h[*g];
      (is_lambda ? r.lambda : r.gamma) = to_real(key, value);
      return;
    }
  } else if (key == "eta_P") {
    h.eta_P = to_real(key, value);
    return;
  } else if (key == "eta_W") {
    h.eta_W = to_real(key, value);
    return;
  } else if (key == "eta_Z") {
    h.eta_Z = to_real(key, value);
    return;
  } else if (key == "beta") {
    h.beta = to_real(key, value);
    return;
  } else if (key == "num_bins") {
    h.num_bins = static_cast<int>(to_uint(key, value));
    return;
  } else if (key == "D") {
    h.num_factors = to_uint(key, value);
    return;
  } else if (key == "max_iter") {
    h.max_iter = static_cast<int>(to_uint(key, value));
    return;
  } else if (key == "lr_decay") {
    h.lr_decay = to_real(key, value);
    return;
  } else if (key == "init_mean") {
    h.init_mean = to_real(key, value);
    return;
  } else if (key == "init_std") {
    h.init_std = to_real(key, value);
    return;
  } else if (key == "seed") {
    h.seed = to_uint(key, value);
    return;
  } else if (key == "split_seed") {
    h.split_seed = to_uint(key, value);
    return;
  }
  throw UsageError("unknown config key '" + std::string(key) + "'");
}

HyperParams parse_hyperparams(std::istream& in, HyperParams base, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw UsageError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    auto key = trim(s.substr(0, eq));
    try {
      apply_setting(base, key, s.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

HyperParams load_hyperparams(const std::filesystem::path& path, HyperParams base) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  return parse_hyperparams(in, std::move(base), path.string());
}

std::vector<std::pair<std::string, std::string>> hyperparam_entries(const HyperParams& h) {
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("D", std::to_string(h.num_factors));
  for (auto g : all_groups()) {
    out.emplace_back("gamma_" + std::string(group_name(g)), fmt(h[g].gamma));
    out.emplace_back("lambda_" + std::string(group_name(g)), fmt(h[g].lambda));
  }
  out.emplace_back("lambda_T", fmt(h.lambda_T));
  out.emplace_back("gamma_T", fmt(h.gamma_T));
  out.emplace_back("lambda_t", fmt(h.lambda_t));
  out.emplace_back("eta_P", fmt(h.eta_P));
  out.emplace_back("eta_W", fmt(h.eta_W));
  out.emplace_back("eta_Z", fmt(h.eta_Z));
  out.emplace_back("beta", fmt(h.beta));
  out.emplace_back("num_bins", std::to_string(h.num_bins));
  out.emplace_back("max_iter", std::to_string(h.max_iter));
  out.emplace_back("lr_decay", fmt(h.lr_decay));
  out.emplace_back("init_mean", fmt(h.init_mean));
  out.emplace_back("init_std", fmt(h.init_std));
  out.emplace_back("seed", std::to_string(h.seed));
  out.emplace_back("split_seed", std::to_string(h.split_seed));
  return out;
}

void write_hyperparams(std::ostream& out, const HyperParams& h) {
  for (const auto& [k, v] : hyperparam_entries(h)) out << k << " = " << v << '\n';
}

HyperParams shipped_hyperparams() {
  std::istringstream in(detail::kShippedConfig);
  return parse_hyperparams(in, HyperParams{}, "configs/default.cfg");
}

}  // namespace aspectmf
