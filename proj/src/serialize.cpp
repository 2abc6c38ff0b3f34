#include "aspectmf/serialize.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "aspectmf/error.hpp"

namespace aspectmf {

namespace {

enum class Layout { kUser, kSlot, kItem, kItemBin, kUserFactor, kItemFactor, kSlotFactor, kPair };

Layout layout_of(ParamGroup g) {
  switch (g) {
    case ParamGroup::kBu:
    case ParamGroup::kAlpha:
    case ParamGroup::kC:
    case ParamGroup::kAlphaP:
    case ParamGroup::kAlphaW:
    case ParamGroup::kAlphaZ:
      return Layout::kUser;
    case ParamGroup::kBut:
    case ParamGroup::kCt:
      return Layout::kSlot;
    case ParamGroup::kBi:
      return Layout::kItem;
    case ParamGroup::kBit:
      return Layout::kItemBin;
    case ParamGroup::kP:
    case ParamGroup::kW:
    case ParamGroup::kZ:
    case ParamGroup::kOmega:
      return Layout::kUserFactor;
    case ParamGroup::kQ:
    case ParamGroup::kImplicit:
      return Layout::kItemFactor;
    case ParamGroup::kPt:
    case ParamGroup::kWt:
    case ParamGroup::kZt:
      return Layout::kSlotFactor;
    case ParamGroup::kCondY:
      return Layout::kPair;
  }
  return Layout::kUser;
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) fail("unexpected end of file");
    return w;
  }
  void expect(std::string_view w) {
    auto got = word();
    if (got != w) fail("expected '" + std::string(w) + "', got '" + got + "'");
  }
  std::int64_t integer() {
    auto w = word();
    std::int64_t v = 0;
    auto r = std::from_chars(w.data(), w.data() + w.size(), v);
    if (r.ec != std::errc() || r.ptr != w.data() + w.size()) fail("bad integer '" + w + "'");
    return v;
  }
  std::size_t index(std::size_t bound) {
    auto v = integer();
    if (v < 0 || static_cast<std::size_t>(v) >= bound) fail("index out of range");
    return static_cast<std::size_t>(v);
  }
  double real() {
    auto w = word();
    double v = 0;
    auto r = std::from_chars(w.data(), w.data() + w.size(), v);
    if (r.ec != std::errc() || r.ptr != w.data() + w.size()) fail("bad number '" + w + "'");
    return v;
  }
  [[noreturn]] void fail(const std::string& why) { throw DataError(source_ + ": " + why); }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace

void save_model(std::ostream& out, const ModelBundle& m) {
  const auto& p = m.params;
  const auto& s = p.slots;
  out << "aspectmf v1 " << p.num_users << ' ' << p.num_items << ' ' << p.num_factors << ' '
      << p.num_bins << ' ' << fmt(m.ctx.beta) << ' ' << fmt(p.mu) << '\n';
  out << "aspects " << m.cfg.dynamic_bias << ' ' << m.cfg.dynamic_feature << ' '
      << m.cfg.dynamic_feature_value << ' ' << m.cfg.social << ' ' << m.cfg.conditional << ' '
      << m.cfg.implicit_feedback << '\n';
  out << "span " << m.ctx.t_min << ' ' << m.ctx.t_max << ' ' << m.ctx.day_length << '\n';
  out << "tu " << m.ctx.user_mean_day.size() << '\n';
  for (std::size_t u = 0; u < m.ctx.user_mean_day.size(); ++u)
    out << u << ' ' << fmt(m.ctx.user_mean_day[u]) << '\n';
  out << "slots " << s.size() << '\n';
  for (std::size_t k = 0; k < s.size(); ++k) out << s.user(k) << ' ' << s.day(k) << '\n';

  const std::size_t d = p.num_factors;
  for (auto g : all_groups()) {
    auto v = p.values(g);
    out << "group " << group_name(g) << ' ' << v.size() << '\n';
    switch (layout_of(g)) {
      case Layout::kUser:
      case Layout::kItem:
        for (std::size_t i = 0; i < v.size(); ++i) out << i << ' ' << fmt(v[i]) << '\n';
        break;
      case Layout::kSlot:
        for (std::size_t i = 0; i < v.size(); ++i)
          out << s.user(i) << ' ' << s.day(i) << ' ' << fmt(v[i]) << '\n';
        break;
      case Layout::kItemBin: {
        const auto nb = static_cast<std::size_t>(p.num_bins);
        for (std::size_t i = 0; i < v.size(); ++i)
          out << i / nb << ' ' << i % nb << ' ' << fmt(v[i]) << '\n';
        break;
      }
      case Layout::kUserFactor:
      case Layout::kItemFactor:
      case Layout::kPair:
        for (std::size_t i = 0; i < v.size(); ++i)
          out << i / d << ' ' << i % d << ' ' << fmt(v[i]) << '\n';
        break;
      case Layout::kSlotFactor:
        for (std::size_t i = 0; i < v.size(); ++i)
          out << s.user(i / d) << ' ' << s.day(i / d) << ' ' << i % d << ' ' << fmt(v[i])
              << '\n';
        break;
    }
  }
  out << "end\n";
}

void save_model(const std::filesystem::path& path, const ModelBundle& m) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path.string());
  save_model(out, m);
  if (!out) throw UsageError("write failed: " + path.string());
}

ModelBundle load_model(std::istream& in, const std::string& source) {
  Reader r(in, source);
  ModelBundle m;
  auto& p = m.params;
  r.expect("aspectmf");
  r.expect("v1");
  auto n = r.integer(), mm = r.integer(), d = r.integer(), nb = r.integer();
  if (n < 1 || mm < 1 || d < 1 || nb < 1) r.fail("malformed model header");
  p.num_users = static_cast<std::size_t>(n);
  p.num_items = static_cast<std::size_t>(mm);
  p.num_factors = static_cast<std::size_t>(d);
  p.num_bins = static_cast<int>(nb);
  m.ctx.num_bins = p.num_bins;
  m.ctx.beta = r.real();
  p.mu = r.real();

  r.expect("aspects");
  bool* flags[] = {&m.cfg.dynamic_bias, &m.cfg.dynamic_feature, &m.cfg.dynamic_feature_value,
                   &m.cfg.social,       &m.cfg.conditional,     &m.cfg.implicit_feedback};
  for (bool* f : flags) {
    auto v = r.integer();
    if (v != 0 && v != 1) r.fail("aspect flags must be 0 or 1");
    *f = v == 1;
  }
  r.expect("span");
  m.ctx.t_min = r.integer();
  m.ctx.t_max = r.integer();
  m.ctx.day_length = r.integer();
  if (m.ctx.t_min > m.ctx.t_max || m.ctx.day_length < 1) r.fail("malformed span");

  r.expect("tu");
  const auto ntu = r.index(p.num_users + 1);
  m.ctx.user_mean_day.assign(ntu, 0.0);
  for (std::size_t i = 0; i < ntu; ++i) {
    const auto u = r.index(ntu);
    m.ctx.user_mean_day[u] = r.real();
  }

  r.expect("slots");
  const auto ns = static_cast<std::size_t>(r.integer());
  std::vector<std::pair<UserId, std::int64_t>> pairs;
  pairs.reserve(ns);
  for (std::size_t i = 0; i < ns; ++i) {
    auto u = static_cast<UserId>(r.index(p.num_users));
    pairs.emplace_back(u, r.integer());
  }
  p.slots = DaySlots::from_pairs(p.num_users, std::move(pairs));
  if (p.slots.size() != ns) r.fail("duplicate day slots");

  const std::size_t nu = p.num_users, ni = p.num_items, nf = p.num_factors;
  p.bu.assign(nu, 0.0);
  p.alpha.assign(nu, 0.0);
  p.C.assign(nu, 0.0);
  p.alphaP.assign(nu, 0.0);
  p.alphaW.assign(nu, 0.0);
  p.alphaZ.assign(nu, 0.0);
  p.but.assign(ns, 0.0);
  p.Ct.assign(ns, 0.0);
  p.bi.assign(ni, 0.0);
  p.bit = Matrix(ni, static_cast<std::size_t>(p.num_bins));
  p.P = Matrix(nu, nf);
  p.W = Matrix(nu, nf);
  p.Z = Matrix(nu, nf);
  p.omega = Matrix(nu, nf);
  p.Pt = Matrix(ns, nf);
  p.Wt = Matrix(ns, nf);
  p.Zt = Matrix(ns, nf);
  p.Q = Matrix(ni, nf);
  p.y = Matrix(ni, nf);
  p.Y = Matrix(nf, nf);

  auto slot_of = [&](UserId u, std::int64_t day) {
    auto s = p.slots.find(u, day);
    if (!s) r.fail("row refers to an unknown day slot");
    return *s;
  };
  for (auto g : all_groups()) {
    r.expect("group");
    if (r.word() != group_name(g)) r.fail("expected group " + std::string(group_name(g)));
    auto v = p.values(g);
    if (static_cast<std::size_t>(r.integer()) != v.size()) r.fail("row count mismatch");
    for (std::size_t k = 0; k < v.size(); ++k) {
      std::size_t at = 0;
      switch (layout_of(g)) {
        case Layout::kUser:
        case Layout::kItem:
          at = r.index(v.size());
          break;
        case Layout::kSlot: {
          auto u = static_cast<UserId>(r.index(nu));
          at = slot_of(u, r.integer());
          break;
        }
        case Layout::kItemBin: {
          auto j = r.index(ni);
          at = j * static_cast<std::size_t>(p.num_bins) +
               r.index(static_cast<std::size_t>(p.num_bins));
          break;
        }
        case Layout::kUserFactor:
        case Layout::kItemFactor:
        case Layout::kPair: {
          auto row = r.index(v.size() / nf);
          at = row * nf + r.index(nf);
          break;
        }
        case Layout::kSlotFactor: {
          auto u = static_cast<UserId>(r.index(nu));
          auto s = slot_of(u, r.integer());
          at = s * nf + r.index(nf);
          break;
        }
      }
      v[at] = r.real();
    }
  }
  r.expect("end");
  return m;
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file " + path.string());
  return load_model(in, path.string());
}

}  // namespace aspectmf
