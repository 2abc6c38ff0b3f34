#include "aspectmf/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "aspectmf/error.hpp"

namespace aspectmf {

namespace {

bool parse_int(std::string_view s, std::int64_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_double(std::string_view s, double& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_fields(std::string_view line, const ParseFormat& format) {
  std::vector<std::string_view> fields;
  if (format.delimiter) {
    std::size_t start = 0;
    while (true) {
      auto pos = line.find(*format.delimiter, start);
      fields.push_back(trim(line.substr(start, pos - start)));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
  } else {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
      fields.push_back(line.substr(i, j - i));
      i = j;
    }
  }
  return fields;
}

// Calls fn(fields, line_number) for each non-empty, non-comment line.
template <typename Fn>
void for_each_line(std::istream& in, const ParseFormat& format, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    fn(split_fields(body, format), line_no);
  }
}

[[noreturn]] void fail_line(const std::string& source, std::size_t line_no,
                            const std::string& why) {
  throw DataError(source + ":" + std::to_string(line_no) + ": " + why);
}

CsrIndex build_csr(std::size_t keys, const std::vector<std::uint32_t>& key_of_row) {
  CsrIndex idx;
  idx.offsets.assign(keys + 1, 0);
  for (auto k : key_of_row) ++idx.offsets[k + 1];
  for (std::size_t k = 0; k < keys; ++k) idx.offsets[k + 1] += idx.offsets[k];
  idx.rows.resize(key_of_row.size());
  std::vector<std::size_t> cursor(idx.offsets.begin(), idx.offsets.end() - 1);
  for (std::uint32_t r = 0; r < key_of_row.size(); ++r) idx.rows[cursor[key_of_row[r]]++] = r;
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------
// IdMap

IdMap IdMap::from_tokens(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  bool numeric = std::all_of(tokens.begin(), tokens.end(), [](const std::string& t) {
    std::int64_t v;
    return parse_int(t, v);
  });
  if (numeric) {
    std::sort(tokens.begin(), tokens.end(), [](const std::string& a, const std::string& b) {
      std::int64_t x = 0, y = 0;
      parse_int(a, x);
      parse_int(b, y);
      return x != y ? x < y : a < b;
    });
  }
  IdMap m;
  for (auto& t : tokens) m.intern(t);
  return m;
}

IdMap IdMap::identity(std::size_t n) {
  IdMap m;
  for (std::size_t i = 0; i < n; ++i) m.intern(std::to_string(i));
  return m;
}

std::optional<std::uint32_t> IdMap::find(const std::string& raw) const {
  auto it = index_.find(raw);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t IdMap::intern(const std::string& raw) {
  auto [it, inserted] = index_.emplace(raw, static_cast<std::uint32_t>(raw_.size()));
  if (inserted) raw_.push_back(raw);
  return it->second;
}

// ---------------------------------------------------------------------------
// RatingDataset

RatingDataset::RatingDataset(std::vector<RatingRecord> records, std::size_t num_users,
                             std::size_t num_items, RatingScale scale)
    : records_(std::move(records)), num_users_(num_users), num_items_(num_items), scale_(scale) {
  for (const auto& r : records_) {
    if (r.user >= num_users_ || r.item >= num_items_)
      throw DataError("rating record id out of range");
  }
  user_ids_ = IdMap::identity(num_users_);
  item_ids_ = IdMap::identity(num_items_);
  build_indexes();
}

void RatingDataset::build_indexes() {
  std::vector<std::uint32_t> users(records_.size()), items(records_.size());
  for (std::size_t r = 0; r < records_.size(); ++r) {
    users[r] = records_[r].user;
    items[r] = records_[r].item;
  }
  by_user_ = build_csr(num_users_, users);
  by_item_ = build_csr(num_items_, items);
  user_items_.resize(by_user_.rows.size());
  for (std::size_t k = 0; k < by_user_.rows.size(); ++k)
    user_items_[k] = records_[by_user_.rows[k]].item;
}

double RatingDataset::mean_rating() const {
  if (records_.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : records_) s += r.rating;
  return s / static_cast<double>(records_.size());
}

void RatingDataset::set_id_maps(IdMap users, IdMap items) {
  if (users.size() < num_users_ || items.size() < num_items_)
    throw DataError("id map smaller than dataset id space");
  user_ids_ = std::move(users);
  item_ids_ = std::move(items);
  num_users_ = user_ids_.size();
  num_items_ = item_ids_.size();
  build_indexes();
}

void RatingDataset::extend_users(std::size_t num_users) {
  if (num_users <= num_users_) return;
  while (user_ids_.size() < num_users) user_ids_.intern(std::to_string(user_ids_.size()));
  num_users_ = num_users;
  build_indexes();
}

RatingDataset RatingDataset::subset(std::span<const std::uint32_t> positions) const {
  std::vector<RatingRecord> recs;
  recs.reserve(positions.size());
  for (auto p : positions) recs.push_back(records_.at(p));
  RatingDataset out(std::move(recs), num_users_, num_items_, scale_);
  out.user_ids_ = user_ids_;
  out.item_ids_ = item_ids_;
  return out;
}

// ---------------------------------------------------------------------------
// TrustNetwork

TrustNetwork::TrustNetwork(std::vector<TrustEdge> edges, std::size_t num_users)
    : edges_(std::move(edges)), num_users_(num_users) {
  for (const auto& e : edges_) {
    if (e.truster >= num_users_ || e.trustee >= num_users_)
      throw DataError("trust edge id out of range");
    if (e.truster == e.trustee) throw DataError("trust self-loop");
    if (!(e.weight >= 0.0)) throw DataError("negative trust weight");
  }
  build_indexes();
}

void TrustNetwork::build_indexes() {
  std::vector<std::uint32_t> from(edges_.size());
  in_degree_.assign(num_users_, 0);
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    from[e] = edges_[e].truster;
    ++in_degree_[edges_[e].trustee];
  }
  out_ = build_csr(num_users_, from);
  trustees_.resize(out_.rows.size());
  for (std::size_t k = 0; k < out_.rows.size(); ++k) trustees_[k] = edges_[out_.rows[k]].trustee;
}

void TrustNetwork::extend_users(std::size_t num_users) {
  if (num_users <= num_users_) return;
  num_users_ = num_users;
  build_indexes();
}

// ---------------------------------------------------------------------------
// Parsing

RatingDataset parse_ratings(std::istream& in, const ParseFormat& format, RatingScale scale,
                            const std::string& source) {
  struct Raw {
    std::string user, item;
    double rating;
    std::int64_t ts;
  };
  std::vector<Raw> raw;
  for_each_line(in, format, [&](const std::vector<std::string_view>& f, std::size_t line_no) {
    if (f.size() != 4)
      fail_line(source, line_no, "expected 4 fields, got " + std::to_string(f.size()));
    Raw r{std::string(f[0]), std::string(f[1]), 0.0, 0};
    if (r.user.empty() || r.item.empty()) fail_line(source, line_no, "empty id field");
    if (!parse_double(f[2], r.rating)) fail_line(source, line_no, "bad rating value");
    if (!parse_int(f[3], r.ts)) fail_line(source, line_no, "bad timestamp");
    if (r.ts < 0) fail_line(source, line_no, "negative timestamp");
    if (!scale.contains(r.rating))
      fail_line(source, line_no, "rating outside scale [" + std::to_string(scale.min) + ", " +
                                     std::to_string(scale.max) + "]");
    raw.push_back(std::move(r));
  });
  if (raw.empty()) throw DataError(source + ": no rating records");

  std::vector<std::string> utok, itok;
  utok.reserve(raw.size());
  itok.reserve(raw.size());
  for (const auto& r : raw) {
    utok.push_back(r.user);
    itok.push_back(r.item);
  }
  IdMap users = IdMap::from_tokens(std::move(utok));
  IdMap items = IdMap::from_tokens(std::move(itok));

  std::vector<RatingRecord> records;
  std::unordered_map<std::uint64_t, std::size_t> seen;
  for (const auto& r : raw) {
    RatingRecord rec{*users.find(r.user), *items.find(r.item), r.rating, r.ts};
    std::uint64_t key = (static_cast<std::uint64_t>(rec.user) << 32) | rec.item;
    auto [it, inserted] = seen.emplace(key, records.size());
    if (inserted) {
      records.push_back(rec);
    } else if (rec.timestamp >= records[it->second].timestamp) {
      records[it->second] = rec;
    }
  }
  RatingDataset d(std::move(records), users.size(), items.size(), scale);
  d.set_id_maps(std::move(users), std::move(items));
  return d;
}

RatingDataset parse_ratings(const std::filesystem::path& path, const ParseFormat& format,
                            RatingScale scale) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ratings file: " + path.string());
  return parse_ratings(in, format, scale, path.string());
}

TrustNetwork parse_trust(std::istream& in, const ParseFormat& format, IdMap& users,
                         const std::string& source) {
  std::vector<TrustEdge> edges;
  std::unordered_set<std::uint64_t> seen;
  std::size_t self_loops = 0;
  for_each_line(in, format, [&](const std::vector<std::string_view>& f, std::size_t line_no) {
    if (f.size() != 2 && f.size() != 3)
      fail_line(source, line_no, "expected 2 or 3 fields, got " + std::to_string(f.size()));
    if (f[0].empty() || f[1].empty()) fail_line(source, line_no, "empty id field");
    double w = 1.0;
    if (f.size() == 3 && !parse_double(f[2], w)) fail_line(source, line_no, "bad trust weight");
    if (w < 0.0) fail_line(source, line_no, "negative trust weight");
    if (f[0] == f[1]) {
      ++self_loops;
      return;
    }
    UserId u = users.intern(std::string(f[0]));
    UserId v = users.intern(std::string(f[1]));
    if (seen.insert((static_cast<std::uint64_t>(u) << 32) | v).second) edges.push_back({u, v, w});
  });
  if (self_loops > 0)
    std::cerr << "warning: " << source << ": skipped " << self_loops << " self-loop line(s)\n";
  TrustNetwork t(std::move(edges), users.size());
  t.set_skipped_self_loops(self_loops);
  return t;
}

TrustNetwork parse_trust(const std::filesystem::path& path, const ParseFormat& format,
                         IdMap& users) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trust file: " + path.string());
  return parse_trust(in, format, users, path.string());
}

LoadedData load_dataset(const std::filesystem::path& ratings_path,
                        const std::optional<std::filesystem::path>& trust_path,
                        const ParseFormat& format, RatingScale scale) {
  LoadedData out;
  out.ratings = parse_ratings(ratings_path, format, scale);
  IdMap users = out.ratings.user_ids();
  if (trust_path) {
    out.trust = parse_trust(*trust_path, format, users);
  } else {
    out.trust = TrustNetwork({}, users.size());
  }
  if (users.size() > out.ratings.num_users()) {
    out.ratings.set_id_maps(users, out.ratings.item_ids());
  }
  out.trust.extend_users(out.ratings.num_users());
  return out;
}

// ---------------------------------------------------------------------------
// Writers

void write_ratings(std::ostream& out, const RatingDataset& d) {
  std::array<char, 64> buf;
  for (const auto& r : d.records()) {
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), r.rating);
    out << d.user_ids().raw(r.user) << ' ' << d.item_ids().raw(r.item) << ' '
        << std::string_view(buf.data(), end - buf.data()) << ' ' << r.timestamp << '\n';
  }
}

void write_ratings(const std::filesystem::path& path, const RatingDataset& d) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write ratings file: " + path.string());
  write_ratings(out, d);
}

void write_trust(std::ostream& out, const TrustNetwork& t, const IdMap& users) {
  std::array<char, 64> buf;
  for (const auto& e : t.edges()) {
    out << users.raw(e.truster) << ' ' << users.raw(e.trustee);
    if (e.weight != 1.0) {
      auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), e.weight);
      out << ' ' << std::string_view(buf.data(), end - buf.data());
    }
    out << '\n';
  }
}

void write_trust(const std::filesystem::path& path, const TrustNetwork& t, const IdMap& users) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trust file: " + path.string());
  write_trust(out, t, users);
}

// ---------------------------------------------------------------------------
// Statistics and splits

StatsReport dataset_stats(const RatingDataset& d, const TrustNetwork& t,
                          std::size_t cold_threshold,
                          std::optional<std::pair<std::size_t, std::size_t>> universe) {
  StatsReport s;
  s.num_users = d.num_users();
  s.num_items = d.num_items();
  s.num_ratings = d.size();
  s.num_edges = t.size();
  const double n = static_cast<double>(universe ? universe->first : s.num_users);
  const double m = static_cast<double>(universe ? universe->second : s.num_items);
  if (n <= 0 || m <= 0) throw DataError("dataset_stats requires N, M > 0");
  s.rating_density = static_cast<double>(s.num_ratings) / (n * m);
  s.trust_density = n > 1 ? static_cast<double>(s.num_edges) / (n * (n - 1)) : 0.0;
  s.mean_ratings_per_user = static_cast<double>(s.num_ratings) / static_cast<double>(s.num_users);
  std::size_t cold_ratings = 0;
  for (UserId u = 0; u < d.num_users(); ++u) {
    auto c = d.user_count(u);
    // Cold-start statistics cover users that rated something.
    if (c > 0 && c < cold_threshold) {
      ++s.num_cold_users;
      cold_ratings += c;
    }
  }
  if (s.num_cold_users > 0)
    s.mean_ratings_per_cold_user =
        static_cast<double>(cold_ratings) / static_cast<double>(s.num_cold_users);
  return s;
}

Split split_random(const RatingDataset& d, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw UsageError("train fraction must lie in (0, 1)");
  std::vector<std::uint32_t> order(d.size());
  std::iota(order.begin(), order.end(), 0u);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(d.size())));
  std::vector<std::uint32_t> train(order.begin(), order.begin() + n_train);
  std::vector<std::uint32_t> test(order.begin() + n_train, order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {d.subset(train), d.subset(test)};
}

std::vector<UserId> cold_start_users(const RatingDataset& train, std::size_t threshold) {
  if (threshold < 1) throw UsageError("cold-start threshold must be >= 1");
  std::vector<UserId> out;
  for (UserId u = 0; u < train.num_users(); ++u)
    if (train.user_count(u) < threshold) out.push_back(u);
  return out;
}

}  // namespace aspectmf
