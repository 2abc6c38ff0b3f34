#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace aspectmf {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

struct RatingRecord {
  UserId user = 0;
  ItemId item = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;  // epoch seconds

  friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

struct RatingScale {
  double min = 1.0;
  double max = 5.0;

  bool contains(double r) const { return r >= min && r <= max; }
  double clip(double r) const { return r < min ? min : (r > max ? max : r); }
  friend bool operator==(const RatingScale&, const RatingScale&) = default;
};

// Field separator for text inputs. An empty delimiter means "any run of
// whitespace".
struct ParseFormat {
  std::optional<char> delimiter;
};

// Bidirectional mapping between raw file tokens and dense 0-based ids.
class IdMap {
 public:
  IdMap() = default;

  // Builds a map from a set of raw tokens. Ids follow numeric order when every
  // token is an integer, lexicographic order otherwise.
  static IdMap from_tokens(std::vector<std::string> tokens);
  // Identity map "0".."n-1".
  static IdMap identity(std::size_t n);

  std::optional<std::uint32_t> find(const std::string& raw) const;
  // Returns the id of `raw`, appending a new id when unseen.
  std::uint32_t intern(const std::string& raw);
  const std::string& raw(std::uint32_t id) const { return raw_.at(id); }
  std::size_t size() const { return raw_.size(); }

 private:
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::string> raw_;
};

// Compressed row index: for each key, the list of record positions.
struct CsrIndex {
  std::vector<std::size_t> offsets;  // size keys + 1
  std::vector<std::uint32_t> rows;   // record positions

  std::span<const std::uint32_t> operator[](std::size_t key) const {
    return {rows.data() + offsets[key], rows.data() + offsets[key + 1]};
  }
  std::size_t count(std::size_t key) const { return offsets[key + 1] - offsets[key]; }
};

class RatingDataset {
 public:
  RatingDataset() = default;
  RatingDataset(std::vector<RatingRecord> records, std::size_t num_users, std::size_t num_items,
                RatingScale scale);

  const std::vector<RatingRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  RatingScale scale() const { return scale_; }

  // Record positions of user u's ratings (I_u, with I_u^t via the records).
  std::span<const std::uint32_t> user_records(UserId u) const { return by_user_[u]; }
  // Item ids rated by u, aligned with user_records(u).
  std::span<const ItemId> user_items(UserId u) const {
    return {user_items_.data() + by_user_.offsets[u], user_items_.data() + by_user_.offsets[u + 1]};
  }
  // Record positions of item j's ratings (U_j, with I_j^t via the records).
  std::span<const std::uint32_t> item_records(ItemId j) const { return by_item_[j]; }
  std::size_t user_count(UserId u) const { return by_user_.count(u); }
  std::size_t item_count(ItemId j) const { return by_item_.count(j); }

  double mean_rating() const;

  // Raw-id maps; identity maps when the dataset did not come from a file.
  const IdMap& user_ids() const { return user_ids_; }
  const IdMap& item_ids() const { return item_ids_; }
  void set_id_maps(IdMap users, IdMap items);

  // Widens the user id space (e.g. trust-only users). Never shrinks.
  void extend_users(std::size_t num_users);

  // Dataset over the same id space and scale holding a subset of records.
  RatingDataset subset(std::span<const std::uint32_t> positions) const;

  friend bool operator==(const RatingDataset& a, const RatingDataset& b) {
    return a.records_ == b.records_ && a.num_users_ == b.num_users_ &&
           a.num_items_ == b.num_items_ && a.scale_ == b.scale_;
  }

 private:
  void build_indexes();

  std::vector<RatingRecord> records_;
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  RatingScale scale_;
  CsrIndex by_user_;
  CsrIndex by_item_;
  std::vector<ItemId> user_items_;
  IdMap user_ids_;
  IdMap item_ids_;
};

struct TrustEdge {
  UserId truster = 0;
  UserId trustee = 0;
  double weight = 1.0;

  friend bool operator==(const TrustEdge&, const TrustEdge&) = default;
};

class TrustNetwork {
 public:
  TrustNetwork() = default;
  TrustNetwork(std::vector<TrustEdge> edges, std::size_t num_users);

  const std::vector<TrustEdge>& edges() const { return edges_; }
  std::size_t size() const { return edges_.size(); }
  bool empty() const { return edges_.empty(); }
  std::size_t num_users() const { return num_users_; }

  // Edge positions with truster u (the out-neighbourhood T_u).
  std::span<const std::uint32_t> out_edges(UserId u) const {
    return u < num_users_ ? out_[u] : std::span<const std::uint32_t>{};
  }
  // Trustees of u, aligned with out_edges(u).
  std::span<const UserId> trustees(UserId u) const {
    if (u >= num_users_) return {};
    return {trustees_.data() + out_.offsets[u], trustees_.data() + out_.offsets[u + 1]};
  }
  std::size_t out_degree(UserId u) const { return u < num_users_ ? out_.count(u) : 0; }
  // |T_v^+|: number of users trusting v.
  std::size_t in_degree(UserId v) const { return v < num_users_ ? in_degree_[v] : 0; }
  // Lines skipped during parsing because truster == trustee.
  std::size_t skipped_self_loops() const { return skipped_self_loops_; }
  void set_skipped_self_loops(std::size_t n) { skipped_self_loops_ = n; }

  void extend_users(std::size_t num_users);

  friend bool operator==(const TrustNetwork& a, const TrustNetwork& b) {
    return a.edges_ == b.edges_ && a.num_users_ == b.num_users_;
  }

 private:
  void build_indexes();

  std::vector<TrustEdge> edges_;
  std::size_t num_users_ = 0;
  CsrIndex out_;
  std::vector<UserId> trustees_;
  std::vector<std::size_t> in_degree_;
  std::size_t skipped_self_loops_ = 0;
};

// Parses `user item rating timestamp` lines. Duplicate (user, item) pairs keep
// the rating with the latest timestamp, at the position of the first
// occurrence. Throws DataError on malformed input.
RatingDataset parse_ratings(std::istream& in, const ParseFormat& format, RatingScale scale,
                            const std::string& source = "<stream>");
RatingDataset parse_ratings(const std::filesystem::path& path, const ParseFormat& format,
                            RatingScale scale);

// Parses `truster trustee [weight]` lines, interning users into `users`.
// Duplicate edges keep the first; self-loops are skipped and counted.
TrustNetwork parse_trust(std::istream& in, const ParseFormat& format, IdMap& users,
                         const std::string& source = "<stream>");
TrustNetwork parse_trust(const std::filesystem::path& path, const ParseFormat& format,
                         IdMap& users);

struct LoadedData {
  RatingDataset ratings;
  TrustNetwork trust;
};

// Parses ratings and (optionally) trust over one shared user id space.
LoadedData load_dataset(const std::filesystem::path& ratings_path,
                        const std::optional<std::filesystem::path>& trust_path,
                        const ParseFormat& format, RatingScale scale);

// Canonical writers: space-delimited, newline-terminated, raw ids.
void write_ratings(std::ostream& out, const RatingDataset& d);
void write_ratings(const std::filesystem::path& path, const RatingDataset& d);
void write_trust(std::ostream& out, const TrustNetwork& t, const IdMap& users);
void write_trust(const std::filesystem::path& path, const TrustNetwork& t, const IdMap& users);

struct StatsReport {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_ratings = 0;
  std::size_t num_edges = 0;
  double rating_density = 0.0;  // |R| / (N M)
  double trust_density = 0.0;   // |T| / (N (N - 1))
  double mean_ratings_per_user = 0.0;
  std::size_t num_cold_users = 0;
  std::optional<double> mean_ratings_per_cold_user;
};

// Density denominators use the dataset's own N and M unless `universe`
// supplies the (users, items) of a parent population.
StatsReport dataset_stats(const RatingDataset& d, const TrustNetwork& t,
                          std::size_t cold_threshold = 5,
                          std::optional<std::pair<std::size_t, std::size_t>> universe = {});

struct Split {
  RatingDataset train;
  RatingDataset test;
};

// Uniform per-rating split. Exactly round(fraction * |R|) records go to train.
Split split_random(const RatingDataset& d, double train_fraction, std::uint64_t seed);

// Users with fewer than `threshold` ratings in `train` (including users with
// none). Sorted ascending.
std::vector<UserId> cold_start_users(const RatingDataset& train, std::size_t threshold = 5);

}  // namespace aspectmf
