#pragma once

// Readers for the MovieLens-100k file layout (u.data, u.user, u.item,
// u.occupation), attribute featurizers, seeded subsampling and train/test
// splitting, and a plain-text dataset snapshot.

#include <gmc/common.hpp>
#include <gmc/kernels.hpp>
#include <gmc/log.hpp>
#include <gmc/observations.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gmc::movielens {

inline constexpr std::size_t kGenreCount = 19;
inline constexpr double kAgeScale = 50.0;

struct RatingRecord {
  std::uint64_t user_id = 0;
  std::uint64_t item_id = 0;
  int rating = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

enum class Gender { kMale, kFemale };

struct UserAttributes {
  std::uint64_t user_id = 0;
  int age = 0;
  Gender gender = Gender::kMale;
  std::string occupation;
  std::string zip;

  friend bool operator==(const UserAttributes&, const UserAttributes&) = default;
};

struct MovieAttributes {
  std::uint64_t item_id = 0;
  std::string title;
  std::array<bool, kGenreCount> genres{};

  bool has_genre() const { return std::any_of(genres.begin(), genres.end(), [](bool b) { return b; }); }

  friend bool operator==(const MovieAttributes&, const MovieAttributes&) = default;
};

/// Ordered list of occupation tokens; the index is the one-hot slot.
class OccupationVocabulary {
 public:
  OccupationVocabulary() = default;
  explicit OccupationVocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      gmc::detail::require(!tokens_[i].empty(), "empty occupation token");
      gmc::detail::require(index_.emplace(tokens_[i], i).second, "duplicate occupation token '", tokens_[i], "'");
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<std::size_t> index_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const OccupationVocabulary& a, const OccupationVocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Dataset {
  OccupationVocabulary occupations;
  std::vector<UserAttributes> users;
  std::vector<MovieAttributes> movies;
  std::vector<RatingRecord> ratings;

  /// Every rating references a known user and movie.
  void validate() const {
    std::unordered_map<std::uint64_t, bool> u, m;
    for (const auto& x : users) gmc::detail::require(u.emplace(x.user_id, true).second, "duplicate user id ", x.user_id);
    for (const auto& x : movies) gmc::detail::require(m.emplace(x.item_id, true).second, "duplicate movie id ", x.item_id);
    for (const auto& r : ratings) {
      gmc::detail::require(u.count(r.user_id) > 0, "rating references unknown user ", r.user_id);
      gmc::detail::require(m.count(r.item_id) > 0, "rating references unknown movie ", r.item_id);
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetPaths {
  std::filesystem::path ratings;
  std::filesystem::path users;
  std::filesystem::path items;
  std::filesystem::path occupations;

  /// Canonical file names inside a MovieLens-100k directory.
  static DatasetPaths in_directory(const std::filesystem::path& dir) {
    return {dir / "u.data", dir / "u.user", dir / "u.item", dir / "u.occupation"};
  }

  bool all_exist() const {
    namespace fs = std::filesystem;
    return fs::exists(ratings) && fs::exists(users) && fs::exists(items) && fs::exists(occupations);
  }
};

namespace internal {

using gmc::detail::concat;

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
  while (!s.empty() && (s.front() == ' ')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ')) s.remove_suffix(1);
  Int v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(concat(path.string(), ": cannot open file"));
  return in;
}

[[noreturn]] inline void fail(const std::string& where, std::size_t line, const std::string& what) {
  throw ParseError(concat(where, ":", line, ": ", what));
}

inline std::vector<RatingRecord> read_ratings(std::istream& in, const std::string& where) {
  std::vector<RatingRecord> out;
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_fields(line, '\t');
    if (f.size() != 4) fail(where, ln, concat("expected 4 tab-separated fields, got ", f.size()));
    const auto user = parse_int<std::uint64_t>(f[0]);
    const auto item = parse_int<std::uint64_t>(f[1]);
    const auto rating = parse_int<int>(f[2]);
    const auto ts = parse_int<std::int64_t>(f[3]);
    if (!user || !item || !rating || !ts) fail(where, ln, "malformed rating line");
    if (*rating < 1 || *rating > 5) fail(where, ln, concat("rating ", *rating, " outside [1, 5]"));
    out.push_back({*user, *item, *rating, *ts});
  }
  return out;
}

}  // namespace internal

/// Tab-separated user, item, rating, timestamp; one record per line.
inline std::vector<RatingRecord> parse_ratings(const std::filesystem::path& path) {
  auto in = internal::open(path);
  return internal::read_ratings(in, path.string());
}

/// One token per line.
inline OccupationVocabulary parse_occupations(const std::filesystem::path& path) {
  auto in = internal::open(path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    internal::strip_cr(line);
    if (!line.empty()) tokens.push_back(line);
  }
  return OccupationVocabulary(std::move(tokens));
}

/// Pipe-separated id|age|gender|occupation|zip.
inline std::vector<UserAttributes> parse_users(const std::filesystem::path& path, const OccupationVocabulary& vocab) {
  auto in = internal::open(path);
  const std::string where = path.string();
  std::vector<UserAttributes> out;
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    internal::strip_cr(line);
    if (line.empty()) continue;
    const auto f = internal::split_fields(line, '|');
    if (f.size() != 5) internal::fail(where, ln, internal::concat("expected 5 pipe-separated fields, got ", f.size()));
    const auto id = internal::parse_int<std::uint64_t>(f[0]);
    const auto age = internal::parse_int<int>(f[1]);
    if (!id || !age || *age <= 0) internal::fail(where, ln, "malformed user id or age");
    Gender gender;
    if (f[2] == "M") {
      gender = Gender::kMale;
    } else if (f[2] == "F") {
      gender = Gender::kFemale;
    } else {
      internal::fail(where, ln, internal::concat("unknown gender '", f[2], "'"));
    }
    if (!vocab.index_of(f[3])) internal::fail(where, ln, internal::concat("unknown occupation '", f[3], "'"));
    out.push_back({*id, *age, gender, std::string(f[3]), std::string(f[4])});
  }
  return out;
}

/// Pipe-separated id|title|release date|video date|URL|19 genre flags.
/// Movies without any genre are kept; a warning is logged.
inline std::vector<MovieAttributes> parse_items(const std::filesystem::path& path) {
  auto in = internal::open(path);
  const std::string where = path.string();
  std::vector<MovieAttributes> out;
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    internal::strip_cr(line);
    if (line.empty()) continue;
    const auto f = internal::split_fields(line, '|');
    if (f.size() < 2 + kGenreCount)
      internal::fail(where, ln, internal::concat("expected at least ", 2 + kGenreCount, " fields, got ", f.size()));
    const auto id = internal::parse_int<std::uint64_t>(f[0]);
    if (!id) internal::fail(where, ln, "malformed movie id");
    MovieAttributes m;
    m.item_id = *id;
    m.title = std::string(f[1]);
    const std::size_t first_flag = f.size() - kGenreCount;
    for (std::size_t g = 0; g < kGenreCount; ++g) {
      const auto flag = f[first_flag + g];
      if (flag == "1") {
        m.genres[g] = true;
      } else if (flag != "0") {
        internal::fail(where, ln, internal::concat("genre flag '", flag, "' is not 0 or 1"));
      }
    }
    if (!m.has_genre()) gmc::log::warn(internal::concat(where, ":", ln, ": movie ", m.item_id, " has no genre flag"));
    out.push_back(std::move(m));
  }
  return out;
}

/// Reads all four files. Repeated (user, movie) ratings keep the last
/// occurrence and log a warning.
inline Dataset load_dataset(const DatasetPaths& paths) {
  Dataset d;
  d.occupations = parse_occupations(paths.occupations);
  d.users = parse_users(paths.users, d.occupations);
  d.movies = parse_items(paths.items);
  auto ratings = parse_ratings(paths.ratings);

  std::map<std::pair<std::uint64_t, std::uint64_t>, std::size_t> last;
  for (std::size_t i = 0; i < ratings.size(); ++i) {
    auto [it, inserted] = last.insert_or_assign({ratings[i].user_id, ratings[i].item_id}, i);
    if (!inserted)
      gmc::log::warn(internal::concat("duplicate rating for user ", ratings[i].user_id, ", movie ", ratings[i].item_id,
                                    "; keeping the last"));
  }
  if (last.size() == ratings.size()) {
    d.ratings = std::move(ratings);
  } else {
    for (std::size_t i = 0; i < ratings.size(); ++i)
      if (last.at({ratings[i].user_id, ratings[i].item_id}) == i) d.ratings.push_back(ratings[i]);
  }
  d.validate();
  return d;
}

/// age / 50, gender one-hot (M, F), occupation one-hot.
inline FeatureVector featurize_user(const UserAttributes& u, const OccupationVocabulary& vocab) {
  FeatureVector v = FeatureVector::Zero(static_cast<Index>(3 + vocab.size()));
  v(0) = static_cast<double>(u.age) / kAgeScale;
  v(u.gender == Gender::kMale ? 1 : 2) = 1.0;
  const auto occ = vocab.index_of(u.occupation);
  gmc::detail::require(occ.has_value(), "unknown occupation '", u.occupation, "'");
  v(static_cast<Index>(3 + *occ)) = 1.0;
  return v;
}

/// The 19 genre flags; a movie without genres gets the uniform vector 1/19.
inline FeatureVector featurize_movie(const MovieAttributes& m) {
  FeatureVector v(static_cast<Index>(kGenreCount));
  if (!m.has_genre()) {
    v.setConstant(1.0 / static_cast<double>(kGenreCount));
    return v;
  }
  for (std::size_t g = 0; g < kGenreCount; ++g) v(static_cast<Index>(g)) = m.genres[g] ? 1.0 : 0.0;
  return v;
}

inline std::vector<Entity> user_entities(const Dataset& d) {
  std::vector<Entity> out;
  out.reserve(d.users.size());
  for (const auto& u : d.users) out.push_back({u.user_id, featurize_user(u, d.occupations)});
  return out;
}

inline std::vector<Entity> movie_entities(const Dataset& d) {
  std::vector<Entity> out;
  out.reserve(d.movies.size());
  for (const auto& m : d.movies) out.push_back({m.item_id, featurize_movie(m)});
  return out;
}

/// Uniform seeded subset of users and movies; ratings are restricted to the
/// retained cross product. Input order is preserved.
inline Dataset subsample(const Dataset& d, std::size_t n_users, std::size_t n_movies, std::uint64_t seed) {
  gmc::detail::require(n_users <= d.users.size(), "cannot keep ", n_users, " of ", d.users.size(), " users");
  gmc::detail::require(n_movies <= d.movies.size(), "cannot keep ", n_movies, " of ", d.movies.size(), " movies");
  std::mt19937_64 rng(seed);
  auto pick = [&rng](std::size_t total, std::size_t keep) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  const auto ui = pick(d.users.size(), n_users);
  const auto mi = pick(d.movies.size(), n_movies);

  Dataset out;
  out.occupations = d.occupations;
  std::unordered_map<std::uint64_t, bool> keep_u, keep_m;
  for (auto i : ui) {
    out.users.push_back(d.users[i]);
    keep_u[d.users[i].user_id] = true;
  }
  for (auto i : mi) {
    out.movies.push_back(d.movies[i]);
    keep_m[d.movies[i].item_id] = true;
  }
  for (const auto& r : d.ratings)
    if (keep_u.count(r.user_id) && keep_m.count(r.item_id)) out.ratings.push_back(r);
  return out;
}

/// Ratings partitioned into training observations and held-out test
/// triplets on the grid users x movies of the dataset.
struct Split {
  ObservationSet train;
  std::vector<Triplet> test;
  std::uint64_t seed = 0;
  std::vector<EntityId> row_ids;  // users, grid row order
  std::vector<EntityId> col_ids;  // movies, grid column order
};

/// Uniform seeded partition over ratings; round(test_fraction * n) go to test.
inline Split split(const Dataset& d, double test_fraction, std::uint64_t seed) {
  gmc::detail::require(test_fraction > 0.0 && test_fraction < 1.0, "test fraction must lie in (0, 1), got ",
                       test_fraction);
  const std::size_t n = d.ratings.size();
  gmc::detail::require(n >= 2, "need at least two ratings to split, got ", n);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  std::unordered_map<std::uint64_t, Index> row_of, col_of;
  std::vector<EntityId> row_ids, col_ids;
  for (const auto& u : d.users) {
    row_of[u.user_id] = static_cast<Index>(row_ids.size());
    row_ids.push_back(u.user_id);
  }
  for (const auto& m : d.movies) {
    col_of[m.item_id] = static_cast<Index>(col_ids.size());
    col_ids.push_back(m.item_id);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<bool> is_test(n, false);
  for (std::size_t k = 0; k < n_test; ++k) is_test[order[k]] = true;

  std::vector<Triplet> train, test;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = d.ratings[i];
    const Triplet t{row_of.at(r.user_id), col_of.at(r.item_id), static_cast<double>(r.rating)};
    (is_test[i] ? test : train).push_back(t);
  }
  return Split{ObservationSet(static_cast<Index>(row_ids.size()), static_cast<Index>(col_ids.size()),
                              std::move(train)),
               std::move(test), seed, std::move(row_ids), std::move(col_ids)};
}

inline constexpr std::string_view kSnapshotMagic = "gmc-dataset-snapshot";
inline constexpr int kSnapshotVersion = 1;

/// Text snapshot: a magic/version line, then counted sections for
/// occupations, users, movies and ratings, then "end".
inline void write_snapshot(std::ostream& out, const Dataset& d) {
  out << kSnapshotMagic << ' ' << kSnapshotVersion << '\n';
  out << "occupations " << d.occupations.size() << '\n';
  for (const auto& t : d.occupations.tokens()) out << t << '\n';
  out << "users " << d.users.size() << '\n';
  for (const auto& u : d.users)
    out << u.user_id << '\t' << u.age << '\t' << (u.gender == Gender::kMale ? 'M' : 'F') << '\t' << u.occupation
        << '\t' << u.zip << '\n';
  out << "movies " << d.movies.size() << '\n';
  for (const auto& m : d.movies) {
    gmc::detail::require(m.title.find_first_of("\t\n") == std::string::npos, "movie ", m.item_id,
                         " title contains a tab or newline");
    out << m.item_id << '\t';
    for (bool g : m.genres) out << (g ? '1' : '0');
    out << '\t' << m.title << '\n';
  }
  out << "ratings " << d.ratings.size() << '\n';
  for (const auto& r : d.ratings) out << r.user_id << '\t' << r.item_id << '\t' << r.rating << '\t' << r.timestamp << '\n';
  out << "end\n";
}

inline Dataset read_snapshot(std::istream& in) {
  const std::string where = "snapshot";
  std::size_t ln = 0;
  std::string line;
  auto next = [&]() -> std::string& {
    if (!std::getline(in, line)) internal::fail(where, ln + 1, "unexpected end of snapshot");
    ++ln;
    internal::strip_cr(line);
    return line;
  };
  auto section = [&](std::string_view name) -> std::size_t {
    const auto f = internal::split_fields(next(), ' ');
    if (f.size() != 2 || f[0] != name) internal::fail(where, ln, internal::concat("expected section '", name, "'"));
    const auto n = internal::parse_int<std::size_t>(f[1]);
    if (!n) internal::fail(where, ln, "malformed section count");
    return *n;
  };

  {
    const auto f = internal::split_fields(next(), ' ');
    if (f.size() != 2 || f[0] != kSnapshotMagic || internal::parse_int<int>(f[1]) != kSnapshotVersion)
      internal::fail(where, ln, "not a dataset snapshot (bad header)");
  }
  Dataset d;
  std::vector<std::string> tokens(section("occupations"));
  for (auto& t : tokens) t = next();
  d.occupations = OccupationVocabulary(std::move(tokens));

  d.users.resize(section("users"));
  for (auto& u : d.users) {
    const auto f = internal::split_fields(next(), '\t');
    if (f.size() != 5) internal::fail(where, ln, "malformed user record");
    const auto id = internal::parse_int<std::uint64_t>(f[0]);
    const auto age = internal::parse_int<int>(f[1]);
    if (!id || !age || (f[2] != "M" && f[2] != "F")) internal::fail(where, ln, "malformed user record");
    if (!d.occupations.index_of(f[3])) internal::fail(where, ln, internal::concat("unknown occupation '", f[3], "'"));
    u = {*id, *age, f[2] == "M" ? Gender::kMale : Gender::kFemale, std::string(f[3]), std::string(f[4])};
  }

  d.movies.resize(section("movies"));
  for (auto& m : d.movies) {
    const std::string& l = next();
    const auto t1 = l.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : l.find('\t', t1 + 1);
    if (t2 == std::string::npos) internal::fail(where, ln, "malformed movie record");
    const auto id = internal::parse_int<std::uint64_t>(std::string_view(l).substr(0, t1));
    const std::string_view flags = std::string_view(l).substr(t1 + 1, t2 - t1 - 1);
    if (!id || flags.size() != kGenreCount) internal::fail(where, ln, "malformed movie record");
    m.item_id = *id;
    for (std::size_t g = 0; g < kGenreCount; ++g) {
      if (flags[g] != '0' && flags[g] != '1') internal::fail(where, ln, "genre flag is not 0 or 1");
      m.genres[g] = flags[g] == '1';
    }
    m.title = l.substr(t2 + 1);
  }

  const std::size_t n_ratings = section("ratings");
  std::string block;
  for (std::size_t i = 0; i < n_ratings; ++i) {
    block += next();
    block += '\n';
  }
  std::istringstream rs(block);
  d.ratings = internal::read_ratings(rs, where);
  if (d.ratings.size() != n_ratings) internal::fail(where, ln, "rating count mismatch");
  if (next() != "end") internal::fail(where, ln, "expected 'end'");
  d.validate();
  return d;
}

/// Ratings in the tab-separated u.data layout.
inline void write_ratings(std::ostream& out, const std::vector<RatingRecord>& ratings) {
  for (const auto& r : ratings) out << r.user_id << '\t' << r.item_id << '\t' << r.rating << '\t' << r.timestamp << '\n';
}

}  // namespace gmc::movielens
