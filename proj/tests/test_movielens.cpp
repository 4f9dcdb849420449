#include <gmc/log.hpp>
#include <gmc/movielens.hpp>

#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "oracles.hpp"

namespace {

using namespace gmc;
namespace ml = gmc::movielens;
namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("gmc_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path write(const std::string& file, const std::string& content) const {
    std::ofstream(path_ / file, std::ios::binary) << content;
    return path_ / file;
  }

 private:
  fs::path path_;
};

class CaptureWarnings {
 public:
  CaptureWarnings() {
    old_ = log::set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~CaptureWarnings() { log::set_warning_sink(old_); }
  std::vector<std::string> messages;

 private:
  log::Sink old_;
};

const char* kGenres0 = "|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0";

TEST(MovieLens, ParsesRatings) {
  TempDir d("ratings");
  const auto p = d.write("u.data", "196\t242\t3\t881250949\r\n186\t302\t3\t891717742\n\n22\t377\t1\t878887116\n");
  const auto r = ml::parse_ratings(p);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0], (ml::RatingRecord{196, 242, 3, 881250949}));
  EXPECT_EQ(r[2].rating, 1);
}

TEST(MovieLens, RatingErrorsCarryLineNumbers) {
  TempDir d("bad_ratings");
  const auto bad_value = d.write("a", "1\t2\t3\t4\n1\t2\t9\t4\n");
  try {
    ml::parse_ratings(bad_value);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(ml::parse_ratings(d.write("b", "1\t2\t3\n")), ParseError);
  EXPECT_THROW(ml::parse_ratings(d.write("c", "1\tx\t3\t4\n")), ParseError);
  EXPECT_THROW(ml::parse_ratings(d.path() / "missing"), ParseError);
}

TEST(MovieLens, ParsesUsersAgainstVocabulary) {
  TempDir d("users");
  const ml::OccupationVocabulary vocab({"engineer", "student"});
  const auto p = d.write("u.user", "1|24|M|engineer|85711\n2|53|F|student|94043\n");
  const auto u = ml::parse_users(p, vocab);
  ASSERT_EQ(u.size(), 2u);
  EXPECT_EQ(u[1], (ml::UserAttributes{2, 53, ml::Gender::kFemale, "student", "94043"}));
  EXPECT_THROW(ml::parse_users(d.write("x", "1|24|M|pilot|85711\n"), vocab), ParseError);
  EXPECT_THROW(ml::parse_users(d.write("y", "1|24|X|student|85711\n"), vocab), ParseError);
  EXPECT_THROW(ml::parse_users(d.write("z", "1|24|M|student\n"), vocab), ParseError);
}

TEST(MovieLens, ParsesItemsAndWarnsOnMissingGenre) {
  TempDir d("items");
  std::string with_genre = "1|Toy Story (1995)|01-Jan-1995||http://x|0|0|0|1|1|1|0|0|0|0|0|0|0|0|0|0|0|0|0\n";
  std::string no_genre = std::string("2|Blank|01-Jan-1995||http://y") + kGenres0 + "\n";
  CaptureWarnings w;
  const auto m = ml::parse_items(d.write("u.item", with_genre + no_genre));
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].title, "Toy Story (1995)");
  EXPECT_TRUE(m[0].genres[3] && m[0].genres[4] && m[0].genres[5]);
  EXPECT_FALSE(m[1].has_genre());
  ASSERT_EQ(w.messages.size(), 1u);
  EXPECT_NE(w.messages[0].find("no genre"), std::string::npos);
  EXPECT_THROW(ml::parse_items(d.write("bad", "3|T|d||u|0|2|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0\n")), ParseError);
}

TEST(MovieLens, FeaturesHaveNonzeroNorm) {
  const ml::OccupationVocabulary vocab({"a", "b", "c"});
  const ml::UserAttributes u{1, 30, ml::Gender::kFemale, "b", "00000"};
  const FeatureVector fu = ml::featurize_user(u, vocab);
  ASSERT_EQ(fu.size(), 6);
  EXPECT_DOUBLE_EQ(fu(0), 30.0 / 50.0);
  EXPECT_EQ(fu(1), 0.0);
  EXPECT_EQ(fu(2), 1.0);
  EXPECT_EQ(fu(4), 1.0);
  ml::MovieAttributes empty{7, "t", {}};
  const FeatureVector fm = ml::featurize_movie(empty);
  EXPECT_GT(fm.norm(), 0.0);
  EXPECT_NEAR(fm.sum(), 1.0, 1e-15);
}

TEST(MovieLens, LoadKeepsLastDuplicateAndWarns) {
  TempDir d("dups");
  d.write("u.occupation", "student\n");
  d.write("u.user", "1|20|M|student|1\n2|21|F|student|2\n");
  d.write("u.item", std::string("10|A|d||u|0|1") + std::string(kGenres0).substr(4) + "\n");
  d.write("u.data", "1\t10\t3\t100\n2\t10\t4\t101\n1\t10\t5\t102\n");
  CaptureWarnings w;
  const ml::Dataset ds = ml::load_dataset(ml::DatasetPaths::in_directory(d.path()));
  ASSERT_EQ(ds.ratings.size(), 2u);
  EXPECT_EQ(ds.ratings[0], (ml::RatingRecord{2, 10, 4, 101}));
  EXPECT_EQ(ds.ratings[1], (ml::RatingRecord{1, 10, 5, 102}));
  EXPECT_EQ(w.messages.size(), 1u);
}

TEST(MovieLens, LoadRejectsUnknownReferences) {
  TempDir d("unknown");
  d.write("u.occupation", "student\n");
  d.write("u.user", "1|20|M|student|1\n");
  d.write("u.item", std::string("10|A|d||u|0|1") + std::string(kGenres0).substr(4) + "\n");
  d.write("u.data", "1\t11\t3\t100\n");
  EXPECT_THROW(ml::load_dataset(ml::DatasetPaths::in_directory(d.path())), InvalidArgument);
}

class SyntheticData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("synthetic");
    info_ = oracle::write_synthetic_movielens(dir_->path(), 60, 80, 0.2, 3);
  }
  static void TearDownTestSuite() { delete dir_; }
  static TempDir* dir_;
  static oracle::SyntheticMovieLens info_;
};
TempDir* SyntheticData::dir_ = nullptr;
oracle::SyntheticMovieLens SyntheticData::info_;

TEST_F(SyntheticData, LoadsCounts) {
  const auto paths = ml::DatasetPaths::in_directory(info_.dir);
  EXPECT_TRUE(paths.all_exist());
  const ml::Dataset d = ml::load_dataset(paths);
  EXPECT_EQ(d.users.size(), 60u);
  EXPECT_EQ(d.movies.size(), 80u);
  EXPECT_EQ(d.ratings.size(), static_cast<std::size_t>(info_.n_ratings));
  EXPECT_EQ(d.occupations.size(), 21u);
  for (const auto& e : ml::user_entities(d)) EXPECT_GT(e.features.norm(), 0.0);
  for (const auto& e : ml::movie_entities(d)) EXPECT_GT(e.features.norm(), 0.0);
}

TEST_F(SyntheticData, SnapshotRoundTrip) {
  const ml::Dataset d = ml::load_dataset(ml::DatasetPaths::in_directory(info_.dir));
  std::stringstream ss;
  ml::write_snapshot(ss, d);
  const ml::Dataset back = ml::read_snapshot(ss);
  EXPECT_EQ(back, d);
  std::stringstream again;
  ml::write_snapshot(again, back);
  std::stringstream first;
  ml::write_snapshot(first, d);
  EXPECT_EQ(again.str(), first.str());
}

TEST_F(SyntheticData, SnapshotRejectsCorruption) {
  const ml::Dataset d = ml::load_dataset(ml::DatasetPaths::in_directory(info_.dir));
  std::stringstream ss;
  ml::write_snapshot(ss, d);
  std::string text = ss.str();
  std::istringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(ml::read_snapshot(truncated), ParseError);
  std::istringstream bad_header("not-a-snapshot 1\n");
  EXPECT_THROW(ml::read_snapshot(bad_header), ParseError);
}

TEST_F(SyntheticData, SubsampleIsDeterministicAndConsistent) {
  const ml::Dataset d = ml::load_dataset(ml::DatasetPaths::in_directory(info_.dir));
  const ml::Dataset a = ml::subsample(d, 30, 40, 9), b = ml::subsample(d, 30, 40, 9), c = ml::subsample(d, 30, 40, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(a.users.size(), 30u);
  EXPECT_EQ(a.movies.size(), 40u);
  EXPECT_NO_THROW(a.validate());
  std::size_t expected = 0;
  for (const auto& r : d.ratings) {
    const bool u = std::any_of(a.users.begin(), a.users.end(), [&](const auto& x) { return x.user_id == r.user_id; });
    const bool m = std::any_of(a.movies.begin(), a.movies.end(), [&](const auto& x) { return x.item_id == r.item_id; });
    expected += (u && m) ? 1 : 0;
  }
  EXPECT_EQ(a.ratings.size(), expected);
  EXPECT_THROW(ml::subsample(d, 61, 10, 0), InvalidArgument);
}

TEST_F(SyntheticData, SplitPartitionsRatings) {
  const ml::Dataset d = ml::load_dataset(ml::DatasetPaths::in_directory(info_.dir));
  const double f = 1935.0 / 20541.0;
  const ml::Split s = ml::split(d, f, 4);
  const auto n = d.ratings.size();
  EXPECT_EQ(s.test.size(), static_cast<std::size_t>(std::llround(f * static_cast<double>(n))));
  EXPECT_EQ(s.train.size() + s.test.size(), n);
  EXPECT_EQ(s.train.n_rows(), 60);
  EXPECT_EQ(s.train.n_cols(), 80);
  std::set<std::pair<Index, Index>> cells;
  for (const auto& t : s.train) cells.insert({t.row, t.col});
  for (const auto& t : s.test) EXPECT_TRUE(cells.insert({t.row, t.col}).second);
  const ml::Split again = ml::split(d, f, 4);
  ASSERT_EQ(again.test.size(), s.test.size());
  for (std::size_t i = 0; i < s.test.size(); ++i) {
    EXPECT_EQ(again.test[i].row, s.test[i].row);
    EXPECT_EQ(again.test[i].col, s.test[i].col);
  }
  EXPECT_THROW(ml::split(d, 0.0, 1), InvalidArgument);
  EXPECT_THROW(ml::split(d, 1.0, 1), InvalidArgument);
}

}  // namespace
