#include <gmc/diagnostics.hpp>
#include <gmc/experiment.hpp>

#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"

namespace {

using namespace gmc;
namespace ex = gmc::experiment;
namespace ml = gmc::movielens;

ex::ResultRow row(double cv, Index rank, double lambda) {
  ex::ResultRow r;
  r.cell = {0.5, 0.5, rank, lambda};
  r.cv_mse = cv;
  return r;
}

TEST(Experiment, EvaluateMse) {
  const std::vector<double> p{1, 2, 3}, t{1, 0, 6};
  EXPECT_DOUBLE_EQ(ex::evaluate_mse(p, t), (0.0 + 4.0 + 9.0) / 3.0);
  EXPECT_THROW(ex::evaluate_mse(std::vector<double>{1}, t), InvalidArgument);
  EXPECT_THROW(ex::evaluate_mse(std::vector<double>{}, std::vector<double>{}), InvalidArgument);
}

TEST(Experiment, GridCellsLambdaFastest) {
  ex::GridSpec g;
  g.etas = {0, 1};
  g.zetas = {0.5};
  g.ranks = {2, 3};
  g.lambdas = {1, 2};
  const auto cells = ex::grid_cells(g);
  ASSERT_EQ(cells.size(), 8u);
  EXPECT_EQ(cells[1].lambda, 2);
  EXPECT_EQ(cells[2].rank, 3);
  EXPECT_EQ(cells[4].eta, 1);
  g.lambdas = {0};
  EXPECT_THROW(ex::grid_cells(g), InvalidArgument);
  g.lambdas = {1};
  g.etas = {1.5};
  EXPECT_THROW(ex::grid_cells(g), InvalidArgument);
}

TEST(Experiment, DefaultGridHasPublishedValues) {
  const ex::GridSpec g;
  EXPECT_EQ(g.etas, (std::vector<double>{0, 0.15, 0.5, 0.85, 1}));
  EXPECT_EQ(g.ranks, (std::vector<Index>{50, 80, 130, 200}));
  EXPECT_EQ(g.lambdas, (std::vector<double>{25e-6, 5e-6, 1e-6, 0.2e-6, 0.04e-6}));
  EXPECT_EQ(ex::grid_cells(g).size(), 500u);
}

TEST(Experiment, SelectBestTieBreaking) {
  EXPECT_EQ(ex::select_best({row(1.0, 5, 1), row(0.5, 9, 1), row(0.7, 1, 1)}), 1u);
  EXPECT_EQ(ex::select_best({row(0.5, 9, 1), row(0.5, 4, 1)}), 1u);
  EXPECT_EQ(ex::select_best({row(0.5, 4, 1), row(0.5, 4, 2)}), 1u);
  EXPECT_EQ(ex::select_best({row(0.5, 4, 2), row(0.5, 4, 2)}), 0u);
  const double inf = std::numeric_limits<double>::infinity(), nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(ex::select_best({row(nan, 1, 1), row(inf, 1, 1), row(99.0, 9, 1)}), 2u);
  EXPECT_EQ(ex::select_best({row(nan, 1, 1), row(inf, 1, 1)}), 0u);
  EXPECT_THROW(ex::select_best({}), InvalidArgument);
}

TEST(Experiment, FoldsAreBalancedAndSeeded) {
  const auto f = ex::assign_folds(103, {5, 7});
  std::vector<int> count(5, 0);
  for (int x : f) ++count[static_cast<std::size_t>(x)];
  for (int c : count) EXPECT_TRUE(c == 20 || c == 21);
  EXPECT_EQ(f, ex::assign_folds(103, {5, 7}));
  EXPECT_NE(f, ex::assign_folds(103, {5, 8}));
  EXPECT_THROW(ex::assign_folds(3, {5, 0}), InvalidArgument);
  EXPECT_THROW(ex::assign_folds(10, {1, 0}), InvalidArgument);
}

TEST(Experiment, ParallelForVisitsEachIndexOnce) {
  std::vector<std::atomic<int>> hits(97);
  ex::parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(Experiment, FormatNumber) {
  EXPECT_EQ(ex::format_number(0.15), "0.15");
  EXPECT_EQ(ex::format_number(2e-7), "2e-07");
  EXPECT_EQ(ex::format_number(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(ex::format_number(std::numeric_limits<double>::quiet_NaN()), "nan");
}

TEST(Experiment, CsvLayout) {
  ex::ResultRow r = row(0.25, 3, 1e-6);
  r.test_mse = 0.5;
  r.wall_time_s = 1.5;
  std::ostringstream with, without;
  ex::write_csv(with, {r});
  ex::write_csv(without, {r}, false);
  EXPECT_EQ(with.str(), "eta,zeta,rank,lambda,cv_mse,test_mse,wall_time_s\n0.5,0.5,3,1e-06,0.25,0.5,1.5\n");
  EXPECT_EQ(without.str(), "eta,zeta,rank,lambda,cv_mse,test_mse,wall_time_s\n0.5,0.5,3,1e-06,0.25,0.5,0\n");
}

TEST(Experiment, ManifestRoundTrip) {
  ex::Manifest m;
  m.set("seed", 42);
  m.set("lambda", 2e-7);
  m.set("name", std::string("grid"));
  std::stringstream ss;
  m.write(ss);
  const ex::Manifest back = ex::Manifest::read(ss);
  EXPECT_EQ(back.entries(), m.entries());
  EXPECT_EQ(back.get("lambda").value(), "2e-07");
  EXPECT_FALSE(back.get("missing").has_value());
  std::istringstream bad("no equals sign\n");
  EXPECT_THROW(ex::Manifest::read(bad), ParseError);
}

class SyntheticRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto dir = std::filesystem::temp_directory_path() / "gmc_test_experiment";
    std::filesystem::remove_all(dir);
    oracle::write_synthetic_movielens(dir, 50, 70, 0.15, 11);
    data_ = new ml::Dataset(ml::load_dataset(ml::DatasetPaths::in_directory(dir)));
    std::filesystem::remove_all(dir);
  }
  static void TearDownTestSuite() { delete data_; }

  static ex::RunConfig small_config(unsigned threads = 1) {
    ex::RunConfig cfg;
    cfg.subsample_users = 40;
    cfg.subsample_movies = 60;
    cfg.test_fraction = 0.1;
    cfg.seed = 5;
    cfg.grid.etas = {0.0, 1.0};
    cfg.grid.zetas = {0.0, 0.5};
    cfg.grid.ranks = {2};
    cfg.grid.lambdas = {1e-3, 1e-4};
    cfg.cv = {3, 5};
    cfg.sweep.solver.max_iter = 200;
    cfg.sweep.threads = threads;
    return cfg;
  }

  static ml::Dataset* data_;
};
ml::Dataset* SyntheticRun::data_ = nullptr;

TEST_F(SyntheticRun, PureDiracPredictsZeroForUnseenEntities) {
  const ml::Dataset d = ml::subsample(*data_, 40, 60, 2);
  const ml::Split s = ml::split(d, 0.1, 2);
  auto [problem, test] = ex::make_problem(d, s);
  std::vector<Triplet> kept;
  for (const auto& t : problem.train) {
    if (t.row == 0 || t.col == 0)
      test.push_back(t);
    else
      kept.push_back(t);
  }
  const ObservationSet train(problem.train.n_rows(), problem.train.n_cols(), kept);
  ex::SolverOptions opt;
  opt.max_iter = 100;
  const ex::CellFit dirac = ex::fit_cell(train, problem.rows, problem.cols, {0, 0, 2, 1e-3}, opt);
  const ex::CellFit attr = ex::fit_cell(train, problem.rows, problem.cols, {0.5, 0.5, 2, 1e-3}, opt);
  std::size_t unseen = 0;
  bool attr_nonzero = false;
  for (const auto& t : test)
    if (!dirac.row_seen[t.row] || !dirac.col_seen[t.col]) {
      ++unseen;
      EXPECT_EQ(dirac.predict(t.row, t.col), 0.0);
      attr_nonzero |= attr.predict(t.row, t.col) != 0.0;
    }
  EXPECT_FALSE(dirac.row_seen[0]);
  EXPECT_FALSE(dirac.col_seen[0]);
  EXPECT_EQ(unseen, ex::count_unseen_pairs(dirac, test));
  EXPECT_GT(unseen, 0u);
  EXPECT_TRUE(attr_nonzero);
}

TEST_F(SyntheticRun, TableIsDeterministicAndThreadInvariant) {
  const ex::RunReport a = ex::run_table(*data_, small_config(1));
  const ex::RunReport b = ex::run_table(*data_, small_config(1));
  const ex::RunReport c = ex::run_table(*data_, small_config(3));
  std::ostringstream sa, sb, sc;
  ex::write_csv(sa, a.table.rows, false);
  ex::write_csv(sb, b.table.rows, false);
  ex::write_csv(sc, c.table.rows, false);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(sa.str(), sc.str());
  EXPECT_EQ(a.table.selected, c.table.selected);
  EXPECT_EQ(a.table.rows.size(), 8u);
  EXPECT_LT(a.table.selected, a.table.rows.size());
  for (const auto& r : a.table.rows) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    EXPECT_TRUE(std::isfinite(r.cv_mse));
    EXPECT_TRUE(std::isfinite(r.test_mse));
  }
  EXPECT_EQ(a.n_train + a.n_test, a.n_ratings);
}

TEST_F(SyntheticRun, PureCollaborativeCornerIsWorstOnAttributeData) {
  const ex::RunReport rep = ex::run_table(*data_, small_config());
  double corner = 0.0, best_other = std::numeric_limits<double>::infinity();
  for (const auto& r : rep.summary) {
    if (r.cell.eta == 0.0 && r.cell.zeta == 0.0)
      corner = r.test_mse;
    else
      best_other = std::min(best_other, r.test_mse);
  }
  EXPECT_GT(corner, best_other);
  const auto& sel = rep.table.rows[rep.table.selected];
  EXPECT_FALSE(sel.cell.eta == 0.0 && sel.cell.zeta == 0.0);
}

// Targets mix a rank-2 bilinear term in the attributes with a rank-2 term
// tied to entity identity, plus noise. Neither pure kernel explains both.
ex::Problem mixed_problem(std::uint64_t seed) {
  diagnostics::RandomInstances r(seed);
  const Index nr = 40, nc = 50;
  auto rows = r.binary_entities(nr, 6), cols = r.binary_entities(nc, 6, 1000);
  Matrix fr(nr, 6), fc(nc, 6);
  for (Index i = 0; i < nr; ++i) fr.row(i) = rows[i].features.transpose() / rows[i].features.norm();
  for (Index j = 0; j < nc; ++j) fc.row(j) = cols[j].features.transpose() / cols[j].features.norm();
  const Matrix w = r.gaussian(6, 2) * r.gaussian(2, 6);
  const Matrix z = fr * w * fc.transpose() + r.gaussian(nr, 2) * r.gaussian(2, nc) / std::sqrt(2.0) +
                   0.1 * r.gaussian(nr, nc);
  std::bernoulli_distribution coin(0.3);
  std::vector<Triplet> t;
  for (Index j = 0; j < nc; ++j)
    for (Index i = 0; i < nr; ++i)
      if (coin(r.engine())) t.push_back({i, j, z(i, j)});
  return {ObservationSet(nr, nc, std::move(t)), std::move(rows), std::move(cols)};
}

TEST(SyntheticMixed, CvSelectsInteriorOverCorners) {
  std::vector<std::pair<double, double>> pairs{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  for (double a : {0.15, 0.5, 0.85})
    for (double b : {0.15, 0.5, 0.85}) pairs.push_back({a, b});
  std::vector<ex::Cell> cells;
  for (const auto& [eta, zeta] : pairs)
    for (Index d : {Index{4}, Index{6}})
      for (double l : {1e-2, 1e-3, 1e-4}) cells.push_back({eta, zeta, d, l});

  int interior = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ex::SweepOptions opt;
    opt.solver.seed = seed;
    const ex::ResultTable tab = ex::evaluate_cells(mixed_problem(seed), cells, ex::CVConfig{3, seed}, opt);
    const ex::Cell& sel = tab.rows[tab.selected].cell;
    const bool corner = (sel.eta == 0.0 || sel.eta == 1.0) && (sel.zeta == 0.0 || sel.zeta == 1.0);
    interior += corner ? 0 : 1;
  }
  EXPECT_GE(interior, 8);
}

TEST_F(SyntheticRun, SummaryPicksLambdaByCv) {
  const ex::RunReport rep = ex::run_table(*data_, small_config());
  ASSERT_EQ(rep.summary.size(), 4u);
  for (const auto& s : rep.summary)
    for (const auto& r : rep.table.rows)
      if (r.cell.eta == s.cell.eta && r.cell.zeta == s.cell.zeta && r.cell.rank == s.cell.rank)
        EXPECT_LE(s.cv_mse, r.cv_mse);
}

TEST_F(SyntheticRun, FailedCellsAreRecordedNotFatal) {
  const ml::Dataset d = ml::subsample(*data_, 40, 60, 5);
  const ml::Split s = ml::split(d, 0.1, 5);
  auto [problem, test] = ex::make_problem(d, s);
  std::vector<std::string> warnings;
  auto old = log::set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  ex::SweepOptions opt;
  opt.solver.max_iter = 50;
  const ex::ResultTable t = ex::evaluate_cells(problem, {{0.5, 0.5, 0, 1e-3}, {0.5, 0.5, 2, 1e-3}}, {3, 1}, opt, test);
  log::set_warning_sink(old);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_TRUE(std::isinf(t.rows[0].cv_mse));
  EXPECT_FALSE(t.rows[0].error.empty());
  EXPECT_TRUE(std::isfinite(t.rows[1].cv_mse));
  EXPECT_EQ(t.selected, 1u);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST_F(SyntheticRun, ManifestRecordsRun) {
  const ex::RunConfig cfg = small_config();
  const ex::RunReport rep = ex::run_table(*data_, cfg);
  const ex::Manifest m = ex::make_manifest(cfg, rep, "grid");
  EXPECT_EQ(m.get("seed").value(), "5");
  EXPECT_EQ(m.get("cv.folds").value(), "3");
  EXPECT_EQ(m.get("grid.lambdas").value(), "0.001,0.0001");
  EXPECT_EQ(m.get("selected.index").value(), std::to_string(rep.table.selected));
  EXPECT_EQ(m.get("split.test").value(), std::to_string(rep.n_test));
  EXPECT_TRUE(m.get("split.unseen_test_pairs").has_value());
}

TEST_F(SyntheticRun, EmbeddingModelRoundTripPredictsLikeFit) {
  const ml::Dataset d = ml::subsample(*data_, 40, 60, 8);
  const ml::Split s = ml::split(d, 0.2, 8);
  auto [problem, test] = ex::make_problem(d, s);
  const ex::Cell cell{0.5, 0.15, 2, 1e-3};
  ex::SolverOptions opt;
  opt.max_iter = 100;
  const ex::CellFit f = ex::fit_cell(problem.train, problem.rows, problem.cols, cell, opt);
  const auto model = ex::EmbeddingModel::from_fit(f, cell, problem.rows, problem.cols);
  std::stringstream ss;
  model.write(ss);
  const auto back = ex::EmbeddingModel::read(ss);
  EXPECT_EQ(back.cell.rank, 2);
  EXPECT_EQ(back.cell.zeta, 0.15);
  for (const auto& t : test)
    EXPECT_DOUBLE_EQ(back.predict(s.row_ids[t.row], s.col_ids[t.col]), f.predict(t.row, t.col));
  EXPECT_EQ(back.predict(999999, s.col_ids[0]), 0.0);
  std::istringstream bad("gmc-factor-model 2\n");
  EXPECT_THROW(ex::EmbeddingModel::read(bad), ParseError);
}

}  // namespace
