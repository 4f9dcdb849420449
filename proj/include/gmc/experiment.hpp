#pragma once

// Hyperparameter sweep over interpolated kernels (eta for rows, zeta for
// columns), rank d and ridge weight lambda, with K-fold cross-validation,
// held-out evaluation, CSV/manifest reports and a portable factor-embedding
// model file.

#include <gmc/common.hpp>
#include <gmc/fixed_rank.hpp>
#include <gmc/kernels.hpp>
#include <gmc/log.hpp>
#include <gmc/movielens.hpp>
#include <gmc/observations.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace gmc::experiment {

struct GridSpec {
  std::vector<double> etas{0.0, 0.15, 0.5, 0.85, 1.0};
  std::vector<double> zetas{0.0, 0.15, 0.5, 0.85, 1.0};
  std::vector<Index> ranks{50, 80, 130, 200};
  std::vector<double> lambdas{25e-6, 5e-6, 1e-6, 0.2e-6, 0.04e-6};

  void validate() const {
    detail::require(!etas.empty() && !zetas.empty() && !ranks.empty() && !lambdas.empty(),
                    "grid lists must be non-empty");
    for (double e : etas) detail::require(e >= 0.0 && e <= 1.0, "eta ", e, " outside [0, 1]");
    for (double z : zetas) detail::require(z >= 0.0 && z <= 1.0, "zeta ", z, " outside [0, 1]");
    for (Index d : ranks) detail::require(d >= 1, "rank ", d, " must be at least 1");
    for (double l : lambdas) detail::require(l > 0.0, "lambda ", l, " must be positive");
  }
};

struct CVConfig {
  int folds = 5;
  std::uint64_t seed = 0;
};

/// Solver settings shared by every cell of a sweep.
struct SolverOptions {
  FitStrategy strategy = FitStrategy::kJoint;
  int max_iter = 500;
  double grad_tol = 1e-6;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
};

struct Cell {
  double eta = 0.0;
  double zeta = 0.0;
  Index rank = 1;
  double lambda = 0.0;
};

struct ResultRow {
  Cell cell;
  double cv_mse = std::numeric_limits<double>::quiet_NaN();
  double test_mse = std::numeric_limits<double>::quiet_NaN();
  double wall_time_s = 0.0;
  std::string error;  // empty on success
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::size_t selected = 0;
};

/// Rows and columns of a training grid with their attribute features.
struct Problem {
  ObservationSet train;
  std::vector<Entity> rows;
  std::vector<Entity> cols;

  void validate() const {
    detail::require(static_cast<Index>(rows.size()) == train.n_rows(), "row entity count ", rows.size(),
                    " does not match grid rows ", train.n_rows());
    detail::require(static_cast<Index>(cols.size()) == train.n_cols(), "column entity count ", cols.size(),
                    " does not match grid columns ", train.n_cols());
  }
};

inline double evaluate_mse(std::span<const double> predictions, std::span<const double> targets) {
  detail::require(predictions.size() == targets.size(), "prediction count ", predictions.size(),
                  " differs from target count ", targets.size());
  detail::require(!targets.empty(), "cannot evaluate an empty prediction set");
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) s += SquareLoss::value(predictions[i], targets[i]);
  return s / static_cast<double>(targets.size());
}

/// Cartesian product in (eta, zeta, rank, lambda) order, lambda fastest.
inline std::vector<Cell> grid_cells(const GridSpec& grid) {
  grid.validate();
  std::vector<Cell> out;
  for (double e : grid.etas)
    for (double z : grid.zetas)
      for (Index d : grid.ranks)
        for (double l : grid.lambdas) out.push_back({e, z, d, l});
  return out;
}

/// Lowest cv_mse; ties go to the smaller rank, then the larger lambda, then
/// the earlier row. Failed cells (infinite or NaN MSE) lose to any finite one.
inline std::size_t select_best(const std::vector<ResultRow>& rows) {
  detail::require(!rows.empty(), "cannot select from an empty result table");
  auto key = [](const ResultRow& r) {
    const double mse = std::isnan(r.cv_mse) ? std::numeric_limits<double>::infinity() : r.cv_mse;
    return std::make_tuple(mse, r.cell.rank, -r.cell.lambda);
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (key(rows[i]) < key(rows[best])) best = i;
  return best;
}

/// A fitted factor model restricted to the entities seen in training, plus
/// the cross-kernel embeddings of every grid entity.
struct CellFit {
  FitResult fit;
  Matrix row_embedding;  // n_rows(grid) x p : K_cross^T alpha
  Matrix col_embedding;  // n_cols(grid) x p : G_cross^T beta
  std::vector<bool> row_seen;
  std::vector<bool> col_seen;

  double predict(Index row, Index col) const { return row_embedding.row(row).dot(col_embedding.row(col)); }
};

/// Fits one cell on `train`. Kernels are built over the rows and columns
/// that carry at least one training observation; every grid entity is then
/// embedded through the cross kernel, so an entity absent from training is
/// predicted from its attributes alone (and as 0 when its kernel weight is 0).
inline CellFit fit_cell(const ObservationSet& train, std::span<const Entity> rows, std::span<const Entity> cols,
                        const Cell& cell, const SolverOptions& opt) {
  CellFit out;
  out.row_seen.assign(rows.size(), false);
  out.col_seen.assign(cols.size(), false);
  for (const auto& t : train) {
    out.row_seen[static_cast<std::size_t>(t.row)] = true;
    out.col_seen[static_cast<std::size_t>(t.col)] = true;
  }
  std::vector<Index> row_map(rows.size(), -1), col_map(cols.size(), -1);
  std::vector<Entity> seen_rows, seen_cols;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (out.row_seen[i]) {
      row_map[i] = static_cast<Index>(seen_rows.size());
      seen_rows.push_back(rows[i]);
    }
  for (std::size_t j = 0; j < cols.size(); ++j)
    if (out.col_seen[j]) {
      col_map[j] = static_cast<Index>(seen_cols.size());
      seen_cols.push_back(cols[j]);
    }
  std::vector<Triplet> compact;
  compact.reserve(train.size());
  for (const auto& t : train) compact.push_back({row_map[t.row], col_map[t.col], t.target});
  const ObservationSet obs(static_cast<Index>(seen_rows.size()), static_cast<Index>(seen_cols.size()),
                           std::move(compact));

  const KernelSpec row_spec = KernelSpec::interpolated(cell.eta);
  const KernelSpec col_spec = KernelSpec::interpolated(cell.zeta);
  const KernelMatrix k = build_kernel_matrix(row_spec, seen_rows);
  const KernelMatrix g = build_kernel_matrix(col_spec, seen_cols);

  FitConfig cfg;
  cfg.p = cell.rank;
  cfg.lambda = cell.lambda;
  cfg.strategy = opt.strategy;
  cfg.max_iter = opt.max_iter;
  cfg.grad_tol = opt.grad_tol;
  cfg.init_scale = opt.init_scale;
  cfg.seed = opt.seed;
  out.fit = fit(k, g, obs, cfg);

  const Matrix k_cross = build_cross_kernel(row_spec, seen_rows, rows);
  const Matrix g_cross = build_cross_kernel(col_spec, seen_cols, cols);
  out.row_embedding = k_cross.transpose() * out.fit.model.alpha;
  out.col_embedding = g_cross.transpose() * out.fit.model.beta;
  return out;
}

inline std::vector<double> predict_triplets(const CellFit& f, std::span<const Triplet> queries) {
  std::vector<double> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(f.predict(q.row, q.col));
  return out;
}

inline std::vector<double> targets_of(std::span<const Triplet> t) {
  std::vector<double> out;
  out.reserve(t.size());
  for (const auto& x : t) out.push_back(x.target);
  return out;
}

/// Number of query pairs whose row or column has no training observation.
inline std::size_t count_unseen_pairs(const CellFit& f, std::span<const Triplet> queries) {
  std::size_t n = 0;
  for (const auto& q : queries)
    if (!f.row_seen[static_cast<std::size_t>(q.row)] || !f.col_seen[static_cast<std::size_t>(q.col)]) ++n;
  return n;
}

/// Seeded assignment of each training observation to one of `folds` folds.
inline std::vector<int> assign_folds(std::size_t n, const CVConfig& cv) {
  detail::require(cv.folds >= 2, "need at least 2 folds, got ", cv.folds);
  detail::require(static_cast<std::size_t>(cv.folds) <= n, "cannot make ", cv.folds, " folds from ", n,
                  " observations");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cv.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(n);
  for (std::size_t k = 0; k < n; ++k) fold[order[k]] = static_cast<int>(k % static_cast<std::size_t>(cv.folds));
  return fold;
}

/// Runs fn(i) for i in [0, n) on `threads` workers. Each index is handled by
/// exactly one worker.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& th : pool) th.join();
}

struct SweepOptions {
  SolverOptions solver;
  unsigned threads = 1;
};

/// Mean validation MSE over the folds for each cell; when `test` is given, the
/// cell is also refit on the full training set and scored on it. Cell
/// failures are recorded as +inf MSE with the error text.
inline ResultTable evaluate_cells(const Problem& problem, const std::vector<Cell>& cells, const CVConfig& cv,
                                  const SweepOptions& opt, std::span<const Triplet> test = {}) {
  problem.validate();
  detail::require(!cells.empty(), "no cells to evaluate");
  const auto& all = problem.train.triplets();
  const std::vector<int> fold = assign_folds(all.size(), cv);

  std::vector<std::vector<Triplet>> fold_train(static_cast<std::size_t>(cv.folds)),
      fold_valid(static_cast<std::size_t>(cv.folds));
  for (std::size_t u = 0; u < all.size(); ++u)
    for (int f = 0; f < cv.folds; ++f) (f == fold[u] ? fold_valid : fold_train)[static_cast<std::size_t>(f)].push_back(all[u]);

  ResultTable table;
  table.rows.resize(cells.size());
  parallel_for(cells.size(), opt.threads, [&](std::size_t c) {
    ResultRow& row = table.rows[c];
    row.cell = cells[c];
    const auto start = std::chrono::steady_clock::now();
    try {
      double total = 0.0;
      for (int f = 0; f < cv.folds; ++f) {
        const auto fi = static_cast<std::size_t>(f);
        const ObservationSet ft(problem.train.n_rows(), problem.train.n_cols(), fold_train[fi]);
        const CellFit fitted = fit_cell(ft, problem.rows, problem.cols, row.cell, opt.solver);
        total += evaluate_mse(predict_triplets(fitted, fold_valid[fi]), targets_of(fold_valid[fi]));
      }
      row.cv_mse = total / cv.folds;
      if (!test.empty()) {
        const CellFit fitted = fit_cell(problem.train, problem.rows, problem.cols, row.cell, opt.solver);
        row.test_mse = evaluate_mse(predict_triplets(fitted, test), targets_of(test));
      }
    } catch (const std::exception& e) {
      row.cv_mse = std::numeric_limits<double>::infinity();
      row.test_mse = std::numeric_limits<double>::infinity();
      row.error = e.what();
      log::warn(detail::concat("cell eta=", row.cell.eta, " zeta=", row.cell.zeta, " rank=", row.cell.rank,
                               " lambda=", row.cell.lambda, " failed: ", e.what()));
    }
    row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  table.selected = select_best(table.rows);
  return table;
}

inline ResultTable cross_validate(const Problem& problem, const GridSpec& grid, const CVConfig& cv,
                                  const SweepOptions& opt = {}) {
  return evaluate_cells(problem, grid_cells(grid), cv, opt);
}

/// For each (eta, zeta, rank) the lambda with the lowest CV error, in table
/// order. Mirrors a "lambda chosen by cross-validation" summary.
inline std::vector<ResultRow> lambda_selected_summary(const ResultTable& table) {
  std::map<std::tuple<double, double, Index>, std::size_t> best;
  std::vector<std::tuple<double, double, Index>> order;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& c = table.rows[i].cell;
    const auto key = std::make_tuple(c.eta, c.zeta, c.rank);
    auto it = best.find(key);
    if (it == best.end()) {
      best.emplace(key, i);
      order.push_back(key);
    } else {
      const std::vector<ResultRow> pair{table.rows[it->second], table.rows[i]};
      if (select_best(pair) == 1) it->second = i;
    }
  }
  std::vector<ResultRow> out;
  for (const auto& k : order) out.push_back(table.rows[best.at(k)]);
  return out;
}

// ---------------------------------------------------------------- reports

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline constexpr std::string_view kCsvHeader = "eta,zeta,rank,lambda,cv_mse,test_mse,wall_time_s";

/// CSV with header eta,zeta,rank,lambda,cv_mse,test_mse,wall_time_s. With
/// include_timing = false the wall-time column is written as 0 so that
/// repeated runs are byte-identical.
inline void write_csv(std::ostream& out, const std::vector<ResultRow>& rows, bool include_timing = true) {
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    out << format_number(r.cell.eta) << ',' << format_number(r.cell.zeta) << ',' << r.cell.rank << ','
        << format_number(r.cell.lambda) << ',' << format_number(r.cv_mse) << ',' << format_number(r.test_mse) << ','
        << (include_timing ? format_number(r.wall_time_s) : std::string("0")) << '\n';
  }
}

/// Ordered key=value lines, preceded by a comment header.
class Manifest {
 public:
  template <typename T>
  void set(std::string key, const T& value) {
    if constexpr (std::is_floating_point_v<T>) {
      entries_.emplace_back(std::move(key), format_number(static_cast<double>(value)));
    } else {
      std::ostringstream os;
      os << value;
      entries_.emplace_back(std::move(key), os.str());
    }
  }

  std::optional<std::string> get(std::string_view key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return v;
    return std::nullopt;
  }

  void write(std::ostream& out) const {
    out << "# gmc run manifest v1\n";
    for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
  }

  static Manifest read(std::istream& in) {
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line.front() == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("manifest line without '=': " + line);
      m.entries_.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return m;
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// ------------------------------------------------------------ model file

/// Per-entity factor embeddings of a fitted cell: the prediction for
/// (user, item) is the dot product of their embeddings. Entities not in the
/// file predict 0.
struct EmbeddingModel {
  Cell cell;
  std::map<EntityId, Vector> users;
  std::map<EntityId, Vector> items;

  double predict(EntityId user, EntityId item) const {
    auto u = users.find(user);
    auto v = items.find(item);
    if (u == users.end() || v == items.end()) return 0.0;
    return u->second.dot(v->second);
  }

  static EmbeddingModel from_fit(const CellFit& f, const Cell& cell, std::span<const Entity> rows,
                                 std::span<const Entity> cols) {
    EmbeddingModel m;
    m.cell = cell;
    for (std::size_t i = 0; i < rows.size(); ++i) m.users[rows[i].id] = f.row_embedding.row(static_cast<Index>(i));
    for (std::size_t j = 0; j < cols.size(); ++j) m.items[cols[j].id] = f.col_embedding.row(static_cast<Index>(j));
    return m;
  }

  void write(std::ostream& out) const {
    char buf[40];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    out << "gmc-factor-model 1\n";
    out << "eta " << num(cell.eta) << "\nzeta " << num(cell.zeta) << "\nrank " << cell.rank << "\nlambda "
        << num(cell.lambda) << '\n';
    auto section = [&](const char* name, const std::map<EntityId, Vector>& emb) {
      out << name << ' ' << emb.size() << '\n';
      for (const auto& [id, v] : emb) {
        out << id;
        for (double x : v) out << ' ' << num(x);
        out << '\n';
      }
    };
    section("users", users);
    section("items", items);
  }

  static EmbeddingModel read(std::istream& in) {
    EmbeddingModel m;
    std::string word;
    int version = 0;
    if (!(in >> word >> version) || word != "gmc-factor-model" || version != 1)
      throw ParseError("not a gmc factor model file");
    auto expect = [&](const char* key) {
      if (!(in >> word) || word != key) throw ParseError(detail::concat("model file: expected '", key, "'"));
    };
    expect("eta");
    in >> m.cell.eta;
    expect("zeta");
    in >> m.cell.zeta;
    expect("rank");
    in >> m.cell.rank;
    expect("lambda");
    in >> m.cell.lambda;
    if (!in || m.cell.rank < 1) throw ParseError("model file: malformed header");
    auto section = [&](const char* name, std::map<EntityId, Vector>& emb) {
      std::size_t n = 0;
      expect(name);
      if (!(in >> n)) throw ParseError(detail::concat("model file: malformed ", name, " count"));
      for (std::size_t i = 0; i < n; ++i) {
        EntityId id = 0;
        Vector v(m.cell.rank);
        in >> id;
        for (Index k = 0; k < m.cell.rank; ++k) in >> v(k);
        if (!in) throw ParseError(detail::concat("model file: malformed ", name, " record ", i));
        emb[id] = std::move(v);
      }
    };
    section("users", m.users);
    section("items", m.items);
    return m;
  }
};

// ------------------------------------------------------------- full runs

struct RunConfig {
  movielens::DatasetPaths paths;
  std::size_t subsample_users = 400;
  std::size_t subsample_movies = 800;
  double test_fraction = 1935.0 / 20541.0;
  std::uint64_t seed = 0;
  GridSpec grid;
  CVConfig cv;
  SweepOptions sweep;
};

struct RunReport {
  ResultTable table;
  std::vector<ResultRow> summary;  // lambda chosen by CV per (eta, zeta, rank)
  std::size_t n_users = 0;
  std::size_t n_movies = 0;
  std::size_t n_ratings = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  /// Test pairs whose user or movie has no training rating.
  std::size_t unseen_test_pairs = 0;
};

/// Problem and held-out triplets for a dataset split, with featurized
/// entities in grid order.
inline std::pair<Problem, std::vector<Triplet>> make_problem(const movielens::Dataset& d,
                                                             const movielens::Split& s) {
  Problem p{s.train, movielens::user_entities(d), movielens::movie_entities(d)};
  p.validate();
  return {std::move(p), s.test};
}

/// subsample -> split -> cross-validated sweep with test evaluation.
inline RunReport run_table(const movielens::Dataset& full, const RunConfig& cfg) {
  const movielens::Dataset d = movielens::subsample(full, cfg.subsample_users, cfg.subsample_movies, cfg.seed);
  const movielens::Split s = movielens::split(d, cfg.test_fraction, cfg.seed);
  auto [problem, test] = make_problem(d, s);

  RunReport rep;
  rep.n_users = d.users.size();
  rep.n_movies = d.movies.size();
  rep.n_ratings = d.ratings.size();
  rep.n_train = problem.train.size();
  rep.n_test = test.size();
  {
    std::vector<bool> ru(problem.rows.size(), false), cu(problem.cols.size(), false);
    for (const auto& t : problem.train) {
      ru[static_cast<std::size_t>(t.row)] = true;
      cu[static_cast<std::size_t>(t.col)] = true;
    }
    for (const auto& t : test)
      if (!ru[static_cast<std::size_t>(t.row)] || !cu[static_cast<std::size_t>(t.col)]) ++rep.unseen_test_pairs;
  }
  rep.table = evaluate_cells(problem, grid_cells(cfg.grid), cfg.cv, cfg.sweep, test);
  rep.summary = lambda_selected_summary(rep.table);
  return rep;
}

inline Manifest make_manifest(const RunConfig& cfg, const RunReport& rep, std::string_view command) {
  auto join = [](const auto& v) {
    std::string s;
    for (const auto& x : v) {
      if (!s.empty()) s += ',';
      if constexpr (std::is_floating_point_v<std::decay_t<decltype(x)>>) {
        s += format_number(x);
      } else {
        s += std::to_string(x);
      }
    }
    return s;
  };
  Manifest m;
  m.set("command", command);
  m.set("input.ratings", cfg.paths.ratings.string());
  m.set("input.users", cfg.paths.users.string());
  m.set("input.items", cfg.paths.items.string());
  m.set("input.occupations", cfg.paths.occupations.string());
  m.set("subsample.users", cfg.subsample_users);
  m.set("subsample.movies", cfg.subsample_movies);
  m.set("test_fraction", cfg.test_fraction);
  m.set("seed", cfg.seed);
  m.set("cv.folds", cfg.cv.folds);
  m.set("cv.seed", cfg.cv.seed);
  m.set("solver.strategy", cfg.sweep.solver.strategy == FitStrategy::kJoint ? "joint" : "alternating");
  m.set("solver.max_iter", cfg.sweep.solver.max_iter);
  m.set("solver.grad_tol", cfg.sweep.solver.grad_tol);
  m.set("solver.init_scale", cfg.sweep.solver.init_scale);
  m.set("solver.seed", cfg.sweep.solver.seed);
  m.set("grid.etas", join(cfg.grid.etas));
  m.set("grid.zetas", join(cfg.grid.zetas));
  m.set("grid.ranks", join(cfg.grid.ranks));
  m.set("grid.lambdas", join(cfg.grid.lambdas));
  m.set("dataset.users", rep.n_users);
  m.set("dataset.movies", rep.n_movies);
  m.set("dataset.ratings", rep.n_ratings);
  m.set("split.train", rep.n_train);
  m.set("split.test", rep.n_test);
  m.set("split.unseen_test_pairs", rep.unseen_test_pairs);
  const auto& best = rep.table.rows.at(rep.table.selected);
  m.set("selected.index", rep.table.selected);
  m.set("selected.eta", best.cell.eta);
  m.set("selected.zeta", best.cell.zeta);
  m.set("selected.rank", best.cell.rank);
  m.set("selected.lambda", best.cell.lambda);
  m.set("selected.cv_mse", best.cv_mse);
  m.set("selected.test_mse", best.test_mse);
  std::size_t failed = 0;
  for (const auto& r : rep.table.rows) failed += r.error.empty() ? 0 : 1;
  m.set("cells.total", rep.table.rows.size());
  m.set("cells.failed", failed);
  return m;
}

}  // namespace gmc::experiment
