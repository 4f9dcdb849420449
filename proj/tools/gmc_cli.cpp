// gmc: generalized matrix completion experiments on MovieLens-format data.
//
//   gmc parse       validate dataset files, optionally write a snapshot
//   gmc fit         fit one (eta, zeta, rank, lambda) cell and score the test split
//   gmc evaluate    score a saved model on a ratings file
//   gmc grid        cross-validated sweep, CSV table and run manifest
//   gmc diagnostics numerical self-checks

#include <gmc/diagnostics.hpp>
#include <gmc/experiment.hpp>
#include <gmc/movielens.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using namespace gmc;
namespace ml = gmc::movielens;
namespace ex = gmc::experiment;

struct InputFlags {
  std::string data_dir;
  std::string ratings, users, items, occupations;
  std::string snapshot;

  void add(CLI::App* app) {
    app->add_option("--data-dir", data_dir, "Directory with u.data, u.user, u.item, u.occupation");
    app->add_option("--ratings", ratings, "Ratings file (user\\titem\\trating\\ttimestamp)");
    app->add_option("--users", users, "Users file (id|age|gender|occupation|zip)");
    app->add_option("--items", items, "Items file (id|title|release|video|url|19 genre flags)");
    app->add_option("--occupations", occupations, "Occupation vocabulary, one per line");
    app->add_option("--snapshot", snapshot, "Read the dataset from a snapshot instead of the four files");
  }

  ml::DatasetPaths paths() const {
    ml::DatasetPaths p;
    if (!data_dir.empty()) p = ml::DatasetPaths::in_directory(data_dir);
    if (!ratings.empty()) p.ratings = ratings;
    if (!users.empty()) p.users = users;
    if (!items.empty()) p.items = items;
    if (!occupations.empty()) p.occupations = occupations;
    return p;
  }

  ml::Dataset load() const {
    if (!snapshot.empty()) {
      std::ifstream in(snapshot);
      if (!in) throw ParseError(snapshot + ": cannot open file");
      return ml::read_snapshot(in);
    }
    const auto p = paths();
    if (p.ratings.empty() || p.users.empty() || p.items.empty() || p.occupations.empty())
      throw InvalidArgument("dataset input needs --data-dir, the four file flags, or --snapshot");
    return ml::load_dataset(p);
  }
};

struct SplitFlags {
  std::size_t subsample_users = 400;
  std::size_t subsample_movies = 800;
  double test_fraction = 1935.0 / 20541.0;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--subsample-users", subsample_users, "Users kept in the random subsample")->capture_default_str();
    app->add_option("--subsample-movies", subsample_movies, "Movies kept in the random subsample")
        ->capture_default_str();
    app->add_option("--test-fraction", test_fraction, "Fraction of ratings held out for testing")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app->add_option("--seed", seed, "Seed for subsampling, splitting, folds and initialization")
        ->capture_default_str();
  }
};

struct SolverFlags {
  std::string strategy = "joint";
  int max_iter = 500;
  double grad_tol = 1e-6;
  double init_scale = 0.1;

  void add(CLI::App* app) {
    app->add_option("--strategy", strategy, "joint (quasi-Newton) or alternating")
        ->check(CLI::IsMember({"joint", "alternating"}))
        ->capture_default_str();
    app->add_option("--max-iter", max_iter, "Outer iteration limit")->capture_default_str();
    app->add_option("--grad-tol", grad_tol, "Gradient infinity-norm tolerance")->capture_default_str();
    app->add_option("--init-scale", init_scale, "Initial coefficient scale")->capture_default_str();
  }

  ex::SolverOptions options(std::uint64_t seed) const {
    ex::SolverOptions o;
    o.strategy = strategy == "joint" ? FitStrategy::kJoint : FitStrategy::kAlternating;
    o.max_iter = max_iter;
    o.grad_tol = grad_tol;
    o.init_scale = init_scale;
    o.seed = seed;
    return o;
  }
};

template <typename T>
void write_file(const std::string& path, T&& writer) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  writer(out);
  if (!out) throw std::runtime_error(path + ": write failed");
}

int cmd_parse(const InputFlags& in, const std::string& snapshot_out) {
  const ml::Dataset d = in.load();
  std::size_t no_genre = 0;
  for (const auto& m : d.movies) no_genre += m.has_genre() ? 0 : 1;
  std::printf("users=%zu movies=%zu ratings=%zu occupations=%zu movies_without_genre=%zu\n", d.users.size(),
              d.movies.size(), d.ratings.size(), d.occupations.size(), no_genre);
  if (!snapshot_out.empty()) write_file(snapshot_out, [&](std::ostream& os) { ml::write_snapshot(os, d); });
  return 0;
}

int cmd_fit(const InputFlags& in, const SplitFlags& sp, const SolverFlags& sf, const ex::Cell& cell,
            const std::string& model_out, const std::string& test_out) {
  const ml::Dataset full = in.load();
  const ml::Dataset d = ml::subsample(full, sp.subsample_users, sp.subsample_movies, sp.seed);
  const ml::Split s = ml::split(d, sp.test_fraction, sp.seed);
  auto [problem, test] = ex::make_problem(d, s);

  const ex::CellFit f = ex::fit_cell(problem.train, problem.rows, problem.cols, cell, sf.options(sp.seed));
  const double train_mse = ex::evaluate_mse(ex::predict_triplets(f, problem.train.triplets()),
                                            ex::targets_of(problem.train.triplets()));
  const double test_mse = ex::evaluate_mse(ex::predict_triplets(f, test), ex::targets_of(test));
  std::printf("eta=%s zeta=%s rank=%lld lambda=%s\n", ex::format_number(cell.eta).c_str(),
              ex::format_number(cell.zeta).c_str(), static_cast<long long>(cell.rank),
              ex::format_number(cell.lambda).c_str());
  std::printf("train=%zu test=%zu unseen_test_pairs=%zu\n", problem.train.size(), test.size(),
              ex::count_unseen_pairs(f, test));
  std::printf("objective=%s iterations=%d stop=%s grad_inf=%.3e\n", ex::format_number(f.fit.objective).c_str(),
              f.fit.iterations, std::string(to_string(f.fit.reason)).c_str(), f.fit.grad_inf_norm);
  std::printf("train_mse=%s test_mse=%s\n", ex::format_number(train_mse).c_str(), ex::format_number(test_mse).c_str());

  if (!model_out.empty()) {
    const auto model = ex::EmbeddingModel::from_fit(f, cell, problem.rows, problem.cols);
    write_file(model_out, [&](std::ostream& os) { model.write(os); });
  }
  if (!test_out.empty()) {
    std::vector<ml::RatingRecord> recs;
    for (const auto& t : test)
      recs.push_back({s.row_ids[static_cast<std::size_t>(t.row)], s.col_ids[static_cast<std::size_t>(t.col)],
                      static_cast<int>(t.target), 0});
    write_file(test_out, [&](std::ostream& os) { ml::write_ratings(os, recs); });
  }
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& test_path) {
  std::ifstream in(model_path);
  if (!in) throw ParseError(model_path + ": cannot open file");
  const auto model = ex::EmbeddingModel::read(in);
  const auto ratings = ml::parse_ratings(test_path);
  if (ratings.empty()) throw InvalidArgument(test_path + ": no ratings to evaluate");
  std::vector<double> pred, target;
  std::size_t unknown = 0;
  for (const auto& r : ratings) {
    if (!model.users.count(r.user_id) || !model.items.count(r.item_id)) ++unknown;
    pred.push_back(model.predict(r.user_id, r.item_id));
    target.push_back(r.rating);
  }
  std::printf("ratings=%zu unknown_entities=%zu mse=%s\n", ratings.size(), unknown,
              ex::format_number(ex::evaluate_mse(pred, target)).c_str());
  return 0;
}

int cmd_grid(const InputFlags& in, const SplitFlags& sp, const SolverFlags& sf, const ex::GridSpec& grid, int folds,
             unsigned threads, const std::string& out_csv, const std::string& summary_csv,
             const std::string& manifest_path, bool omit_timing) {
  ex::RunConfig cfg;
  cfg.paths = in.paths();
  cfg.subsample_users = sp.subsample_users;
  cfg.subsample_movies = sp.subsample_movies;
  cfg.test_fraction = sp.test_fraction;
  cfg.seed = sp.seed;
  cfg.grid = grid;
  cfg.cv = {folds, sp.seed};
  cfg.sweep.solver = sf.options(sp.seed);
  cfg.sweep.threads = threads;

  const ml::Dataset full = in.load();
  const ex::RunReport rep = ex::run_table(full, cfg);

  if (out_csv.empty()) {
    ex::write_csv(std::cout, rep.table.rows, !omit_timing);
  } else {
    write_file(out_csv, [&](std::ostream& os) { ex::write_csv(os, rep.table.rows, !omit_timing); });
  }
  if (!summary_csv.empty())
    write_file(summary_csv, [&](std::ostream& os) { ex::write_csv(os, rep.summary, !omit_timing); });
  ex::Manifest m = ex::make_manifest(cfg, rep, "grid");
  if (!in.snapshot.empty()) m.set("input.snapshot", in.snapshot);
  if (!manifest_path.empty()) write_file(manifest_path, [&](std::ostream& os) { m.write(os); });

  const auto& best = rep.table.rows.at(rep.table.selected);
  std::fprintf(stderr, "selected eta=%s zeta=%s rank=%lld lambda=%s cv_mse=%s test_mse=%s (unseen test pairs: %zu)\n",
               ex::format_number(best.cell.eta).c_str(), ex::format_number(best.cell.zeta).c_str(),
               static_cast<long long>(best.cell.rank), ex::format_number(best.cell.lambda).c_str(),
               ex::format_number(best.cv_mse).c_str(), ex::format_number(best.test_mse).c_str(),
               rep.unseen_test_pairs);
  return 0;
}

int cmd_diagnostics(std::uint64_t seed) {
  const auto checks = diagnostics::run_all(seed);
  diagnostics::print_report(std::cout, checks);
  const bool ok = diagnostics::all_passed(checks);
  std::cout << (ok ? "all checks passed" : "some checks FAILED") << '\n';
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalized matrix completion with tensor-product kernels"};
  app.require_subcommand(1);

  InputFlags input;
  SplitFlags split;
  SolverFlags solver;

  auto* parse = app.add_subcommand("parse", "Validate dataset files and optionally write a snapshot");
  std::string snapshot_out;
  input.add(parse);
  parse->add_option("--snapshot-out", snapshot_out, "Write a dataset snapshot to this path");

  auto* fit = app.add_subcommand("fit", "Fit one hyperparameter cell on the training split");
  ex::Cell cell{0.15, 0.15, 130, 0.2e-6};
  std::string model_out, test_out;
  input.add(fit);
  split.add(fit);
  solver.add(fit);
  fit->add_option("--eta", cell.eta, "User-side attribute weight")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  fit->add_option("--zeta", cell.zeta, "Movie-side attribute weight")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  fit->add_option("--rank", cell.rank, "Rank d of the predictor")->check(CLI::PositiveNumber)->capture_default_str();
  fit->add_option("--lambda", cell.lambda, "Ridge weight")->check(CLI::NonNegativeNumber)->capture_default_str();
  fit->add_option("--model-out", model_out, "Write the fitted factor embeddings here");
  fit->add_option("--test-out", test_out, "Write the held-out ratings here (u.data layout)");

  auto* evaluate = app.add_subcommand("evaluate", "Mean squared error of a saved model on a ratings file");
  std::string model_path, test_path;
  evaluate->add_option("--model", model_path, "Model written by `fit --model-out`")->required();
  evaluate->add_option("--test", test_path, "Ratings file (u.data layout)")->required();

  auto* grid_cmd = app.add_subcommand("grid", "Cross-validated sweep over (eta, zeta, rank, lambda)");
  ex::GridSpec grid;
  int folds = 5;
  unsigned threads = 1;
  std::string out_csv, summary_csv, manifest_path;
  bool omit_timing = false;
  input.add(grid_cmd);
  split.add(grid_cmd);
  solver.add(grid_cmd);
  grid_cmd->add_option("--etas", grid.etas, "User-side attribute weights")->delimiter(',')->capture_default_str();
  grid_cmd->add_option("--zetas", grid.zetas, "Movie-side attribute weights")->delimiter(',')->capture_default_str();
  grid_cmd->add_option("--ranks", grid.ranks, "Ranks d")->delimiter(',')->capture_default_str();
  grid_cmd->add_option("--lambdas", grid.lambdas, "Ridge weights")->delimiter(',')->capture_default_str();
  grid_cmd->add_option("--folds", folds, "Cross-validation folds")->check(CLI::Range(2, 1000))->capture_default_str();
  grid_cmd->add_option("--threads", threads, "Worker threads for grid cells")->capture_default_str();
  grid_cmd->add_option("--out", out_csv, "Result table CSV (stdout if omitted)");
  grid_cmd->add_option("--summary-out", summary_csv, "Per (eta, zeta, rank) table with lambda chosen by CV");
  grid_cmd->add_option("--manifest", manifest_path, "Run manifest (key=value)");
  grid_cmd->add_flag("--omit-timing", omit_timing, "Write 0 in the wall_time_s column for byte-identical tables");

  auto* diag = app.add_subcommand("diagnostics", "Run the numerical self-checks");
  std::uint64_t diag_seed = 20240229;
  diag->add_option("--seed", diag_seed, "Seed for the random instances")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (parse->parsed()) return cmd_parse(input, snapshot_out);
    if (fit->parsed()) return cmd_fit(input, split, solver, cell, model_out, test_out);
    if (evaluate->parsed()) return cmd_evaluate(model_path, test_path);
    if (grid_cmd->parsed()) {
      grid.validate();
      return cmd_grid(input, split, solver, grid, folds, threads, out_csv, summary_csv, manifest_path, omit_timing);
    }
    if (diag->parsed()) return cmd_diagnostics(diag_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
