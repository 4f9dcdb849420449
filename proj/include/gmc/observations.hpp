#pragma once

#include <gmc/common.hpp>

#include <unordered_set>
#include <vector>

namespace gmc {

struct Triplet {
  Index row = 0;
  Index col = 0;
  double target = 0.0;
};

/// Observed entries of an n_rows x n_cols grid, at most one per cell.
class ObservationSet {
 public:
  ObservationSet(Index n_rows, Index n_cols, std::vector<Triplet> triplets)
      : n_rows_(n_rows), n_cols_(n_cols), triplets_(std::move(triplets)) {
    detail::require(n_rows_ >= 1 && n_cols_ >= 1, "observation grid must be non-empty, got ", n_rows_, "x", n_cols_);
    detail::require(!triplets_.empty(), "observation set needs at least one triplet");
    std::unordered_set<std::uint64_t> cells;
    cells.reserve(triplets_.size());
    for (const auto& t : triplets_) {
      detail::require(t.row >= 0 && t.row < n_rows_ && t.col >= 0 && t.col < n_cols_, "triplet (", t.row, ", ",
                      t.col, ") outside the ", n_rows_, "x", n_cols_, " grid");
      detail::require(std::isfinite(t.target), "non-finite target at (", t.row, ", ", t.col, ")");
      const auto key = static_cast<std::uint64_t>(t.row) * static_cast<std::uint64_t>(n_cols_) +
                       static_cast<std::uint64_t>(t.col);
      detail::require(cells.insert(key).second, "duplicate observation at (", t.row, ", ", t.col, ")");
    }
  }

  /// Every cell of z observed.
  static ObservationSet dense(const Eigen::Ref<const Matrix>& z) {
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(z.size()));
    for (Index j = 0; j < z.cols(); ++j)
      for (Index i = 0; i < z.rows(); ++i) t.push_back({i, j, z(i, j)});
    return ObservationSet(z.rows(), z.cols(), std::move(t));
  }

  Index n_rows() const { return n_rows_; }
  Index n_cols() const { return n_cols_; }
  std::size_t size() const { return triplets_.size(); }
  const std::vector<Triplet>& triplets() const { return triplets_; }
  auto begin() const { return triplets_.begin(); }
  auto end() const { return triplets_.end(); }

  /// Same observations on the transposed grid.
  ObservationSet transposed() const {
    std::vector<Triplet> t;
    t.reserve(triplets_.size());
    for (const auto& x : triplets_) t.push_back({x.col, x.row, x.target});
    return ObservationSet(n_cols_, n_rows_, std::move(t));
  }

  Vector targets() const {
    Vector z(static_cast<Index>(triplets_.size()));
    for (std::size_t u = 0; u < triplets_.size(); ++u) z(static_cast<Index>(u)) = triplets_[u].target;
    return z;
  }

  /// Dense grid with targets at observed cells and zeros elsewhere.
  Matrix to_dense() const {
    Matrix z = Matrix::Zero(n_rows_, n_cols_);
    for (const auto& t : triplets_) z(t.row, t.col) = t.target;
    return z;
  }

  double mean_square_target() const {
    double s = 0.0;
    for (const auto& t : triplets_) s += t.target * t.target;
    return s / static_cast<double>(triplets_.size());
  }

 private:
  Index n_rows_;
  Index n_cols_;
  std::vector<Triplet> triplets_;
};

/// l(z, z') = (z - z')^2.
struct SquareLoss {
  static double value(double prediction, double target) {
    const double d = prediction - target;
    return d * d;
  }
  static double derivative(double prediction, double target) { return 2.0 * (prediction - target); }
};

namespace detail {

// Sparse n_rows x n_cols matrix R with weights[u] at (row(u), col(u)).
// Only the two products the solvers need are provided.
struct SparseGrid {
  const ObservationSet& obs;
  const Vector& weights;

  // R * y, with y of shape n_cols x k.
  Matrix times(const Eigen::Ref<const Matrix>& y) const {
    Matrix out = Matrix::Zero(obs.n_rows(), y.cols());
    Index u = 0;
    for (const auto& t : obs) out.row(t.row) += weights(u++) * y.row(t.col);
    return out;
  }
  // R^T * x, with x of shape n_rows x k.
  Matrix transpose_times(const Eigen::Ref<const Matrix>& x) const {
    Matrix out = Matrix::Zero(obs.n_cols(), x.cols());
    Index u = 0;
    for (const auto& t : obs) out.row(t.col) += weights(u++) * x.row(t.row);
    return out;
  }
  Matrix to_dense() const {
    Matrix out = Matrix::Zero(obs.n_rows(), obs.n_cols());
    Index u = 0;
    for (const auto& t : obs) out(t.row, t.col) = weights(u++);
    return out;
  }
};

}  // namespace detail

}  // namespace gmc
