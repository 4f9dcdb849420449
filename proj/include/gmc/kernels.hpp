#pragma once

// Kernels over row and column entities: Dirac (identity), cosine-normalized
// attribute kernels and their convex interpolation, Gram matrices, and the
// Kronecker / vec helpers used to reason about the product kernel over pairs.

#include <gmc/common.hpp>

#include <Eigen/Eigenvalues>

#include <span>
#include <unordered_set>
#include <vector>

namespace gmc {

/// Attribute encoding of one entity. Entries must be finite.
using FeatureVector = Vector;

struct Entity {
  EntityId id = 0;
  FeatureVector features;
};

class KernelSpec {
 public:
  enum class Kind { kDirac, kAttribute, kInterpolated };

  static KernelSpec dirac() { return KernelSpec(Kind::kDirac, 0.0); }
  static KernelSpec attribute() { return KernelSpec(Kind::kAttribute, 1.0); }
  /// weight * attribute + (1 - weight) * dirac.
  static KernelSpec interpolated(double weight) {
    detail::require(weight >= 0.0 && weight <= 1.0,
                    "interpolation weight must lie in [0, 1], got ", weight);
    return KernelSpec(Kind::kInterpolated, weight);
  }

  Kind kind() const { return kind_; }
  /// Weight on the attribute kernel: 0 for dirac, 1 for attribute.
  double attribute_weight() const { return weight_; }
  bool uses_attributes() const { return kind_ != Kind::kDirac; }

 private:
  KernelSpec(Kind kind, double weight) : kind_(kind), weight_(weight) {}

  Kind kind_;
  double weight_;
};

inline double dirac_kernel(EntityId a, EntityId b) { return a == b ? 1.0 : 0.0; }

/// Cosine-normalized linear kernel <a,b> / (|a| |b|).
inline double attribute_kernel(const FeatureVector& a, const FeatureVector& b) {
  detail::require(a.size() == b.size(), "attribute dimension mismatch: ", a.size(), " vs ", b.size());
  detail::require(a.allFinite() && b.allFinite(), "feature vectors must be finite");
  const double na = a.norm();
  const double nb = b.norm();
  detail::require(na > 0.0 && nb > 0.0, "attribute kernel needs nonzero feature vectors");
  return a.dot(b) / (na * nb);
}

inline double interpolated_kernel(const KernelSpec& spec, EntityId id_a, const FeatureVector& a, EntityId id_b,
                                  const FeatureVector& b) {
  switch (spec.kind()) {
    case KernelSpec::Kind::kDirac:
      return dirac_kernel(id_a, id_b);
    case KernelSpec::Kind::kAttribute:
      return attribute_kernel(a, b);
    case KernelSpec::Kind::kInterpolated: {
      const double eta = spec.attribute_weight();
      return eta * attribute_kernel(a, b) + (1.0 - eta) * dirac_kernel(id_a, id_b);
    }
  }
  return 0.0;
}

class KernelMatrix;
KernelMatrix build_kernel_matrix(const KernelSpec& spec, std::span<const Entity> entities);

/// Symmetric positive semidefinite Gram matrix over a list of distinct entities.
/// Immutable once built.
class KernelMatrix {
 public:
  static constexpr double kSymmetryTol = 1e-12;
  static constexpr double kPsdRelTol = 1e-8;

  /// Wraps an arbitrary matrix after checking symmetry and positive
  /// semidefiniteness. Entity ids default to 0..n-1.
  static KernelMatrix from_matrix(Matrix entries, std::vector<EntityId> ids = {}) {
    detail::require(entries.rows() == entries.cols(), "kernel matrix must be square, got ", detail::shape(entries));
    detail::require(entries.allFinite(), "kernel matrix has non-finite entries");
    if (ids.empty()) {
      ids.resize(static_cast<std::size_t>(entries.rows()));
      for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    }
    detail::require(static_cast<Index>(ids.size()) == entries.rows(), "entity id count does not match matrix size");
    const double asym = (entries - entries.transpose()).cwiseAbs().maxCoeff();
    detail::require(entries.size() == 0 || asym <= kSymmetryTol, "kernel matrix is not symmetric (max asymmetry ",
                    asym, ")");
    detail::require(is_psd(entries), "kernel matrix is not positive semidefinite");
    return KernelMatrix(std::move(entries), std::move(ids));
  }

  /// Smallest eigenvalue >= -kPsdRelTol * largest eigenvalue.
  static bool is_psd(const Matrix& entries) {
    if (entries.size() == 0) return true;
    Eigen::SelfAdjointEigenSolver<Matrix> solver(entries, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) return false;
    const Vector& ev = solver.eigenvalues();
    const double top = std::max(ev.maxCoeff(), 0.0);
    return ev.minCoeff() >= -kPsdRelTol * top;
  }

  const Matrix& matrix() const { return entries_; }
  const std::vector<EntityId>& ids() const { return ids_; }
  Index size() const { return entries_.rows(); }
  double operator()(Index i, Index j) const { return entries_(i, j); }

 private:
  friend KernelMatrix build_kernel_matrix(const KernelSpec&, std::span<const Entity>);

  KernelMatrix(Matrix entries, std::vector<EntityId> ids) : entries_(std::move(entries)), ids_(std::move(ids)) {}

  Matrix entries_;
  std::vector<EntityId> ids_;
};

namespace detail {

inline void require_distinct_ids(std::span<const Entity> entities) {
  std::unordered_set<EntityId> seen;
  seen.reserve(entities.size());
  for (const auto& e : entities) {
    require(seen.insert(e.id).second, "duplicate entity id ", e.id);
  }
}

// Rows are the unit-normalized feature vectors.
inline Matrix normalized_features(std::span<const Entity> entities) {
  if (entities.empty()) return Matrix(0, 0);
  const Index dim = entities.front().features.size();
  Matrix out(static_cast<Index>(entities.size()), dim);
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const auto& f = entities[i].features;
    require(f.size() == dim, "attribute dimension mismatch: entity ", entities[i].id, " has ", f.size(),
            ", expected ", dim);
    require(f.allFinite(), "entity ", entities[i].id, " has non-finite features");
    const double n = f.norm();
    require(n > 0.0, "entity ", entities[i].id, " has a zero feature vector");
    out.row(static_cast<Index>(i)) = f.transpose() / n;
  }
  return out;
}

inline Matrix attribute_gram(std::span<const Entity> entities) {
  const Matrix x = normalized_features(entities);
  Matrix a = x * x.transpose();
  // GEMM does not guarantee bitwise symmetry.
  for (Index i = 0; i < a.rows(); ++i) {
    a(i, i) = 1.0;
    for (Index j = i + 1; j < a.cols(); ++j) a(j, i) = a(i, j);
  }
  return a;
}

}  // namespace detail

/// Gram matrix entries[i][j] = kernel(entity_i, entity_j).
inline KernelMatrix build_kernel_matrix(const KernelSpec& spec, std::span<const Entity> entities) {
  detail::require_distinct_ids(entities);
  const auto n = static_cast<Index>(entities.size());
  std::vector<EntityId> ids;
  ids.reserve(entities.size());
  for (const auto& e : entities) ids.push_back(e.id);

  Matrix k;
  switch (spec.kind()) {
    case KernelSpec::Kind::kDirac:
      k = Matrix::Identity(n, n);
      break;
    case KernelSpec::Kind::kAttribute:
      k = detail::attribute_gram(entities);
      break;
    case KernelSpec::Kind::kInterpolated: {
      const double eta = spec.attribute_weight();
      const Matrix a = detail::attribute_gram(entities);
      k.resize(n, n);
      for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i) k(i, j) = eta * a(i, j) + (1.0 - eta) * (i == j ? 1.0 : 0.0);
      break;
    }
  }
  return KernelMatrix(std::move(k), std::move(ids));
}

/// entry(l, q) = kernel(train_l, query_q). A query id that is absent from the
/// training list contributes nothing through the Dirac part.
inline Matrix build_cross_kernel(const KernelSpec& spec, std::span<const Entity> train,
                                 std::span<const Entity> query) {
  detail::require_distinct_ids(train);
  const auto n = static_cast<Index>(train.size());
  const auto m = static_cast<Index>(query.size());
  Matrix out = Matrix::Zero(n, m);
  const double eta = spec.attribute_weight();
  if (spec.uses_attributes() && n > 0 && m > 0) {
    const Matrix xt = detail::normalized_features(train);
    const Matrix xq = detail::normalized_features(query);
    detail::require(xt.cols() == xq.cols(), "attribute dimension mismatch between training and query entities");
    out = eta * (xt * xq.transpose());
  }
  if (spec.kind() != KernelSpec::Kind::kAttribute) {
    const double w = 1.0 - eta;
    for (Index q = 0; q < m; ++q)
      for (Index l = 0; l < n; ++l)
        if (train[l].id == query[q].id) out(l, q) += w;
  }
  return out;
}

/// Kronecker product: block (i, j) of the result is a(i, j) * b.
inline Matrix kron(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Column stacking, so vec(C X B^T) = kron(B, C) vec(X).
inline Vector vec(const Eigen::Ref<const Matrix>& x) {
  Vector out(x.size());
  Index k = 0;
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i) out(k++) = x(i, j);
  return out;
}

inline Matrix unvec(const Eigen::Ref<const Vector>& v, Index rows, Index cols) {
  detail::require(v.size() == rows * cols, "cannot reshape length ", v.size(), " into ", rows, "x", cols);
  Matrix out(rows, cols);
  Index k = 0;
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = v(k++);
  return out;
}

}  // namespace gmc
