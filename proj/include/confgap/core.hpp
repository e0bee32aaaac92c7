#pragma once

// Domain types shared by every confgap module: samples, domains, feature
// matrices and the fitted Gaussian reference model.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace confgap {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Bad input: malformed data, violated preconditions, usage mistakes.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure on otherwise valid input.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Matrix &m) { return m.allFinite(); }

struct DomainSample {
  std::string id;
  /// T steps x S state variables, rows ordered by the traversal parameter.
  std::optional<Matrix> trajectory;
  /// Spacing of the traversal parameter between trajectory rows.
  double ds = 1.0;
  std::optional<Vector> knowledge;
  std::optional<int> label;
};

enum class DomainKind { Source, Target };

inline const char *to_string(DomainKind k) {
  return k == DomainKind::Source ? "source" : "target";
}

struct Domain {
  std::string name;
  DomainKind kind = DomainKind::Source;
  std::vector<DomainSample> samples;
  /// Names of the knowledge components; every knowledge vector has this length.
  std::vector<std::string> knowledge_columns;
};

/// Reports every invariant violation of `domain`. Never throws. The returned
/// list is sorted, so it does not depend on sample order.
inline std::vector<std::string> validate_domain(const Domain &domain) {
  std::vector<std::string> out;
  if (domain.kind == DomainKind::Source && domain.samples.size() < 4) {
    out.emplace_back("source requires ≥ 4 samples");
  } else if (domain.kind == DomainKind::Target && domain.samples.empty()) {
    out.emplace_back("target requires ≥ 1 sample");
  }

  std::set<std::string> seen;
  std::set<std::string> duplicated;
  for (const auto &s : domain.samples) {
    const std::string tag = "sample '" + s.id + "': ";
    if (!seen.insert(s.id).second) duplicated.insert(s.id);
    if (!s.trajectory && !s.knowledge) {
      out.push_back(tag + "has neither trajectory nor knowledge");
    }
    if (s.trajectory) {
      const Matrix &t = *s.trajectory;
      if (t.rows() < 2) out.push_back(tag + "trajectory needs ≥ 2 rows");
      if (t.cols() < 1) out.push_back(tag + "trajectory has no state variables");
      if (!t.allFinite()) out.push_back(tag + "trajectory contains non-finite values");
      if (!(s.ds > 0.0) || !std::isfinite(s.ds)) out.push_back(tag + "trajectory step ds must be > 0");
    }
    if (s.knowledge) {
      if (static_cast<std::size_t>(s.knowledge->size()) != domain.knowledge_columns.size()) {
        out.push_back(tag + "knowledge length " + std::to_string(s.knowledge->size()) +
                      " does not match " + std::to_string(domain.knowledge_columns.size()) +
                      " knowledge columns");
      }
      if (!s.knowledge->allFinite()) out.push_back(tag + "knowledge contains non-finite values");
    }
    if (domain.kind == DomainKind::Source && !s.label) {
      out.push_back(tag + "source sample has no label");
    }
    if (s.label && *s.label < 0) out.push_back(tag + "label must be ≥ 0");
  }
  for (const auto &id : duplicated) out.push_back("sample '" + id + "': duplicate id");

  std::set<std::string> names;
  for (const auto &c : domain.knowledge_columns) {
    if (!names.insert(c).second) out.push_back("knowledge column '" + c + "' is duplicated");
  }
  std::sort(out.begin(), out.end());
  return out;
}

enum class FeatureKind { DataDerived, Knowledge, Fused };

inline const char *to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::DataDerived: return "data";
    case FeatureKind::Knowledge: return "knowledge";
    case FeatureKind::Fused: return "fused";
  }
  return "?";
}

inline FeatureKind feature_kind_from_string(const std::string &s) {
  if (s == "data") return FeatureKind::DataDerived;
  if (s == "knowledge") return FeatureKind::Knowledge;
  if (s == "fused") return FeatureKind::Fused;
  throw InputError("unknown feature kind '" + s + "'");
}

/// N samples x F named causal-factor components. Immutable once built.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;

  FeatureMatrix(std::vector<std::string> ids, std::vector<std::string> columns, Matrix rows,
                FeatureKind kind)
      : ids_(std::move(ids)), columns_(std::move(columns)), rows_(std::move(rows)), kind_(kind) {
    if (static_cast<std::size_t>(rows_.cols()) != columns_.size()) {
      throw InputError("feature matrix has " + std::to_string(rows_.cols()) + " columns but " +
                       std::to_string(columns_.size()) + " names");
    }
    if (static_cast<std::size_t>(rows_.rows()) != ids_.size()) {
      throw InputError("feature matrix has " + std::to_string(rows_.rows()) + " rows but " +
                       std::to_string(ids_.size()) + " ids");
    }
    if (!rows_.allFinite()) throw InputError("feature matrix contains non-finite entries");
    std::set<std::string> names;
    for (std::size_t j = 0; j < columns_.size(); ++j) {
      if (!names.insert(columns_[j]).second) {
        throw InputError("duplicate feature column '" + columns_[j] + "'");
      }
      index_.emplace(columns_[j], j);
    }
  }

  const std::vector<std::string> &ids() const { return ids_; }
  const std::vector<std::string> &columns() const { return columns_; }
  const Matrix &rows() const { return rows_; }
  FeatureKind kind() const { return kind_; }
  Eigen::Index n_rows() const { return rows_.rows(); }
  Eigen::Index n_cols() const { return rows_.cols(); }

  bool has_column(const std::string &name) const { return index_.count(name) != 0; }

  std::size_t column_index(const std::string &name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("no feature column named '" + name + "'");
    return it->second;
  }

  /// Keeps `names` in the given order.
  FeatureMatrix select_columns(const std::vector<std::string> &names) const {
    Matrix out(rows_.rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
      out.col(static_cast<Eigen::Index>(j)) = rows_.col(static_cast<Eigen::Index>(column_index(names[j])));
    }
    return FeatureMatrix(ids_, names, std::move(out), kind_);
  }

  FeatureMatrix select_rows(const std::vector<Eigen::Index> &which) const {
    Matrix out(static_cast<Eigen::Index>(which.size()), rows_.cols());
    std::vector<std::string> ids;
    ids.reserve(which.size());
    for (std::size_t i = 0; i < which.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = rows_.row(which[i]);
      ids.push_back(ids_[static_cast<std::size_t>(which[i])]);
    }
    return FeatureMatrix(std::move(ids), columns_, std::move(out), kind_);
  }

  /// Same ids and columns, new values.
  FeatureMatrix with_rows(Matrix rows) const {
    return FeatureMatrix(ids_, columns_, std::move(rows), kind_);
  }

 private:
  std::vector<std::string> ids_;
  std::vector<std::string> columns_;
  Matrix rows_;
  FeatureKind kind_ = FeatureKind::DataDerived;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gaussian reference distribution: mean, unbiased covariance and the
/// inverse of the ridge-regularized covariance.
struct GaussianModel {
  Vector mean;
  Matrix covariance;
  Matrix precision;
  double ridge_eps = 0.0;
  /// Covariance was rank deficient; distances rely on the ridge term.
  bool degenerate = false;

  Eigen::Index dim() const { return mean.size(); }

  /// Regularized covariance, the matrix whose inverse is `precision`.
  Matrix regularized_covariance() const {
    return covariance + ridge_eps * Matrix::Identity(dim(), dim());
  }
};

/// Smallest ridge used when a covariance has zero trace, so the precision
/// stays finite.
inline constexpr double kRidgeFloor = 1e-12;

/// Default ridge: 1e-8 * trace(cov) / F, floored at kRidgeFloor.
inline double default_ridge_eps(const Matrix &covariance) {
  const double f = static_cast<double>(covariance.rows());
  if (f == 0) return kRidgeFloor;
  const double eps = 1e-8 * covariance.trace() / f;
  return std::max(eps, kRidgeFloor);
}

namespace detail {

inline Matrix symmetrize(const Matrix &m) { return 0.5 * (m + m.transpose()); }

/// Inverse of a symmetric positive definite matrix. Falls back to an
/// eigendecomposition when the Cholesky factorization fails.
inline Matrix spd_inverse(const Matrix &a) {
  const Eigen::Index n = a.rows();
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) {
    return detail::symmetrize(llt.solve(Matrix::Identity(n, n)));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw NumericalError("matrix is not positive definite after regularization");
  }
  Vector inv = es.eigenvalues().cwiseInverse();
  return detail::symmetrize(es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose());
}

}  // namespace detail

/// Builds a model from given moments. `ridge_eps` < 0 selects the default rule.
inline GaussianModel gaussian_from_moments(Vector mean, Matrix covariance, double ridge_eps = -1.0) {
  if (covariance.rows() != covariance.cols() || covariance.rows() != mean.size()) {
    throw InputError("mean/covariance dimension mismatch");
  }
  if (!mean.allFinite() || !covariance.allFinite()) throw InputError("non-finite moments");
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10 *
          std::max(1.0, covariance.cwiseAbs().maxCoeff())) {
    throw InputError("covariance is not symmetric");
  }
  GaussianModel g;
  g.mean = std::move(mean);
  g.covariance = detail::symmetrize(covariance);
  g.ridge_eps = ridge_eps < 0 ? default_ridge_eps(g.covariance) : ridge_eps;
  const Eigen::Index f = g.dim();
  if (f > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(g.covariance, Eigen::EigenvaluesOnly);
    const double top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 0.0);
    g.degenerate = es.eigenvalues().minCoeff() <= 1e-12 * std::max(top, 1e-300);
  }
  g.precision = detail::spd_inverse(g.regularized_covariance());
  return g;
}

/// Pearson correlation; NaN when either side has zero variance.
inline double pearson(const std::vector<double> &x, const std::vector<double> &y) {
  if (x.size() != y.size()) throw InputError("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nan("");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) return std::nan("");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace confgap
