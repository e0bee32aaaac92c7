#pragma once

// Data-derived causal factors: candidate-function libraries, finite
// difference derivatives and sequentially thresholded ridge regression
// (STRidge), flattened into per-sample feature vectors.

#include "confgap/core.hpp"

#include <sstream>

namespace confgap {

/// Candidate-function library over S state variables: optional constant,
/// all monomials of degree 1..poly_max_degree, optional sin/cos per variable.
class CandidateLibrary {
 public:
  struct Config {
    int poly_max_degree = 5;
    bool include_trig = true;
    bool include_constant = true;
  };

  enum class TermKind { Constant, Monomial, Sin, Cos };

  struct Term {
    TermKind kind = TermKind::Constant;
    std::vector<int> exponents;  // Monomial only, one entry per state variable
    int variable = 0;            // Sin/Cos only
    std::string name;
  };

  CandidateLibrary() = default;

  CandidateLibrary(Config config, int n_states) : config_(config), n_states_(n_states) {
    if (config.poly_max_degree < 1) throw InputError("poly_max_degree must be ≥ 1");
    if (n_states < 1) throw InputError("library needs ≥ 1 state variable");
    if (config.include_constant) terms_.push_back({TermKind::Constant, {}, 0, "1"});
    for (int degree = 1; degree <= config.poly_max_degree; ++degree) {
      // Non-decreasing variable index sequences of length `degree`, in
      // lexicographic order: x0, x1, x0^2, x0*x1, x1^2, ...
      std::vector<int> idx(static_cast<std::size_t>(degree), 0);
      while (true) {
        std::vector<int> exps(static_cast<std::size_t>(n_states), 0);
        for (int v : idx) ++exps[static_cast<std::size_t>(v)];
        terms_.push_back({TermKind::Monomial, exps, 0, monomial_name(exps)});
        int pos = degree - 1;
        while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == n_states - 1) --pos;
        if (pos < 0) break;
        const int next = idx[static_cast<std::size_t>(pos)] + 1;
        for (int p = pos; p < degree; ++p) idx[static_cast<std::size_t>(p)] = next;
      }
    }
    if (config.include_trig) {
      for (int v = 0; v < n_states; ++v) {
        const std::string x = "x" + std::to_string(v);
        terms_.push_back({TermKind::Sin, {}, v, "sin(" + x + ")"});
        terms_.push_back({TermKind::Cos, {}, v, "cos(" + x + ")"});
      }
    }
  }

  const Config &config() const { return config_; }
  int n_states() const { return n_states_; }
  std::size_t term_count() const { return terms_.size(); }
  const std::vector<Term> &terms() const { return terms_; }

  std::vector<std::string> term_names() const {
    std::vector<std::string> out;
    out.reserve(terms_.size());
    for (const auto &t : terms_) out.push_back(t.name);
    return out;
  }

 private:
  static std::string monomial_name(const std::vector<int> &exps) {
    std::string out;
    for (std::size_t v = 0; v < exps.size(); ++v) {
      if (exps[v] == 0) continue;
      if (!out.empty()) out += "*";
      out += "x" + std::to_string(v);
      if (exps[v] > 1) out += "^" + std::to_string(exps[v]);
    }
    return out;
  }

  Config config_;
  int n_states_ = 0;
  std::vector<Term> terms_;
};

/// T x L design matrix: column j is term j evaluated on every trajectory row.
inline Matrix build_library(const Matrix &trajectory, const CandidateLibrary &library) {
  if (trajectory.rows() < 2) throw InputError("trajectory needs ≥ 2 rows");
  if (trajectory.cols() != library.n_states()) {
    throw InputError("trajectory has " + std::to_string(trajectory.cols()) +
                     " state variables, library expects " + std::to_string(library.n_states()));
  }
  for (Eigen::Index t = 0; t < trajectory.rows(); ++t) {
    if (!trajectory.row(t).allFinite()) {
      throw InputError("trajectory row " + std::to_string(t) + " contains non-finite values");
    }
  }
  const auto &terms = library.terms();
  Matrix theta(trajectory.rows(), static_cast<Eigen::Index>(terms.size()));
  for (std::size_t j = 0; j < terms.size(); ++j) {
    const auto &term = terms[j];
    auto col = theta.col(static_cast<Eigen::Index>(j));
    switch (term.kind) {
      case CandidateLibrary::TermKind::Constant:
        col.setOnes();
        break;
      case CandidateLibrary::TermKind::Monomial:
        col.setOnes();
        for (std::size_t v = 0; v < term.exponents.size(); ++v) {
          for (int p = 0; p < term.exponents[v]; ++p) {
            col.array() *= trajectory.col(static_cast<Eigen::Index>(v)).array();
          }
        }
        break;
      case CandidateLibrary::TermKind::Sin:
        col = trajectory.col(term.variable).array().sin().matrix();
        break;
      case CandidateLibrary::TermKind::Cos:
        col = trajectory.col(term.variable).array().cos().matrix();
        break;
    }
  }
  return theta;
}

/// Central differences inside, first-order one-sided differences at both ends.
inline Matrix estimate_derivatives(const Matrix &trajectory, double ds) {
  if (!(ds > 0.0) || !std::isfinite(ds)) throw InputError("ds must be a finite value > 0");
  const Eigen::Index t = trajectory.rows();
  if (t < 3) throw InputError("derivative estimation needs ≥ 3 rows");
  Matrix d(t, trajectory.cols());
  d.row(0) = (trajectory.row(1) - trajectory.row(0)) / ds;
  d.row(t - 1) = (trajectory.row(t - 1) - trajectory.row(t - 2)) / ds;
  for (Eigen::Index i = 1; i + 1 < t; ++i) {
    d.row(i) = (trajectory.row(i + 1) - trajectory.row(i - 1)) / (2.0 * ds);
  }
  return d;
}

struct StridgeParams {
  double threshold = 0.05;
  double ridge_lambda = 1e-5;
  int max_iter = 20;
};

/// Matrix-level STRidge output.
struct StridgeSolution {
  Matrix xi;  // S x L
  int n_iterations = 0;
  bool converged = false;
  /// Some restricted solve needed the eigendecomposition fallback.
  bool fallback_used = false;
  double residual_norm = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

/// Solves (A^T A + lambda I) x = A^T b for one right-hand side. Uses a
/// Jacobi-scaled Cholesky factorization; switches to an eigendecomposition
/// pseudo-inverse when the system is singular.
inline Vector ridge_solve(const Matrix &a, const Vector &b, double lambda, bool &fallback) {
  const Eigen::Index l = a.cols();
  Matrix gram = a.transpose() * a;
  gram.diagonal().array() += lambda;
  Vector rhs = a.transpose() * b;

  Vector scale(l);
  for (Eigen::Index j = 0; j < l; ++j) {
    scale(j) = gram(j, j) > 0 ? 1.0 / std::sqrt(gram(j, j)) : 1.0;
  }
  Matrix scaled = scale.asDiagonal() * gram * scale.asDiagonal();
  Vector scaled_rhs = scale.asDiagonal() * rhs;

  Eigen::LLT<Matrix> llt(scaled);
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    // Reject numerically singular factorizations (tiny pivots).
    const Vector piv = Matrix(llt.matrixL()).diagonal();
    const double lo = piv.cwiseAbs().minCoeff();
    const double hi = piv.cwiseAbs().maxCoeff();
    ok = lo > 1e-7 * hi;
  }
  if (ok) return scale.asDiagonal() * llt.solve(scaled_rhs);

  fallback = true;
  Eigen::SelfAdjointEigenSolver<Matrix> es(scaled);
  const Vector &ev = es.eigenvalues();
  const double cutoff = std::max(ev.cwiseAbs().maxCoeff(), 1e-300) * 1e-12 * static_cast<double>(l);
  Vector inv(l);
  for (Eigen::Index j = 0; j < l; ++j) inv(j) = ev(j) > cutoff ? 1.0 / ev(j) : 0.0;
  const Matrix &v = es.eigenvectors();
  return scale.asDiagonal() * (v * (inv.asDiagonal() * (v.transpose() * scaled_rhs)));
}

}  // namespace detail

/// Sequentially thresholded ridge regression of `derivatives` (T x S) on the
/// candidate library `design` (T x L). Per state variable: full ridge solve,
/// zero coefficients below `threshold`, refit on the surviving support, and
/// repeat until the support is stable or max_iter refits were made.
inline StridgeSolution stridge_solve(const Matrix &design, const Matrix &derivatives,
                                     const StridgeParams &params) {
  if (design.rows() != derivatives.rows()) {
    throw InputError("design and derivative row counts differ");
  }
  if (!std::isfinite(params.threshold) || params.threshold < 0) {
    throw InputError("threshold must be finite and ≥ 0");
  }
  if (!std::isfinite(params.ridge_lambda) || params.ridge_lambda < 0) {
    throw InputError("ridge_lambda must be finite and ≥ 0");
  }
  if (params.max_iter < 1) throw InputError("max_iter must be ≥ 1");
  if (!design.allFinite() || !derivatives.allFinite()) {
    throw InputError("non-finite values in STRidge input");
  }

  const Eigen::Index t = design.rows();
  const Eigen::Index l = design.cols();
  const Eigen::Index s = derivatives.cols();
  StridgeSolution out;
  out.xi = Matrix::Zero(s, l);
  if (t < l) {
    out.warnings.push_back("fewer rows (" + std::to_string(t) + ") than library terms (" +
                           std::to_string(l) + ")");
  }

  out.converged = true;
  for (Eigen::Index k = 0; k < s; ++k) {
    const Vector target = derivatives.col(k);
    std::vector<Eigen::Index> support(static_cast<std::size_t>(l));
    for (Eigen::Index j = 0; j < l; ++j) support[static_cast<std::size_t>(j)] = j;

    Vector coef = detail::ridge_solve(design, target, params.ridge_lambda, out.fallback_used);
    int iterations = 0;
    bool stable = false;
    while (iterations < params.max_iter) {
      std::vector<Eigen::Index> kept;
      for (std::size_t i = 0; i < support.size(); ++i) {
        if (std::abs(coef(static_cast<Eigen::Index>(i))) >= params.threshold) kept.push_back(support[i]);
      }
      if (kept == support) {
        stable = true;
        break;
      }
      support = std::move(kept);
      ++iterations;
      if (support.empty()) {
        coef.resize(0);
        stable = true;
        break;
      }
      Matrix sub(t, static_cast<Eigen::Index>(support.size()));
      for (std::size_t i = 0; i < support.size(); ++i) {
        sub.col(static_cast<Eigen::Index>(i)) = design.col(support[i]);
      }
      coef = detail::ridge_solve(sub, target, params.ridge_lambda, out.fallback_used);
    }
    if (!stable) out.converged = false;
    for (std::size_t i = 0; i < support.size(); ++i) {
      const double c = coef(static_cast<Eigen::Index>(i));
      // Iteration cap reached: enforce the threshold without another refit.
      out.xi(k, support[i]) = std::abs(c) >= params.threshold ? c : 0.0;
    }
    out.n_iterations = std::max(out.n_iterations, iterations);
  }
  if (!out.converged) out.warnings.push_back("support did not stabilize within max_iter");
  if (out.fallback_used) out.warnings.push_back("singular restricted system; used eigendecomposition fallback");

  const Matrix resid = design * out.xi.transpose() - derivatives;
  out.residual_norm = resid.norm();
  if (!std::isfinite(out.residual_norm)) throw NumericalError("STRidge residual is not finite");
  return out;
}

/// One sample's identified sparse dynamics.
struct SparseDynamicsModel {
  CandidateLibrary library;
  Matrix xi;  // S x L
  double threshold = 0.0;
  double ridge_lambda = 0.0;
  int n_iterations = 0;
  bool converged = true;
  bool fallback_used = false;
  double residual_norm = 0.0;
  std::vector<std::string> warnings;
};

inline SparseDynamicsModel stridge(const CandidateLibrary &library, const Matrix &design,
                                   const Matrix &derivatives, const StridgeParams &params) {
  if (static_cast<std::size_t>(design.cols()) != library.term_count()) {
    throw InputError("design has " + std::to_string(design.cols()) + " columns, library has " +
                     std::to_string(library.term_count()) + " terms");
  }
  StridgeSolution sol = stridge_solve(design, derivatives, params);
  SparseDynamicsModel m;
  m.library = library;
  m.xi = std::move(sol.xi);
  m.threshold = params.threshold;
  m.ridge_lambda = params.ridge_lambda;
  m.n_iterations = sol.n_iterations;
  m.converged = sol.converged;
  m.fallback_used = sol.fallback_used;
  m.residual_norm = sol.residual_norm;
  m.warnings = std::move(sol.warnings);
  return m;
}

struct NamedVector {
  std::vector<std::string> names;
  Vector values;
};

/// Row-major flattening of xi, named "x<state>::<term>".
inline NamedVector flatten_model(const SparseDynamicsModel &model) {
  const auto terms = model.library.term_names();
  if (static_cast<std::size_t>(model.xi.cols()) != terms.size()) {
    throw InputError("model coefficient matrix does not match its library");
  }
  NamedVector out;
  out.values.resize(model.xi.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < model.xi.rows(); ++i) {
    for (Eigen::Index j = 0; j < model.xi.cols(); ++j, ++k) {
      out.names.push_back("x" + std::to_string(i) + "::" + terms[static_cast<std::size_t>(j)]);
      out.values(k) = model.xi(i, j);
    }
  }
  return out;
}

/// Projects the centered trajectory onto its top `rank` principal axes.
/// Axis signs are fixed so the largest-magnitude loading is positive.
inline Matrix pca_project(const Matrix &trajectory, int rank) {
  if (rank < 1 || rank > trajectory.cols()) {
    throw InputError("pca rank must be in [1, " + std::to_string(trajectory.cols()) + "]");
  }
  const RowVector mean = trajectory.colwise().mean();
  const Matrix centered = trajectory.rowwise() - mean;
  const Matrix cov = centered.transpose() * centered / static_cast<double>(trajectory.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(detail::symmetrize(cov));
  if (es.info() != Eigen::Success) throw NumericalError("PCA eigendecomposition failed");
  const Eigen::Index s = trajectory.cols();
  Matrix axes(s, rank);
  for (int r = 0; r < rank; ++r) {
    Vector v = es.eigenvectors().col(s - 1 - r);  // eigenvalues ascend
    Eigen::Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v(at) < 0) v = -v;
    axes.col(r) = v;
  }
  return centered * axes;
}

struct ExtractionParams {
  CandidateLibrary::Config library;
  StridgeParams stridge;
  /// Optional principal-component pre-projection of the state; identity when unset.
  std::optional<int> pca_rank;
};

/// Fits the sparse dynamics of a single trajectory.
inline SparseDynamicsModel fit_sample_dynamics(const Matrix &trajectory, double ds,
                                               const ExtractionParams &params) {
  Matrix states = params.pca_rank ? pca_project(trajectory, *params.pca_rank) : trajectory;
  CandidateLibrary library(params.library, static_cast<int>(states.cols()));
  const Matrix design = build_library(states, library);
  const Matrix derivs = estimate_derivatives(states, ds);
  return stridge(library, design, derivs, params.stridge);
}

struct Exclusion {
  std::string id;
  std::string reason;
};

struct ExtractionResult {
  FeatureMatrix features;
  std::vector<Exclusion> exclusions;
};

/// One flattened sparse model per sample, in sample order. Samples whose
/// extraction fails are excluded and reported; more than half failing is an
/// error.
inline ExtractionResult extract_domain_features(const Domain &domain, const ExtractionParams &params) {
  if (domain.samples.empty()) throw InputError("domain '" + domain.name + "' has no samples");
  for (const auto &s : domain.samples) {
    if (!s.trajectory) throw InputError("sample '" + s.id + "' has no trajectory");
  }

  std::vector<std::string> ids;
  std::vector<Vector> rows;
  std::vector<std::string> names;
  ExtractionResult result;
  for (const auto &s : domain.samples) {
    try {
      if (!s.trajectory->allFinite()) throw InputError("trajectory contains non-finite values");
      const auto model = fit_sample_dynamics(*s.trajectory, s.ds, params);
      auto flat = flatten_model(model);
      if (!flat.values.allFinite()) throw NumericalError("non-finite coefficients");
      if (names.empty()) {
        names = flat.names;
      } else if (flat.names != names) {
        throw InputError("feature layout differs from the first sample");
      }
      ids.push_back(s.id);
      rows.push_back(std::move(flat.values));
    } catch (const std::exception &e) {
      result.exclusions.push_back({s.id, e.what()});
    }
  }
  if (2 * result.exclusions.size() > domain.samples.size()) {
    std::ostringstream msg;
    msg << "feature extraction failed for " << result.exclusions.size() << " of "
        << domain.samples.size() << " samples in domain '" << domain.name << "'";
    if (!result.exclusions.empty()) {
      msg << " (first: " << result.exclusions.front().id << ": " << result.exclusions.front().reason << ")";
    }
    throw NumericalError(msg.str());
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  result.features = FeatureMatrix(std::move(ids), std::move(names), std::move(m), FeatureKind::DataDerived);
  return result;
}

}  // namespace confgap
