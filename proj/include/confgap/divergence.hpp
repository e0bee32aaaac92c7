#pragma once

// Gaussian fitting, KL divergence, Mahalanobis distance and the robustness
// metric used by the conformal bounds.

#include "confgap/core.hpp"

namespace confgap {

/// Column means, unbiased covariance (divisor N-1) and the inverse of
/// covariance + ridge_eps * I. `ridge_eps` < 0 selects the default rule.
inline GaussianModel fit_gaussian(const Matrix &rows, double ridge_eps = -1.0) {
  if (rows.rows() < 2) throw InputError("fit_gaussian needs ≥ 2 rows");
  if (!rows.allFinite()) throw InputError("fit_gaussian: non-finite entries");
  const Vector mean = rows.colwise().mean().transpose();
  const Matrix centered = rows.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  return gaussian_from_moments(mean, detail::symmetrize(cov), ridge_eps);
}

inline GaussianModel fit_gaussian(const FeatureMatrix &features, double ridge_eps = -1.0) {
  return fit_gaussian(features.rows(), ridge_eps);
}

/// KL divergence d(P|R) between two Gaussians, using each model's
/// regularized covariance.
inline double kl_divergence(const GaussianModel &p, const GaussianModel &r) {
  if (p.dim() != r.dim()) throw InputError("kl_divergence: dimension mismatch");
  const Eigen::Index k = p.dim();
  const Matrix sp = p.regularized_covariance();
  const Matrix sr = r.regularized_covariance();
  Eigen::LLT<Matrix> lp(sp);
  Eigen::LLT<Matrix> lr(sr);
  if (lp.info() != Eigen::Success) throw NumericalError("kl_divergence: covariance of P is not positive definite");
  if (lr.info() != Eigen::Success) throw NumericalError("kl_divergence: covariance of R is not positive definite");
  const double logdet_p = 2.0 * Matrix(lp.matrixL()).diagonal().array().log().sum();
  const double logdet_r = 2.0 * Matrix(lr.matrixL()).diagonal().array().log().sum();
  const double trace_term = lr.solve(sp).trace();
  const Vector dmu = r.mean - p.mean;
  const double quad = dmu.dot(lr.solve(dmu));
  const double kl = 0.5 * (logdet_r - logdet_p - static_cast<double>(k) + trace_term + quad);
  return std::max(kl, 0.0);
}

/// sqrt((x - mean)^T precision (x - mean)).
inline double mahalanobis(const Vector &x, const GaussianModel &model) {
  if (x.size() != model.dim()) throw InputError("mahalanobis: dimension mismatch");
  const Vector d = x - model.mean;
  return std::sqrt(std::max(0.0, d.dot(model.precision * d)));
}

enum class RobustnessVariant {
  /// Mean metric distance from x to every reference row.
  PairwiseMean,
  /// Metric distance from x to the reference mean.
  DistributionDirect,
};

inline const char *to_string(RobustnessVariant v) {
  return v == RobustnessVariant::PairwiseMean ? "pairwise_mean" : "distribution_direct";
}

inline RobustnessVariant robustness_variant_from_string(const std::string &s) {
  if (s == "pairwise_mean") return RobustnessVariant::PairwiseMean;
  if (s == "distribution_direct") return RobustnessVariant::DistributionDirect;
  throw InputError("unknown robustness variant '" + s + "' (expected pairwise_mean or distribution_direct)");
}

struct RobustnessConfig {
  RobustnessVariant variant = RobustnessVariant::DistributionDirect;
  /// Supplies the metric tensor (its precision). When unset, a Gaussian is
  /// fitted to whatever reference set the metric is evaluated against.
  std::optional<GaussianModel> metric_model;
  /// Ridge used when fitting a metric; < 0 selects the default rule.
  double ridge_eps = -1.0;
};

/// Whitening transform of a precision matrix: for P = L L^T the metric
/// distance between rows a and b equals ||(a - b) L||.
class MetricSpace {
 public:
  explicit MetricSpace(const Matrix &precision) {
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() == Eigen::Success) {
      factor_ = llt.matrixL();
    } else {
      Eigen::SelfAdjointEigenSolver<Matrix> es(detail::symmetrize(precision));
      if (es.info() != Eigen::Success) throw NumericalError("metric eigendecomposition failed");
      const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
      factor_ = es.eigenvectors() * root.asDiagonal();
    }
  }

  Eigen::Index dim() const { return factor_.rows(); }
  Matrix whiten(const Matrix &rows) const { return rows * factor_; }
  RowVector whiten(const RowVector &row) const { return row * factor_; }

 private:
  Matrix factor_;
};

namespace detail {

inline GaussianModel resolve_metric(const Matrix &reference, const RobustnessConfig &config) {
  if (config.metric_model) {
    if (config.metric_model->dim() != reference.cols()) {
      throw InputError("metric model dimension " + std::to_string(config.metric_model->dim()) +
                       " does not match feature dimension " + std::to_string(reference.cols()));
    }
    return *config.metric_model;
  }
  return fit_gaussian(reference, config.ridge_eps);
}

}  // namespace detail

/// Robustness of `x` against `reference`. When x belongs to the reference
/// set, pass the reference with that row removed.
inline double robustness(const Vector &x, const Matrix &reference, const RobustnessConfig &config) {
  if (reference.rows() == 0) throw InputError("robustness: empty reference");
  if (x.size() != reference.cols()) throw InputError("robustness: dimension mismatch");
  const GaussianModel metric = detail::resolve_metric(reference, config);
  if (config.variant == RobustnessVariant::DistributionDirect) {
    const Vector d = x - reference.colwise().mean().transpose();
    return std::sqrt(std::max(0.0, d.dot(metric.precision * d)));
  }
  double total = 0.0;
  for (Eigen::Index j = 0; j < reference.rows(); ++j) {
    const Vector d = x - reference.row(j).transpose();
    total += std::sqrt(std::max(0.0, d.dot(metric.precision * d)));
  }
  return total / static_cast<double>(reference.rows());
}

inline double robustness(const Vector &x, const FeatureMatrix &reference, const RobustnessConfig &config) {
  return robustness(x, reference.rows(), config);
}

/// Batched robustness in an already whitened space (rows of `z` against the
/// whitened reference `zref`).
inline Vector robustness_whitened(const Matrix &z, const Matrix &zref, RobustnessVariant variant) {
  if (zref.rows() == 0) throw InputError("robustness: empty reference");
  Vector out(z.rows());
  if (variant == RobustnessVariant::DistributionDirect) {
    const RowVector centre = zref.colwise().mean();
    for (Eigen::Index i = 0; i < z.rows(); ++i) out(i) = (z.row(i) - centre).norm();
    return out;
  }
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < zref.rows(); ++j) total += (z.row(i) - zref.row(j)).norm();
    out(i) = total / static_cast<double>(zref.rows());
  }
  return out;
}

/// Leave-one-out robustness of each whitened row against the others (divisor N-1).
inline Vector leave_one_out_robustness_whitened(const Matrix &z, RobustnessVariant variant) {
  const Eigen::Index n = z.rows();
  if (n < 2) throw InputError("leave-one-out robustness needs ≥ 2 rows");
  Vector out(n);
  const double nm1 = static_cast<double>(n - 1);
  if (variant == RobustnessVariant::DistributionDirect) {
    // x_i minus the mean of the others is (x_i - mean) * N / (N - 1).
    const RowVector centre = z.colwise().mean();
    const double scale = static_cast<double>(n) / nm1;
    for (Eigen::Index i = 0; i < n; ++i) out(i) = scale * (z.row(i) - centre).norm();
    return out;
  }
  out.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = (z.row(i) - z.row(j)).norm();
      out(i) += d;
      out(j) += d;
    }
  }
  return out / nm1;
}

}  // namespace confgap
