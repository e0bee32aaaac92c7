#pragma once

// Domain conformal bounds (DCB) calibrated on a source feature matrix, and
// source domain conformance degree (SDCD) scoring of target matrices.

#include "confgap/divergence.hpp"

#include <cstring>
#include <numeric>
#include <random>

namespace confgap {

/// Rank of the interval centre among the sorted validation residuals.
enum class QuantileRule {
  /// k = ceil((n_val / 2 + 1)(1 - alpha))
  HalfSplit,
  /// k = ceil((n_val + 1)(1 - alpha)), the usual split-conformal rank.
  Standard,
};

/// Half-width of the interval around the centre d.
enum class IntervalWidth {
  /// The ceil((n_val + 1)(1 - alpha))-th smallest |R_j - d|; the interval
  /// then holds held-out same-domain residuals with probability ≥ 1 - alpha.
  ConformalQuantile,
  /// Sample standard deviation of the residuals (divisor n_val - 1).
  ResidualStd,
};

inline const char *to_string(QuantileRule r) { return r == QuantileRule::HalfSplit ? "half_split" : "standard"; }
inline const char *to_string(IntervalWidth w) {
  return w == IntervalWidth::ConformalQuantile ? "conformal_quantile" : "residual_std";
}

inline QuantileRule quantile_rule_from_string(const std::string &s) {
  if (s == "half_split") return QuantileRule::HalfSplit;
  if (s == "standard") return QuantileRule::Standard;
  throw InputError("unknown quantile rule '" + s + "' (expected half_split or standard)");
}

inline IntervalWidth interval_width_from_string(const std::string &s) {
  if (s == "conformal_quantile") return IntervalWidth::ConformalQuantile;
  if (s == "residual_std") return IntervalWidth::ResidualStd;
  throw InputError("unknown interval width '" + s + "' (expected conformal_quantile or residual_std)");
}

struct CalibrationOptions {
  QuantileRule quantile_rule = QuantileRule::HalfSplit;
  IntervalWidth interval_width = IntervalWidth::ConformalQuantile;
};

struct DcbCalibration {
  std::string id;
  double sigma = 0.0;  // mean leave-one-out robustness over the training half
  double interval_lo = 0.0;
  double interval_hi = 0.0;
  double centre = 0.0;  // kth smallest validation residual
  double half_width = 0.0;
  double residual_std = 0.0;
  double alpha = 0.05;
  int k_index = 1;
  std::uint64_t split_seed = 0;
  int n_train = 0;
  int n_val = 0;
  RobustnessVariant variant = RobustnessVariant::DistributionDirect;
  GaussianModel metric_model;
  CalibrationOptions options;
  std::vector<std::string> feature_columns;
  /// All source rows identical or a zero-width interval.
  bool degenerate = false;

  bool contains(double residual) const { return interval_lo <= residual && residual <= interval_hi; }
};

/// ceil(x) that ignores floating-point noise just above an integer.
inline int ceil_rank(double x) { return static_cast<int>(std::ceil(x - 1e-9)); }

inline int quantile_rank(QuantileRule rule, int n_val, double alpha) {
  const double base = rule == QuantileRule::HalfSplit ? n_val / 2.0 + 1.0 : n_val + 1.0;
  return std::clamp(ceil_rank(base * (1.0 - alpha)), 1, n_val);
}

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t h, const void *data, std::size_t len) {
  const auto *p = static_cast<const unsigned char *>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string calibration_id(const DcbCalibration &c) {
  std::uint64_t h = 14695981039346656037ULL;
  for (double v : {c.sigma, c.interval_lo, c.interval_hi, c.alpha}) h = fnv1a(h, &v, sizeof v);
  h = fnv1a(h, &c.split_seed, sizeof c.split_seed);
  for (int v : {c.n_train, c.n_val, c.k_index}) h = fnv1a(h, &v, sizeof v);
  for (const auto &col : c.feature_columns) h = fnv1a(h, col.data(), col.size() + 1);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string("dcb-") + buf;
}

inline std::vector<Eigen::Index> seeded_permutation(Eigen::Index n, std::uint64_t seed) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

inline Matrix gather_rows(const Matrix &m, const std::vector<Eigen::Index> &rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace detail

/// Calibrates the domain conformal bound of a source feature matrix.
///
/// The rows are split by a seeded uniform permutation into a training half
/// I_T (gets the extra row when N is odd) and a validation half I_V. sigma is
/// the mean leave-one-out robustness over I_T; each validation row gets the
/// residual R_j = robustness(row, I_T) - sigma. The interval is centred on
/// the kth smallest residual (see QuantileRule) with the half-width chosen by
/// IntervalWidth. The metric tensor comes from `config.metric_model` or, when
/// unset, from a Gaussian fitted to the I_T rows.
inline DcbCalibration dcb_compute(const FeatureMatrix &source, double alpha, const RobustnessConfig &config,
                                  std::uint64_t split_seed, const CalibrationOptions &options = {}) {
  const Eigen::Index n = source.n_rows();
  if (n < 4) throw InputError("calibration needs ≥ 4 source rows, got " + std::to_string(n));
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  if (source.n_cols() == 0) throw InputError("calibration needs ≥ 1 feature column");

  DcbCalibration c;
  c.alpha = alpha;
  c.split_seed = split_seed;
  c.variant = config.variant;
  c.options = options;
  c.feature_columns = source.columns();

  const auto perm = detail::seeded_permutation(n, split_seed);
  const Eigen::Index n_train = (n + 1) / 2;
  const std::vector<Eigen::Index> train(perm.begin(), perm.begin() + n_train);
  const std::vector<Eigen::Index> val(perm.begin() + n_train, perm.end());
  c.n_train = static_cast<int>(train.size());
  c.n_val = static_cast<int>(val.size());
  // Fitting on I_T keeps validation rows and future target rows equally
  // out-of-sample with respect to the metric.
  c.metric_model = detail::resolve_metric(detail::gather_rows(source.rows(), train), config);

  const MetricSpace metric(c.metric_model.precision);
  const Matrix z = metric.whiten(source.rows());
  const Matrix z_train = detail::gather_rows(z, train);
  const Matrix z_val = detail::gather_rows(z, val);

  c.sigma = leave_one_out_robustness_whitened(z_train, config.variant).mean();
  const Vector residuals = (robustness_whitened(z_val, z_train, config.variant).array() - c.sigma).matrix();

  std::vector<double> sorted(residuals.data(), residuals.data() + residuals.size());
  std::sort(sorted.begin(), sorted.end());
  c.k_index = quantile_rank(options.quantile_rule, c.n_val, alpha);
  c.centre = sorted[static_cast<std::size_t>(c.k_index - 1)];

  const double mean_r = residuals.mean();
  c.residual_std = std::sqrt((residuals.array() - mean_r).square().sum() / static_cast<double>(c.n_val - 1));

  if (options.interval_width == IntervalWidth::ResidualStd) {
    c.half_width = c.residual_std;
  } else {
    std::vector<double> dev;
    dev.reserve(sorted.size());
    for (double r : sorted) dev.push_back(std::abs(r - c.centre));
    std::sort(dev.begin(), dev.end());
    const int k = quantile_rank(QuantileRule::Standard, c.n_val, alpha);
    c.half_width = dev[static_cast<std::size_t>(k - 1)];
  }
  c.interval_lo = c.centre - c.half_width;
  c.interval_hi = c.centre + c.half_width;

  bool identical = true;
  for (Eigen::Index i = 1; i < n && identical; ++i) identical = source.rows().row(i) == source.rows().row(0);
  c.degenerate = identical || c.half_width == 0.0;
  c.id = detail::calibration_id(c);
  return c;
}

struct SampleResidual {
  std::string id;
  double residual = 0.0;
  bool in_bounds = false;
};

struct SdcdReport {
  std::string target_name;
  double sdcd_percent = 0.0;
  std::vector<SampleResidual> residuals;
  std::string calibration_ref;

  std::size_t count_in_bounds() const {
    return static_cast<std::size_t>(std::count_if(residuals.begin(), residuals.end(),
                                                  [](const SampleResidual &r) { return r.in_bounds; }));
  }
};

namespace detail {

inline void require_columns(const std::vector<std::string> &got, const std::vector<std::string> &want,
                            const std::string &what) {
  const std::size_t n = std::min(got.size(), want.size());
  for (std::size_t j = 0; j < n; ++j) {
    if (got[j] != want[j]) {
      throw InputError(what + " column " + std::to_string(j) + " is '" + got[j] + "', calibration expects '" +
                       want[j] + "'");
    }
  }
  if (got.size() != want.size()) {
    const std::string first = got.size() > want.size() ? got[n] : want[n];
    throw InputError(what + " has " + std::to_string(got.size()) + " columns, calibration expects " +
                     std::to_string(want.size()) + " (first mismatch: '" + first + "')");
  }
}

}  // namespace detail

/// Scores every target row against the full source matrix: residual =
/// robustness(row, source) - sigma, in bounds iff it lies in the closed
/// calibration interval.
inline SdcdReport sdcd(const FeatureMatrix &target, const FeatureMatrix &source, const DcbCalibration &calibration,
                       std::string target_name = "target") {
  if (target.n_rows() == 0) throw InputError("sdcd: target has no rows");
  if (source.n_rows() == 0) throw InputError("sdcd: source has no rows");
  detail::require_columns(target.columns(), calibration.feature_columns, "target");
  detail::require_columns(source.columns(), calibration.feature_columns, "source");

  const MetricSpace metric(calibration.metric_model.precision);
  const Vector rho = robustness_whitened(metric.whiten(target.rows()), metric.whiten(source.rows()),
                                         calibration.variant);
  SdcdReport report;
  report.target_name = std::move(target_name);
  report.calibration_ref = calibration.id;
  report.residuals.reserve(static_cast<std::size_t>(target.n_rows()));
  for (Eigen::Index i = 0; i < target.n_rows(); ++i) {
    const double r = rho(i) - calibration.sigma;
    report.residuals.push_back({target.ids()[static_cast<std::size_t>(i)], r, calibration.contains(r)});
  }
  report.sdcd_percent = 100.0 * static_cast<double>(report.count_in_bounds()) /
                        static_cast<double>(report.residuals.size());
  return report;
}

struct CoverageResult {
  double mean_coverage = 0.0;
  std::vector<double> per_trial;
  int n_val = 0;  // validation rows per calibration
};

/// Empirical coverage of calibrations drawn from `pool`, scored on rows of
/// `heldout_pool` that were not used for calibration. Each trial permutes
/// both pools, calibrates on the first two thirds of `pool` and scores the
/// last third of `heldout_pool`. Pass the same matrix twice for the plain
/// same-domain check.
inline CoverageResult coverage_check(const FeatureMatrix &pool, const FeatureMatrix &heldout_pool, double alpha,
                                     int n_trials, std::uint64_t seed, RobustnessConfig config = {},
                                     const CalibrationOptions &options = {}) {
  const Eigen::Index n = pool.n_rows();
  if (n < 12) throw InputError("coverage_check needs ≥ 12 rows, got " + std::to_string(n));
  if (heldout_pool.n_rows() != n) throw InputError("coverage_check: pools must have equal row counts");
  if (n_trials < 1) throw InputError("coverage_check needs ≥ 1 trial");
  config.metric_model.reset();

  const Eigen::Index n_cal = (2 * n + 2) / 3;
  CoverageResult out;
  std::mt19937_64 seeder(seed);
  for (int t = 0; t < n_trials; ++t) {
    const std::uint64_t trial_seed = seeder();
    const std::uint64_t split_seed = seeder();
    const auto perm = detail::seeded_permutation(n, trial_seed);
    const std::vector<Eigen::Index> cal(perm.begin(), perm.begin() + n_cal);
    const std::vector<Eigen::Index> held(perm.begin() + n_cal, perm.end());
    const FeatureMatrix cal_rows = pool.select_rows(cal);
    const auto calibration = dcb_compute(cal_rows, alpha, config, split_seed, options);
    const auto report = sdcd(heldout_pool.select_rows(held), cal_rows, calibration);
    out.per_trial.push_back(report.sdcd_percent / 100.0);
    out.n_val = calibration.n_val;
  }
  out.mean_coverage = std::accumulate(out.per_trial.begin(), out.per_trial.end(), 0.0) / n_trials;
  return out;
}

inline CoverageResult coverage_check(const FeatureMatrix &features, double alpha, int n_trials, std::uint64_t seed,
                                     RobustnessConfig config = {}, const CalibrationOptions &options = {}) {
  return coverage_check(features, features, alpha, n_trials, seed, std::move(config), options);
}

}  // namespace confgap
