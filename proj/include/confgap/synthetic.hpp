#pragma once

// Synthetic source/target domains with controlled causal shift, a reference
// ERM classifier, shift and PSNR sweeps, and a radial-profile trajectory
// builder for 2-D scalar fields.

#include "confgap/causal_extract.hpp"
#include "confgap/conformal.hpp"
#include "confgap/refinement.hpp"

#include <array>
#include <functional>
#include <limits>
#include <random>

namespace confgap {

enum class BaseDynamics { LinearDecay, HarmonicOscillator, Cubic };
enum class KnowledgeSignal { None, GapClosing, Redundant };

inline const char *to_string(BaseDynamics d) {
  switch (d) {
    case BaseDynamics::LinearDecay: return "linear_decay";
    case BaseDynamics::HarmonicOscillator: return "harmonic_oscillator";
    case BaseDynamics::Cubic: return "cubic";
  }
  return "?";
}

inline BaseDynamics base_dynamics_from_string(const std::string &s) {
  if (s == "linear_decay") return BaseDynamics::LinearDecay;
  if (s == "harmonic_oscillator") return BaseDynamics::HarmonicOscillator;
  if (s == "cubic") return BaseDynamics::Cubic;
  throw InputError("unknown base dynamics '" + s + "' (expected linear_decay, harmonic_oscillator or cubic)");
}

inline const char *to_string(KnowledgeSignal k) {
  switch (k) {
    case KnowledgeSignal::None: return "none";
    case KnowledgeSignal::GapClosing: return "gap_closing";
    case KnowledgeSignal::Redundant: return "redundant";
  }
  return "?";
}

inline KnowledgeSignal knowledge_signal_from_string(const std::string &s) {
  if (s == "none") return KnowledgeSignal::None;
  if (s == "gap_closing") return KnowledgeSignal::GapClosing;
  if (s == "redundant") return KnowledgeSignal::Redundant;
  throw InputError("unknown knowledge signal '" + s + "' (expected none, gap_closing or redundant)");
}

/// Generative model. Every sample draws two latent causal factors c1, c2 ~
/// N(0, 1); the label is the tertile of (c1 + c2 / 2) / sqrt(1.25). The
/// trajectory follows `base_dynamics` whose rate parameter
///   p = p0 + p_std * (c1 + nu) + shift_level * p_std   (nu ~ N(0, 0.3^2))
/// carries c1 (the shift applies to the target only), plus an independent
/// nuisance rate. GapClosing knowledge measures c2 (identically distributed
/// in both domains); Redundant knowledge re-measures the shifted rate p.
struct ShiftScenario {
  BaseDynamics base_dynamics = BaseDynamics::LinearDecay;
  int n_samples_per_domain = 200;
  double shift_level = 0.0;  // in units of the rate parameter's spread
  double noise_sigma = 0.0;  // additive Gaussian noise on trajectory entries
  KnowledgeSignal knowledge_signal = KnowledgeSignal::None;
  int n_knowledge = 14;
  std::uint64_t seed = 0;
};

struct ScenarioDomains {
  Domain source;
  Domain target;
};

struct DynamicsSetup {
  double rate_mean, rate_spread;        // p0, p_std
  double nuisance_mean, nuisance_spread;
  std::vector<double> initial_state;
  double ds;
  int steps;  // trajectory rows
  CandidateLibrary::Config library;
};

inline DynamicsSetup dynamics_setup(BaseDynamics d) {
  switch (d) {
    case BaseDynamics::LinearDecay:
      return {1.0, 0.15, 3.0, 0.3, {1.0, 1.0}, 0.02, 101, {1, false, false}};
    case BaseDynamics::HarmonicOscillator:
      return {1.0, 0.15, 2.0, 0.2, {1.0, 0.0}, 0.04, 101, {1, false, false}};
    case BaseDynamics::Cubic:
      return {1.0, 0.15, 0.5, 0.05, {1.5}, 0.02, 101, {3, false, false}};
  }
  throw InputError("unknown base dynamics");
}

/// Extraction parameters matched to a scenario's dynamics.
inline ExtractionParams scenario_extraction(BaseDynamics d) {
  ExtractionParams p;
  p.library = dynamics_setup(d).library;
  return p;
}

namespace detail {

using OdeRhs = std::function<Vector(const Vector &)>;

/// Classic RK4 with `substeps` internal steps per output step.
inline Matrix integrate_rk4(const OdeRhs &f, Vector x, double ds, int steps, int substeps = 10) {
  Matrix out(steps, x.size());
  out.row(0) = x.transpose();
  const double h = ds / substeps;
  for (int i = 1; i < steps; ++i) {
    for (int k = 0; k < substeps; ++k) {
      const Vector k1 = f(x);
      const Vector k2 = f(x + 0.5 * h * k1);
      const Vector k3 = f(x + 0.5 * h * k2);
      const Vector k4 = f(x + h * k3);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    out.row(i) = x.transpose();
  }
  return out;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline int tertile_label(double z) {
  constexpr double kCut = 0.4307272992954576;  // standard normal 2/3 quantile
  return z < -kCut ? 0 : (z > kCut ? 2 : 1);
}

}  // namespace detail

/// Simulates one trajectory of `d` with rate p and nuisance rate q.
inline Matrix simulate_dynamics(BaseDynamics d, double p, double q) {
  const DynamicsSetup setup = dynamics_setup(d);
  Vector x0 = Eigen::Map<const Vector>(setup.initial_state.data(), static_cast<Eigen::Index>(setup.initial_state.size()));
  detail::OdeRhs f;
  switch (d) {
    case BaseDynamics::LinearDecay:
      f = [p, q](const Vector &x) { return Vector{{-p * x(0), -q * x(1)}}; };
      break;
    case BaseDynamics::HarmonicOscillator:
      f = [p, q](const Vector &x) { return Vector{{p * x(1), -q * x(0)}}; };
      break;
    case BaseDynamics::Cubic:
      f = [p, q](const Vector &x) { return Vector{{-p * x(0) - q * x(0) * x(0) * x(0)}}; };
      break;
  }
  return detail::integrate_rk4(f, x0, setup.ds, setup.steps);
}

inline void validate_scenario(const ShiftScenario &s) {
  if (s.n_samples_per_domain < 4) throw InputError("n_samples_per_domain must be ≥ 4");
  if (!std::isfinite(s.shift_level) || s.shift_level < 0) throw InputError("shift_level must be finite and ≥ 0");
  if (!std::isfinite(s.noise_sigma) || s.noise_sigma < 0) throw InputError("noise_sigma must be finite and ≥ 0");
  if (s.knowledge_signal != KnowledgeSignal::None && s.n_knowledge < 1) {
    throw InputError("n_knowledge must be ≥ 1 when knowledge is requested");
  }
}

/// Deterministic in `spec.seed`: both domains come from one random stream,
/// source first.
inline ScenarioDomains generate_scenario(const ShiftScenario &spec) {
  validate_scenario(spec);
  const DynamicsSetup setup = dynamics_setup(spec.base_dynamics);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::string> kcols;
  if (spec.knowledge_signal != KnowledgeSignal::None) {
    for (int r = 0; r < spec.n_knowledge; ++r) kcols.push_back("k" + std::to_string(r));
  }

  auto make_domain = [&](DomainKind kind) {
    Domain dom;
    dom.kind = kind;
    dom.name = kind == DomainKind::Source ? "source" : "target";
    dom.knowledge_columns = kcols;
    const double shift = kind == DomainKind::Target ? spec.shift_level : 0.0;
    const std::string prefix = kind == DomainKind::Source ? "src-" : "tgt-";
    for (int i = 0; i < spec.n_samples_per_domain; ++i) {
      const double c1 = normal(rng);
      const double c2 = normal(rng);
      const double nu = 0.3 * normal(rng);
      const double rate_z = c1 + nu + shift;
      const double p = setup.rate_mean + setup.rate_spread * rate_z;
      const double q = setup.nuisance_mean + setup.nuisance_spread * normal(rng);

      DomainSample s;
      char id[32];
      std::snprintf(id, sizeof id, "%s%04d", prefix.c_str(), i);
      s.id = id;
      Matrix traj = simulate_dynamics(spec.base_dynamics, p, q);
      if (spec.noise_sigma > 0) {
        for (Eigen::Index r = 0; r < traj.rows(); ++r)
          for (Eigen::Index c = 0; c < traj.cols(); ++c) traj(r, c) += spec.noise_sigma * normal(rng);
      }
      s.trajectory = std::move(traj);
      s.ds = setup.ds;
      s.label = detail::tertile_label((c1 + 0.5 * c2) / std::sqrt(1.25));
      if (spec.knowledge_signal != KnowledgeSignal::None) {
        Vector k(spec.n_knowledge);
        const double signal = spec.knowledge_signal == KnowledgeSignal::GapClosing ? c2 : rate_z;
        for (int r = 0; r < spec.n_knowledge; ++r) k(r) = detail::normal_cdf(signal + 0.5 * normal(rng));
        s.knowledge = std::move(k);
      }
      dom.samples.push_back(std::move(s));
    }
    return dom;
  };

  ScenarioDomains out;
  out.source = make_domain(DomainKind::Source);
  out.target = make_domain(DomainKind::Target);
  return out;
}

/// Knowledge vectors of `domain` as a feature matrix, restricted to `ids`
/// when given.
inline FeatureMatrix knowledge_matrix(const Domain &domain, const std::vector<std::string> *ids = nullptr) {
  std::unordered_map<std::string, const DomainSample *> by_id;
  for (const auto &s : domain.samples) by_id.emplace(s.id, &s);
  std::vector<std::string> row_ids;
  if (ids) {
    row_ids = *ids;
  } else {
    for (const auto &s : domain.samples) row_ids.push_back(s.id);
  }
  Matrix m(static_cast<Eigen::Index>(row_ids.size()), static_cast<Eigen::Index>(domain.knowledge_columns.size()));
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    auto it = by_id.find(row_ids[i]);
    if (it == by_id.end() || !it->second->knowledge) {
      throw InputError("sample '" + row_ids[i] + "' has no knowledge vector");
    }
    if (it->second->knowledge->size() != m.cols()) {
      throw InputError("sample '" + row_ids[i] + "' knowledge length does not match the domain's columns");
    }
    m.row(static_cast<Eigen::Index>(i)) = it->second->knowledge->transpose();
  }
  return FeatureMatrix(std::move(row_ids), domain.knowledge_columns, std::move(m), FeatureKind::Knowledge);
}

inline bool has_knowledge(const Domain &domain) {
  return !domain.knowledge_columns.empty() && !domain.samples.empty() &&
         std::all_of(domain.samples.begin(), domain.samples.end(), [](const auto &s) { return s.knowledge.has_value(); });
}

struct DomainFeatureSet {
  FeatureMatrix data;
  std::optional<FeatureMatrix> knowledge;  // rows aligned with `data`
  std::vector<Exclusion> exclusions;

  FeatureMatrix fused() const { return knowledge ? fuse(data, *knowledge) : data; }
};

inline DomainFeatureSet domain_features(const Domain &domain, const ExtractionParams &params) {
  DomainFeatureSet out;
  auto extracted = extract_domain_features(domain, params);
  out.data = std::move(extracted.features);
  out.exclusions = std::move(extracted.exclusions);
  if (has_knowledge(domain)) out.knowledge = knowledge_matrix(domain, &out.data.ids());
  return out;
}

/// Labels of `domain` in the order of `ids`.
inline std::vector<int> labels_for(const Domain &domain, const std::vector<std::string> &ids) {
  std::unordered_map<std::string, int> by_id;
  for (const auto &s : domain.samples) {
    if (s.label) by_id.emplace(s.id, *s.label);
  }
  std::vector<int> out;
  out.reserve(ids.size());
  for (const auto &id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InputError("sample '" + id + "' has no label");
    out.push_back(it->second);
  }
  return out;
}

/// L2-regularised multinomial logistic regression on standardised features,
/// fitted by Newton's method. Class 0 is the reference class.
class MultinomialClassifier {
 public:
  static constexpr double kL2 = 1e-3;
  static constexpr double kGradTol = 1e-6;

  MultinomialClassifier(const Matrix &x, const std::vector<int> &labels, int max_iter = 200) {
    if (x.rows() != static_cast<Eigen::Index>(labels.size())) throw InputError("classifier: label count mismatch");
    if (x.rows() == 0) throw InputError("classifier: no training rows");
    const int max_label = *std::max_element(labels.begin(), labels.end());
    if (*std::min_element(labels.begin(), labels.end()) < 0) throw InputError("classifier: negative label");
    std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) throw InputError("classifier: training domain has a single class");
    n_classes_ = max_label + 1;

    mean_ = x.colwise().mean().transpose();
    scale_ = ((x.rowwise() - mean_.transpose()).array().square().colwise().sum() /
              std::max<double>(1.0, static_cast<double>(x.rows() - 1)))
                 .sqrt()
                 .transpose();
    for (Eigen::Index j = 0; j < scale_.size(); ++j) {
      if (!(scale_(j) > 1e-12)) scale_(j) = 1.0;
    }
    const Matrix xt = design(x);
    const Eigen::Index n = xt.rows();
    const Eigen::Index d = xt.cols();
    const int q = n_classes_ - 1;
    weights_ = Matrix::Zero(d, q);

    Matrix onehot = Matrix::Zero(n, q);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (labels[static_cast<std::size_t>(i)] > 0) onehot(i, labels[static_cast<std::size_t>(i)] - 1) = 1.0;
    }

    auto objective = [&](const Matrix &w) {
      const Matrix logits = xt * w;
      double loss = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double m = std::max(0.0, logits.row(i).maxCoeff());
        const double lse = m + std::log(std::exp(-m) + (logits.row(i).array() - m).exp().sum());
        const int y = labels[static_cast<std::size_t>(i)];
        loss += lse - (y > 0 ? logits(i, y - 1) : 0.0);
      }
      return loss / static_cast<double>(n) + 0.5 * kL2 * w.squaredNorm();
    };

    double f = objective(weights_);
    for (iterations_ = 0; iterations_ < max_iter; ++iterations_) {
      const Matrix probs = probabilities(xt, weights_);
      const Matrix grad = xt.transpose() * (probs - onehot) / static_cast<double>(n) + kL2 * weights_;
      grad_norm_ = grad.norm();
      if (grad_norm_ < kGradTol) break;

      Matrix hess = Matrix::Zero(d * q, d * q);
      for (int a = 0; a < q; ++a) {
        for (int b = a; b < q; ++b) {
          Vector w(n);
          for (Eigen::Index i = 0; i < n; ++i) w(i) = probs(i, a) * ((a == b ? 1.0 : 0.0) - probs(i, b));
          const Matrix block = xt.transpose() * w.asDiagonal() * xt / static_cast<double>(n);
          hess.block(a * d, b * d, d, d) = block;
          if (a != b) hess.block(b * d, a * d, d, d) = block.transpose();
        }
      }
      hess.diagonal().array() += kL2;
      const Vector g = Eigen::Map<const Vector>(grad.data(), grad.size());
      const Vector step = hess.ldlt().solve(g);
      const Matrix dir = -Eigen::Map<const Matrix>(step.data(), d, q);

      double t = 1.0;
      const double slope = g.dot(Eigen::Map<const Vector>(dir.data(), dir.size()));
      Matrix candidate = weights_ + dir;
      double fc = objective(candidate);
      while (fc > f + 1e-4 * t * slope && t > 1e-10) {
        t *= 0.5;
        candidate = weights_ + t * dir;
        fc = objective(candidate);
      }
      weights_ = std::move(candidate);
      f = fc;
    }
  }

  int n_classes() const { return n_classes_; }
  int iterations() const { return iterations_; }
  double gradient_norm() const { return grad_norm_; }

  std::vector<int> predict(const Matrix &x) const {
    if (x.cols() != mean_.size()) throw InputError("classifier: feature dimension mismatch");
    const Matrix logits = design(x) * weights_;
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int best = 0;
      double best_v = 0.0;
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        if (logits(i, c) > best_v) {
          best_v = logits(i, c);
          best = static_cast<int>(c) + 1;
        }
      }
      out[static_cast<std::size_t>(i)] = best;
    }
    return out;
  }

  double accuracy(const Matrix &x, const std::vector<int> &labels) const {
    if (x.rows() != static_cast<Eigen::Index>(labels.size())) throw InputError("classifier: label count mismatch");
    if (labels.empty()) throw InputError("classifier: empty test set");
    const auto pred = predict(x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
  }

 private:
  Matrix design(const Matrix &x) const {
    Matrix out(x.rows(), x.cols() + 1);
    out.col(0).setOnes();
    out.rightCols(x.cols()) = (x.rowwise() - mean_.transpose()).array().rowwise() / scale_.transpose().array();
    return out;
  }

  static Matrix probabilities(const Matrix &xt, const Matrix &w) {
    const Matrix logits = xt * w;
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double m = std::max(0.0, logits.row(i).maxCoeff());
      const RowVector e = (logits.row(i).array() - m).exp().matrix();
      const double z = std::exp(-m) + e.sum();
      p.row(i) = e / z;
    }
    return p;
  }

  int n_classes_ = 0;
  int iterations_ = 0;
  double grad_norm_ = 0.0;
  Vector mean_;
  Vector scale_;
  Matrix weights_;
};

/// Trains on the source feature rows and returns target accuracy.
inline double reference_classifier(const FeatureMatrix &train, const std::vector<int> &train_labels,
                                   const FeatureMatrix &test, const std::vector<int> &test_labels) {
  if (train.columns() != test.columns()) throw InputError("classifier: train/test columns differ");
  const MultinomialClassifier clf(train.rows(), train_labels);
  return clf.accuracy(test.rows(), test_labels);
}

/// Domain-level entry: extracts data features (fused with knowledge when
/// both domains carry it), trains on `train`, scores `test`.
inline double reference_classifier(const Domain &train, const Domain &test, const ExtractionParams &params) {
  const auto tr = domain_features(train, params);
  const auto te = domain_features(test, params);
  const bool fused = tr.knowledge && te.knowledge;
  const FeatureMatrix xtr = fused ? tr.fused() : tr.data;
  const FeatureMatrix xte = fused ? te.fused() : te.data;
  return reference_classifier(xtr, labels_for(train, xtr.ids()), xte, labels_for(test, xte.ids()));
}

enum class FeatureChoice { Data, Knowledge, Fused };

inline const FeatureMatrix &pick(const DomainFeatureSet &set, FeatureChoice c, FeatureMatrix &scratch) {
  switch (c) {
    case FeatureChoice::Data: return set.data;
    case FeatureChoice::Knowledge:
      if (!set.knowledge) throw InputError("domain has no knowledge vectors");
      return *set.knowledge;
    case FeatureChoice::Fused:
      scratch = set.fused();
      return scratch;
  }
  return set.data;
}

struct EvaluationSettings {
  double alpha = 0.05;
  RobustnessConfig robustness;
  CalibrationOptions calibration;
  std::uint64_t split_seed = 0;
  std::optional<ExtractionParams> extraction;  // defaults to the scenario's library
};

struct ScenarioEvaluation {
  double sdcd_data = 0.0;
  std::optional<double> sdcd_knowledge;
  std::optional<double> sdcd_fused;
  double accuracy = 0.0;  // reference classifier, trained on source, scored on target
};

/// Calibrates on the source of a generated scenario and scores its target
/// with the data, knowledge and fused feature sets.
inline ScenarioEvaluation evaluate_scenario(const ScenarioDomains &domains, BaseDynamics dynamics,
                                            const EvaluationSettings &settings) {
  const ExtractionParams params = settings.extraction.value_or(scenario_extraction(dynamics));
  const auto src = domain_features(domains.source, params);
  const auto tgt = domain_features(domains.target, params);
  auto score = [&](const FeatureMatrix &s, const FeatureMatrix &t) {
    const auto cal = dcb_compute(s, settings.alpha, settings.robustness, settings.split_seed, settings.calibration);
    return sdcd(t, s, cal).sdcd_percent;
  };
  ScenarioEvaluation ev;
  ev.sdcd_data = score(src.data, tgt.data);
  if (src.knowledge && tgt.knowledge) {
    ev.sdcd_knowledge = score(*src.knowledge, *tgt.knowledge);
    ev.sdcd_fused = score(src.fused(), tgt.fused());
  }
  ev.accuracy = reference_classifier(src.data, labels_for(domains.source, src.data.ids()), tgt.data,
                                     labels_for(domains.target, tgt.data.ids()));
  return ev;
}

struct ShiftSweepPoint {
  double shift_level = 0.0;
  std::uint64_t seed = 0;
  double sdcd_percent = 0.0;
  double accuracy = 0.0;
};

struct ShiftSweepResult {
  std::vector<ShiftSweepPoint> points;
  std::vector<double> levels;
  std::vector<double> mean_sdcd;      // per level, over seeds
  std::vector<double> mean_accuracy;  // per level, over seeds
  double correlation = 0.0;           // Pearson over every (level, seed) run
};

/// Runs `base` at every shift level with seeds base.seed .. base.seed +
/// n_seeds - 1 (the same seeds at every level) and correlates data-derived
/// SDCD with reference-classifier accuracy.
inline ShiftSweepResult shift_sweep(const ShiftScenario &base, const std::vector<double> &levels, int n_seeds,
                                    const EvaluationSettings &settings) {
  if (levels.empty()) throw InputError("shift_sweep needs ≥ 1 level");
  if (n_seeds < 1) throw InputError("shift_sweep needs ≥ 1 seed");
  ShiftSweepResult out;
  out.levels = levels;
  std::vector<double> sd, acc;
  for (double level : levels) {
    double sum_sd = 0, sum_acc = 0;
    for (int k = 0; k < n_seeds; ++k) {
      ShiftScenario spec = base;
      spec.shift_level = level;
      spec.seed = base.seed + static_cast<std::uint64_t>(k);
      const auto ev = evaluate_scenario(generate_scenario(spec), spec.base_dynamics, settings);
      out.points.push_back({level, spec.seed, ev.sdcd_data, ev.accuracy});
      sd.push_back(ev.sdcd_data);
      acc.push_back(ev.accuracy);
      sum_sd += ev.sdcd_data;
      sum_acc += ev.accuracy;
    }
    out.mean_sdcd.push_back(sum_sd / n_seeds);
    out.mean_accuracy.push_back(sum_acc / n_seeds);
  }
  out.correlation = pearson(sd, acc);
  return out;
}

struct NoiseSweepRow {
  double psnr_db = 0.0;  // +inf means no noise
  double noise_sigma = 0.0;
  std::vector<double> sdcd;  // per target
  double mean_sdcd = 0.0;
  std::optional<double> correlation;  // unset when undefined (constant SDCD)
};

struct NoiseSweepTable {
  std::vector<std::string> target_names;
  std::vector<double> accuracy;  // clean reference accuracy per target
  std::vector<NoiseSweepRow> rows;
};

inline double psnr_noise_sigma(double peak, double psnr_db) {
  if (std::isinf(psnr_db) && psnr_db > 0) return 0.0;
  return peak / std::pow(10.0, psnr_db / 20.0);
}

/// Feature-level sweep: for each PSNR level adds i.i.d. Gaussian noise with
/// sigma = peak / 10^(PSNR/20) (peak = max |source feature|) to the source
/// and every target, recalibrates, rescores, and correlates SDCD with the
/// given per-target accuracies.
inline NoiseSweepTable noise_sweep(const FeatureMatrix &source, const std::vector<FeatureMatrix> &targets,
                                   const std::vector<std::string> &target_names, const std::vector<double> &accuracy,
                                   const std::vector<double> &psnr_db_levels, const EvaluationSettings &settings,
                                   std::uint64_t seed) {
  if (psnr_db_levels.empty()) throw InputError("noise_sweep needs ≥ 1 PSNR level");
  if (targets.empty()) throw InputError("noise_sweep needs ≥ 1 target");
  if (targets.size() != target_names.size() || targets.size() != accuracy.size()) {
    throw InputError("noise_sweep: targets, names and accuracies differ in length");
  }
  for (double level : psnr_db_levels) {
    if (std::isnan(level) || (std::isinf(level) && level < 0)) throw InputError("PSNR levels must be finite or +inf");
  }
  for (const auto &t : targets) {
    if (t.columns() != source.columns()) throw InputError("noise_sweep: target columns differ from the source");
  }

  NoiseSweepTable table;
  table.target_names = target_names;
  table.accuracy = accuracy;
  const double peak = source.rows().cwiseAbs().maxCoeff();
  for (std::size_t li = 0; li < psnr_db_levels.size(); ++li) {
    NoiseSweepRow row;
    row.psnr_db = psnr_db_levels[li];
    row.noise_sigma = psnr_noise_sigma(peak, row.psnr_db);
    std::mt19937_64 rng(seed + 0x9E3779B97F4A7C15ULL * (li + 1));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto noisy = [&](const FeatureMatrix &m) {
      if (row.noise_sigma == 0.0) return m;
      Matrix v = m.rows();
      for (Eigen::Index i = 0; i < v.rows(); ++i)
        for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) += row.noise_sigma * normal(rng);
      return m.with_rows(std::move(v));
    };
    const FeatureMatrix src = noisy(source);
    const auto cal = dcb_compute(src, settings.alpha, settings.robustness, settings.split_seed, settings.calibration);
    for (const auto &t : targets) row.sdcd.push_back(sdcd(noisy(t), src, cal).sdcd_percent);
    row.mean_sdcd = std::accumulate(row.sdcd.begin(), row.sdcd.end(), 0.0) / static_cast<double>(row.sdcd.size());
    const double r = pearson(row.sdcd, accuracy);
    if (std::isfinite(r)) row.correlation = r;
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// Domain-level sweep: extracts features, computes the clean reference
/// accuracy of each target, then runs the feature-level sweep.
inline NoiseSweepTable noise_sweep(const Domain &source, const std::vector<Domain> &targets,
                                   const std::vector<double> &psnr_db_levels, const EvaluationSettings &settings,
                                   std::uint64_t seed, const ExtractionParams &params) {
  const auto src = domain_features(source, params);
  const auto src_labels = labels_for(source, src.data.ids());
  std::vector<FeatureMatrix> tf;
  std::vector<std::string> names;
  std::vector<double> acc;
  for (const auto &t : targets) {
    auto f = domain_features(t, params);
    acc.push_back(reference_classifier(src.data, src_labels, f.data, labels_for(t, f.data.ids())));
    names.push_back(t.name);
    tf.push_back(std::move(f.data));
  }
  return noise_sweep(src.data, tf, names, acc, psnr_db_levels, settings, seed);
}

struct Trajectory {
  Matrix values;  // samples_per_ray x n_rays
  double ds = 1.0;
};

/// Samples `field` along n_rays equally spaced rays from `center` (pixel
/// coordinates, row then column). Every ray runs to the distance of the
/// nearest grid edge; values are bilinearly interpolated. Ray k points at
/// angle 2*pi*k/n_rays, angle 0 along increasing column index.
inline Trajectory radial_profile(const Matrix &field, double center_row, double center_col, int n_rays,
                                 int samples_per_ray) {
  const double h = static_cast<double>(field.rows());
  const double w = static_cast<double>(field.cols());
  if (field.rows() < 2 || field.cols() < 2) throw InputError("radial_profile: field must be at least 2x2");
  if (!(center_row > 0 && center_row < h - 1 && center_col > 0 && center_col < w - 1)) {
    throw InputError("radial_profile: center lies outside the grid interior");
  }
  if (n_rays < 1) throw InputError("radial_profile: n_rays must be ≥ 1");
  if (samples_per_ray < 3) throw InputError("radial_profile: samples_per_ray must be ≥ 3");
  if (!field.allFinite()) throw InputError("radial_profile: field contains non-finite values");

  const double radius = std::min({center_row, center_col, h - 1 - center_row, w - 1 - center_col});
  Trajectory out;
  out.ds = radius / (samples_per_ray - 1);
  out.values.resize(samples_per_ray, n_rays);
  auto bilinear = [&](double r, double c) {
    const Eigen::Index r0 = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(r)), 0, field.rows() - 2);
    const Eigen::Index c0 = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(c)), 0, field.cols() - 2);
    const double fr = std::clamp(r - static_cast<double>(r0), 0.0, 1.0);
    const double fc = std::clamp(c - static_cast<double>(c0), 0.0, 1.0);
    return (1 - fr) * ((1 - fc) * field(r0, c0) + fc * field(r0, c0 + 1)) +
           fr * ((1 - fc) * field(r0 + 1, c0) + fc * field(r0 + 1, c0 + 1));
  };
  constexpr double kTwoPi = 6.283185307179586;
  for (int k = 0; k < n_rays; ++k) {
    const double angle = kTwoPi * k / n_rays;
    const double dr = std::sin(angle);
    const double dc = std::cos(angle);
    for (int i = 0; i < samples_per_ray; ++i) {
      const double s = out.ds * i;
      out.values(i, k) = bilinear(center_row + s * dr, center_col + s * dc);
    }
  }
  return out;
}

}  // namespace confgap
