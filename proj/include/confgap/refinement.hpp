#pragma once

// Knowledge/data fusion and SDCD-guided ablation over feature columns.

#include "confgap/conformal.hpp"

namespace confgap {

/// Column-wise concatenation, data columns first. Knowledge rows are
/// matched to data rows by sample id.
inline FeatureMatrix fuse(const FeatureMatrix &data, const FeatureMatrix &knowledge) {
  if (data.n_rows() != knowledge.n_rows()) {
    throw InputError("fuse: data has " + std::to_string(data.n_rows()) + " rows, knowledge has " +
                     std::to_string(knowledge.n_rows()));
  }
  std::unordered_map<std::string, Eigen::Index> by_id;
  for (Eigen::Index i = 0; i < knowledge.n_rows(); ++i) by_id.emplace(knowledge.ids()[static_cast<std::size_t>(i)], i);

  Matrix rows(data.n_rows(), data.n_cols() + knowledge.n_cols());
  rows.leftCols(data.n_cols()) = data.rows();
  for (Eigen::Index i = 0; i < data.n_rows(); ++i) {
    const auto &id = data.ids()[static_cast<std::size_t>(i)];
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InputError("fuse: sample '" + id + "' has no knowledge row");
    rows.row(i).rightCols(knowledge.n_cols()) = knowledge.rows().row(it->second);
  }
  std::vector<std::string> columns = data.columns();
  columns.insert(columns.end(), knowledge.columns().begin(), knowledge.columns().end());
  return FeatureMatrix(data.ids(), std::move(columns), std::move(rows), FeatureKind::Fused);
}

struct DomainPair {
  std::string name;
  FeatureMatrix source;
  FeatureMatrix target;
};

enum class AblationStrategy { GreedySequential, ExhaustiveSmall };

inline const char *to_string(AblationStrategy s) {
  return s == AblationStrategy::GreedySequential ? "greedy" : "exhaustive";
}

inline AblationStrategy ablation_strategy_from_string(const std::string &s) {
  if (s == "greedy") return AblationStrategy::GreedySequential;
  if (s == "exhaustive") return AblationStrategy::ExhaustiveSmall;
  throw InputError("unknown ablation strategy '" + s + "' (expected greedy or exhaustive)");
}

struct AblationStep {
  /// Column removed by this evaluation on top of earlier commits; empty for
  /// the baseline.
  std::string removed_column;
  /// Every column absent in this evaluation.
  std::vector<std::string> removed;
  int round = 0;
  double avg_sdcd = 0.0;
  std::map<std::string, double> per_pair_sdcd;
};

struct AblationTrace {
  AblationStrategy strategy = AblationStrategy::GreedySequential;
  std::vector<AblationStep> steps;
  std::vector<std::string> best_subset;
  std::vector<std::string> best_removed;
  double best_avg_sdcd = 0.0;
};

struct AblationOptions {
  double alpha = 0.05;
  RobustnessConfig config;
  CalibrationOptions calibration;
  std::uint64_t split_seed = 0;
  AblationStrategy strategy = AblationStrategy::GreedySequential;
};

inline constexpr std::size_t kMaxExhaustiveColumns = 12;

namespace detail {

class AblationEvaluator {
 public:
  AblationEvaluator(const std::vector<DomainPair> &pairs, const AblationOptions &options)
      : pairs_(pairs), options_(options) {
    options_.config.metric_model.reset();  // refit per column subset
  }

  AblationStep evaluate(const std::vector<std::string> &retained) const {
    AblationStep step;
    double total = 0.0;
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      const auto &pair = pairs_[p];
      const FeatureMatrix src = pair.source.select_columns(retained);
      const FeatureMatrix tgt = pair.target.select_columns(retained);
      const auto cal = dcb_compute(src, options_.alpha, options_.config, options_.split_seed, options_.calibration);
      const double v = sdcd(tgt, src, cal).sdcd_percent;
      std::string key = pair.name.empty() ? "pair" + std::to_string(p) : pair.name;
      if (step.per_pair_sdcd.count(key)) key += "#" + std::to_string(p);
      step.per_pair_sdcd[key] = v;
      total += v;
    }
    step.avg_sdcd = total / static_cast<double>(pairs_.size());
    return step;
  }

 private:
  const std::vector<DomainPair> &pairs_;
  AblationOptions options_;
};

inline std::vector<std::string> without(const std::vector<std::string> &all, const std::vector<std::string> &drop) {
  std::vector<std::string> out;
  for (const auto &c : all) {
    if (std::find(drop.begin(), drop.end(), c) == drop.end()) out.push_back(c);
  }
  return out;
}

}  // namespace detail

/// Searches for the removable-column subset whose removal maximises the mean
/// SDCD over `pairs`. Greedy: from the full set, try removing each remaining
/// removable column, commit the best one only if it strictly improves the
/// average (ties broken by column name), repeat. Exhaustive: try every
/// subset. Every evaluation recalibrates each source with the same split
/// seed and is recorded in the trace.
inline AblationTrace ablation_search(const std::vector<DomainPair> &pairs, const std::vector<std::string> &removable,
                                     const AblationOptions &options) {
  if (pairs.empty()) throw InputError("ablation_search needs ≥ 1 source/target pair");
  const auto &columns = pairs.front().source.columns();
  for (const auto &p : pairs) {
    if (p.source.columns() != columns || p.target.columns() != columns) {
      throw InputError("ablation_search: every matrix must share the same columns");
    }
  }
  std::vector<std::string> candidates = removable;
  std::sort(candidates.begin(), candidates.end());
  if (std::adjacent_find(candidates.begin(), candidates.end()) != candidates.end()) {
    throw InputError("ablation_search: removable columns contain duplicates");
  }
  for (const auto &c : candidates) {
    if (std::find(columns.begin(), columns.end(), c) == columns.end()) {
      throw InputError("removable column '" + c + "' is absent from the feature matrices");
    }
  }
  if (options.strategy == AblationStrategy::ExhaustiveSmall && candidates.size() > kMaxExhaustiveColumns) {
    throw InputError("exhaustive ablation supports at most " + std::to_string(kMaxExhaustiveColumns) +
                     " removable columns");
  }

  const detail::AblationEvaluator eval(pairs, options);
  AblationTrace trace;
  trace.strategy = options.strategy;

  AblationStep baseline = eval.evaluate(columns);
  trace.best_avg_sdcd = baseline.avg_sdcd;
  trace.best_subset = columns;
  trace.steps.push_back(baseline);

  if (options.strategy == AblationStrategy::GreedySequential) {
    std::vector<std::string> removed;
    std::vector<std::string> remaining = candidates;
    for (int round = 1; !remaining.empty(); ++round) {
      std::optional<std::size_t> best;
      double best_value = trace.best_avg_sdcd;
      for (std::size_t i = 0; i < remaining.size(); ++i) {
        auto drop = removed;
        drop.push_back(remaining[i]);
        const auto retained = detail::without(columns, drop);
        if (retained.empty()) continue;
        AblationStep step = eval.evaluate(retained);
        step.removed_column = remaining[i];
        step.removed = drop;
        step.round = round;
        // `remaining` is sorted, so the first strict maximum wins ties.
        if (step.avg_sdcd > best_value) {
          best_value = step.avg_sdcd;
          best = i;
        }
        trace.steps.push_back(std::move(step));
      }
      if (!best) break;
      removed.push_back(remaining[*best]);
      remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(*best));
      trace.best_avg_sdcd = best_value;
      trace.best_removed = removed;
      trace.best_subset = detail::without(columns, removed);
    }
    return trace;
  }

  // Exhaustive: subsets in order of size, then lexicographic, so the first
  // maximum found is the smallest removal set.
  const std::size_t m = candidates.size();
  std::vector<std::vector<std::string>> subsets;
  for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
    std::vector<std::string> drop;
    for (std::size_t b = 0; b < m; ++b) {
      if (mask & (1u << b)) drop.push_back(candidates[b]);
    }
    subsets.push_back(std::move(drop));
  }
  std::stable_sort(subsets.begin(), subsets.end(), [](const auto &a, const auto &b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  for (const auto &drop : subsets) {
    const auto retained = detail::without(columns, drop);
    if (retained.empty()) continue;
    AblationStep step = eval.evaluate(retained);
    step.removed = drop;
    step.removed_column = drop.back();
    step.round = static_cast<int>(drop.size());
    if (step.avg_sdcd > trace.best_avg_sdcd) {
      trace.best_avg_sdcd = step.avg_sdcd;
      trace.best_removed = drop;
      trace.best_subset = retained;
    }
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

}  // namespace confgap
