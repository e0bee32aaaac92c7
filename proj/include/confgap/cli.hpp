#pragma once

// Command-line front end. `run` is callable in-process; tools/confgap.cpp
// wraps it in main().
//
// Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or input
// error. Summaries go to `out`, diagnostics to `err`.

#include "confgap/persistence.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>

namespace confgap::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct RunConfig {
  double alpha = 0.05;
  RobustnessVariant variant = RobustnessVariant::DistributionDirect;
  double ridge_eps = -1.0;  // < 0: automatic
  StridgeParams stridge;
  std::uint64_t split_seed = 0;
  CandidateLibrary::Config library;
  std::optional<int> pca_rank;
  CalibrationOptions calibration;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1), got " + format_double(alpha));
    if (stridge.threshold < 0 || !std::isfinite(stridge.threshold)) throw InputError("threshold must be ≥ 0");
    if (stridge.ridge_lambda < 0 || !std::isfinite(stridge.ridge_lambda)) throw InputError("lambda must be ≥ 0");
    if (stridge.max_iter < 1) throw InputError("max_iter must be ≥ 1");
    if (library.poly_max_degree < 1) throw InputError("poly_max_degree must be ≥ 1");
    if (pca_rank && *pca_rank < 1) throw InputError("pca_rank must be ≥ 1");
    if (!std::isfinite(ridge_eps)) throw InputError("ridge_eps must be finite or \"auto\"");
  }

  RobustnessConfig robustness() const {
    RobustnessConfig r;
    r.variant = variant;
    r.ridge_eps = ridge_eps;
    return r;
  }

  ExtractionParams extraction() const {
    ExtractionParams p;
    p.library = library;
    p.stridge = stridge;
    p.pca_rank = pca_rank;
    return p;
  }

  EvaluationSettings evaluation() const {
    EvaluationSettings s;
    s.alpha = alpha;
    s.robustness = robustness();
    s.calibration = calibration;
    s.split_seed = split_seed;
    return s;
  }
};

inline json library_to_json(const CandidateLibrary::Config &c) {
  return json{{"poly_max_degree", c.poly_max_degree},
              {"include_trig", c.include_trig},
              {"include_constant", c.include_constant}};
}

inline json config_to_json(const RunConfig &c) {
  return json{{"alpha", c.alpha},
              {"robustness_variant", to_string(c.variant)},
              {"ridge_eps", c.ridge_eps < 0 ? json("auto") : json(c.ridge_eps)},
              {"stridge", {{"threshold", c.stridge.threshold},
                           {"lambda", c.stridge.ridge_lambda},
                           {"max_iter", c.stridge.max_iter}}},
              {"split_seed", c.split_seed},
              {"library", library_to_json(c.library)},
              {"pca_rank", c.pca_rank ? json(*c.pca_rank) : json(nullptr)},
              {"quantile_rule", to_string(c.calibration.quantile_rule)},
              {"interval_width", to_string(c.calibration.interval_width)}};
}

namespace detail {

inline void reject_unknown_keys(const json &j, std::initializer_list<const char *> known, const std::string &where) {
  if (!j.is_object()) throw InputError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char *k) { return it.key() == k; })) {
      throw InputError(where + ": unknown key '" + it.key() + "'");
    }
  }
}

inline void merge_library(CandidateLibrary::Config &lib, const json &j, const std::string &where) {
  reject_unknown_keys(j, {"poly_max_degree", "include_trig", "include_constant"}, where);
  if (j.contains("poly_max_degree")) lib.poly_max_degree = j["poly_max_degree"].get<int>();
  if (j.contains("include_trig")) lib.include_trig = j["include_trig"].get<bool>();
  if (j.contains("include_constant")) lib.include_constant = j["include_constant"].get<bool>();
}

}  // namespace detail

/// Overlays the keys present in `j` onto `c`. Unknown keys are errors.
inline void merge_config(RunConfig &c, const json &j) {
  try {
    detail::reject_unknown_keys(j,
                                {"alpha", "robustness_variant", "ridge_eps", "stridge", "split_seed", "library",
                                 "pca_rank", "quantile_rule", "interval_width"},
                                "config");
    if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
    if (j.contains("robustness_variant")) c.variant = robustness_variant_from_string(j["robustness_variant"].get<std::string>());
    if (j.contains("ridge_eps")) {
      const auto &r = j["ridge_eps"];
      if (r.is_string() && r.get<std::string>() == "auto") {
        c.ridge_eps = -1.0;
      } else {
        c.ridge_eps = r.get<double>();
        if (c.ridge_eps < 0) throw InputError("ridge_eps must be ≥ 0 or \"auto\"");
      }
    }
    if (j.contains("stridge")) {
      const auto &s = j["stridge"];
      detail::reject_unknown_keys(s, {"threshold", "lambda", "max_iter"}, "config.stridge");
      if (s.contains("threshold")) c.stridge.threshold = s["threshold"].get<double>();
      if (s.contains("lambda")) c.stridge.ridge_lambda = s["lambda"].get<double>();
      if (s.contains("max_iter")) c.stridge.max_iter = s["max_iter"].get<int>();
    }
    if (j.contains("split_seed")) c.split_seed = j["split_seed"].get<std::uint64_t>();
    if (j.contains("library")) detail::merge_library(c.library, j["library"], "config.library");
    if (j.contains("pca_rank")) {
      c.pca_rank = j["pca_rank"].is_null() ? std::nullopt : std::optional<int>(j["pca_rank"].get<int>());
    }
    if (j.contains("quantile_rule")) c.calibration.quantile_rule = quantile_rule_from_string(j["quantile_rule"].get<std::string>());
    if (j.contains("interval_width")) {
      c.calibration.interval_width = interval_width_from_string(j["interval_width"].get<std::string>());
    }
  } catch (const json::exception &e) {
    throw InputError(std::string("config: ") + e.what());
  }
}

inline json read_json_file(const fs::path &path) {
  try {
    return json::parse(confgap::detail::read_file(path));
  } catch (const json::parse_error &e) {
    throw InputError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

inline std::uint64_t parse_seed(const std::string &s, const std::string &what) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw InputError(what + " must be a non-negative integer, got '" + s + "'");
  }
  return v;
}

/// Flags shared by every subcommand. Unset flags leave the config alone.
struct ConfigFlags {
  std::string config_path;
  std::optional<double> alpha;
  std::optional<std::string> variant;
  std::optional<std::string> ridge_eps;
  std::optional<double> threshold;
  std::optional<double> lambda;
  std::optional<int> max_iter;
  std::optional<std::string> seed;
  std::optional<int> degree;
  bool no_trig = false;
  bool no_constant = false;
  std::optional<int> pca_rank;
  std::optional<std::string> quantile_rule;
  std::optional<std::string> interval_width;

  void attach(CLI::App &app) {
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--alpha", alpha, "Miscoverage level in (0, 1)");
    app.add_option("--variant", variant, "pairwise_mean or distribution_direct");
    app.add_option("--ridge-eps", ridge_eps, "Covariance ridge, or 'auto'");
    app.add_option("--threshold", threshold, "STRidge threshold");
    app.add_option("--lambda", lambda, "STRidge ridge penalty");
    app.add_option("--max-iter", max_iter, "STRidge iteration cap");
    app.add_option("--seed", seed, "Split seed (overrides CONFGAP_SEED)");
    app.add_option("--degree", degree, "Polynomial library degree");
    app.add_flag("--no-trig", no_trig, "Drop sin/cos library terms");
    app.add_flag("--no-constant", no_constant, "Drop the constant library term");
    app.add_option("--pca-rank", pca_rank, "Project states onto this many principal components");
    app.add_option("--quantile-rule", quantile_rule, "half_split or standard");
    app.add_option("--interval-width", interval_width, "conformal_quantile or residual_std");
  }

  /// Defaults, then --config, then CONFGAP_SEED, then explicit flags.
  RunConfig resolve() const {
    RunConfig c;
    if (!config_path.empty()) merge_config(c, read_json_file(config_path));
    if (const char *env = std::getenv("CONFGAP_SEED"); env && *env) c.split_seed = parse_seed(env, "CONFGAP_SEED");
    if (alpha) c.alpha = *alpha;
    if (variant) c.variant = robustness_variant_from_string(*variant);
    if (ridge_eps) merge_config(c, json{{"ridge_eps", *ridge_eps == "auto" ? json("auto") : json(parse_double(*ridge_eps, "--ridge-eps"))}});
    if (threshold) c.stridge.threshold = *threshold;
    if (lambda) c.stridge.ridge_lambda = *lambda;
    if (max_iter) c.stridge.max_iter = *max_iter;
    if (seed) c.split_seed = parse_seed(*seed, "--seed");
    if (degree) c.library.poly_max_degree = *degree;
    if (no_trig) c.library.include_trig = false;
    if (no_constant) c.library.include_constant = false;
    if (pca_rank) c.pca_rank = *pca_rank;
    if (quantile_rule) c.calibration.quantile_rule = quantile_rule_from_string(*quantile_rule);
    if (interval_width) c.calibration.interval_width = interval_width_from_string(*interval_width);
    c.validate();
    return c;
  }
};

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

inline Domain load_input_domain(const fs::path &input, DomainKind kind) {
  if (!fs::exists(input)) throw InputError("input '" + input.string() + "' does not exist");
  if (fs::is_regular_file(input)) {
    const auto t = read_trajectory_csv(input);
    Domain d;
    d.kind = kind;
    d.name = input.stem().string();
    DomainSample s;
    s.id = input.stem().string();
    s.trajectory = t.states;
    s.ds = t.ds;
    d.samples.push_back(std::move(s));
    return d;
  }
  return load_domain_dir(input, kind);
}

// ---------------------------------------------------------------------------
// Commands

struct ExtractArgs {
  std::string input, out, features = "data";
};

inline int cmd_extract(const ExtractArgs &a, const RunConfig &cfg, std::ostream &out, std::ostream &err) {
  const Domain dom = load_input_domain(a.input, DomainKind::Target);
  const auto set = domain_features(dom, cfg.extraction());
  for (const auto &e : set.exclusions) err << "excluded " << e.id << ": " << e.reason << "\n";

  FeatureMatrix f = set.data;
  if (a.features == "knowledge" || a.features == "fused") {
    if (!set.knowledge) throw InputError("input has no knowledge.csv");
    f = a.features == "knowledge" ? *set.knowledge : set.fused();
  } else if (a.features != "data") {
    throw InputError("--features must be data, knowledge or fused");
  }
  save_features(f, a.out, json{{"config", config_to_json(cfg)}, {"exclusions", exclusions_to_json(set.exclusions)}});
  out << "features " << to_string(f.kind()) << ": " << f.n_rows() << " rows x " << f.n_cols() << " columns, "
      << set.exclusions.size() << " excluded -> " << a.out << "\n";
  return kExitOk;
}

struct CalibrateArgs {
  std::string features, out;
};

inline int cmd_calibrate(const CalibrateArgs &a, const RunConfig &cfg, std::ostream &out, std::ostream &) {
  const FeatureMatrix f = load_features(a.features);
  const auto c = dcb_compute(f, cfg.alpha, cfg.robustness(), cfg.split_seed, cfg.calibration);
  json payload = calibration_to_json(c);
  payload["config"] = config_to_json(cfg);
  save(make_envelope(ArtifactKind::Calibration, std::move(payload)), a.out);
  out << "calibration " << c.id << ": sigma=" << fixed(c.sigma) << " interval=[" << fixed(c.interval_lo) << ", "
      << fixed(c.interval_hi) << "] k_index=" << c.k_index << " n_train=" << c.n_train << " n_val=" << c.n_val
      << (c.degenerate ? " (degenerate)" : "") << "\n";
  return kExitOk;
}

struct SdcdArgs {
  std::string target, source, calibration, report, name;
  bool per_sample = false;
};

inline int cmd_sdcd(const SdcdArgs &a, const RunConfig &cfg, std::ostream &out, std::ostream &) {
  const FeatureMatrix target = load_features(a.target);
  const FeatureMatrix source = load_features(a.source);
  const DcbCalibration cal = calibration_from_json(load(a.calibration, ArtifactKind::Calibration).payload);
  const std::string name = a.name.empty() ? fs::path(a.target).filename().string() : a.name;
  const SdcdReport r = sdcd(target, source, cal, name);
  if (!a.report.empty()) {
    json payload = sdcd_report_to_json(r);
    payload["config"] = config_to_json(cfg);
    save(make_envelope(ArtifactKind::SdcdReport, std::move(payload)), a.report);
  }
  out << "target\trows\tin_bounds\tsdcd_percent\n"
      << r.target_name << "\t" << r.residuals.size() << "\t" << r.count_in_bounds() << "\t" << fixed(r.sdcd_percent, 2)
      << "\n";
  if (a.per_sample) {
    out << "id\tresidual\tin_bounds\n";
    for (const auto &s : r.residuals) out << s.id << "\t" << fixed(s.residual, 6) << "\t" << (s.in_bounds ? 1 : 0) << "\n";
  }
  return kExitOk;
}

struct RefineArgs {
  std::string pairs, out, strategy = "greedy";
  std::vector<std::string> removable;
};

inline std::vector<DomainPair> load_pairs(const fs::path &manifest) {
  const json j = read_json_file(manifest);
  if (!j.is_array() || j.empty()) throw InputError(manifest.string() + ": expected a non-empty JSON list of pairs");
  const fs::path base = manifest.parent_path();
  std::vector<DomainPair> pairs;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto &e = j[i];
    detail::reject_unknown_keys(e, {"source", "target", "name"}, manifest.string() + "[" + std::to_string(i) + "]");
    if (!e.contains("source") || !e.contains("target") || !e["source"].is_string() || !e["target"].is_string()) {
      throw InputError(manifest.string() + "[" + std::to_string(i) + "]: needs string 'source' and 'target'");
    }
    auto resolve = [&](const std::string &p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    DomainPair p;
    p.name = e.contains("name") ? e["name"].get<std::string>() : "pair" + std::to_string(i);
    p.source = load_features(resolve(e["source"].get<std::string>()));
    p.target = load_features(resolve(e["target"].get<std::string>()));
    pairs.push_back(std::move(p));
  }
  return pairs;
}

inline int cmd_refine(const RefineArgs &a, const RunConfig &cfg, std::ostream &out, std::ostream &) {
  const auto pairs = load_pairs(a.pairs);
  AblationOptions opt;
  opt.alpha = cfg.alpha;
  opt.config = cfg.robustness();
  opt.calibration = cfg.calibration;
  opt.split_seed = cfg.split_seed;
  opt.strategy = ablation_strategy_from_string(a.strategy);
  const auto trace = ablation_search(pairs, a.removable, opt);
  if (!a.out.empty()) {
    json payload = ablation_trace_to_json(trace);
    payload["config"] = config_to_json(cfg);
    payload["removable"] = a.removable;
    save(make_envelope(ArtifactKind::AblationTrace, std::move(payload)), a.out);
  }
  out << "round\tremoved\tavg_sdcd\n";
  for (const auto &s : trace.steps) {
    std::string removed;
    for (const auto &c : s.removed) removed += (removed.empty() ? "" : "+") + c;
    out << s.round << "\t" << (removed.empty() ? "-" : removed) << "\t" << fixed(s.avg_sdcd, 2) << "\n";
  }
  std::string best;
  for (const auto &c : trace.best_removed) best += (best.empty() ? "" : ",") + c;
  out << "best: removed [" << best << "] avg_sdcd=" << fixed(trace.best_avg_sdcd, 2) << "\n";
  return kExitOk;
}

/// Scenario document accepted by `simulate` and `sweep-noise --spec`.
struct ScenarioDocument {
  ShiftScenario scenario;
  std::vector<double> shift_levels;  // non-empty: run a shift sweep
  int n_seeds = 1;
  std::optional<CandidateLibrary::Config> library;  // defaults to the scenario's
  std::vector<double> psnr_db;                      // sweep-noise only

  ExtractionParams extraction(const RunConfig &cfg) const {
    ExtractionParams p = scenario_extraction(scenario.base_dynamics);
    if (library) p.library = *library;
    p.stridge = cfg.stridge;
    p.pca_rank = cfg.pca_rank;
    return p;
  }
};

inline double psnr_from_json(const json &v) {
  if (v.is_string() && v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  return v.get<double>();
}

inline ScenarioDocument parse_scenario(const json &j) {
  ScenarioDocument d;
  try {
    detail::reject_unknown_keys(j,
                                {"base_dynamics", "n_samples_per_domain", "shift_level", "shift_levels", "n_seeds",
                                 "noise_sigma", "knowledge_signal", "n_knowledge", "seed", "library", "psnr_db"},
                                "scenario");
    auto &s = d.scenario;
    if (j.contains("base_dynamics")) s.base_dynamics = base_dynamics_from_string(j["base_dynamics"].get<std::string>());
    if (j.contains("n_samples_per_domain")) s.n_samples_per_domain = j["n_samples_per_domain"].get<int>();
    if (j.contains("shift_level")) s.shift_level = j["shift_level"].get<double>();
    if (j.contains("shift_levels")) d.shift_levels = j["shift_levels"].get<std::vector<double>>();
    if (j.contains("n_seeds")) d.n_seeds = j["n_seeds"].get<int>();
    if (j.contains("noise_sigma")) s.noise_sigma = j["noise_sigma"].get<double>();
    if (j.contains("knowledge_signal")) s.knowledge_signal = knowledge_signal_from_string(j["knowledge_signal"].get<std::string>());
    if (j.contains("n_knowledge")) s.n_knowledge = j["n_knowledge"].get<int>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("library")) {
      CandidateLibrary::Config lib = scenario_extraction(s.base_dynamics).library;
      detail::merge_library(lib, j["library"], "scenario.library");
      d.library = lib;
    }
    if (j.contains("psnr_db")) {
      for (const auto &v : j["psnr_db"]) d.psnr_db.push_back(psnr_from_json(v));
    }
  } catch (const json::exception &e) {
    throw InputError(std::string("scenario: ") + e.what());
  }
  if (d.n_seeds < 1) throw InputError("scenario: n_seeds must be ≥ 1");
  for (double l : d.shift_levels) {
    ShiftScenario probe = d.scenario;
    probe.shift_level = l;
    validate_scenario(probe);
  }
  validate_scenario(d.scenario);
  return d;
}

inline json scenario_to_json(const ScenarioDocument &d, const RunConfig &cfg) {
  const auto &s = d.scenario;
  json j{{"base_dynamics", to_string(s.base_dynamics)},
         {"n_samples_per_domain", s.n_samples_per_domain},
         {"shift_level", s.shift_level},
         {"noise_sigma", s.noise_sigma},
         {"knowledge_signal", to_string(s.knowledge_signal)},
         {"n_knowledge", s.n_knowledge},
         {"seed", s.seed},
         {"n_seeds", d.n_seeds},
         {"shift_levels", d.shift_levels},
         {"library", library_to_json(d.extraction(cfg).library)}};
  json levels = json::array();
  for (double p : d.psnr_db) levels.push_back(std::isinf(p) ? json("inf") : json(p));
  j["psnr_db"] = std::move(levels);
  return j;
}

struct SimulateArgs {
  std::string spec, out_dir, out;
};

inline int cmd_simulate(const SimulateArgs &a, const RunConfig &cfg, std::ostream &out, std::ostream &err) {
  const ScenarioDocument doc = parse_scenario(read_json_file(a.spec));
  EvaluationSettings settings = cfg.evaluation();
  settings.extraction = doc.extraction(cfg);

  if (!doc.shift_levels.empty()) {
    err << "shift sweep: " << doc.shift_levels.size() << " levels x " << doc.n_seeds << " seeds\n";
    const auto r = shift_sweep(doc.scenario, doc.shift_levels, doc.n_seeds, settings);
    if (!a.out.empty()) {
      json payload = shift_sweep_to_json(r);
      payload["config"] = config_to_json(cfg);
      payload["scenario"] = scenario_to_json(doc, cfg);
      save(make_envelope(ArtifactKind::SweepTable, std::move(payload)), a.out);
    }
    out << "shift_level\tmean_sdcd\tmean_accuracy\n";
    for (std::size_t i = 0; i < r.levels.size(); ++i) {
      out << fixed(r.levels[i], 3) << "\t" << fixed(r.mean_sdcd[i], 2) << "\t" << fixed(r.mean_accuracy[i], 4) << "\n";
    }
    out << "correlation(sdcd, accuracy) = " << (std::isfinite(r.correlation) ? fixed(r.correlation) : "nan") << "\n";
    return kExitOk;
  }

  const auto domains = generate_scenario(doc.scenario);
  if (!a.out_dir.empty()) {
    save_domain_dir(domains.source, fs::path(a.out_dir) / "source");
    save_domain_dir(domains.target, fs::path(a.out_dir) / "target");
    err << "domains written to " << a.out_dir << "\n";
  }
  const auto ev = evaluate_scenario(domains, doc.scenario.base_dynamics, settings);
  if (!a.out.empty()) {
    json payload{{"sweep", "single"},
                 {"sdcd_data", ev.sdcd_data},
                 {"accuracy", ev.accuracy},
                 {"config", config_to_json(cfg)},
                 {"scenario", scenario_to_json(doc, cfg)}};
    payload["sdcd_knowledge"] = ev.sdcd_knowledge ? json(*ev.sdcd_knowledge) : json(nullptr);
    payload["sdcd_fused"] = ev.sdcd_fused ? json(*ev.sdcd_fused) : json(nullptr);
    save(make_envelope(ArtifactKind::SweepTable, std::move(payload)), a.out);
  }
  out << "shift_level\tsdcd_data\tsdcd_knowledge\tsdcd_fused\taccuracy\n"
      << fixed(doc.scenario.shift_level, 3) << "\t" << fixed(ev.sdcd_data, 2) << "\t"
      << (ev.sdcd_knowledge ? fixed(*ev.sdcd_knowledge, 2) : "-") << "\t"
      << (ev.sdcd_fused ? fixed(*ev.sdcd_fused, 2) : "-") << "\t" << fixed(ev.accuracy, 4) << "\n";
  return kExitOk;
}

struct SweepNoiseArgs {
  std::string spec, source, out, table;
  std::vector<std::string> targets;
  std::vector<std::string> levels;
  std::string noise_seed = "0";
};

inline std::vector<double> parse_psnr_levels(const std::vector<std::string> &raw) {
  std::vector<double> out;
  for (const auto &s : raw) {
    out.push_back(s == "inf" ? std::numeric_limits<double>::infinity() : parse_double(s, "--levels"));
  }
  return out;
}

inline int cmd_sweep_noise(const SweepNoiseArgs &a, const RunConfig &cfg, std::ostream &out, std::ostream &err) {
  const std::uint64_t noise_seed = parse_seed(a.noise_seed, "--noise-seed");
  EvaluationSettings settings = cfg.evaluation();
  NoiseSweepTable table;
  json provenance;
  std::vector<double> levels = parse_psnr_levels(a.levels);

  if (!a.spec.empty()) {
    if (!a.source.empty() || !a.targets.empty()) throw InputError("use either --spec or --source/--targets");
    const ScenarioDocument doc = parse_scenario(read_json_file(a.spec));
    if (levels.empty()) levels = doc.psnr_db;
    if (levels.empty()) throw InputError("no PSNR levels given (--levels or psnr_db in the spec)");
    const auto params = doc.extraction(cfg);
    // One source; one target per (shift level, seed) of the shift sweep.
    const Domain source = generate_scenario(doc.scenario).source;
    std::vector<Domain> targets;
    const std::vector<double> shifts = doc.shift_levels.empty() ? std::vector<double>{doc.scenario.shift_level}
                                                                : doc.shift_levels;
    for (double level : shifts) {
      for (int k = 0; k < doc.n_seeds; ++k) {
        ShiftScenario s = doc.scenario;
        s.shift_level = level;
        s.seed = doc.scenario.seed + 1 + static_cast<std::uint64_t>(k);
        Domain t = generate_scenario(s).target;
        t.name = "shift" + format_double(level) + "_seed" + std::to_string(s.seed);
        targets.push_back(std::move(t));
      }
    }
    err << "noise sweep: " << targets.size() << " targets x " << levels.size() << " PSNR levels\n";
    table = noise_sweep(source, targets, levels, settings, noise_seed, params);
    provenance = scenario_to_json(doc, cfg);
  } else {
    if (a.source.empty() || a.targets.empty()) throw InputError("sweep-noise needs --spec or --source with --targets");
    if (levels.empty()) throw InputError("no PSNR levels given (--levels)");
    const Domain source = load_domain_dir(a.source, DomainKind::Source);
    std::vector<Domain> targets;
    for (const auto &t : a.targets) targets.push_back(load_domain_dir(t, DomainKind::Target, t));
    table = noise_sweep(source, targets, levels, settings, noise_seed, cfg.extraction());
    provenance = json{{"source", a.source}, {"targets", a.targets}};
  }

  if (!a.out.empty()) {
    json payload = noise_sweep_to_json(table);
    payload["config"] = config_to_json(cfg);
    payload["inputs"] = provenance;
    payload["noise_seed"] = noise_seed;
    save(make_envelope(ArtifactKind::SweepTable, std::move(payload)), a.out);
  }
  if (!a.table.empty()) confgap::detail::write_file_atomic(a.table, noise_sweep_csv(table));
  out << "psnr_db\tnoise_sigma\tmean_sdcd\tcorrelation\n";
  for (const auto &r : table.rows) {
    out << (std::isinf(r.psnr_db) ? std::string("inf") : fixed(r.psnr_db, 1)) << "\t" << fixed(r.noise_sigma, 6)
        << "\t" << fixed(r.mean_sdcd, 2) << "\t" << (r.correlation ? fixed(*r.correlation) : "nan") << "\n";
  }
  return kExitOk;
}

struct CoverageArgs {
  std::string features, heldout;
  int trials = 50;
  std::string seed = "0";
};

inline int cmd_coverage(const CoverageArgs &a, const RunConfig &cfg, std::ostream &out, std::ostream &) {
  const FeatureMatrix f = load_features(a.features);
  const FeatureMatrix held = a.heldout.empty() ? f : load_features(a.heldout);
  const auto r = coverage_check(f, held, cfg.alpha, a.trials, parse_seed(a.seed, "--trial-seed"), cfg.robustness(),
                                cfg.calibration);
  out << "coverage=" << fixed(r.mean_coverage) << " trials=" << a.trials << " n_val=" << r.n_val
      << " target=" << fixed(1.0 - cfg.alpha) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char *const *argv, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
  CLI::App app{"confgap: conformal bounds on causal-factor features for domain-shift assessment"};
  app.require_subcommand(1);

  ConfigFlags flags[7];
  ExtractArgs ex;
  auto *extract = app.add_subcommand("extract", "Fit sparse dynamics per trajectory and write a features artifact");
  extract->add_option("--input", ex.input, "Trajectory CSV or domain directory")->required();
  extract->add_option("--out", ex.out, "Output features artifact")->required();
  extract->add_option("--features", ex.features, "data, knowledge or fused");
  flags[0].attach(*extract);

  CalibrateArgs ca;
  auto *calibrate = app.add_subcommand("calibrate", "Compute the domain conformal bound of a source");
  calibrate->add_option("--features", ca.features, "Source features (artifact or CSV)")->required();
  calibrate->add_option("--out", ca.out, "Output calibration artifact")->required();
  flags[1].attach(*calibrate);

  SdcdArgs sa;
  auto *sdcd_cmd = app.add_subcommand("sdcd", "Score a target against a calibrated source");
  sdcd_cmd->add_option("--target", sa.target, "Target features")->required();
  sdcd_cmd->add_option("--source", sa.source, "Source features")->required();
  sdcd_cmd->add_option("--calibration", sa.calibration, "Calibration artifact")->required();
  sdcd_cmd->add_option("--report", sa.report, "Output SDCD report artifact");
  sdcd_cmd->add_option("--name", sa.name, "Target name in the report");
  sdcd_cmd->add_flag("--per-sample", sa.per_sample, "Print every residual");
  flags[2].attach(*sdcd_cmd);

  RefineArgs ra;
  auto *refine = app.add_subcommand("refine", "Ablate feature columns to maximise mean SDCD");
  refine->add_option("--pairs", ra.pairs, "JSON list of {source, target}")->required();
  refine->add_option("--removable", ra.removable, "Columns that may be removed")->delimiter(',');
  refine->add_option("--strategy", ra.strategy, "greedy or exhaustive");
  refine->add_option("--out", ra.out, "Output ablation trace artifact");
  flags[3].attach(*refine);

  SimulateArgs si;
  auto *simulate = app.add_subcommand("simulate", "Generate and evaluate synthetic shift scenarios");
  simulate->add_option("--spec", si.spec, "Scenario JSON")->required();
  simulate->add_option("--out-dir", si.out_dir, "Write source/ and target/ domain directories here");
  simulate->add_option("--out", si.out, "Output summary artifact");
  flags[4].attach(*simulate);

  SweepNoiseArgs sn;
  auto *sweep = app.add_subcommand("sweep-noise", "SDCD/accuracy correlation under feature noise at PSNR levels");
  sweep->add_option("--spec", sn.spec, "Scenario JSON (targets from its shift_levels x n_seeds)");
  sweep->add_option("--source", sn.source, "Source domain directory");
  sweep->add_option("--targets", sn.targets, "Target domain directories")->delimiter(',');
  sweep->add_option("--levels", sn.levels, "PSNR levels in dB, 'inf' for none")->delimiter(',');
  sweep->add_option("--noise-seed", sn.noise_seed, "Root seed of the noise draws");
  sweep->add_option("--out", sn.out, "Output sweep artifact");
  sweep->add_option("--table", sn.table, "Output sweep CSV");
  flags[5].attach(*sweep);

  CoverageArgs co;
  auto *coverage = app.add_subcommand("coverage", "Empirical same-domain coverage of the conformal bound");
  coverage->add_option("--features", co.features, "Features (artifact or CSV)")->required();
  coverage->add_option("--heldout", co.heldout, "Row-aligned features scored instead of --features");
  coverage->add_option("--trials", co.trials, "Calibration trials")->check(CLI::PositiveNumber);
  coverage->add_option("--trial-seed", co.seed, "Seed of the sub-split draws");
  flags[6].attach(*coverage);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp &e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (extract->parsed()) return cmd_extract(ex, flags[0].resolve(), out, err);
    if (calibrate->parsed()) return cmd_calibrate(ca, flags[1].resolve(), out, err);
    if (sdcd_cmd->parsed()) return cmd_sdcd(sa, flags[2].resolve(), out, err);
    if (refine->parsed()) return cmd_refine(ra, flags[3].resolve(), out, err);
    if (simulate->parsed()) return cmd_simulate(si, flags[4].resolve(), out, err);
    if (sweep->parsed()) return cmd_sweep_noise(sn, flags[5].resolve(), out, err);
    if (coverage->parsed()) return cmd_coverage(co, flags[6].resolve(), out, err);
  } catch (const InputError &e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError &e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const fs::filesystem_error &e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace confgap::cli
