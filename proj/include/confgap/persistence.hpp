#pragma once

// Versioned JSON artifact envelopes, CSV readers/writers for trajectories,
// features, labels and knowledge, and domain directories on disk.

#include "confgap/refinement.hpp"
#include "confgap/synthetic.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace confgap {

using json = nlohmann::json;
namespace fs = std::filesystem;

class ArtifactError : public InputError {
 public:
  using InputError::InputError;
};

inline constexpr int kSchemaVersion = 1;
inline constexpr std::size_t kDefaultSidecarThreshold = 1'000'000;

enum class ArtifactKind { Calibration, Features, SdcdReport, AblationTrace, SweepTable };

inline const char *to_string(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::Calibration: return "Calibration";
    case ArtifactKind::Features: return "Features";
    case ArtifactKind::SdcdReport: return "SdcdReport";
    case ArtifactKind::AblationTrace: return "AblationTrace";
    case ArtifactKind::SweepTable: return "SweepTable";
  }
  return "?";
}

inline ArtifactKind artifact_kind_from_string(const std::string &s) {
  for (auto k : {ArtifactKind::Calibration, ArtifactKind::Features, ArtifactKind::SdcdReport,
                 ArtifactKind::AblationTrace, ArtifactKind::SweepTable}) {
    if (s == to_string(k)) return k;
  }
  throw ArtifactError("unknown artifact kind '" + s + "'");
}

struct ArtifactEnvelope {
  int schema_version = kSchemaVersion;
  ArtifactKind kind = ArtifactKind::Calibration;
  std::string created_at;
  std::string content_hash;
  json payload;
};

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

namespace detail {

inline void reject_non_finite(const json &j, const std::string &where) {
  if (j.is_number_float() && !std::isfinite(j.get<double>())) {
    throw ArtifactError("non-finite number at " + (where.empty() ? std::string("/") : where));
  }
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) reject_non_finite(it.value(), where + "/" + it.key());
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) reject_non_finite(j[i], where + "/" + std::to_string(i));
  }
}

inline std::string read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary file in the same directory, then renames.
inline void write_file_atomic(const fs::path &path, std::string_view bytes) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (!fs::is_directory(dir)) throw InputError("directory '" + dir.string() + "' does not exist");
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw NumericalError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw NumericalError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
  }
}

}  // namespace detail

/// Canonical bytes: sorted keys, two-space indent, shortest round-trip
/// floats, trailing newline. Non-finite numbers are rejected.
inline std::string canonical_dump(const json &j) {
  detail::reject_non_finite(j, "");
  return j.dump(2) + "\n";
}

inline std::string payload_hash(const json &payload) { return sha256_hex(canonical_dump(payload)); }

/// ISO-8601 UTC. Honours SOURCE_DATE_EPOCH so re-runs can be byte-identical.
inline std::string utc_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char *epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
    long long v = 0;
    const auto [p, ec] = std::from_chars(epoch, epoch + std::strlen(epoch), v);
    if (ec == std::errc() && *p == '\0') t = static_cast<std::time_t>(v);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline ArtifactEnvelope make_envelope(ArtifactKind kind, json payload) {
  ArtifactEnvelope env;
  env.kind = kind;
  env.created_at = utc_timestamp();
  env.content_hash = payload_hash(payload);
  env.payload = std::move(payload);
  return env;
}

inline json envelope_to_json(const ArtifactEnvelope &env) {
  return json{{"schema_version", env.schema_version},
              {"kind", to_string(env.kind)},
              {"created_at", env.created_at},
              {"content_hash", payload_hash(env.payload)},
              {"payload", env.payload}};
}

inline std::string envelope_bytes(const ArtifactEnvelope &env) { return canonical_dump(envelope_to_json(env)); }

/// The stored hash is always recomputed from the payload.
inline void save(const ArtifactEnvelope &env, const fs::path &path) {
  detail::write_file_atomic(path, envelope_bytes(env));
}

inline ArtifactEnvelope parse_envelope(const std::string &bytes, const std::string &origin = "artifact") {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::parse_error &e) {
    throw ArtifactError(origin + ": malformed JSON (" + e.what() + ")");
  }
  ArtifactEnvelope env;
  try {
    env.schema_version = j.at("schema_version").get<int>();
    if (env.schema_version < 1 || env.schema_version > kSchemaVersion) {
      throw ArtifactError(origin + ": unsupported schema_version " + std::to_string(env.schema_version) +
                          " (supported ≤ " + std::to_string(kSchemaVersion) + ")");
    }
    env.kind = artifact_kind_from_string(j.at("kind").get<std::string>());
    env.created_at = j.at("created_at").get<std::string>();
    env.content_hash = j.at("content_hash").get<std::string>();
    env.payload = j.at("payload");
  } catch (const json::exception &e) {
    throw ArtifactError(origin + ": malformed envelope (" + e.what() + ")");
  }
  const std::string actual = payload_hash(env.payload);
  if (actual != env.content_hash) {
    throw ArtifactError(origin + ": content hash mismatch (stored " + env.content_hash + ", computed " + actual + ")");
  }
  return env;
}

inline ArtifactEnvelope load(const fs::path &path) {
  if (!fs::exists(path)) throw InputError("artifact '" + path.string() + "' does not exist");
  return parse_envelope(detail::read_file(path), path.string());
}

inline ArtifactEnvelope load(const fs::path &path, ArtifactKind expected) {
  ArtifactEnvelope env = load(path);
  if (env.kind != expected) {
    throw ArtifactError(path.string() + ": expected a " + to_string(expected) + " artifact, found " +
                        to_string(env.kind));
  }
  return env;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw NumericalError("cannot format number");
  return std::string(buf, p);
}

inline double parse_double(std::string_view s, const std::string &where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw InputError(where + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                       " fields, found " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw InputError("'" + path.string() + "' is empty");
  return t;
}

inline std::string csv_bytes(const std::vector<std::string> &header, const std::vector<std::vector<std::string>> &rows) {
  std::string out;
  auto line = [&out](const std::vector<std::string> &cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out.push_back(',');
      out += cells[i];
    }
    out.push_back('\n');
  };
  line(header);
  for (const auto &r : rows) line(r);
  return out;
}

struct TrajectoryFile {
  Matrix states;
  double ds = 1.0;
};

/// Header `s,x0,x1,...`; rows ordered by strictly increasing, uniformly
/// spaced s (relative tolerance 1e-6).
inline TrajectoryFile read_trajectory_csv(const fs::path &path) {
  const CsvTable t = read_csv(path);
  const std::string name = path.string();
  if (t.header.size() < 2 || t.header[0] != "s") throw InputError(name + ": header must be s,x0,x1,...");
  for (std::size_t j = 1; j < t.header.size(); ++j) {
    if (t.header[j] != "x" + std::to_string(j - 1)) {
      throw InputError(name + ": column " + std::to_string(j) + " must be named x" + std::to_string(j - 1));
    }
  }
  if (t.rows.size() < 3) throw InputError(name + ": needs ≥ 3 rows");
  TrajectoryFile out;
  out.states.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size() - 1));
  std::vector<double> s(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string where = name + ":" + std::to_string(i + 2);
    s[i] = parse_double(t.rows[i][0], where);
    for (std::size_t j = 1; j < t.header.size(); ++j) {
      out.states(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - 1)) = parse_double(t.rows[i][j], where);
    }
  }
  out.ds = (s.back() - s.front()) / static_cast<double>(s.size() - 1);
  if (!(out.ds > 0) || !std::isfinite(out.ds)) throw InputError(name + ": s must be strictly increasing");
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (std::abs((s[i] - s[i - 1]) - out.ds) > 1e-6 * out.ds) {
      throw InputError(name + ": s is not uniformly spaced near row " + std::to_string(i + 2));
    }
  }
  return out;
}

inline void write_trajectory_csv(const fs::path &path, const Matrix &states, double ds) {
  std::vector<std::string> header{"s"};
  for (Eigen::Index j = 0; j < states.cols(); ++j) header.push_back("x" + std::to_string(j));
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    std::vector<std::string> r{format_double(static_cast<double>(i) * ds)};
    for (Eigen::Index j = 0; j < states.cols(); ++j) r.push_back(format_double(states(i, j)));
    rows.push_back(std::move(r));
  }
  detail::write_file_atomic(path, csv_bytes(header, rows));
}

/// Header `id,<columns...>`, one row per sample.
inline FeatureMatrix read_feature_csv(const fs::path &path, FeatureKind kind = FeatureKind::DataDerived) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header[0] != "id") throw InputError(path.string() + ": first column must be 'id'");
  if (t.rows.empty()) throw InputError(path.string() + ": no feature rows");
  std::vector<std::string> columns(t.header.begin() + 1, t.header.end());
  std::vector<std::string> ids;
  Matrix m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    ids.push_back(t.rows[i][0]);
    for (std::size_t j = 0; j < columns.size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          parse_double(t.rows[i][j + 1], path.string() + ":" + std::to_string(i + 2));
    }
  }
  return FeatureMatrix(std::move(ids), std::move(columns), std::move(m), kind);
}

inline std::string feature_csv_bytes(const FeatureMatrix &f) {
  std::vector<std::string> header{"id"};
  header.insert(header.end(), f.columns().begin(), f.columns().end());
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < f.n_rows(); ++i) {
    std::vector<std::string> r{f.ids()[static_cast<std::size_t>(i)]};
    for (Eigen::Index j = 0; j < f.n_cols(); ++j) r.push_back(format_double(f.rows()(i, j)));
    rows.push_back(std::move(r));
  }
  return csv_bytes(header, rows);
}

inline void write_feature_csv(const fs::path &path, const FeatureMatrix &f) {
  detail::write_file_atomic(path, feature_csv_bytes(f));
}

// ---------------------------------------------------------------------------
// Domain directories: trajectories/<id>.csv, labels.csv (id,label),
// knowledge.csv (id,<columns...>). Samples are ordered by file name.

inline Domain load_domain_dir(const fs::path &dir, DomainKind kind, std::string name = {}) {
  if (!fs::is_directory(dir)) throw InputError("'" + dir.string() + "' is not a directory");
  Domain dom;
  dom.kind = kind;
  dom.name = name.empty() ? dir.filename().string() : std::move(name);

  fs::path traj_dir = dir / "trajectories";
  if (!fs::is_directory(traj_dir)) traj_dir = dir;
  std::vector<fs::path> files;
  for (const auto &e : fs::directory_iterator(traj_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv" && e.path().filename() != "labels.csv" &&
        e.path().filename() != "knowledge.csv") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto &f : files) {
    const auto t = read_trajectory_csv(f);
    DomainSample s;
    s.id = f.stem().string();
    s.trajectory = t.states;
    s.ds = t.ds;
    dom.samples.push_back(std::move(s));
  }

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < dom.samples.size(); ++i) index.emplace(dom.samples[i].id, i);
  auto sample_for = [&](const std::string &id, const fs::path &file) -> DomainSample & {
    auto it = index.find(id);
    if (it != index.end()) return dom.samples[it->second];
    if (!files.empty()) throw InputError(file.string() + ": sample '" + id + "' has no trajectory");
    DomainSample s;
    s.id = id;
    index.emplace(id, dom.samples.size());
    dom.samples.push_back(std::move(s));
    return dom.samples.back();
  };

  if (const fs::path kf = dir / "knowledge.csv"; fs::exists(kf)) {
    const FeatureMatrix k = read_feature_csv(kf, FeatureKind::Knowledge);
    dom.knowledge_columns = k.columns();
    for (Eigen::Index i = 0; i < k.n_rows(); ++i) {
      sample_for(k.ids()[static_cast<std::size_t>(i)], kf).knowledge = k.rows().row(i).transpose();
    }
  }
  if (const fs::path lf = dir / "labels.csv"; fs::exists(lf)) {
    const CsvTable t = read_csv(lf);
    if (t.header.size() != 2 || t.header[0] != "id" || t.header[1] != "label") {
      throw InputError(lf.string() + ": header must be id,label");
    }
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const double v = parse_double(t.rows[i][1], lf.string() + ":" + std::to_string(i + 2));
      if (v != std::floor(v)) throw InputError(lf.string() + ": labels must be integers");
      sample_for(t.rows[i][0], lf).label = static_cast<int>(v);
    }
  }
  if (dom.samples.empty()) throw InputError("'" + dir.string() + "' contains no samples");
  return dom;
}

inline void save_domain_dir(const Domain &dom, const fs::path &dir) {
  fs::create_directories(dir / "trajectories");
  std::vector<std::vector<std::string>> labels;
  for (const auto &s : dom.samples) {
    if (s.trajectory) write_trajectory_csv(dir / "trajectories" / (s.id + ".csv"), *s.trajectory, s.ds);
    if (s.label) labels.push_back({s.id, std::to_string(*s.label)});
  }
  if (!labels.empty()) detail::write_file_atomic(dir / "labels.csv", csv_bytes({"id", "label"}, labels));
  if (has_knowledge(dom)) write_feature_csv(dir / "knowledge.csv", knowledge_matrix(dom));
}

// ---------------------------------------------------------------------------
// Payload codecs

inline json matrix_to_json(const Matrix &m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Matrix matrix_from_json(const json &j, Eigen::Index cols) {
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != static_cast<std::size_t>(cols)) throw ArtifactError("matrix row has the wrong length");
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), c) = j[i][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline json vector_to_json(const Vector &v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vector vector_from_json(const json &j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json gaussian_to_json(const GaussianModel &g) {
  return json{{"mean", vector_to_json(g.mean)},
              {"covariance", matrix_to_json(g.covariance)},
              {"precision", matrix_to_json(g.precision)},
              {"ridge_eps", g.ridge_eps},
              {"degenerate", g.degenerate}};
}

inline GaussianModel gaussian_from_json(const json &j) {
  GaussianModel g;
  g.mean = vector_from_json(j.at("mean"));
  g.covariance = matrix_from_json(j.at("covariance"), g.mean.size());
  g.precision = matrix_from_json(j.at("precision"), g.mean.size());
  g.ridge_eps = j.at("ridge_eps").get<double>();
  g.degenerate = j.at("degenerate").get<bool>();
  return g;
}

inline json calibration_to_json(const DcbCalibration &c) {
  return json{{"id", c.id},
              {"sigma", c.sigma},
              {"interval", {c.interval_lo, c.interval_hi}},
              {"centre", c.centre},
              {"half_width", c.half_width},
              {"residual_std", c.residual_std},
              {"alpha", c.alpha},
              {"k_index", c.k_index},
              {"split_seed", c.split_seed},
              {"n_train", c.n_train},
              {"n_val", c.n_val},
              {"variant", to_string(c.variant)},
              {"quantile_rule", to_string(c.options.quantile_rule)},
              {"interval_width", to_string(c.options.interval_width)},
              {"metric_model", gaussian_to_json(c.metric_model)},
              {"feature_columns", c.feature_columns},
              {"degenerate", c.degenerate}};
}

inline DcbCalibration calibration_from_json(const json &j) {
  try {
    DcbCalibration c;
    c.id = j.at("id").get<std::string>();
    c.sigma = j.at("sigma").get<double>();
    c.interval_lo = j.at("interval").at(0).get<double>();
    c.interval_hi = j.at("interval").at(1).get<double>();
    c.centre = j.at("centre").get<double>();
    c.half_width = j.at("half_width").get<double>();
    c.residual_std = j.at("residual_std").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.k_index = j.at("k_index").get<int>();
    c.split_seed = j.at("split_seed").get<std::uint64_t>();
    c.n_train = j.at("n_train").get<int>();
    c.n_val = j.at("n_val").get<int>();
    c.variant = robustness_variant_from_string(j.at("variant").get<std::string>());
    c.options.quantile_rule = quantile_rule_from_string(j.at("quantile_rule").get<std::string>());
    c.options.interval_width = interval_width_from_string(j.at("interval_width").get<std::string>());
    c.metric_model = gaussian_from_json(j.at("metric_model"));
    c.feature_columns = j.at("feature_columns").get<std::vector<std::string>>();
    c.degenerate = j.at("degenerate").get<bool>();
    return c;
  } catch (const json::exception &e) {
    throw ArtifactError(std::string("malformed calibration payload (") + e.what() + ")");
  }
}

inline json exclusions_to_json(const std::vector<Exclusion> &ex) {
  json out = json::array();
  for (const auto &e : ex) out.push_back({{"id", e.id}, {"reason", e.reason}});
  return out;
}

inline std::vector<Exclusion> exclusions_from_json(const json &j) {
  std::vector<Exclusion> out;
  for (const auto &e : j) out.push_back({e.at("id").get<std::string>(), e.at("reason").get<std::string>()});
  return out;
}

/// Features payload. Matrices with more than `sidecar_threshold` entries are
/// stored in `<sidecar_path>` (relative to the envelope) and referenced by
/// path and SHA-256; the caller writes the returned CSV bytes.
struct FeaturesPayload {
  json payload;
  std::optional<std::string> sidecar_bytes;
};

inline FeaturesPayload features_to_payload(const FeatureMatrix &f, const std::string &sidecar_name = {},
                                           std::size_t sidecar_threshold = kDefaultSidecarThreshold) {
  FeaturesPayload out;
  out.payload = json{{"kind", to_string(f.kind())}, {"columns", f.columns()}, {"n_rows", f.n_rows()}};
  const auto entries = static_cast<std::size_t>(f.n_rows()) * static_cast<std::size_t>(f.n_cols());
  if (!sidecar_name.empty() && entries > sidecar_threshold) {
    out.sidecar_bytes = feature_csv_bytes(f);
    out.payload["sidecar"] = {{"path", sidecar_name}, {"sha256", sha256_hex(*out.sidecar_bytes)}};
  } else {
    out.payload["ids"] = f.ids();
    out.payload["rows"] = matrix_to_json(f.rows());
  }
  return out;
}

inline FeatureMatrix features_from_payload(const json &p, const fs::path &base_dir = {}) {
  try {
    const FeatureKind kind = feature_kind_from_string(p.at("kind").get<std::string>());
    auto columns = p.at("columns").get<std::vector<std::string>>();
    if (p.contains("sidecar")) {
      const auto &sc = p.at("sidecar");
      const fs::path path = base_dir / sc.at("path").get<std::string>();
      const std::string bytes = detail::read_file(path);
      if (sha256_hex(bytes) != sc.at("sha256").get<std::string>()) {
        throw ArtifactError(path.string() + ": sidecar hash mismatch");
      }
      FeatureMatrix f = read_feature_csv(path, kind);
      if (f.columns() != columns) throw ArtifactError(path.string() + ": sidecar columns differ from the envelope");
      return f;
    }
    auto ids = p.at("ids").get<std::vector<std::string>>();
    Matrix rows = matrix_from_json(p.at("rows"), static_cast<Eigen::Index>(columns.size()));
    return FeatureMatrix(std::move(ids), std::move(columns), std::move(rows), kind);
  } catch (const json::exception &e) {
    throw ArtifactError(std::string("malformed features payload (") + e.what() + ")");
  }
}

/// Saves a Features envelope at `path`, with a sidecar CSV next to it when
/// the matrix is large. `extra` keys are merged into the payload.
inline void save_features(const FeatureMatrix &f, const fs::path &path, const json &extra = json::object(),
                          std::size_t sidecar_threshold = kDefaultSidecarThreshold) {
  std::string stem = path.filename().string();
  if (const auto pos = stem.find(".confgap.json"); pos != std::string::npos) stem.erase(pos);
  auto fp = features_to_payload(f, stem + ".features.csv", sidecar_threshold);
  for (auto it = extra.begin(); it != extra.end(); ++it) fp.payload[it.key()] = it.value();
  if (fp.sidecar_bytes) {
    detail::write_file_atomic(path.parent_path() / (stem + ".features.csv"), *fp.sidecar_bytes);
  }
  save(make_envelope(ArtifactKind::Features, std::move(fp.payload)), path);
}

/// Reads features from a Features envelope or a plain feature CSV.
inline FeatureMatrix load_features(const fs::path &path) {
  if (path.extension() == ".csv") return read_feature_csv(path);
  const auto env = load(path, ArtifactKind::Features);
  return features_from_payload(env.payload, path.parent_path());
}

inline json sdcd_report_to_json(const SdcdReport &r) {
  json rows = json::array();
  for (const auto &s : r.residuals) rows.push_back({{"id", s.id}, {"residual", s.residual}, {"in_bounds", s.in_bounds}});
  return json{{"target_name", r.target_name},
              {"sdcd_percent", r.sdcd_percent},
              {"calibration_ref", r.calibration_ref},
              {"residuals", std::move(rows)}};
}

inline SdcdReport sdcd_report_from_json(const json &j) {
  SdcdReport r;
  r.target_name = j.at("target_name").get<std::string>();
  r.sdcd_percent = j.at("sdcd_percent").get<double>();
  r.calibration_ref = j.at("calibration_ref").get<std::string>();
  for (const auto &s : j.at("residuals")) {
    r.residuals.push_back({s.at("id").get<std::string>(), s.at("residual").get<double>(), s.at("in_bounds").get<bool>()});
  }
  return r;
}

inline json ablation_trace_to_json(const AblationTrace &t) {
  json steps = json::array();
  for (const auto &s : t.steps) {
    steps.push_back({{"removed_column", s.removed_column},
                     {"removed", s.removed},
                     {"round", s.round},
                     {"avg_sdcd", s.avg_sdcd},
                     {"per_pair_sdcd", s.per_pair_sdcd}});
  }
  return json{{"strategy", to_string(t.strategy)},
              {"steps", std::move(steps)},
              {"best_subset", t.best_subset},
              {"best_removed", t.best_removed},
              {"best_avg_sdcd", t.best_avg_sdcd}};
}

inline AblationTrace ablation_trace_from_json(const json &j) {
  AblationTrace t;
  t.strategy = ablation_strategy_from_string(j.at("strategy").get<std::string>());
  for (const auto &s : j.at("steps")) {
    AblationStep step;
    step.removed_column = s.at("removed_column").get<std::string>();
    step.removed = s.at("removed").get<std::vector<std::string>>();
    step.round = s.at("round").get<int>();
    step.avg_sdcd = s.at("avg_sdcd").get<double>();
    step.per_pair_sdcd = s.at("per_pair_sdcd").get<std::map<std::string, double>>();
    t.steps.push_back(std::move(step));
  }
  t.best_subset = j.at("best_subset").get<std::vector<std::string>>();
  t.best_removed = j.at("best_removed").get<std::vector<std::string>>();
  t.best_avg_sdcd = j.at("best_avg_sdcd").get<double>();
  return t;
}

inline json shift_sweep_to_json(const ShiftSweepResult &r) {
  json points = json::array();
  for (const auto &p : r.points) {
    points.push_back({{"shift_level", p.shift_level}, {"seed", p.seed}, {"sdcd", p.sdcd_percent}, {"accuracy", p.accuracy}});
  }
  json out{{"sweep", "shift"},
           {"levels", r.levels},
           {"mean_sdcd", r.mean_sdcd},
           {"mean_accuracy", r.mean_accuracy},
           {"points", std::move(points)}};
  out["correlation"] = std::isfinite(r.correlation) ? json(r.correlation) : json(nullptr);
  return out;
}

/// +inf PSNR is written as the string "inf".
inline json noise_sweep_to_json(const NoiseSweepTable &t) {
  json rows = json::array();
  for (const auto &r : t.rows) {
    json row{{"psnr_db", std::isinf(r.psnr_db) ? json("inf") : json(r.psnr_db)},
             {"noise_sigma", r.noise_sigma},
             {"sdcd", r.sdcd},
             {"mean_sdcd", r.mean_sdcd}};
    row["correlation"] = r.correlation ? json(*r.correlation) : json(nullptr);
    rows.push_back(std::move(row));
  }
  return json{{"sweep", "noise"}, {"targets", t.target_names}, {"accuracy", t.accuracy}, {"rows", std::move(rows)}};
}

inline NoiseSweepTable noise_sweep_from_json(const json &j) {
  NoiseSweepTable t;
  t.target_names = j.at("targets").get<std::vector<std::string>>();
  t.accuracy = j.at("accuracy").get<std::vector<double>>();
  for (const auto &r : j.at("rows")) {
    NoiseSweepRow row;
    row.psnr_db = r.at("psnr_db").is_string() ? std::numeric_limits<double>::infinity() : r.at("psnr_db").get<double>();
    row.noise_sigma = r.at("noise_sigma").get<double>();
    row.sdcd = r.at("sdcd").get<std::vector<double>>();
    row.mean_sdcd = r.at("mean_sdcd").get<double>();
    if (!r.at("correlation").is_null()) row.correlation = r.at("correlation").get<double>();
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// One row per PSNR level: psnr_db, noise_sigma, mean_sdcd, correlation,
/// then one SDCD column per target.
inline std::string noise_sweep_csv(const NoiseSweepTable &t) {
  std::vector<std::string> header{"psnr_db", "noise_sigma", "mean_sdcd", "correlation"};
  header.insert(header.end(), t.target_names.begin(), t.target_names.end());
  std::vector<std::vector<std::string>> rows;
  for (const auto &r : t.rows) {
    std::vector<std::string> cells{std::isinf(r.psnr_db) ? "inf" : format_double(r.psnr_db),
                                   format_double(r.noise_sigma), format_double(r.mean_sdcd),
                                   r.correlation ? format_double(*r.correlation) : "nan"};
    for (double v : r.sdcd) cells.push_back(format_double(v));
    rows.push_back(std::move(cells));
  }
  return csv_bytes(header, rows);
}

}  // namespace confgap
