#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "volsamp/core_linalg.hpp"
#include "volsamp/errors.hpp"
#include "volsamp/estimators.hpp"
#include "volsamp/parallel.hpp"
#include "volsamp/rng.hpp"
#include "volsamp/sampling.hpp"

namespace volsamp {

// ---------------------------------------------------------------------------
// Dataset ingestion
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto* end = tok.data() + tok.size();
  const auto res = std::from_chars(tok.data(), end, out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(out);
}

inline bool parse_index(std::string_view tok, std::size_t& out) {
  const auto* end = tok.data() + tok.size();
  const auto res = std::from_chars(tok.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

[[noreturn]] inline void parse_fail(std::size_t line, const std::string& msg) {
  fail(ErrorKind::ParseError, "line " + std::to_string(line) + ": " + msg);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::ParseError, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Calls fn(line_number, content) for non-blank, non-comment lines.
template <class Fn>
void for_each_data_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    const auto line = trim(text.substr(pos, nl - pos));
    if (!line.empty() && line.front() != '#') fn(line_no, line);
    pos = nl + 1;
  }
}

}  // namespace detail

/// Removes rows of X that are identically zero (and the matching responses).
inline RegressionProblem drop_zero_rows(const RegressionProblem& p) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < p.X.rows(); ++i) {
    if ((p.X.row(i).array() != 0.0).any()) keep.push_back(i);
  }
  RegressionProblem out{Matrix(static_cast<Eigen::Index>(keep.size()), p.X.cols()),
                        Vector(static_cast<Eigen::Index>(keep.size()))};
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.X.row(static_cast<Eigen::Index>(j)) = p.X.row(keep[j]);
    out.y(static_cast<Eigen::Index>(j)) = p.y(keep[j]);
  }
  return out;
}

inline RegressionProblem prepend_intercept(const RegressionProblem& p) {
  RegressionProblem out{Matrix(p.X.rows(), p.X.cols() + 1), p.y};
  out.X.col(0).setOnes();
  out.X.rightCols(p.X.cols()) = p.X;
  return out;
}

/// Full column rank check with a remediation hint.
inline void require_full_rank(const RegressionProblem& p, const std::string& source) {
  try {
    (void)gram_factorize(p.X);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::RankDeficient) throw;
    fail(ErrorKind::RankDeficient,
         source + ": design is rank deficient (" + e.message() +
             "); drop redundant or all-zero columns, e.g. via monomial expansion "
             "with redundancy removal");
  }
}

struct LoadOptions {
  bool intercept = false;
  /// Skip the rank check (callers that transform the design first).
  bool check_rank = true;
};

/// libsvm text: "label idx:val idx:val ..." with 1-based feature indices.
/// Columns = largest index seen; all-zero rows are dropped.
inline RegressionProblem parse_libsvm(std::string_view text, const LoadOptions& opt = {},
                                      const std::string& source = "libsvm input") {
  struct Row {
    double label;
    std::vector<std::pair<std::size_t, double>> entries;
  };
  std::vector<Row> rows;
  std::size_t cols = 0;
  detail::for_each_data_line(text, [&](std::size_t line, std::string_view content) {
    const auto tokens = detail::split_ws(content);
    Row row{};
    if (!detail::parse_double(tokens[0], row.label)) {
      detail::parse_fail(line, "bad label '" + std::string(tokens[0]) + "'");
    }
    std::set<std::size_t> seen;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const auto tok = tokens[t];
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos) {
        detail::parse_fail(line, "expected idx:val, got '" + std::string(tok) + "'");
      }
      std::size_t idx = 0;
      double val = 0.0;
      if (!detail::parse_index(tok.substr(0, colon), idx) || idx == 0) {
        detail::parse_fail(line, "feature index must be a positive integer in '" +
                                     std::string(tok) + "'");
      }
      if (!detail::parse_double(tok.substr(colon + 1), val)) {
        detail::parse_fail(line, "bad value in '" + std::string(tok) + "'");
      }
      if (!seen.insert(idx).second) {
        detail::parse_fail(line, "duplicate feature index " + std::to_string(idx));
      }
      cols = std::max(cols, idx);
      row.entries.emplace_back(idx - 1, val);
    }
    rows.push_back(std::move(row));
  });
  if (rows.empty() || cols == 0) fail(ErrorKind::EmptyDataset, source + ": no data rows");
  RegressionProblem p{Matrix::Zero(static_cast<Eigen::Index>(rows.size()),
                                   static_cast<Eigen::Index>(cols)),
                      Vector(static_cast<Eigen::Index>(rows.size()))};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    p.y(static_cast<Eigen::Index>(i)) = rows[i].label;
    for (const auto& [c, v] : rows[i].entries) {
      p.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v;
    }
  }
  p = drop_zero_rows(p);
  if (p.X.rows() == 0) fail(ErrorKind::EmptyDataset, source + ": every row is all zeros");
  if (opt.intercept) p = prepend_intercept(p);
  if (opt.check_rank) require_full_rank(p, source);
  return p;
}

inline RegressionProblem load_libsvm(const std::string& path, const LoadOptions& opt = {}) {
  return parse_libsvm(detail::read_file(path), opt, path);
}

/// Whitespace-separated dense rows, all of equal length.
inline Matrix parse_dense(std::string_view text, const std::string& source = "dense input") {
  std::vector<std::vector<double>> rows;
  detail::for_each_data_line(text, [&](std::size_t line, std::string_view content) {
    std::vector<double> row;
    for (auto tok : detail::split_ws(content)) {
      double v = 0.0;
      if (!detail::parse_double(tok, v)) {
        detail::parse_fail(line, "bad number '" + std::string(tok) + "'");
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      detail::parse_fail(line, "expected " + std::to_string(rows.front().size()) +
                                   " columns, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  });
  if (rows.empty()) fail(ErrorKind::EmptyDataset, source + ": no data rows");
  Matrix M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return M;
}

/// Dense regression data: the first column is the response, the rest the design.
inline RegressionProblem parse_dense_problem(std::string_view text, const LoadOptions& opt = {},
                                             const std::string& source = "dense input") {
  const Matrix M = parse_dense(text, source);
  if (M.cols() < 2) {
    fail(ErrorKind::InvalidShape, source + ": need a response column and at least one feature");
  }
  RegressionProblem p{M.rightCols(M.cols() - 1), M.col(0)};
  p = drop_zero_rows(p);
  if (p.X.rows() == 0) fail(ErrorKind::EmptyDataset, source + ": every row is all zeros");
  if (opt.intercept) p = prepend_intercept(p);
  if (opt.check_rank) require_full_rank(p, source);
  return p;
}

enum class DataFormat { Auto, Libsvm, Dense };

inline DataFormat parse_format(std::string_view s) {
  if (s == "auto") return DataFormat::Auto;
  if (s == "libsvm" || s == "svm") return DataFormat::Libsvm;
  if (s == "dense" || s == "txt") return DataFormat::Dense;
  fail(ErrorKind::ConfigError, "unknown format '" + std::string(s) + "'");
}

/// Extension first (.svm/.libsvm vs .txt/.dat/.csv/.dense), then content: any ':'
/// on the first data line means libsvm.
inline DataFormat detect_format(const std::string& path, std::string_view text) {
  const auto dot = path.rfind('.');
  if (dot != std::string::npos) {
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    if (ext == "svm" || ext == "libsvm") return DataFormat::Libsvm;
    if (ext == "txt" || ext == "dat" || ext == "dense") return DataFormat::Dense;
  }
  DataFormat f = DataFormat::Dense;
  bool decided = false;
  detail::for_each_data_line(text, [&](std::size_t, std::string_view line) {
    if (decided) return;
    decided = true;
    if (line.find(':') != std::string_view::npos) f = DataFormat::Libsvm;
  });
  return f;
}

inline RegressionProblem load_problem(const std::string& path, DataFormat format,
                                      const LoadOptions& opt = {}) {
  const std::string text = detail::read_file(path);
  if (format == DataFormat::Auto) format = detect_format(path, text);
  return format == DataFormat::Libsvm ? parse_libsvm(text, opt, path)
                                      : parse_dense_problem(text, opt, path);
}

/// Design matrix only: libsvm labels are discarded, dense files are read whole.
inline Matrix load_matrix(const std::string& path, DataFormat format) {
  const std::string text = detail::read_file(path);
  if (format == DataFormat::Auto) format = detect_format(path, text);
  if (format == DataFormat::Libsvm) {
    LoadOptions opt;
    opt.check_rank = false;
    return parse_libsvm(text, opt, path).X;
  }
  return parse_dense(text, path);
}

// ---------------------------------------------------------------------------
// Degree-2 feature expansion
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultMonomialCap = 10'000;

/// Features x_i then x_i x_j (i <= j). A column is kept only if it is not in
/// the span of the columns kept before it (Gram-Schmidt residual above
/// 1e-10 of its norm), so the order of survivors is deterministic and the
/// result has full column rank.
inline RegressionProblem expand_monomials(const RegressionProblem& p,
                                          std::size_t cap = kDefaultMonomialCap) {
  const auto d = static_cast<std::size_t>(p.X.cols());
  if (d * d > cap) {
    fail(ErrorKind::CapExceeded, "d^2 = " + std::to_string(d * d) + " exceeds monomial cap " +
                                     std::to_string(cap));
  }
  const auto n = p.X.rows();
  std::vector<Vector> candidates;
  for (std::size_t i = 0; i < d; ++i) candidates.push_back(p.X.col(static_cast<Eigen::Index>(i)));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j)
      candidates.push_back(p.X.col(static_cast<Eigen::Index>(i))
                               .cwiseProduct(p.X.col(static_cast<Eigen::Index>(j))));
  constexpr double kResidualTol = 1e-10;
  std::vector<Vector> basis;  // orthonormal basis of kept columns
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double norm = candidates[c].norm();
    if (!(norm > 0.0)) continue;
    Vector r = candidates[c];
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) r -= b.dot(r) * b;
    const double res = r.norm();
    if (res > kResidualTol * norm) {
      basis.push_back(r / res);
      kept.push_back(c);
    }
  }
  RegressionProblem out{Matrix(n, static_cast<Eigen::Index>(kept.size())), p.y};
  for (std::size_t j = 0; j < kept.size(); ++j) out.X.col(static_cast<Eigen::Index>(j)) = candidates[kept[j]];
  return out;
}

// ---------------------------------------------------------------------------
// Lower-bound instance
// ---------------------------------------------------------------------------

struct LowerBoundInstance {
  RegressionProblem problem;
  double gamma = 0.0;
  /// c = 1 / (1 + ((n-d)/d) gamma^2).
  double c = 0.0;
  /// L(w*) = d (1 - c).
  double optimal_loss = 0.0;
};

inline void require_lower_bound_shape(Index n, Index d) {
  if (d == 0 || n % d != 0 || n / d < 2) {
    fail(ErrorKind::InvalidShape, "need d | n and n/d >= 2; got n=" + std::to_string(n) +
                                      " d=" + std::to_string(d));
  }
}

/// X = (I; gamma I; ...; gamma I), y = (1_d; 0; ...; 0).
inline LowerBoundInstance lower_bound_instance(Index n, Index d, double gamma) {
  require_lower_bound_shape(n, d);
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    fail(ErrorKind::InvalidShape, "gamma must be positive and finite");
  }
  LowerBoundInstance inst;
  const auto nn = static_cast<Eigen::Index>(n), dd = static_cast<Eigen::Index>(d);
  inst.problem.X = Matrix::Zero(nn, dd);
  inst.problem.y = Vector::Zero(nn);
  for (Eigen::Index i = 0; i < nn; ++i) {
    inst.problem.X(i, i % dd) = i < dd ? 1.0 : gamma;
    if (i < dd) inst.problem.y(i) = 1.0;
  }
  inst.gamma = gamma;
  const double copies = double(n - d) / double(d);
  inst.c = 1.0 / (1.0 + copies * gamma * gamma);
  inst.optimal_loss = double(d) * (1.0 - inst.c);
  return inst;
}

/// gamma with d (1 - c(gamma)) = target, from c = 1 - target/d.
inline double solve_gamma_for_loss(Index n, Index d, double target) {
  require_lower_bound_shape(n, d);
  if (!(target > 0.0) || !(target < double(d))) {
    fail(ErrorKind::InvalidArgument, "target loss must lie in (0, d)");
  }
  const double c = 1.0 - target / double(d);
  return std::sqrt((1.0 / c - 1.0) * double(d) / double(n - d));
}

// ---------------------------------------------------------------------------
// Loss-curve harness
// ---------------------------------------------------------------------------

enum class Method { Volume, LeverageIid, LeveragedVolume, FastLeveragedVolume };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Volume: return "volume";
    case Method::LeverageIid: return "leverage_iid";
    case Method::LeveragedVolume: return "leveraged_volume";
    case Method::FastLeveragedVolume: return "fast_leveraged_volume";
  }
  return "unknown";
}

/// Accepts hyphen and underscore spellings.
inline std::optional<Method> parse_method(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  for (Method m : {Method::Volume, Method::LeverageIid, Method::LeveragedVolume,
                   Method::FastLeveragedVolume}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

struct LowerBoundSpec {
  Index n = 100;
  Index d = 10;
  double target_loss = 2.0 / 3.0;
  std::optional<double> gamma;
};

struct ExperimentConfig {
  /// File path, or the builtin name "lowerbound".
  std::string dataset;
  DataFormat format = DataFormat::Auto;
  LowerBoundSpec lowerbound;
  bool intercept = false;
  bool expand_monomials = false;
  std::vector<Method> methods;
  std::vector<Index> k_grid;
  std::size_t repetitions = 100;
  std::uint64_t root_seed = 0;
  /// Fast variant only; defaults to the largest admissible value 1/(16 d + 1).
  std::optional<double> epsilon;
  SketchKind fast_sketch = SketchKind::Exact;
  std::optional<std::size_t> sketch_rows;
  std::size_t jobs = 1;
  std::string records_out;
  std::string summary_out;
  bool per_row = false;
};

inline constexpr std::string_view kLowerBoundDataset = "lowerbound";

namespace detail {

template <class T>
T config_get(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ConfigError, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace detail

/// Parses and schema-checks a JSON config. Unknown keys are rejected.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::ConfigError, "config must be a JSON object");
  static const std::set<std::string> known{
      "dataset", "format",  "lowerbound", "intercept",  "expand_monomials", "methods",
      "k_grid",  "repetitions", "root_seed", "epsilon", "fast_sketch", "sketch_rows",
      "jobs",    "records_out", "summary_out", "per_row"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) fail(ErrorKind::ConfigError, "unknown field '" + key + "'");
  }
  ExperimentConfig cfg;
  if (!j.contains("dataset")) fail(ErrorKind::ConfigError, "missing field 'dataset'");
  cfg.dataset = detail::config_get<std::string>(j, "dataset");
  if (j.contains("format")) cfg.format = parse_format(detail::config_get<std::string>(j, "format"));
  if (j.contains("lowerbound")) {
    const auto& lb = j.at("lowerbound");
    if (!lb.is_object()) fail(ErrorKind::ConfigError, "'lowerbound' must be an object");
    for (const auto& [key, _] : lb.items()) {
      if (key != "n" && key != "d" && key != "target_loss" && key != "gamma") {
        fail(ErrorKind::ConfigError, "unknown field 'lowerbound." + key + "'");
      }
    }
    if (lb.contains("n")) cfg.lowerbound.n = detail::config_get<Index>(lb, "n");
    if (lb.contains("d")) cfg.lowerbound.d = detail::config_get<Index>(lb, "d");
    if (lb.contains("target_loss"))
      cfg.lowerbound.target_loss = detail::config_get<double>(lb, "target_loss");
    if (lb.contains("gamma")) cfg.lowerbound.gamma = detail::config_get<double>(lb, "gamma");
  }
  if (j.contains("intercept")) cfg.intercept = detail::config_get<bool>(j, "intercept");
  if (j.contains("expand_monomials"))
    cfg.expand_monomials = detail::config_get<bool>(j, "expand_monomials");
  if (!j.contains("methods")) fail(ErrorKind::ConfigError, "missing field 'methods'");
  for (const auto& name : detail::config_get<std::vector<std::string>>(j, "methods")) {
    const auto m = parse_method(name);
    if (!m) fail(ErrorKind::ConfigError, "unknown method '" + name + "'");
    if (std::find(cfg.methods.begin(), cfg.methods.end(), *m) == cfg.methods.end())
      cfg.methods.push_back(*m);
  }
  if (cfg.methods.empty()) fail(ErrorKind::ConfigError, "'methods' is empty");
  if (!j.contains("k_grid")) fail(ErrorKind::ConfigError, "missing field 'k_grid'");
  cfg.k_grid = detail::config_get<std::vector<Index>>(j, "k_grid");
  if (cfg.k_grid.empty()) fail(ErrorKind::ConfigError, "'k_grid' is empty");
  if (j.contains("repetitions")) cfg.repetitions = detail::config_get<std::size_t>(j, "repetitions");
  if (cfg.repetitions < 1) fail(ErrorKind::ConfigError, "'repetitions' must be at least 1");
  if (j.contains("root_seed")) cfg.root_seed = detail::config_get<std::uint64_t>(j, "root_seed");
  if (j.contains("epsilon")) cfg.epsilon = detail::config_get<double>(j, "epsilon");
  if (j.contains("fast_sketch")) {
    const auto s = detail::config_get<std::string>(j, "fast_sketch");
    if (s == "gaussian") cfg.fast_sketch = SketchKind::Gaussian;
    else if (s == "exact") cfg.fast_sketch = SketchKind::Exact;
    else fail(ErrorKind::ConfigError, "'fast_sketch' must be \"gaussian\" or \"exact\"");
  }
  if (j.contains("sketch_rows")) cfg.sketch_rows = detail::config_get<std::size_t>(j, "sketch_rows");
  if (j.contains("jobs")) cfg.jobs = std::max<std::size_t>(1, detail::config_get<std::size_t>(j, "jobs"));
  if (j.contains("records_out")) cfg.records_out = detail::config_get<std::string>(j, "records_out");
  if (j.contains("summary_out")) cfg.summary_out = detail::config_get<std::string>(j, "summary_out");
  if (j.contains("per_row")) cfg.per_row = detail::config_get<bool>(j, "per_row");
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  const std::string text = detail::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::ConfigError, path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

struct Dataset {
  std::string name;
  RegressionProblem problem;
};

/// Builtin lower-bound instance or a file, with the configured preprocessing.
inline Dataset load_dataset(const ExperimentConfig& cfg) {
  Dataset ds;
  if (cfg.dataset == kLowerBoundDataset) {
    const auto& lb = cfg.lowerbound;
    const double gamma = lb.gamma ? *lb.gamma : solve_gamma_for_loss(lb.n, lb.d, lb.target_loss);
    ds.problem = lower_bound_instance(lb.n, lb.d, gamma).problem;
    ds.name = "lowerbound";
    if (cfg.intercept) ds.problem = prepend_intercept(ds.problem);
  } else {
    LoadOptions opt;
    opt.intercept = cfg.intercept;
    opt.check_rank = false;
    ds.problem = load_problem(cfg.dataset, cfg.format, opt);
    const auto slash = cfg.dataset.find_last_of('/');
    ds.name = slash == std::string::npos ? cfg.dataset : cfg.dataset.substr(slash + 1);
  }
  if (cfg.expand_monomials) ds.problem = expand_monomials(ds.problem);
  require_full_rank(ds.problem, ds.name);
  validate_problem(ds.problem);
  for (Index k : cfg.k_grid) {
    if (k < ds.problem.d()) {
      fail(ErrorKind::ConfigError, "k_grid value " + std::to_string(k) + " is below d = " +
                                       std::to_string(ds.problem.d()));
    }
  }
  return ds;
}

struct LossCurveRecord {
  std::string dataset;
  Method method = Method::Volume;
  Index k = 0;
  std::size_t repetition = 0;
  double loss = 0.0;
  double loss_ratio = 0.0;
};

struct RecordFailure {
  Method method = Method::Volume;
  Index k = 0;
  std::size_t repetition = 0;
  ErrorKind kind = ErrorKind::InvalidArgument;
  std::string message;
};

struct LossCurveResult {
  std::vector<LossCurveRecord> records;
  std::vector<RecordFailure> failures;
  double optimal_loss = 0.0;
  Index n = 0;
  Index d = 0;
};

inline double default_fast_epsilon(Index d) { return 1.0 / (16.0 * double(d) + 1.0); }

/// Seed of one (method, k, repetition) cell.
inline std::uint64_t cell_seed(std::uint64_t root, Method m, Index k, std::size_t rep) {
  return derive_seed(root, to_string(m), k, rep);
}

/// Runs the (method, k, repetition) grid on a loaded dataset. Records come
/// back in config order (method, then k, then repetition) regardless of jobs.
inline LossCurveResult run_loss_curves(const ExperimentConfig& cfg, const Dataset& ds) {
  const RegressionProblem& p = ds.problem;
  LossCurveResult result;
  result.n = p.n();
  result.d = p.d();
  result.optimal_loss = optimal_loss(p);

  std::optional<LeveragedVolumeSampler> leveraged;
  std::optional<FastLeveragedVolumeSampler> fast;
  std::optional<RescalingDistribution> leverage_q;
  std::optional<Error> fast_setup_error;
  for (Method m : cfg.methods) {
    if (m == Method::LeveragedVolume && !leveraged) leveraged.emplace(p.X);
    if (m == Method::LeverageIid && !leverage_q)
      leverage_q = RescalingDistribution::leveraged(leverage_scores(p.X));
    if (m == Method::FastLeveragedVolume && !fast && !fast_setup_error) {
      // One preprocessing pass shared by all repetitions, seeded separately.
      RngState rng(derive_seed(cfg.root_seed, "fast_leveraged_volume/setup", 0, 0));
      FastSamplerOptions opt;
      opt.sketch = cfg.fast_sketch;
      opt.sketch_rows = cfg.sketch_rows;
      try {
        fast.emplace(p.X, cfg.epsilon ? *cfg.epsilon : default_fast_epsilon(p.d()), rng, opt);
      } catch (const Error& e) {
        fast_setup_error = e;
      }
    }
  }

  struct Cell {
    Method method;
    Index k;
    std::size_t rep;
  };
  std::vector<Cell> cells;
  for (Method m : cfg.methods)
    for (Index k : cfg.k_grid)
      for (std::size_t r = 0; r < cfg.repetitions; ++r) cells.push_back({m, k, r});

  struct Outcome {
    std::optional<LossCurveRecord> record;
    std::optional<RecordFailure> failure;
  };
  std::vector<Outcome> outcomes(cells.size());
  parallel_for(cells.size(), cfg.jobs, [&](std::size_t c) {
    const Cell& cell = cells[c];
    RngState rng(cell_seed(cfg.root_seed, cell.method, cell.k, cell.rep));
    try {
      EstimatorResult est;
      switch (cell.method) {
        case Method::Volume:
          est = subset_estimator(p, volume_sample(p.X, cell.k, rng), result.optimal_loss);
          break;
        case Method::LeverageIid:
          est = rescaled_estimator(p, leverage_iid_sample(*leverage_q, cell.k, rng),
                                   result.optimal_loss);
          break;
        case Method::LeveragedVolume:
          est = rescaled_estimator(p, leveraged->sample(cell.k, rng), result.optimal_loss);
          break;
        case Method::FastLeveragedVolume:
          if (fast_setup_error) throw *fast_setup_error;
          est = rescaled_estimator(p, fast->sample(cell.k, rng), result.optimal_loss);
          break;
      }
      outcomes[c].record =
          LossCurveRecord{ds.name, cell.method, cell.k, cell.rep, est.loss, est.loss_ratio};
    } catch (const Error& e) {
      outcomes[c].failure = RecordFailure{cell.method, cell.k, cell.rep, e.kind(), e.message()};
    }
  });
  for (auto& o : outcomes) {
    if (o.record) result.records.push_back(std::move(*o.record));
    if (o.failure) result.failures.push_back(std::move(*o.failure));
  }
  return result;
}

inline LossCurveResult run_loss_curves(const ExperimentConfig& cfg) {
  return run_loss_curves(cfg, load_dataset(cfg));
}

struct SummaryRow {
  Method method = Method::Volume;
  Index k = 0;
  std::size_t count = 0;
  double mean_loss = 0.0;
  /// sample standard deviation / sqrt(count); NaN for a single repetition.
  double stderr_ = 0.0;
  double mean_ratio = 0.0;
  double ratio_stderr = 0.0;
};

/// Mean and standard error per (method, k), in order of first appearance.
/// Cells without records produce no row.
inline std::vector<SummaryRow> aggregate(const std::vector<LossCurveRecord>& records) {
  std::vector<std::pair<Method, Index>> order;
  std::map<std::pair<Method, Index>, std::vector<const LossCurveRecord*>> groups;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.method, r.k);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&r);
  }
  auto stats = [](const std::vector<double>& v, double& mean, double& se) {
    const double n = double(v.size());
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    if (v.size() < 2) {
      se = std::nan("");
      return;
    }
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  };
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    const auto& g = groups.at(key);
    std::vector<double> losses, ratios;
    for (const auto* r : g) {
      losses.push_back(r->loss);
      ratios.push_back(r->loss_ratio);
    }
    SummaryRow row;
    row.method = key.first;
    row.k = key.second;
    row.count = g.size();
    stats(losses, row.mean_loss, row.stderr_);
    stats(ratios, row.mean_ratio, row.ratio_stderr);
    out.push_back(row);
  }
  return out;
}

namespace detail {

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace detail

/// dataset,method,k,repetition,loss,loss_ratio. per_row divides loss by n.
inline void write_records_csv(std::ostream& out, const std::vector<LossCurveRecord>& records,
                              bool per_row = false, Index n = 1) {
  out << "dataset,method,k,repetition,loss,loss_ratio\n";
  const double scale = per_row ? 1.0 / double(n) : 1.0;
  for (const auto& r : records) {
    out << r.dataset << ',' << to_string(r.method) << ',' << r.k << ',' << r.repetition << ','
        << detail::csv_number(r.loss * scale) << ',' << detail::csv_number(r.loss_ratio) << '\n';
  }
}

/// method,k,mean_loss,stderr. per_row divides both by n.
inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows,
                              bool per_row = false, Index n = 1) {
  out << "method,k,mean_loss,stderr\n";
  const double scale = per_row ? 1.0 / double(n) : 1.0;
  for (const auto& r : rows) {
    out << to_string(r.method) << ',' << r.k << ',' << detail::csv_number(r.mean_loss * scale)
        << ',' << detail::csv_number(r.stderr_ * scale) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Lower-bound study
// ---------------------------------------------------------------------------

struct LowerBoundReport {
  Index n = 0, d = 0, k = 0;
  std::size_t repetitions = 0;
  Method method = Method::Volume;
  double gamma = 0.0;
  double c = 0.0;
  double optimal_loss = 0.0;
  /// Fraction of repetitions with L(w) >= 1.5 L(w*).
  double probability_ratio_ge_1_5 = 0.0;
  double mean_ratio = 0.0;
  double ratio_stderr = 0.0;
  /// 1 + (n-k)/(n-d), the gamma -> 0 expectation under volume sampling.
  double predicted_mean_ratio = 0.0;
  std::size_t failures = 0;
};

inline LowerBoundReport run_lower_bound(Index n, Index d, double target_loss, Index k,
                                        std::size_t reps, std::uint64_t seed,
                                        Method method = Method::Volume, std::size_t jobs = 1) {
  ExperimentConfig cfg;
  cfg.dataset = std::string(kLowerBoundDataset);
  cfg.lowerbound = LowerBoundSpec{n, d, target_loss, std::nullopt};
  cfg.methods = {method};
  cfg.k_grid = {k};
  cfg.repetitions = reps;
  cfg.root_seed = seed;
  cfg.jobs = jobs;
  const Dataset ds = load_dataset(cfg);
  const LossCurveResult res = run_loss_curves(cfg, ds);

  LowerBoundReport rep;
  rep.n = n;
  rep.d = d;
  rep.k = k;
  rep.repetitions = reps;
  rep.method = method;
  rep.gamma = solve_gamma_for_loss(n, d, target_loss);
  const LowerBoundInstance inst = lower_bound_instance(n, d, rep.gamma);
  rep.c = inst.c;
  rep.optimal_loss = inst.optimal_loss;
  rep.failures = res.failures.size();
  std::size_t bad = 0;
  for (const auto& r : res.records) bad += r.loss >= 1.5 * res.optimal_loss ? 1 : 0;
  if (!res.records.empty()) {
    rep.probability_ratio_ge_1_5 = double(bad) / double(res.records.size());
    const auto rows = aggregate(res.records);
    rep.mean_ratio = rows.front().mean_ratio;
    rep.ratio_stderr = rows.front().ratio_stderr;
  }
  rep.predicted_mean_ratio = 1.0 + double(n - k) / double(n - d);
  return rep;
}

}  // namespace volsamp
