#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "volsamp/errors.hpp"
#include "volsamp/estimators.hpp"
#include "volsamp/experiments.hpp"
#include "volsamp/rng.hpp"
#include "volsamp/sampling.hpp"
#include "volsamp/verification.hpp"

namespace volsamp {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kCheckFailed = 1;
inline constexpr int kInputError = 2;
inline constexpr int kRuntimeError = 3;
}  // namespace exit_code

namespace detail {

/// --seed, else VOLSAMP_SEED, else 0.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("VOLSAMP_SEED"); env && *env) {
    std::uint64_t v = 0;
    const std::string_view s(env);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      fail(ErrorKind::ConfigError, "VOLSAMP_SEED is not an unsigned integer: '" + std::string(s) + "'");
    }
    return v;
  }
  return 0;
}

/// Writes to the file at `path`, or to `fallback` when the path is empty or "-".
class OutputTarget {
 public:
  OutputTarget(const std::string& path, std::ostream& fallback) {
    if (path.empty() || path == "-") {
      stream_ = &fallback;
    } else {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) fail(ErrorKind::ConfigError, "cannot write '" + path + "'");
      stream_ = file_.get();
    }
  }
  std::ostream& get() { return *stream_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_ = nullptr;
};

inline nlohmann::json sample_json(const SampleSequence& s) {
  return {{"indices", s.indices}, {"weights", s.rescale_weights}};
}

inline nlohmann::json finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? nlohmann::json("nan") : nlohmann::json(v > 0 ? "inf" : "-inf");
}

inline FastSamplerOptions fast_options(const std::string& sketch) {
  FastSamplerOptions opt;
  opt.sketch = sketch == "gaussian" ? SketchKind::Gaussian : SketchKind::Exact;
  return opt;
}

struct SampleOutcome {
  UsedSample sample;
  nlohmann::json json;
};

inline SampleOutcome draw_for_method(Method method, const Matrix& X, Index k, RngState& rng,
                                     std::optional<double> eps, const std::string& sketch) {
  SampleOutcome out;
  switch (method) {
    case Method::Volume: {
      const SubsetSample s = volume_sample(X, k, rng);
      out.sample = s;
      out.json = {{"indices", s.indices}};
      break;
    }
    case Method::LeverageIid: {
      const SampleSequence s =
          leverage_iid_sample(RescalingDistribution::leveraged(leverage_scores(X)), k, rng);
      out.sample = s;
      out.json = sample_json(s);
      break;
    }
    case Method::LeveragedVolume: {
      const SampleSequence s = leveraged_volume_sample(X, k, rng);
      out.sample = s;
      out.json = sample_json(s);
      break;
    }
    case Method::FastLeveragedVolume: {
      const double e = eps ? *eps : default_fast_epsilon(static_cast<Index>(X.cols()));
      const SampleSequence s = fast_leveraged_volume_sample(X, k, e, rng, fast_options(sketch));
      out.sample = s;
      out.json = sample_json(s);
      break;
    }
  }
  return out;
}

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{
      "volume", "leverage-iid", "leveraged-volume", "fast-leveraged-volume",
      "leverage_iid", "leveraged_volume", "fast_leveraged_volume"};
  return names;
}

}  // namespace detail

/// Runs the command line `args` (without the program name). Machine-readable
/// results go to `out`, diagnostics to `err`. Returns the process exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Volume sampling for subsampled least squares", "volsamp"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "volsamp 1.0");

  std::optional<std::uint64_t> seed_flag;
  std::string format_name = "auto";
  std::size_t jobs = 1;

  // sample
  auto* sample = app.add_subcommand("sample", "Draw a sample of row indices");
  std::string sample_input, sample_method, sample_out, sketch = "exact";
  Index sample_k = 0;
  std::optional<double> epsilon;
  sample->add_option("matrix", sample_input, "Matrix file (libsvm or dense)")->required();
  sample->add_option("--method", sample_method, "Sampling method")
      ->required()
      ->check(CLI::IsMember(detail::method_names()));
  sample->add_option("--k", sample_k, "Sample size")->required();
  sample->add_option("--seed", seed_flag, "RNG seed (default: $VOLSAMP_SEED or 0)");
  sample->add_option("--out", sample_out, "Output file (default: stdout)");
  sample->add_option("--format", format_name, "Input format")
      ->check(CLI::IsMember({"auto", "libsvm", "dense"}));
  sample->add_option("--epsilon", epsilon, "Spectral accuracy for the fast method");
  sample->add_option("--fast-sketch", sketch, "Gram approximation for the fast method")
      ->check(CLI::IsMember({"gaussian", "exact"}));

  // estimate
  auto* estimate = app.add_subcommand("estimate", "Subsampled least-squares estimate");
  std::string est_input, est_method = "leveraged-volume", est_out;
  Index est_k = 0;
  bool intercept = false;
  estimate->add_option("data", est_input, "Data file (libsvm, or dense with response first)")
      ->required();
  estimate->add_option("--method", est_method, "Sampling method, or 'full'")
      ->check(CLI::IsMember([] {
        auto names = detail::method_names();
        names.push_back("full");
        return names;
      }()));
  estimate->add_option("--k", est_k, "Sample size");
  estimate->add_option("--seed", seed_flag, "RNG seed (default: $VOLSAMP_SEED or 0)");
  estimate->add_option("--out", est_out, "Output file (default: stdout)");
  estimate->add_option("--format", format_name, "Input format")
      ->check(CLI::IsMember({"auto", "libsvm", "dense"}));
  estimate->add_flag("--intercept", intercept, "Prepend a constant-1 column");
  estimate->add_option("--epsilon", epsilon, "Spectral accuracy for the fast method");
  estimate->add_option("--fast-sketch", sketch, "Gram approximation for the fast method")
      ->check(CLI::IsMember({"gaussian", "exact"}));

  // verify
  auto* verify = app.add_subcommand("verify", "Run identity and statistical checks");
  std::string suite = "all", verify_out;
  bool inject = false;
  verify->add_option("--suite", suite, "Check suite")
      ->check(CLI::IsMember({"identities", "statistical", "all"}));
  verify->add_option("--seed", seed_flag, "RNG seed (default: $VOLSAMP_SEED or 0)");
  verify->add_option("--out", verify_out, "Output file (default: stdout)");
  verify->add_option("--jobs", jobs, "Worker threads");
  verify->add_flag("--inject-tolerance-failure", inject,
                   "Test mode: corrupt identity tolerances so checks fail");

  // experiment
  auto* experiment = app.add_subcommand("experiment", "Run a loss-curve experiment");
  std::string config_path, records_out, summary_out;
  std::optional<std::size_t> exp_jobs;
  bool per_row = false;
  experiment->add_option("config", config_path, "JSON config")->required();
  experiment->add_option("--jobs", exp_jobs, "Worker threads (overrides config)");
  experiment->add_option("--records-out", records_out, "Records CSV (overrides config)");
  experiment->add_option("--summary-out", summary_out, "Summary CSV (overrides config)");
  experiment->add_flag("--per-row", per_row, "Divide losses by n");

  // lowerbound
  auto* lowerbound = app.add_subcommand("lowerbound", "Study the lower-bound instance");
  Index lb_n = 100, lb_d = 10, lb_k = 50;
  double target_loss = 2.0 / 3.0;
  std::size_t reps = 1000;
  std::string lb_method = "volume";
  lowerbound->add_option("--n", lb_n, "Rows")->capture_default_str();
  lowerbound->add_option("--d", lb_d, "Columns; must divide n")->capture_default_str();
  lowerbound->add_option("--target-loss", target_loss, "Optimal loss to calibrate gamma to");
  lowerbound->add_option("--k", lb_k, "Sample size")->capture_default_str();
  lowerbound->add_option("--reps", reps, "Repetitions")->capture_default_str();
  lowerbound->add_option("--seed", seed_flag, "RNG seed (default: $VOLSAMP_SEED or 0)");
  lowerbound->add_option("--method", lb_method, "Sampling method")
      ->check(CLI::IsMember(detail::method_names()));
  lowerbound->add_option("--jobs", jobs, "Worker threads");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::kOk : exit_code::kInputError;
  }

  try {
    const std::uint64_t seed = detail::resolve_seed(seed_flag);
    const DataFormat format = parse_format(format_name);

    if (*sample) {
      const Matrix X = load_matrix(sample_input, format);
      const Method method = *parse_method(sample_method);
      RngState rng(seed);
      auto outcome = detail::draw_for_method(method, X, sample_k, rng, epsilon, sketch);
      nlohmann::json j = {{"method", to_string(method)}, {"k", sample_k}, {"seed", seed}};
      j.update(outcome.json);
      detail::OutputTarget target(sample_out, out);
      target.get() << j.dump() << '\n';
      return exit_code::kOk;
    }

    if (*estimate) {
      LoadOptions lopt;
      lopt.intercept = intercept;
      const RegressionProblem p = load_problem(est_input, format, lopt);
      const EstimatorResult full = full_least_squares(p);
      nlohmann::json j;
      if (est_method == "full") {
        j = {{"method", "full"}, {"weights", std::vector<double>(full.weights.data(), full.weights.data() + full.weights.size())},
             {"loss", full.loss}, {"loss_ratio", 1.0}, {"optimal_loss", full.loss}};
      } else {
        const Method method = *parse_method(est_method);
        if (est_k == 0) fail(ErrorKind::ConfigError, "--k is required for sampling methods");
        RngState rng(seed);
        auto outcome = detail::draw_for_method(method, p.X, est_k, rng, epsilon, sketch);
        const EstimatorResult r =
            std::holds_alternative<SubsetSample>(outcome.sample)
                ? subset_estimator(p, std::get<SubsetSample>(outcome.sample), full.loss)
                : rescaled_estimator(p, std::get<SampleSequence>(outcome.sample), full.loss);
        j = {{"method", to_string(method)},
             {"k", est_k},
             {"seed", seed},
             {"weights", std::vector<double>(r.weights.data(), r.weights.data() + r.weights.size())},
             {"loss", r.loss},
             {"loss_ratio", detail::finite_or_string(r.loss_ratio)},
             {"optimal_loss", full.loss},
             {"sample", outcome.json}};
      }
      detail::OutputTarget target(est_out, out);
      target.get() << j.dump() << '\n';
      return exit_code::kOk;
    }

    if (*verify) {
      VerifyOptions vopt;
      vopt.seed = seed;
      vopt.jobs = jobs;
      vopt.inject_tolerance_failure = inject;
      std::vector<CheckReport> reports;
      if (suite == "identities" || suite == "all") {
        auto r = identity_suite(vopt);
        reports.insert(reports.end(), r.begin(), r.end());
      }
      if (suite == "statistical" || suite == "all") {
        auto r = statistical_suite(vopt);
        reports.insert(reports.end(), r.begin(), r.end());
      }
      detail::OutputTarget target(verify_out, out);
      std::size_t failed = 0;
      for (const auto& r : reports) {
        target.get() << to_json(r).dump() << '\n';
        if (!r.passed) {
          ++failed;
          err << "FAILED " << r.name << ": " << r.detail << '\n';
        }
      }
      err << reports.size() - failed << "/" << reports.size() << " checks passed\n";
      return failed == 0 ? exit_code::kOk : exit_code::kCheckFailed;
    }

    if (*experiment) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      if (exp_jobs) cfg.jobs = std::max<std::size_t>(1, *exp_jobs);
      if (!records_out.empty()) cfg.records_out = records_out;
      if (!summary_out.empty()) cfg.summary_out = summary_out;
      if (per_row) cfg.per_row = true;
      const Dataset ds = load_dataset(cfg);
      const LossCurveResult res = run_loss_curves(cfg, ds);
      {
        detail::OutputTarget records(cfg.records_out, out);
        write_records_csv(records.get(), res.records, cfg.per_row, res.n);
      }
      {
        detail::OutputTarget summary(cfg.summary_out, out);
        write_summary_csv(summary.get(), aggregate(res.records), cfg.per_row, res.n);
      }
      for (const auto& f : res.failures) {
        err << "record failed: method=" << to_string(f.method) << " k=" << f.k
            << " repetition=" << f.repetition << " " << to_string(f.kind) << ": " << f.message
            << '\n';
      }
      return res.failures.empty() ? exit_code::kOk : exit_code::kRuntimeError;
    }

    if (*lowerbound) {
      const Method method = *parse_method(lb_method);
      const LowerBoundReport r =
          run_lower_bound(lb_n, lb_d, target_loss, lb_k, reps, seed, method, jobs);
      const nlohmann::json j = {
          {"n", r.n},
          {"d", r.d},
          {"k", r.k},
          {"method", to_string(r.method)},
          {"repetitions", r.repetitions},
          {"seed", seed},
          {"gamma", r.gamma},
          {"c", r.c},
          {"optimal_loss", r.optimal_loss},
          {"probability_ratio_ge_1_5", r.probability_ratio_ge_1_5},
          {"mean_ratio", r.mean_ratio},
          {"ratio_stderr", detail::finite_or_string(r.ratio_stderr)},
          {"predicted_mean_ratio", r.predicted_mean_ratio},
          {"failures", r.failures}};
      out << j.dump() << '\n';
      return r.failures == 0 ? exit_code::kOk : exit_code::kRuntimeError;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    if (e.is_input_error()) return exit_code::kInputError;
    return exit_code::kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kRuntimeError;
  }
  return exit_code::kInputError;
}

}  // namespace volsamp
