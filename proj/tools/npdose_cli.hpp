#pragma once

// Command-line front end of the npdose library. Kept in a header so the test
// suites can drive `run` in-process.

#include <npdose/bandwidth.hpp>
#include <npdose/bootstrap.hpp>
#include <npdose/bounds.hpp>
#include <npdose/estimators.hpp>
#include <npdose/io.hpp>
#include <npdose/simdata.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace npdose::cli {

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int
{
  kOk = 0,
  kRuntimeError = 1,
  kUsageError = 2
};

//! Everything a subcommand needs, filled by the argument parser.
struct RunConfig
{
  std::string subcommand;

  // input
  std::string input = "-";
  ColumnMapping mapping;
  bool drop_bad = false;

  // estimation parameters; unset bandwidths come from the selectors
  int q = 2;
  std::optional<double> h;
  std::vector<double> b;
  std::optional<double> hbar;
  double C_h = 10.0;
  double C_b = 15.0;
  bool scale_by_sd = false;
  std::string kernel_t = "epanechnikov";
  std::string kernel_s = "epanechnikov";
  std::string kernel_cdf = "gaussian";
  double trim_lo = 0.0;
  double trim_hi = 1.0;
  double ridge_tol = 1e-10;
  unsigned jobs = default_jobs();

  // estimators and bootstrap
  std::string estimator;
  bool bootstrap = false;
  int B = 1000;
  double alpha = 0.05;
  std::optional<std::uint64_t> seed;

  // simulate
  std::string model;
  long long n = 0;

  // bounds
  std::optional<double> rho1;
  std::optional<double> rho2;

  // output
  std::string out;
  std::string csv;
};

using nlohmann::json;

namespace detail {

inline std::optional<std::uint64_t>
env_seed()
{
  const char* v = std::getenv("NPDOSE_SEED");
  if (v == nullptr || *v == '\0')
    return std::nullopt;
  try {
    std::size_t used = 0;
    const auto s = std::stoull(v, &used);
    if (used != std::string(v).size())
      throw std::invalid_argument("trailing characters");
    return s;
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidArgument,
         std::string("NPDOSE_SEED is not an unsigned integer: ") + v);
  }
}

inline std::uint64_t
resolve_seed(const RunConfig& cfg)
{
  if (cfg.seed)
    return *cfg.seed;
  if (auto s = env_seed())
    return *s;
  return 0;
}

inline LoadedData
load_input(const RunConfig& cfg, std::istream& in)
{
  if (cfg.input == "-")
    return load_csv(in, cfg.mapping, cfg.drop_bad);
  return load_csv(cfg.input, cfg.mapping, cfg.drop_bad);
}

struct ResolvedParams
{
  EstimParams params;
  json sources;
  bool curvature_floored = false;
};

inline ResolvedParams
resolve_params(const RunConfig& cfg, const Dataset& data)
{
  ResolvedParams r;
  auto& p = r.params;
  p.q = cfg.q;
  p.kernel_t = parse_kernel(cfg.kernel_t);
  p.kernel_s = parse_kernel(cfg.kernel_s);
  p.kernel_cdf = parse_kernel(cfg.kernel_cdf);
  p.trim_lo = cfg.trim_lo;
  p.trim_hi = cfg.trim_hi;
  p.ridge_tol = cfg.ridge_tol;

  const bool need_rot =
    !cfg.h || (data.d() > 0 && cfg.b.empty());
  Bandwidths rot;
  if (need_rot) {
    RotOptions opt;
    opt.C_h = cfg.C_h;
    opt.C_b = cfg.C_b;
    opt.kernel_t = p.kernel_t;
    opt.kernel_s = p.kernel_s;
    opt.scale_by_sd = cfg.scale_by_sd;
    rot = rot_bandwidths(data, opt);
    r.curvature_floored = rot.curvature_floored;
  }
  p.h = cfg.h ? *cfg.h : rot.h;
  r.sources["h"] = cfg.h ? "user" : "rule_of_thumb";
  if (!cfg.b.empty()) {
    p.b = cfg.b;
    r.sources["b"] = "user";
  } else {
    p.b = rot.b;
    r.sources["b"] = "rule_of_thumb";
  }
  p.hbar = cfg.hbar ? *cfg.hbar : nr_bandwidth(data.t());
  r.sources["hbar"] = cfg.hbar ? "user" : "normal_reference";
  p.validate(data.d());
  return r;
}

inline json
params_json(const EstimParams& p)
{
  return json{ { "q", p.q },
               { "h", p.h },
               { "b", p.b },
               { "hbar", p.hbar },
               { "kernel_t", kernel_name(p.kernel_t) },
               { "kernel_s", kernel_name(p.kernel_s) },
               { "kernel_cdf", kernel_name(p.kernel_cdf) },
               { "trim_lo", p.trim_lo },
               { "trim_hi", p.trim_hi },
               { "ridge_tol", p.ridge_tol } };
}

inline json
curve_json(const CurveEstimate& c)
{
  json skipped = json::array();
  for (std::size_t k = 0; k < c.size(); ++k)
    if (c.skipped[k])
      skipped.push_back(k);
  return json{ { "estimator", estimator_name(c.tag) },
               { "grid", c.grid },
               { "values", c.values },
               { "skipped", skipped } };
}

inline json
bootstrap_json(const BootstrapResult& r)
{
  const auto pw = confidence_band(r, BandMode::Pointwise);
  const auto un = confidence_band(r, BandMode::Uniform);
  std::vector<double> plo, phi, ulo, uhi;
  for (std::size_t k = 0; k < pw.size(); ++k) {
    plo.push_back(pw[k].lo);
    phi.push_back(pw[k].hi);
    ulo.push_back(un[k].lo);
    uhi.push_back(un[k].hi);
  }
  return json{ { "B", r.B },
               { "alpha", r.alpha },
               { "successful_replicates", r.replicates.size() },
               { "pointwise_halfwidth", r.pointwise_halfwidth },
               { "uniform_halfwidth", r.uniform_halfwidth },
               { "pointwise_lo", plo },
               { "pointwise_hi", phi },
               { "uniform_lo", ulo },
               { "uniform_hi", uhi } };
}

inline std::vector<EstimatorTag>
estimator_tags(const std::string& spec,
               EstimatorTag level,
               EstimatorTag ra,
               EstimatorTag fallback)
{
  if (spec.empty())
    return { fallback };
  if (spec == "both")
    return { level, ra };
  std::vector<EstimatorTag> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(parse_estimator(item));
  return out;
}

inline void
emit(const RunConfig& cfg, const json& doc, std::ostream& out)
{
  const auto text = doc.dump(2);
  if (cfg.out.empty() || cfg.out == "-") {
    out << text << '\n';
    return;
  }
  std::ofstream f(cfg.out);
  if (!f)
    fail(ErrorCode::IoError, "cannot write '" + cfg.out + "'");
  f << text << '\n';
}

inline void
write_curves_csv(const std::string& path,
                 const std::vector<CurveEstimate>& curves,
                 const std::vector<const BootstrapResult*>& boots)
{
  std::ofstream f(path);
  if (!f)
    fail(ErrorCode::IoError, "cannot write '" + path + "'");
  const bool multi = curves.size() > 1;
  const bool with_ci = !boots.empty() && boots.front() != nullptr;
  if (multi)
    f << "estimator,";
  f << "grid,value";
  if (with_ci)
    f << ",lo,hi,uniform_lo,uniform_hi";
  f << '\n';
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto& curve = curves[c];
    std::vector<Interval> pw, un;
    if (with_ci) {
      pw = confidence_band(*boots[c], BandMode::Pointwise);
      un = confidence_band(*boots[c], BandMode::Uniform);
    }
    for (std::size_t k = 0; k < curve.size(); ++k) {
      if (multi)
        f << estimator_name(curve.tag) << ',';
      f << format_double(curve.grid[k]) << ','
        << (curve.skipped[k] ? std::string("NaN") : format_double(curve.values[k]));
      if (with_ci)
        f << ',' << format_double(pw[k].lo) << ',' << format_double(pw[k].hi)
          << ',' << format_double(un[k].lo) << ',' << format_double(un[k].hi);
      f << '\n';
    }
  }
}

inline int
run_simulate(const RunConfig& cfg, std::ostream& out)
{
  const auto model = sim_model(parse_sim_model(cfg.model));
  if (cfg.n < 1)
    fail(ErrorCode::InvalidArgument, "--n must be >= 1");
  const auto data = model.generate(cfg.n, resolve_seed(cfg));
  if (cfg.out.empty() || cfg.out == "-") {
    write_csv(out, data);
    return kOk;
  }
  std::ofstream f(cfg.out);
  if (!f)
    fail(ErrorCode::IoError, "cannot write '" + cfg.out + "'");
  write_csv(f, data);
  return kOk;
}

inline int
run_curves(const RunConfig& cfg, std::istream& in, std::ostream& out)
{
  const auto loaded = load_input(cfg, in);
  const auto& data = loaded.data;
  const auto resolved = resolve_params(cfg, data);

  std::vector<EstimatorTag> tags;
  bool with_bootstrap = cfg.bootstrap;
  if (cfg.subcommand == "estimate") {
    tags = estimator_tags(
      cfg.estimator, EstimatorTag::MTheta, EstimatorTag::MRA, EstimatorTag::MTheta);
  } else if (cfg.subcommand == "derivative") {
    tags = estimator_tags(
      cfg.estimator, EstimatorTag::ThetaC, EstimatorTag::ThetaRA, EstimatorTag::ThetaC);
  } else {
    tags = cfg.estimator.empty()
             ? std::vector{ EstimatorTag::MTheta, EstimatorTag::ThetaC }
             : estimator_tags(cfg.estimator,
                              EstimatorTag::MTheta,
                              EstimatorTag::ThetaC,
                              EstimatorTag::MTheta);
    with_bootstrap = true;
  }

  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["command"] = cfg.subcommand;
  json names = json::array();
  for (auto t : tags)
    names.push_back(estimator_name(t));
  doc["estimator"] = names;
  doc["n"] = data.n();
  doc["d"] = data.d();
  doc["covariates"] = loaded.s_names;
  doc["params"] = params_json(resolved.params);
  doc["bandwidth_source"] = resolved.sources;

  std::vector<CurveEstimate> curves;
  std::map<EstimatorTag, BootstrapResult> boots;
  std::size_t failed_replicates = 0;
  if (with_bootstrap) {
    BootstrapOptions opt;
    opt.B = cfg.B;
    opt.alpha = cfg.alpha;
    opt.seed = resolve_seed(cfg);
    opt.jobs = cfg.jobs;
    doc["seed"] = opt.seed;
    boots = bootstrap_curves(data, resolved.params, tags, opt);
    for (auto t : tags)
      curves.push_back(boots.at(t).base);
    failed_replicates = boots.begin()->second.failed_replicates;
  } else {
    doc["seed"] = nullptr;
    auto est = estimate_curves(data, resolved.params, tags, cfg.jobs);
    for (auto t : tags)
      curves.push_back(est.at(t));
  }

  json jcurves = json::array();
  std::size_t dropped = 0, skipped = 0, rank_def = 0;
  std::vector<const BootstrapResult*> boot_ptrs;
  for (const auto& c : curves) {
    auto jc = curve_json(c);
    if (with_bootstrap) {
      jc["bootstrap"] = bootstrap_json(boots.at(c.tag));
      boot_ptrs.push_back(&boots.at(c.tag));
    }
    jcurves.push_back(std::move(jc));
    dropped = std::max(dropped, c.diagnostics.dropped_fits);
    skipped += c.diagnostics.skipped_points;
    rank_def = std::max(rank_def, c.diagnostics.rank_deficient_fits);
  }
  doc["curves"] = jcurves;
  doc["diagnostics"] = json{ { "dropped_fits", dropped },
                             { "failed_replicates", failed_replicates },
                             { "skipped_points", skipped },
                             { "rank_deficient_fits", rank_def },
                             { "curvature_floored", resolved.curvature_floored },
                             { "dropped_rows", loaded.dropped_rows } };
  if (!cfg.csv.empty())
    write_curves_csv(cfg.csv, curves, boot_ptrs);
  emit(cfg, doc, out);
  return kOk;
}

inline int
run_bandwidth(const RunConfig& cfg, std::istream& in, std::ostream& out)
{
  const auto loaded = load_input(cfg, in);
  const auto& data = loaded.data;
  RotOptions opt;
  opt.C_h = cfg.C_h;
  opt.C_b = cfg.C_b;
  opt.kernel_t = parse_kernel(cfg.kernel_t);
  opt.kernel_s = parse_kernel(cfg.kernel_s);
  opt.scale_by_sd = cfg.scale_by_sd;
  const auto inputs = rot_inputs(data, opt);
  const auto bw = rot_bandwidths(data, opt);
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["command"] = "bandwidth";
  doc["n"] = data.n();
  doc["d"] = data.d();
  doc["h"] = bw.h;
  doc["b"] = bw.b;
  doc["hbar"] = nr_bandwidth(data.t());
  doc["C_h"] = cfg.C_h;
  doc["C_b"] = cfg.C_b;
  doc["scale_by_sd"] = cfg.scale_by_sd;
  doc["rhat"] = inputs.rhat;
  doc["curvature_t"] = inputs.curvature_t;
  doc["curvature_s"] = inputs.curvature_s;
  doc["diagnostics"] = json{ { "curvature_floored", bw.curvature_floored },
                             { "dropped_rows", loaded.dropped_rows } };
  emit(cfg, doc, out);
  return kOk;
}

//! Level-set table with columns s_1..s_d, mu, v_1..v_d, g_1..g_d.
inline LevelSetSample
load_level_set(std::istream& in)
{
  std::string line;
  if (!std::getline(in, line))
    fail(ErrorCode::EmptyData, "level-set input has no header row");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ','))
      header.emplace_back(npdose::detail::trim_ws(f));
  }
  std::size_t d = 0;
  while (std::find(header.begin(), header.end(), "s_" + std::to_string(d + 1)) !=
         header.end())
    ++d;
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      fail(ErrorCode::MissingColumn, "column '" + name + "' not found in header");
    return static_cast<std::size_t>(it - header.begin());
  };
  if (d == 0)
    fail(ErrorCode::MissingColumn, "level-set input needs columns s_1..s_d");
  const auto mu_idx = column("mu");
  std::vector<std::size_t> s_idx, v_idx, g_idx;
  for (std::size_t j = 1; j <= d; ++j) {
    s_idx.push_back(column("s_" + std::to_string(j)));
    v_idx.push_back(column("v_" + std::to_string(j)));
    g_idx.push_back(column("g_" + std::to_string(j)));
  }

  LevelSetSample sample;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (npdose::detail::trim_ws(line).empty())
      continue;
    const auto cells = npdose::detail::split_csv(line);
    if (cells.size() != header.size())
      fail(ErrorCode::ParseError,
           "line " + std::to_string(line_no) + ": wrong number of fields");
    auto num = [&](std::size_t k) {
      double v = 0.0;
      if (!npdose::detail::parse_finite(cells[k], v))
        fail(ErrorCode::ParseError,
             "line " + std::to_string(line_no) + ": cell '" +
               std::string(cells[k]) + "' is not a finite number");
      return v;
    };
    LevelSetPoint p;
    p.mu_val = num(mu_idx);
    for (std::size_t j = 0; j < d; ++j) {
      p.s.push_back(num(s_idx[j]));
      p.v.push_back(num(v_idx[j]));
      p.g.push_back(num(g_idx[j]));
    }
    sample.points.push_back(std::move(p));
  }
  if (sample.points.empty())
    fail(ErrorCode::EmptyData, "level-set input contains no rows");
  return sample;
}

inline int
run_bounds(const RunConfig& cfg, std::istream& in, std::ostream& out)
{
  if (!cfg.rho1 && !cfg.rho2)
    fail(ErrorCode::InvalidArgument, "bounds needs --rho1 and/or --rho2");
  LevelSetSample sample;
  if (cfg.input == "-") {
    sample = load_level_set(in);
  } else {
    std::ifstream f(cfg.input);
    if (!f)
      fail(ErrorCode::IoError, "cannot open '" + cfg.input + "'");
    sample = load_level_set(f);
  }

  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["command"] = "bounds";
  doc["points"] = sample.points.size();
  auto one = [&](const char* name, auto&& compute, std::optional<double> rho) {
    const std::string lo = std::string(name) + "_lo";
    const std::string hi = std::string(name) + "_hi";
    const std::string status = std::string(name) + "_status";
    if (!rho) {
      doc[lo] = nullptr;
      doc[hi] = nullptr;
      doc[status] = "not_requested";
      return;
    }
    try {
      const auto iv = compute(*rho);
      doc[lo] = iv.lo;
      doc[hi] = iv.hi;
      doc[status] = "ok";
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyInterval)
        throw;
      doc[lo] = nullptr;
      doc[hi] = nullptr;
      doc[status] = "empty";
    }
  };
  one("m", [&](double r) { return m_bound(sample, r); }, cfg.rho1);
  one("theta", [&](double r) { return theta_bound(sample, r); }, cfg.rho2);
  doc["rho1"] = cfg.rho1 ? json(*cfg.rho1) : json(nullptr);
  doc["rho2"] = cfg.rho2 ? json(*cfg.rho2) : json(nullptr);
  emit(cfg, doc, out);
  return kOk;
}

inline void
add_input_options(CLI::App* app, RunConfig& cfg)
{
  app->add_option("--input,-i", cfg.input, "CSV input file ('-' for stdin)");
  app->add_option("--y-col", cfg.mapping.y_col, "Outcome column name");
  app->add_option("--t-col", cfg.mapping.t_col, "Treatment column name");
  app->add_option("--s-cols", cfg.mapping.s_cols,
                  "Covariate column names (default: all other columns)")
    ->delimiter(',');
  app->add_flag("--drop-bad", cfg.drop_bad,
                "Skip rows with missing or non-numeric cells instead of failing");
}

inline void
add_selector_options(CLI::App* app, RunConfig& cfg)
{
  app->add_option("--Ch", cfg.C_h, "Scale constant of the rule-of-thumb h");
  app->add_option("--Cb", cfg.C_b, "Scale constant of the rule-of-thumb b");
  app->add_flag("--scale-by-sd", cfg.scale_by_sd,
                "Multiply h and b by the sample standard deviations of T and S");
  app->add_option("--kernel-t", cfg.kernel_t, "Treatment kernel");
  app->add_option("--kernel-s", cfg.kernel_s, "Covariate kernel");
}

inline void
add_estimation_options(CLI::App* app, RunConfig& cfg)
{
  add_input_options(app, cfg);
  add_selector_options(app, cfg);
  app->add_option("--q", cfg.q, "Local polynomial order in T")->check(CLI::PositiveNumber);
  app->add_option("--h", cfg.h, "Treatment bandwidth (default: rule of thumb)");
  app->add_option("--b", cfg.b, "Covariate bandwidths, one per covariate")
    ->delimiter(',');
  app->add_option("--hbar", cfg.hbar,
                  "Conditional CDF bandwidth (default: normal reference)");
  app->add_option("--kernel-cdf", cfg.kernel_cdf, "Conditional CDF kernel");
  app->add_option("--trim-lo", cfg.trim_lo, "Lower treatment quantile of the reported region");
  app->add_option("--trim-hi", cfg.trim_hi, "Upper treatment quantile of the reported region");
  app->add_option("--ridge-tol", cfg.ridge_tol, "Relative rank tolerance of the local solve");
  app->add_option("--jobs,-j", cfg.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app->add_option("--B", cfg.B, "Bootstrap replicates")->check(CLI::PositiveNumber);
  app->add_option("--alpha", cfg.alpha, "Significance level");
  app->add_option("--seed", cfg.seed, "Bootstrap seed (fallback: NPDOSE_SEED)");
  app->add_option("--out,-o", cfg.out, "JSON output file (default: stdout)");
  app->add_option("--csv", cfg.csv, "Also write the curves as CSV");
}

} // namespace detail

//! Parses argv and dispatches. Returns the process exit code; errors are
//! written to `err` as JSON.
inline int
run(int argc,
    const char* const* argv,
    std::istream& in = std::cin,
    std::ostream& out = std::cout,
    std::ostream& err = std::cerr)
{
  RunConfig cfg;
  CLI::App app{ "Dose-response curves and derivatives without positivity", "npdose" };
  // "-h" would clash with the bandwidth option "--h"
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);

  auto* simulate = app.add_subcommand("simulate", "Generate a simulated dataset");
  simulate->add_option("--model", cfg.model, "single, linear or nonlinear")->required();
  simulate->add_option("--n", cfg.n, "Sample size")->required();
  simulate->add_option("--seed", cfg.seed, "Seed (fallback: NPDOSE_SEED)");
  simulate->add_option("--out,-o", cfg.out, "CSV output file (default: stdout)");

  auto* estimate = app.add_subcommand("estimate", "Dose-response curve m(t)");
  detail::add_estimation_options(estimate, cfg);
  estimate->add_option("--estimator", cfg.estimator, "m_theta, m_RA or both");
  estimate->add_flag("--bootstrap", cfg.bootstrap, "Add bootstrap intervals and bands");

  auto* derivative = app.add_subcommand("derivative", "Derivative curve theta(t)");
  detail::add_estimation_options(derivative, cfg);
  derivative->add_option("--estimator", cfg.estimator, "theta_C, theta_RA or both");
  derivative->add_flag("--bootstrap", cfg.bootstrap, "Add bootstrap intervals and bands");

  auto* boot = app.add_subcommand("bootstrap", "Curves with bootstrap intervals and bands");
  detail::add_estimation_options(boot, cfg);
  boot->add_option("--estimator", cfg.estimator,
                   "Comma list of estimators (default: m_theta,theta_C)");

  auto* bandwidth = app.add_subcommand("bandwidth", "Rule-of-thumb and normal-reference bandwidths");
  detail::add_input_options(bandwidth, cfg);
  detail::add_selector_options(bandwidth, cfg);
  bandwidth->add_option("--out,-o", cfg.out, "JSON output file (default: stdout)");

  auto* bounds = app.add_subcommand("bounds", "Bounds on m(t) and theta(t) from a level-set sample");
  bounds->add_option("--input,-i", cfg.input, "Level-set CSV ('-' for stdin)");
  bounds->add_option("--rho1", cfg.rho1, "Bound on the random effect");
  bounds->add_option("--rho2", cfg.rho2, "Bound on the random-effect gradient");
  bounds->add_option("--out,-o", cfg.out, "JSON output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  for (auto* sub : app.get_subcommands())
    cfg.subcommand = sub->get_name();

  try {
    if (cfg.subcommand == "simulate")
      return detail::run_simulate(cfg, out);
    if (cfg.subcommand == "bandwidth")
      return detail::run_bandwidth(cfg, in, out);
    if (cfg.subcommand == "bounds")
      return detail::run_bounds(cfg, in, out);
    return detail::run_curves(cfg, in, out);
  } catch (const Error& e) {
    err << json{ { "error", to_string(e.code()) }, { "message", e.what() } }.dump()
        << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << json{ { "error", "InternalError" }, { "message", e.what() } }.dump()
        << '\n';
    return kRuntimeError;
  }
}

} // namespace npdose::cli
