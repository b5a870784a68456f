// Acceptance criteria, one PASS/FAIL line each.
//
//   acceptance                 run every criterion
//   acceptance NAME [NAME...]  run the named criteria
//
// Exit status is nonzero when any selected criterion fails.

#include "npdose_cli.hpp"

#include <npdose/bandwidth.hpp>
#include <npdose/bootstrap.hpp>
#include <npdose/bounds.hpp>
#include <npdose/estimators.hpp>
#include <npdose/locpoly.hpp>
#include <npdose/simdata.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

using namespace npdose;

namespace {

struct Outcome
{
  bool pass;
  std::string detail;
};

std::string
fmt(const char* format, auto... args)
{
  char buf[512];
  std::snprintf(buf, sizeof(buf), format, args...);
  return buf;
}

double
median(std::vector<double> v)
{
  std::sort(v.begin(), v.end());
  const auto m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

//! Root mean squared error of `curve` against `truth` over grid points in
//! [lo, hi].
double
rmse(const CurveEstimate& curve, double (*truth)(double), double lo, double hi)
{
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    if (curve.grid[k] < lo || curve.grid[k] > hi || curve.skipped[k])
      continue;
    const double e = curve.values[k] - truth(curve.grid[k]);
    acc += e * e;
    ++count;
  }
  return std::sqrt(acc / static_cast<double>(count));
}

//! Central 80% of the observed treatment range.
std::pair<double, double>
interior(const Dataset& data)
{
  const double lo = data.t().minCoeff(), hi = data.t().maxCoeff();
  const double pad = 0.1 * (hi - lo);
  return { lo + pad, hi - pad };
}

// ---------------------------------------------------------------------------

Outcome
kernel_golden()
{
  const double k2 = kernel_moment(KernelKind::Epanechnikov, 2);
  const double nu_e = kernel_sq_moment(KernelKind::Epanechnikov, 0);
  const double nu_g = kernel_sq_moment(KernelKind::Gaussian, 0);
  const double nu_g_ref = 1.0 / (2.0 * std::sqrt(std::numbers::pi));
  const double err = std::max(
    { std::abs(k2 - 0.2), std::abs(nu_e - 0.6), std::abs(nu_g - nu_g_ref) });
  return { err <= 1e-12,
           fmt("kappa2=%.17g nu0_epa=%.17g nu0_gauss=%.17g max_err=%.3g", k2, nu_e, nu_g, err) };
}

Outcome
wls_correctness()
{
  RandomStream rng(20240601);
  double worst_residual = 0.0, worst_exact = 0.0;
  int full_rank = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = static_cast<Eigen::Index>(rng.index(3));
    const int q = 1 + static_cast<int>(rng.index(3));
    const auto n = static_cast<Eigen::Index>(50 + rng.index(250));
    std::vector<double> poly(static_cast<std::size_t>(q + 1)), lin(static_cast<std::size_t>(d));
    for (auto& c : poly)
      c = rng.uniform(-3, 3);
    for (auto& c : lin)
      c = rng.uniform(-3, 3);
    Eigen::VectorXd t(n), y_noisy(n), y_exact(n);
    RowMatrix s(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      t(i) = rng.uniform(-1, 1);
      double v = 0.0, pw = 1.0;
      for (double c : poly) {
        v += c * pw;
        pw *= t(i);
      }
      for (Eigen::Index j = 0; j < d; ++j) {
        s(i, j) = rng.uniform(-1, 1);
        v += lin[static_cast<std::size_t>(j)] * s(i, j);
      }
      y_exact(i) = v;
      y_noisy(i) = v + rng.normal();
    }
    const Dataset noisy(y_noisy, t, s), exact(y_exact, t, s);
    EstimParams p;
    p.q = q;
    p.h = rng.uniform(0.3, 1.5);
    p.b.assign(static_cast<std::size_t>(d), rng.uniform(0.5, 2.0));
    p.kernel_t = rng.uniform() < 0.3 ? KernelKind::Gaussian : KernelKind::Epanechnikov;
    p.kernel_s = rng.uniform() < 0.3 ? KernelKind::Gaussian : KernelKind::Epanechnikov;
    const double t0 = rng.uniform(-0.8, 0.8);
    std::vector<double> s0(static_cast<std::size_t>(d));
    for (auto& v : s0)
      v = rng.uniform(-0.5, 0.5);

    const auto fit = LocalPolyFitter(noisy, p).try_fit(t0, s0);
    const auto fit_exact = LocalPolyFitter(exact, p).try_fit(t0, s0);
    if (!fit || !fit_exact)
      return { false, fmt("configuration %d has no local data", rep) };
    if (fit->rank_deficient || fit_exact->rank_deficient)
      continue;
    ++full_rank;

    // residual of the weighted normal equations in original coordinates
    const auto dim = q + 1 + d;
    Eigen::VectorXd coef(dim);
    coef << fit->beta, fit->alpha;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim), xwy = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      double w = eval_kernel(p.kernel_t, (t(i) - t0) / p.h);
      for (Eigen::Index j = 0; j < d; ++j)
        w *= eval_kernel(p.kernel_s, (s(i, j) - s0[static_cast<std::size_t>(j)]) / p.b[static_cast<std::size_t>(j)]);
      if (w == 0.0)
        continue;
      const auto x = build_design_row(t0, s0, t(i), noisy.s_row(i), q);
      grad += w * x * (y_noisy(i) - x.dot(coef));
      xwy += w * x * y_noisy(i);
    }
    worst_residual = std::max(worst_residual, grad.norm() / (1.0 + xwy.norm()));

    double mu = 0.0, deriv = 0.0, pw = 1.0;
    for (int k = 0; k <= q; ++k) {
      mu += poly[static_cast<std::size_t>(k)] * pw;
      if (k + 1 <= q)
        deriv += (k + 1) * poly[static_cast<std::size_t>(k + 1)] * pw;
      pw *= t0;
    }
    for (Eigen::Index j = 0; j < d; ++j)
      mu += lin[static_cast<std::size_t>(j)] * s0[static_cast<std::size_t>(j)];
    worst_exact = std::max({ worst_exact,
                             std::abs(mu_hat(*fit_exact) - mu),
                             std::abs(beta2_hat(*fit_exact) - deriv) });
  }
  const bool pass = worst_residual <= 1e-8 && worst_exact <= 1e-6 && full_rank >= 90;
  return { pass,
           fmt("configs=100 full_rank=%d max_normal_eq_residual=%.3g (<=1e-8) "
               "max_exactness_err=%.3g (<=1e-6)",
               full_rank, worst_residual, worst_exact) };
}

Outcome
riemann_vs_oracle()
{
  const auto model = sim_model(SimModelTag::SingleConf);
  auto max_gap = [&](Eigen::Index n, std::uint64_t seed) {
    const auto data = model.generate(n, seed);
    const auto params = default_params(data);
    const auto fast = m_theta_fast(data, theta_C_full(data, params));
    const auto oracle =
      m_theta_quadrature_oracle(data, params, 20 * static_cast<std::size_t>(n));
    double gap = 0.0;
    for (std::size_t k = 0; k < fast.size(); ++k)
      gap = std::max(gap, std::abs(fast.values[k] - oracle.values[k]));
    return gap;
  };
  std::vector<double> small, large;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    small.push_back(max_gap(200, seed));
    large.push_back(max_gap(400, seed));
  }
  const double m200 = median(small), m400 = median(large);
  return { m400 <= 3.0 * m200,
           fmt("median max|fast-oracle|: n=200 %.4g, n=400 %.4g, ratio %.3f (<=3)",
               m200, m400, m400 / m200) };
}

Outcome
consecutive_difference()
{
  RandomStream rng(7);
  double worst = 0.0;
  auto check = [&](const Dataset& data, const CurveEstimate& theta) {
    const auto m = m_theta_fast(data, theta);
    // the identity is stated over the (possibly tied) order statistics
    std::vector<double> ts(data.t().data(), data.t().data() + data.n());
    std::sort(ts.begin(), ts.end());
    const auto n = ts.size();
    const double nn = static_cast<double>(n);
    auto at = [&](const std::vector<double>& grid, const std::vector<double>& v, double t) {
      return v[static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), t) -
                                        grid.begin())];
    };
    for (std::size_t j = 0; j + 1 < n; ++j) {
      const double lhs = at(m.grid, m.values, ts[j + 1]) - at(m.grid, m.values, ts[j]);
      const double rhs = (ts[j + 1] - ts[j]) / nn *
                         (static_cast<double>(j + 1) * at(theta.grid, theta.values, ts[j]) +
                          (nn - static_cast<double>(j + 1)) *
                            at(theta.grid, theta.values, ts[j + 1]));
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  };
  for (int rep = 0; rep < 50; ++rep) {
    const auto n = static_cast<Eigen::Index>(2 + rng.index(500));
    Eigen::VectorXd y(n), t(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      // a share of tied treatments
      t(i) = rep % 3 == 0 ? std::round(rng.uniform(-2, 2) * 10) / 10 : rng.uniform(-2, 2);
      y(i) = rng.normal();
    }
    const Dataset data(y, t);
    CurveEstimate theta;
    theta.grid = order_statistics(data.t());
    for (std::size_t k = 0; k < theta.grid.size(); ++k)
      theta.values.push_back(rng.uniform(-10, 10));
    theta.skipped.assign(theta.grid.size(), 0);
    check(data, theta);
  }
  // and on an estimated curve
  const auto data = sim_model(SimModelTag::SingleConf).generate(300, 3);
  check(data, theta_C_full(data, default_params(data)));
  return { worst <= 1e-12, fmt("max identity violation %.3g (<=1e-12)", worst) };
}

Outcome
mean_anchoring()
{
  const auto data = sim_model(SimModelTag::SingleConf).generate(500, 1);
  const auto params = default_params(data);
  const auto m = m_theta_quadrature_oracle(data, params, 20 * 500);
  double mean = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i)
    mean += m_theta_interpolate(m, data.t()(i));
  mean /= static_cast<double>(data.n());
  const double ybar = data.y().mean();
  const double err = std::abs(mean - ybar);
  const double tol = 1e-3 * (1.0 + std::abs(ybar));
  return { err <= tol, fmt("|mean m_theta(T_j) - Ybar| = %.3g (<= %.3g)", err, tol) };
}

// thresholds pinned from a pilot run over the same seeds (medians 0.163 and
// 0.146), with 1.5x headroom
constexpr double kFig2MThetaThreshold = 0.25;
constexpr double kFig2ThetaCThreshold = 0.22;

Outcome
figure2()
{
  const auto model = sim_model(SimModelTag::SingleConf);
  const EstimatorTag tags[] = {
    EstimatorTag::MTheta, EstimatorTag::ThetaC, EstimatorTag::MRA, EstimatorTag::ThetaRA
  };
  std::vector<double> m_theta, theta_c, m_ra, theta_ra;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto data = model.generate(2000, seed);
    const auto curves = estimate_curves(data, default_params(data), tags, default_jobs());
    const auto [lo, hi] = interior(data);
    const double tmin = data.t().minCoeff(), tmax = data.t().maxCoeff();
    m_theta.push_back(rmse(curves.at(EstimatorTag::MTheta), model.truth_m, lo, hi));
    theta_c.push_back(rmse(curves.at(EstimatorTag::ThetaC), model.truth_theta, lo, hi));
    m_ra.push_back(rmse(curves.at(EstimatorTag::MRA), model.truth_m, tmin, tmax));
    theta_ra.push_back(rmse(curves.at(EstimatorTag::ThetaRA), model.truth_theta, tmin, tmax));
  }
  const double a = median(m_theta), b = median(theta_c), c = median(m_ra), d = median(theta_ra);
  const bool pass = a <= kFig2MThetaThreshold && b <= kFig2ThetaCThreshold && a < c && b < d;
  return { pass,
           fmt("median RMSE m_theta %.4f (<=%.2f, < m_RA %.4f); theta_C %.4f (<=%.2f, "
               "< theta_RA %.4f)",
               a, kFig2MThetaThreshold, c, b, kFig2ThetaCThreshold, d) };
}

Outcome
consistency()
{
  const auto model = sim_model(SimModelTag::SingleConf);
  std::vector<double> medians;
  std::string detail = "median interior RMSE of theta_C:";
  for (Eigen::Index n : { 500, 1000, 2000 }) {
    std::vector<double> r;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto data = model.generate(n, seed);
      const auto curve = theta_C_full(data, default_params(data), default_jobs());
      const auto [lo, hi] = interior(data);
      r.push_back(rmse(curve, model.truth_theta, lo, hi));
    }
    medians.push_back(median(r));
    detail += fmt(" n=%d %.4f", static_cast<int>(n), medians.back());
  }
  const bool pass = medians[1] < medians[0] && medians[2] < medians[1];
  return { pass, detail + " (strictly decreasing)" };
}

Outcome
bootstrap_coverage()
{
  const auto model = sim_model(SimModelTag::LinearConf);
  const int reps = 100;
  int pointwise = 0, uniform = 0;
  for (int r = 0; r < reps; ++r) {
    const auto data = model.generate(500, 1000 + static_cast<std::uint64_t>(r));
    auto params = default_params(data);
    // the band is built and checked over the central 90% of the treatment
    params.trim_lo = 0.05;
    params.trim_hi = 0.95;
    const auto res = bootstrap_curves(data, params, EstimatorTag::MTheta, 200,
                                      77 + static_cast<std::uint64_t>(r), 0.05, default_jobs());
    pointwise += pointwise_interval_at(res, 0.0).contains(model.truth_m(0.0)) ? 1 : 0;
    bool covered = true;
    for (std::size_t k = 0; k < res.base.size() && covered; ++k)
      covered = std::abs(res.base.values[k] - model.truth_m(res.base.grid[k])) <=
                res.uniform_halfwidth;
    uniform += covered ? 1 : 0;
  }
  const double pw = pointwise / static_cast<double>(reps);
  const double un = uniform / static_cast<double>(reps);
  const bool pass = pw >= 0.85 && pw <= 0.99 && un >= 0.85 && un <= 1.0;
  return { pass,
           fmt("pointwise coverage of m(0) %.2f (in [0.85,0.99]); uniform coverage %.2f "
               "(in [0.85,1.00]); %d reps, B=200",
               pw, un, reps) };
}

Outcome
bounds()
{
  std::vector<std::string> problems;
  // mu(f(s), s) = 3 s_1 with f(s) = s_1: on the level set {s_1 = t} both
  // m(t) = t and m(t) = 2t are compatible with rho1 = 2|t|
  for (double t : { -1.5, -0.5, 0.0, 0.25, 1.0, 3.0 }) {
    LevelSetSample sample;
    sample.points.push_back({ { t }, 3.0 * t, { 3.0 }, { 1.0 } });
    const double rho1 = 2.0 * std::abs(t);
    const auto iv = t == 0.0 ? m_bound(sample, 0.1) : m_bound(sample, rho1);
    if (!(iv.contains(t) && iv.contains(2.0 * t)))
      problems.push_back(fmt("containment failed at t=%g", t));
    if (t != 0.0 && (iv.lo != 3.0 * t - rho1 || iv.hi != 3.0 * t + rho1))
      problems.push_back(fmt("interval mismatch at t=%g", t));
  }
  // monotonicity in rho1 and rho2
  LevelSetSample sample;
  sample.points.push_back({ { 0.0, 0.0 }, 1.0, { 2.0, -1.0 }, { 1.0, -0.5 } });
  sample.points.push_back({ { 0.5, 0.1 }, 1.6, { 2.2, -0.9 }, { 1.1, -0.4 } });
  Interval prev_m = m_bound(sample, 0.3), prev_t = theta_bound(sample, 0.3);
  for (double rho = 0.35; rho < 5.0; rho += 0.05) {
    const auto im = m_bound(sample, rho), it = theta_bound(sample, rho);
    if (im.lo > prev_m.lo || im.hi < prev_m.hi || it.lo > prev_t.lo || it.hi < prev_t.hi)
      problems.push_back(fmt("interval shrank at rho=%g", rho));
    prev_m = im;
    prev_t = it;
  }
  // EmptyInterval triggering
  auto empty = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code() == ErrorCode::EmptyInterval;
    }
    return false;
  };
  if (!empty([&] { m_bound(sample, 0.29); }))
    problems.push_back("m_bound below half the spread is not empty");
  if (m_bound(sample, 0.3).lo != m_bound(sample, 0.3).hi)
    problems.push_back("m_bound at exactly half the spread is not a single point");
  LevelSetSample disjoint;
  disjoint.points.push_back({ { 0.0 }, 0.0, { 1.0 }, { 1.0 } });
  disjoint.points.push_back({ { 1.0 }, 0.0, { 4.0 }, { 1.0 } });
  if (!empty([&] { theta_bound(disjoint, 1.0); }))
    problems.push_back("disjoint theta intervals are not empty");
  std::string detail = problems.empty() ? "containment, monotonicity and EmptyInterval hold"
                                        : problems.front();
  return { problems.empty(), detail };
}

Outcome
determinism()
{
  std::ostringstream csv;
  write_csv(csv, sim_model(SimModelTag::SingleConf).generate(500, 2024));
  auto run = [&](const char* jobs) {
    const char* argv[] = { "npdose", "bootstrap", "--seed", "31", "--jobs", jobs };
    std::istringstream in(csv.str());
    std::ostringstream out, err;
    const int code = cli::run(6, argv, in, out, err);
    return std::pair{ code, out.str() };
  };
  const auto [c1, a] = run("1");
  const auto [c8, b] = run("8");
  const bool pass = c1 == 0 && c8 == 0 && a == b && !a.empty();
  return { pass,
           fmt("bootstrap (B=1000, n=500) JSON %zu bytes with --jobs 1, %zu with --jobs 8, %s",
               a.size(), b.size(), a == b ? "byte-identical" : "DIFFERENT") };
}

} // namespace

int
main(int argc, char** argv)
{
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
    { "kernel_golden", kernel_golden },
    { "wls_correctness", wls_correctness },
    { "riemann_vs_oracle", riemann_vs_oracle },
    { "consecutive_difference", consecutive_difference },
    { "mean_anchoring", mean_anchoring },
    { "figure2", figure2 },
    { "consistency", consistency },
    { "bootstrap_coverage", bootstrap_coverage },
    { "bounds", bounds },
    { "determinism", determinism },
  };
  std::vector<std::string> selected(argv + 1, argv + argc);
  for (const auto& name : selected)
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
      std::fprintf(stderr, "unknown criterion '%s'\n", name.c_str());
      return 2;
    }

  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), name) == selected.end())
      continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = { false, std::string("exception: ") + e.what() };
    }
    const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
