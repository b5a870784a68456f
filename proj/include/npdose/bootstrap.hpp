#pragma once

#include "dataset.hpp"
#include "errors.hpp"
#include "estimators.hpp"
#include "parallel.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace npdose {

struct Interval
{
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double x) const { return lo <= x && x <= hi; }
};

enum class BandMode
{
  Pointwise,
  Uniform
};

//! Base curve, replicate curves on the base grid and the deviation quantiles.
struct BootstrapResult
{
  CurveEstimate base;
  std::vector<std::vector<double>> replicates;
  double alpha = 0.05;
  std::vector<double> pointwise_halfwidth;
  double uniform_halfwidth = 0.0;
  int B = 0;
  std::uint64_t seed = 0;
  std::size_t failed_replicates = 0;
};

struct BootstrapOptions
{
  int B = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

//! n rows drawn uniformly with replacement.
inline Dataset
resample(const Dataset& data, RandomStream& rng)
{
  const auto n = data.n();
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  for (auto& r : rows)
    r = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n)));
  return data.select(rows);
}

//! Type-1 empirical quantile: the ceil(p m)-th smallest of m values.
inline double
bootstrap_quantile(std::vector<double> values, double p)
{
  if (values.empty())
    fail(ErrorCode::InvalidArgument, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const auto m = static_cast<double>(values.size());
  // the 1e-9 slack keeps e.g. 0.95 * 200 from rounding up to 191
  auto k = static_cast<std::size_t>(std::ceil(p * m - 1e-9));
  k = std::clamp<std::size_t>(k, 1, values.size());
  return values[k - 1];
}

namespace detail {

inline void
compute_halfwidths(BootstrapResult& r)
{
  const auto m = r.base.size();
  r.pointwise_halfwidth.assign(m, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> sup(r.replicates.size(), 0.0);
  std::vector<double> dev(r.replicates.size());
  for (std::size_t k = 0; k < m; ++k) {
    if (r.base.skipped[k])
      continue;
    for (std::size_t b = 0; b < r.replicates.size(); ++b) {
      dev[b] = std::abs(r.replicates[b][k] - r.base.values[k]);
      sup[b] = std::max(sup[b], dev[b]);
    }
    r.pointwise_halfwidth[k] = bootstrap_quantile(dev, 1.0 - r.alpha);
  }
  r.uniform_halfwidth = bootstrap_quantile(sup, 1.0 - r.alpha);
}

} // namespace detail

//! Empirical bootstrap for the requested estimators. Bandwidths stay at the
//! values in `params`; replicate b uses the random stream
//! stream_seed(seed, b), so the result does not depend on `jobs`. Each
//! replicate curve is computed on its resample's order statistics and mapped
//! to the base grid by interpolation with end clamping.
inline std::map<EstimatorTag, BootstrapResult>
bootstrap_curves(const Dataset& data,
                 const EstimParams& params,
                 std::span<const EstimatorTag> which,
                 const BootstrapOptions& opt)
{
  if (opt.B < 1)
    fail(ErrorCode::InvalidArgument, "bootstrap needs B >= 1");
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0))
    fail(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  if (which.empty())
    fail(ErrorCode::InvalidArgument, "no estimator requested");

  auto base = estimate_curves(data, params, which, opt.jobs);

  EstimParams rep_params = params;
  rep_params.trim_lo = 0.0;
  rep_params.trim_hi = 1.0;

  const auto B = static_cast<std::size_t>(opt.B);
  // replicate b -> estimator -> values on the base grid; empty when failed
  std::vector<std::map<EstimatorTag, std::vector<double>>> reps(B);
  parallel_for(B, opt.jobs, [&](std::size_t b) {
    RandomStream rng(stream_seed(opt.seed, b));
    const auto sample = resample(data, rng);
    std::map<EstimatorTag, CurveEstimate> curves;
    try {
      curves = estimate_curves(sample, rep_params, which, 1);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::AllFitsFailed ||
          e.code() == ErrorCode::InsufficientData)
        return;
      throw;
    }
    for (const auto& [tag, curve] : curves) {
      const auto filled = fill_skipped(curve);
      const auto& grid = base.at(tag).grid;
      std::vector<double> on_base(grid.size());
      for (std::size_t k = 0; k < grid.size(); ++k)
        on_base[k] = interpolate_curve(curve.grid, filled, grid[k]);
      reps[b].emplace(tag, std::move(on_base));
    }
  });

  std::size_t failed = 0;
  for (const auto& r : reps)
    failed += r.empty() ? 1 : 0;
  if (static_cast<double>(failed) > 0.1 * static_cast<double>(B))
    fail(ErrorCode::TooManyFailedReplicates,
         std::to_string(failed) + " of " + std::to_string(B) +
           " bootstrap replicates failed");

  std::map<EstimatorTag, BootstrapResult> out;
  for (auto& [tag, curve] : base) {
    BootstrapResult r;
    r.base = std::move(curve);
    r.alpha = opt.alpha;
    r.B = opt.B;
    r.seed = opt.seed;
    r.failed_replicates = failed;
    for (auto& rep : reps)
      if (!rep.empty())
        r.replicates.push_back(std::move(rep.at(tag)));
    detail::compute_halfwidths(r);
    out.emplace(tag, std::move(r));
  }
  return out;
}

inline BootstrapResult
bootstrap_curves(const Dataset& data,
                 const EstimParams& params,
                 EstimatorTag which,
                 int B,
                 std::uint64_t seed,
                 double alpha = 0.05,
                 unsigned jobs = 1)
{
  const EstimatorTag tags[] = { which };
  BootstrapOptions opt;
  opt.B = B;
  opt.seed = seed;
  opt.alpha = alpha;
  opt.jobs = jobs;
  return std::move(bootstrap_curves(data, params, tags, opt).at(which));
}

inline std::vector<Interval>
confidence_band(const BootstrapResult& result, BandMode mode)
{
  std::vector<Interval> band(result.base.size());
  for (std::size_t k = 0; k < band.size(); ++k) {
    const double hw = mode == BandMode::Uniform ? result.uniform_halfwidth
                                                : result.pointwise_halfwidth[k];
    band[k] = { result.base.values[k] - hw, result.base.values[k] + hw };
  }
  return band;
}

//! Pointwise interval at an arbitrary t0, from the interpolated base and
//! replicate curves.
inline Interval
pointwise_interval_at(const BootstrapResult& result, double t0)
{
  const double center = interpolate_curve(result.base.grid, result.base.values, t0);
  std::vector<double> dev;
  dev.reserve(result.replicates.size());
  for (const auto& rep : result.replicates)
    dev.push_back(std::abs(interpolate_curve(result.base.grid, rep, t0) - center));
  const double hw = bootstrap_quantile(std::move(dev), 1.0 - result.alpha);
  return { center - hw, center + hw };
}

} // namespace npdose
