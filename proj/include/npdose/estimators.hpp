#pragma once

#include "condcdf.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "kernels.hpp"
#include "locpoly.hpp"
#include "parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace npdose {

enum class EstimatorTag
{
  ThetaC,
  MTheta,
  MRA,
  ThetaRA
};

inline std::string_view
estimator_name(EstimatorTag tag)
{
  switch (tag) {
    case EstimatorTag::ThetaC:
      return "theta_C";
    case EstimatorTag::MTheta:
      return "m_theta";
    case EstimatorTag::MRA:
      return "m_RA";
    case EstimatorTag::ThetaRA:
      return "theta_RA";
  }
  return "unknown";
}

inline EstimatorTag
parse_estimator(std::string_view name)
{
  for (auto tag : { EstimatorTag::ThetaC,
                    EstimatorTag::MTheta,
                    EstimatorTag::MRA,
                    EstimatorTag::ThetaRA })
    if (estimator_name(tag) == name)
      return tag;
  fail(ErrorCode::InvalidArgument,
       "unknown estimator '" + std::string(name) +
         "' (expected theta_C, m_theta, m_RA or theta_RA)");
}

struct CurveDiagnostics
{
  //! Observations dropped because their local fit had no data, summed over
  //! grid points.
  std::size_t dropped_fits = 0;
  std::size_t rank_deficient_fits = 0;
  //! Grid points where the estimator could not be evaluated.
  std::size_t skipped_points = 0;
};

//! Estimated curve on sorted, distinct treatment values.
struct CurveEstimate
{
  std::vector<double> grid;
  std::vector<double> values;
  std::vector<char> skipped;
  EstimatorTag tag = EstimatorTag::ThetaC;
  EstimParams params;
  CurveDiagnostics diagnostics;

  std::size_t size() const { return grid.size(); }
};

//! Distinct sorted treatment values.
inline std::vector<double>
order_statistics(const Eigen::VectorXd& t)
{
  std::vector<double> v(t.data(), t.data() + t.size());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

//! Empirical quantile with linear interpolation between order statistics.
inline double
empirical_quantile(std::vector<double> values, double p)
{
  if (values.empty())
    fail(ErrorCode::InvalidArgument, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

//! Treatment interval [Q(trim_lo), Q(trim_hi)] over which curves are reported.
inline std::pair<double, double>
trim_region(const Dataset& data, const EstimParams& params)
{
  std::vector<double> t(data.t().data(), data.t().data() + data.n());
  return { empirical_quantile(t, params.trim_lo),
           empirical_quantile(std::move(t), params.trim_hi) };
}

inline CurveEstimate
restrict_curve(const CurveEstimate& curve, double lo, double hi)
{
  CurveEstimate out;
  out.tag = curve.tag;
  out.params = curve.params;
  out.diagnostics = curve.diagnostics;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    if (curve.grid[k] < lo || curve.grid[k] > hi)
      continue;
    out.grid.push_back(curve.grid[k]);
    out.values.push_back(curve.values[k]);
    out.skipped.push_back(curve.skipped[k]);
  }
  out.diagnostics.skipped_points = static_cast<std::size_t>(
    std::count(out.skipped.begin(), out.skipped.end(), 1));
  return out;
}

inline CurveEstimate
trim_curve(const Dataset& data, const CurveEstimate& curve)
{
  const auto [lo, hi] = trim_region(data, curve.params);
  return restrict_curve(curve, lo, hi);
}

//! Piecewise-linear interpolation on the curve's grid, end values held
//! constant outside it.
inline double
interpolate_curve(std::span<const double> grid,
                  std::span<const double> values,
                  double t)
{
  if (grid.empty())
    fail(ErrorCode::InvalidArgument, "cannot interpolate an empty curve");
  if (t <= grid.front())
    return values.front();
  if (t >= grid.back())
    return values.back();
  const auto it = std::upper_bound(grid.begin(), grid.end(), t);
  const auto k = static_cast<std::size_t>(it - grid.begin());
  const double t0 = grid[k - 1], t1 = grid[k];
  if (t == t0)
    return values[k - 1];
  const double frac = (t - t0) / (t1 - t0);
  return values[k - 1] + frac * (values[k] - values[k - 1]);
}

inline double
m_theta_interpolate(const CurveEstimate& curve, double t)
{
  return interpolate_curve(curve.grid, curve.values, t);
}

//! Values at skipped grid points replaced by interpolation between the
//! neighbouring evaluated points.
inline std::vector<double>
fill_skipped(const CurveEstimate& curve)
{
  std::vector<double> g, v;
  for (std::size_t k = 0; k < curve.size(); ++k)
    if (!curve.skipped[k]) {
      g.push_back(curve.grid[k]);
      v.push_back(curve.values[k]);
    }
  if (g.empty())
    fail(ErrorCode::AllFitsFailed, "every grid point of the curve failed");
  std::vector<double> out(curve.values);
  for (std::size_t k = 0; k < curve.size(); ++k)
    if (curve.skipped[k])
      out[k] = interpolate_curve(g, v, curve.grid[k]);
  return out;
}

//! Shared machinery of the localized and regression-adjustment estimators:
//! local fits at (t, S_i) for every distinct covariate row, combined with
//! the conditional-CDF weights or plain averages.
class CurveEvaluator
{
public:
  struct PointValue
  {
    double theta_c = std::numeric_limits<double>::quiet_NaN();
    double theta_ra = std::numeric_limits<double>::quiet_NaN();
    double m_ra = std::numeric_limits<double>::quiet_NaN();
    bool c_ok = false;
    bool ra_ok = false;
    std::size_t dropped_c = 0;
    std::size_t dropped_ra = 0;
    std::size_t rank_deficient = 0;
  };

  CurveEvaluator(const Dataset& data, const EstimParams& params)
    : data_(&data)
    , fitter_(data, params)
  {
    group_rows();
    const auto& t = data.t();
    by_t_.resize(static_cast<std::size_t>(data.n()));
    std::iota(by_t_.begin(), by_t_.end(), Eigen::Index{ 0 });
    std::stable_sort(by_t_.begin(), by_t_.end(), [&](auto a, auto b) {
      return t(a) < t(b);
    });
  }

  const EstimParams& params() const { return fitter_.params(); }
  const Dataset& data() const { return *data_; }

  //! Evaluates theta_C (when `want_c`) and the RA estimators (when
  //! `want_ra`) at t. Failures are reported through the ok flags.
  PointValue evaluate(double t, bool want_c, bool want_ra) const
  {
    const auto& data = *data_;
    const auto& params = fitter_.params();
    PointValue out;

    std::vector<double> group_w;
    bool weights_ok = false;
    if (want_c) {
      Eigen::VectorXd raw(data.n());
      for (Eigen::Index i = 0; i < data.n(); ++i)
        raw(i) = eval_kernel(params.kernel_cdf, (data.t()(i) - t) / params.hbar);
      const double total = raw.sum();
      weights_ok = total >= kUnderflowGuard;
      if (weights_ok) {
        group_w.assign(groups_.size(), 0.0);
        for (std::size_t g = 0; g < groups_.size(); ++g)
          for (auto i : groups_[g])
            group_w[g] += raw(i) / total;
      }
    }

    LocalPolyFitter::Workspace ws;
    double num_c = 0.0, den_c = 0.0;
    double sum_mu = 0.0, sum_b2 = 0.0;
    std::size_t count_ra = 0;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      const bool use_c = weights_ok && group_w[g] > 0.0;
      if (!use_c && !want_ra)
        continue;
      const auto fit = fitter_.try_fit(t, data.s_row(groups_[g].front()), ws);
      const auto count = groups_[g].size();
      if (!fit) {
        if (use_c)
          out.dropped_c += count;
        if (want_ra)
          out.dropped_ra += count;
        continue;
      }
      if (fit->rank_deficient)
        ++out.rank_deficient;
      const double b2 = beta2_hat(*fit);
      if (use_c) {
        num_c += group_w[g] * b2;
        den_c += group_w[g];
      }
      if (want_ra) {
        sum_mu += static_cast<double>(count) * mu_hat(*fit);
        sum_b2 += static_cast<double>(count) * b2;
        count_ra += count;
      }
    }
    if (den_c > 0.0) {
      out.theta_c = num_c / den_c;
      out.c_ok = true;
    }
    if (count_ra > 0) {
      out.m_ra = sum_mu / static_cast<double>(count_ra);
      out.theta_ra = sum_b2 / static_cast<double>(count_ra);
      out.ra_ok = true;
    }
    return out;
  }

  //! Throwing single-point form of theta_C.
  double theta_c_at(double t) const
  {
    const auto& params = fitter_.params();
    (void)nw_weights(data_->t(), t, params.hbar, params.kernel_cdf);
    const auto v = evaluate(t, true, false);
    if (!v.c_ok)
      fail(ErrorCode::AllFitsFailed,
           "every local fit failed at t = " + std::to_string(t));
    return v.theta_c;
  }

  //! Curves for the requested estimators (theta_C, m_RA, theta_RA) on
  //! `grid`, which must be sorted. Failed points are flagged and left NaN.
  //! `allow_sweep = false` forces one direct solve per fit.
  std::map<EstimatorTag, CurveEstimate> evaluate_grid(
    const std::vector<double>& grid,
    bool want_c,
    bool want_ra,
    unsigned jobs,
    bool allow_sweep = true) const
  {
    if (!std::is_sorted(grid.begin(), grid.end()))
      fail(ErrorCode::InvalidArgument, "evaluation grid must be sorted");
    std::vector<PointValue> values(grid.size());
    if (allow_sweep && sweep_applicable()) {
      // contiguous chunks; each grid point sums over groups in group order,
      // so the chunking does not change any value
      const std::size_t chunks =
        std::max<std::size_t>(1, std::min<std::size_t>(jobs, grid.size()));
      parallel_for(chunks, jobs, [&](std::size_t c) {
        const auto k0 = grid.size() * c / chunks;
        const auto k1 = grid.size() * (c + 1) / chunks;
        sweep(grid, k0, k1, want_c, want_ra, values);
      });
    } else {
      parallel_for(grid.size(), jobs, [&](std::size_t k) {
        values[k] = evaluate(grid[k], want_c, want_ra);
      });
    }

    std::map<EstimatorTag, CurveEstimate> out;
    auto make = [&](EstimatorTag tag, auto value_of, auto ok_of, auto drop_of) {
      CurveEstimate c;
      c.tag = tag;
      c.params = fitter_.params();
      c.grid = grid;
      c.values.resize(grid.size());
      c.skipped.resize(grid.size());
      for (std::size_t k = 0; k < grid.size(); ++k) {
        c.values[k] = value_of(values[k]);
        c.skipped[k] = ok_of(values[k]) ? 0 : 1;
        c.diagnostics.dropped_fits += drop_of(values[k]);
        c.diagnostics.rank_deficient_fits += values[k].rank_deficient;
        c.diagnostics.skipped_points += c.skipped[k];
      }
      out.emplace(tag, std::move(c));
    };
    if (want_c)
      make(
        EstimatorTag::ThetaC,
        [](const PointValue& v) { return v.theta_c; },
        [](const PointValue& v) { return v.c_ok; },
        [](const PointValue& v) { return v.dropped_c; });
    if (want_ra) {
      make(
        EstimatorTag::MRA,
        [](const PointValue& v) { return v.m_ra; },
        [](const PointValue& v) { return v.ra_ok; },
        [](const PointValue& v) { return v.dropped_ra; });
      make(
        EstimatorTag::ThetaRA,
        [](const PointValue& v) { return v.theta_ra; },
        [](const PointValue& v) { return v.ra_ok; },
        [](const PointValue& v) { return v.dropped_ra; });
    }
    return out;
  }

private:
  //! Relative pivot size below which a swept fit is recomputed directly.
  static constexpr double kSweepPivotRatio = 1e-6;

  bool sweep_applicable() const
  {
    const auto& params = fitter_.params();
    return params.kernel_t == KernelKind::Epanechnikov &&
           (data_->d() == 0 || params.kernel_s == KernelKind::Epanechnikov);
  }

  //! Grid points [k0, k1) of evaluate_grid with polynomial kernels.
  //!
  //! For a fixed covariate row s the covariate kernel weights are fixed, and
  //! the Epanechnikov treatment weight times any power of (T_i - t) is a
  //! polynomial in T_i and t. Every entry of the local normal equations is
  //! therefore a combination of window sums of c_i z_i^r (times covariate
  //! and outcome terms), z_i = (T_i - a) / h, and the windows slide
  //! monotonically along the sorted treatment. To keep the power sums well
  //! conditioned the sorted members are cut into blocks no wider than h, each
  //! with its own anchor a and its own prefix sums; a window touches a few
  //! blocks, whose sums are re-centred at t by binomial expansion. Each fit
  //! thus costs O(1); fits whose pivots are small relative to the largest are
  //! redone by the direct solver, whose rank-revealing decomposition is
  //! authoritative near singularity.
  void sweep(const std::vector<double>& grid,
             std::size_t k0,
             std::size_t k1,
             bool want_c,
             bool want_ra,
             std::vector<PointValue>& values) const
  {
    const auto& data = *data_;
    const auto& params = fitter_.params();
    const int q = params.q;
    const Eigen::Index d = data.d();
    const Eigen::Index p = q + 1 + d;
    const std::size_t len = k1 - k0;
    const std::size_t n_groups = groups_.size();
    const double h = params.h;
    const auto& tv = data.t();
    const auto& y = data.y();
    if (len == 0)
      return;

    // conditional-CDF weight of every group at every grid point of the chunk
    std::vector<double> gw;
    std::vector<char> weights_ok(len, 0);
    if (want_c) {
      gw.assign(n_groups * len, 0.0);
      Eigen::VectorXd raw(data.n());
      for (std::size_t kk = 0; kk < len; ++kk) {
        const double t = grid[k0 + kk];
        for (Eigen::Index i = 0; i < data.n(); ++i)
          raw(i) = eval_kernel(params.kernel_cdf, (tv(i) - t) / params.hbar);
        const double total = raw.sum();
        if (total < kUnderflowGuard)
          continue;
        weights_ok[kk] = 1;
        for (std::size_t g = 0; g < n_groups; ++g)
          for (auto i : groups_[g])
            gw[g * len + kk] += raw(i) / total;
      }
    }

    std::vector<double> num_c(len, 0.0), den_c(len, 0.0);
    std::vector<double> sum_mu(len, 0.0), sum_b2(len, 0.0);
    std::vector<std::size_t> count_ra(len, 0);

    // feature layout: power sums of z up to the degree each entry needs
    const int r_one = 2 * q + 2;
    const int r_lin = q + 2;
    const int r_cov = 2;
    const auto n_pairs = d * (d + 1) / 2;
    const Eigen::Index off_v = r_one + 1;
    const Eigen::Index off_y = off_v + d * (r_lin + 1);
    const Eigen::Index off_vv = off_y + (r_lin + 1);
    const Eigen::Index off_vy = off_vv + n_pairs * (r_cov + 1);
    const Eigen::Index n_feat = off_vy + d * (r_cov + 1);

    std::vector<std::vector<double>> binom(r_one + 1);
    for (int k = 0; k <= r_one; ++k) {
      binom[k].assign(k + 1, 1.0);
      for (int r = 1; r < k; ++r)
        binom[k][r] = binom[k - 1][r - 1] + binom[k - 1][r];
    }

    std::vector<Eigen::Index> members;
    std::vector<double> weights, prefix, zpow(r_one + 1), neg_tau(r_one + 1);
    std::vector<double> vv(static_cast<std::size_t>(d));
    std::vector<double> wmom(r_one + 1);
    std::vector<std::size_t> block_start;
    std::vector<double> anchor;
    Eigen::VectorXd diff(n_feat), cen(n_feat);
    Eigen::MatrixXd gram(p, p);
    Eigen::VectorXd rhs(p), gamma(p);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(p);
    LocalPolyFitter::Workspace ws;

    // adds the block power sums in `diff`, anchored (t - a) / h = tau below
    // t, to the t-centred power sums in `cen`
    auto recentre = [&](Eigen::Index off, int r) {
      for (int k = 0; k <= r; ++k) {
        double a = 0.0;
        for (int e = 0; e <= k; ++e)
          a += binom[k][e] * neg_tau[k - e] * diff(off + e);
        cen(off + k) += a;
      }
    };
    // kernel-weighted moments sum_i c_i f_i K(u_i) u_i^k, k = 0..r-2, from
    // the centred power sums at `off`
    auto moments = [&](Eigen::Index off, int r) {
      for (int k = 0; k + 2 <= r; ++k)
        wmom[k] = 0.75 * (cen(off + k) - cen(off + k + 2));
    };

    for (std::size_t g = 0; g < n_groups; ++g) {
      bool needed = want_ra;
      for (std::size_t kk = 0; kk < len && !needed; ++kk)
        needed = weights_ok[kk] && gw[g * len + kk] > 0.0;
      if (!needed)
        continue;
      const auto s = data.s_row(groups_[g].front());
      const auto count = groups_[g].size();

      // observations inside the covariate window, in treatment order
      members.clear();
      weights.clear();
      for (auto i : by_t_) {
        const double* si = data.s().data() + i * d;
        double c = 1.0;
        for (Eigen::Index j = 0; j < d && c != 0.0; ++j)
          c *= eval_kernel(params.kernel_s,
                           (si[j] - s[static_cast<std::size_t>(j)]) / params.b[j]);
        if (c > 0.0) {
          members.push_back(i);
          weights.push_back(c);
        }
      }
      const std::size_t m = members.size();
      block_start.clear();
      anchor.clear();
      std::vector<std::size_t> block_of(m);
      for (std::size_t r = 0; r < m; ++r) {
        if (anchor.empty() || tv(members[r]) - anchor.back() > h) {
          block_start.push_back(r);
          anchor.push_back(tv(members[r]));
        }
        block_of[r] = anchor.size() - 1;
      }
      // prefix row r + 1 holds the sums from the start of r's block to r
      prefix.assign((m + 1) * static_cast<std::size_t>(n_feat), 0.0);
      for (std::size_t r = 0; r < m; ++r) {
        const auto i = members[r];
        const double c = weights[r];
        const double z = (tv(i) - anchor[block_of[r]]) / h;
        zpow[0] = c;
        for (int e = 1; e <= r_one; ++e)
          zpow[e] = zpow[e - 1] * z;
        const double* si = data.s().data() + i * d;
        for (Eigen::Index j = 0; j < d; ++j)
          vv[j] = (si[j] - s[static_cast<std::size_t>(j)]) / params.b[j];
        const double* prev = block_start[block_of[r]] == r
                               ? nullptr
                               : prefix.data() + r * n_feat;
        double* cur = prefix.data() + (r + 1) * n_feat;
        for (int e = 0; e <= r_one; ++e)
          cur[e] = (prev ? prev[e] : 0.0) + zpow[e];
        for (Eigen::Index j = 0; j < d; ++j)
          for (int e = 0; e <= r_lin; ++e) {
            const auto f = off_v + j * (r_lin + 1) + e;
            cur[f] = (prev ? prev[f] : 0.0) + zpow[e] * vv[j];
          }
        for (int e = 0; e <= r_lin; ++e)
          cur[off_y + e] = (prev ? prev[off_y + e] : 0.0) + zpow[e] * y(i);
        for (Eigen::Index j = 0, pair = 0; j < d; ++j)
          for (Eigen::Index l = j; l < d; ++l, ++pair)
            for (int e = 0; e <= r_cov; ++e) {
              const auto f = off_vv + pair * (r_cov + 1) + e;
              cur[f] = (prev ? prev[f] : 0.0) + zpow[e] * vv[j] * vv[l];
            }
        for (Eigen::Index j = 0; j < d; ++j)
          for (int e = 0; e <= r_cov; ++e) {
            const auto f = off_vy + j * (r_cov + 1) + e;
            cur[f] = (prev ? prev[f] : 0.0) + zpow[e] * vv[j] * y(i);
          }
      }

      std::size_t lo = 0, hi = 0;
      for (std::size_t kk = 0; kk < len; ++kk) {
        const double t = grid[k0 + kk];
        const bool use_c = want_c && weights_ok[kk] && gw[g * len + kk] > 0.0;
        if (!use_c && !want_ra)
          continue;
        while (lo < m && (tv(members[lo]) - t) / h <= -1.0)
          ++lo;
        hi = std::max(hi, lo);
        while (hi < m && (tv(members[hi]) - t) / h < 1.0)
          ++hi;

        auto& out = values[k0 + kk];
        double b2 = 0.0, mu = 0.0;
        bool ok = hi > lo;
        if (ok) {
          cen.setZero();
          for (auto blk = block_of[lo]; blk <= block_of[hi - 1]; ++blk) {
            const auto a = std::max(lo, block_start[blk]);
            const auto b = blk + 1 < block_start.size()
                             ? std::min(hi, block_start[blk + 1])
                             : hi;
            const double* pb = prefix.data() + b * n_feat;
            const double* pa = prefix.data() + a * n_feat;
            for (Eigen::Index f = 0; f < n_feat; ++f)
              diff(f) = pb[f] - (a > block_start[blk] ? pa[f] : 0.0);
            const double tau = (t - anchor[blk]) / h;
            neg_tau[0] = 1.0;
            for (int e = 1; e <= r_one; ++e)
              neg_tau[e] = -neg_tau[e - 1] * tau;
            recentre(0, r_one);
            for (Eigen::Index j = 0; j < d; ++j)
              recentre(off_v + j * (r_lin + 1), r_lin);
            recentre(off_y, r_lin);
            for (Eigen::Index f = 0; f < n_pairs; ++f)
              recentre(off_vv + f * (r_cov + 1), r_cov);
            for (Eigen::Index j = 0; j < d; ++j)
              recentre(off_vy + j * (r_cov + 1), r_cov);
          }

          moments(0, r_one);
          for (int a = 0; a <= q; ++a)
            for (int b = 0; b <= q; ++b)
              gram(a, b) = wmom[a + b];
          for (Eigen::Index j = 0; j < d; ++j) {
            moments(off_v + j * (r_lin + 1), r_lin);
            for (int a = 0; a <= q; ++a)
              gram(a, q + 1 + j) = gram(q + 1 + j, a) = wmom[a];
          }
          moments(off_y, r_lin);
          for (int a = 0; a <= q; ++a)
            rhs(a) = wmom[a];
          for (Eigen::Index j = 0, pair = 0; j < d; ++j)
            for (Eigen::Index l = j; l < d; ++l, ++pair) {
              moments(off_vv + pair * (r_cov + 1), r_cov);
              gram(q + 1 + j, q + 1 + l) = gram(q + 1 + l, q + 1 + j) = wmom[0];
            }
          for (Eigen::Index j = 0; j < d; ++j) {
            moments(off_vy + j * (r_cov + 1), r_cov);
            rhs(q + 1 + j) = wmom[0];
          }

          ldlt.compute(gram);
          const auto& D = ldlt.vectorD();
          const bool stable = ldlt.info() == Eigen::Success &&
                              D.minCoeff() > kSweepPivotRatio * D.maxCoeff();
          if (stable) {
            gamma = ldlt.solve(rhs);
            mu = gamma(0);
            b2 = gamma(1) / h;
          } else {
            const auto fit = fitter_.try_fit(t, s, ws);
            ok = fit.has_value();
            if (ok) {
              mu = mu_hat(*fit);
              b2 = beta2_hat(*fit);
              out.rank_deficient += fit->rank_deficient ? 1 : 0;
            }
          }
        }
        if (!ok) {
          if (use_c)
            out.dropped_c += count;
          if (want_ra)
            out.dropped_ra += count;
          continue;
        }
        if (use_c) {
          num_c[kk] += gw[g * len + kk] * b2;
          den_c[kk] += gw[g * len + kk];
        }
        if (want_ra) {
          sum_mu[kk] += static_cast<double>(count) * mu;
          sum_b2[kk] += static_cast<double>(count) * b2;
          count_ra[kk] += count;
        }
      }
    }

    for (std::size_t kk = 0; kk < len; ++kk) {
      auto& out = values[k0 + kk];
      if (den_c[kk] > 0.0) {
        out.theta_c = num_c[kk] / den_c[kk];
        out.c_ok = true;
      }
      if (count_ra[kk] > 0) {
        out.m_ra = sum_mu[kk] / static_cast<double>(count_ra[kk]);
        out.theta_ra = sum_b2[kk] / static_cast<double>(count_ra[kk]);
        out.ra_ok = true;
      }
    }
  }

  //! Observations with identical covariate rows share one local fit.
  void group_rows()
  {
    const auto& data = *data_;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.n()));
    std::iota(order.begin(), order.end(), Eigen::Index{ 0 });
    auto row_less = [&](Eigen::Index a, Eigen::Index b) {
      const auto ra = data.s_row(a), rb = data.s_row(b);
      return std::lexicographical_compare(
        ra.begin(), ra.end(), rb.begin(), rb.end());
    };
    std::stable_sort(order.begin(), order.end(), row_less);
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (k == 0 || row_less(order[k - 1], order[k]))
        groups_.emplace_back();
      groups_.back().push_back(order[k]);
    }
    // groups visited in order of their first observation
    std::sort(groups_.begin(), groups_.end(), [](const auto& a, const auto& b) {
      return a.front() < b.front();
    });
  }

  const Dataset* data_;
  LocalPolyFitter fitter_;
  std::vector<std::vector<Eigen::Index>> groups_;
  std::vector<Eigen::Index> by_t_;
};

inline double
theta_C_at(const Dataset& data, double t, const EstimParams& params)
{
  return CurveEvaluator(data, params).theta_c_at(t);
}

inline double
m_RA(const Dataset& data, double t, const EstimParams& params)
{
  const auto v = CurveEvaluator(data, params).evaluate(t, false, true);
  if (!v.ra_ok)
    fail(ErrorCode::AllFitsFailed,
         "every local fit failed at t = " + std::to_string(t));
  return v.m_ra;
}

inline double
theta_RA(const Dataset& data, double t, const EstimParams& params)
{
  const auto v = CurveEvaluator(data, params).evaluate(t, false, true);
  if (!v.ra_ok)
    fail(ErrorCode::AllFitsFailed,
         "every local fit failed at t = " + std::to_string(t));
  return v.theta_ra;
}

//! theta_C at every distinct order statistic, without trimming. This is the
//! input of the Riemann-sum integral.
inline CurveEstimate
theta_C_full(const Dataset& data, const EstimParams& params, unsigned jobs = 1)
{
  if (data.n() < 2)
    fail(ErrorCode::InsufficientData, "at least two observations are required");
  CurveEvaluator eval(data, params);
  auto curves = eval.evaluate_grid(order_statistics(data.t()), true, false, jobs);
  auto curve = std::move(curves.at(EstimatorTag::ThetaC));
  if (curve.diagnostics.skipped_points == curve.size())
    fail(ErrorCode::AllFitsFailed, "theta_C failed at every grid point");
  return curve;
}

inline CurveEstimate
theta_C_curve(const Dataset& data, const EstimParams& params, unsigned jobs = 1)
{
  return trim_curve(data, theta_C_full(data, params, jobs));
}

//! Integral estimator at every order statistic from the Riemann sums
//!   mean(Y) + (1/n) sum_i Delta_i [ i theta(T_(i)) 1{i<j}
//!                                   - (n-i) theta(T_(i+1)) 1{i>=j} ],
//! computed with one prefix and one suffix pass. `theta` must be evaluated on
//! the distinct order statistics of data.t(); skipped points are filled by
//! interpolation.
inline CurveEstimate
m_theta_fast(const Dataset& data, const CurveEstimate& theta)
{
  const auto grid = order_statistics(data.t());
  if (theta.grid != grid)
    fail(ErrorCode::InvalidArgument,
         "theta must be evaluated on the distinct order statistics of T");
  const auto theta_vals = fill_skipped(theta);

  const auto n = static_cast<std::size_t>(data.n());
  std::vector<double> ts(data.t().data(), data.t().data() + n);
  std::sort(ts.begin(), ts.end());
  // theta at each (possibly repeated) order statistic
  std::vector<double> th(n);
  for (std::size_t i = 0, k = 0; i < n; ++i) {
    while (grid[k] < ts[i])
      ++k;
    th[i] = theta_vals[k];
  }

  // 0-based: order statistic i <-> T_(i+1); gap i <-> Delta_(i+1)
  // prefix[j] = sum_{i<j} (i+1) th[i] gap_i
  // suffix[j] = sum_{i>=j} (n-i-1) th[i+1] gap_i
  std::vector<double> prefix(n, 0.0), suffix(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double gap = ts[i + 1] - ts[i];
    prefix[i + 1] = prefix[i] + static_cast<double>(i + 1) * th[i] * gap;
  }
  for (std::size_t i = n - 1; i-- > 0;) {
    const double gap = ts[i + 1] - ts[i];
    suffix[i] = suffix[i + 1] + static_cast<double>(n - i - 1) * th[i + 1] * gap;
  }

  const double ybar = data.y().mean();
  const double inv_n = 1.0 / static_cast<double>(n);
  CurveEstimate out;
  out.tag = EstimatorTag::MTheta;
  out.params = theta.params;
  out.diagnostics = theta.diagnostics;
  out.grid = grid;
  out.values.reserve(grid.size());
  out.skipped.assign(grid.size(), 0);
  for (std::size_t j = 0; j < n; ++j)
    if (j == 0 || ts[j] != ts[j - 1])
      out.values.push_back(ybar + (prefix[j] - suffix[j]) * inv_n);
  return out;
}

inline CurveEstimate
m_theta_curve(const Dataset& data, const EstimParams& params, unsigned jobs = 1)
{
  return trim_curve(data, m_theta_fast(data, theta_C_full(data, params, jobs)));
}

//! n nodes evenly spaced over [lo, hi], endpoints exact.
inline std::vector<double>
uniform_grid(double lo, double hi, std::size_t n)
{
  std::vector<double> nodes(n);
  const double step = n > 1 ? (hi - lo) / static_cast<double>(n - 1) : 0.0;
  for (std::size_t k = 0; k < n; ++k)
    nodes[k] = k + 1 == n ? hi : lo + step * static_cast<double>(k);
  return nodes;
}

//! Integral estimator by dense trapezoidal quadrature of `theta` on a uniform
//! grid of `n_grid` nodes over [T_(1), T_(n)], reported at the distinct order
//! statistics. Between nodes the integrand is taken as the linear
//! interpolant, so linear integrands are integrated exactly.
template <typename ThetaFn>
CurveEstimate
m_theta_quadrature(const Dataset& data, ThetaFn&& theta, std::size_t n_grid)
{
  const auto n = static_cast<std::size_t>(data.n());
  if (n_grid < 2 * n || n_grid < 2)
    fail(ErrorCode::InvalidArgument,
         "quadrature grid needs at least 2n nodes, got " + std::to_string(n_grid));
  const auto grid_t = order_statistics(data.t());
  const double lo = grid_t.front(), hi = grid_t.back();
  const double ybar = data.y().mean();

  CurveEstimate out;
  out.tag = EstimatorTag::MTheta;
  out.grid = grid_t;
  out.skipped.assign(grid_t.size(), 0);
  if (hi == lo) {
    out.values.assign(grid_t.size(), ybar);
    return out;
  }

  const double step = (hi - lo) / static_cast<double>(n_grid - 1);
  const auto nodes = uniform_grid(lo, hi, n_grid);
  std::vector<double> th(n_grid), cum(n_grid, 0.0);
  for (std::size_t k = 0; k < n_grid; ++k)
    th[k] = theta(nodes[k]);
  for (std::size_t k = 1; k < n_grid; ++k)
    cum[k] = cum[k - 1] + 0.5 * (nodes[k] - nodes[k - 1]) * (th[k] + th[k - 1]);

  // antiderivative from T_(1)
  auto antiderivative = [&](double x) {
    if (x <= lo)
      return 0.0;
    if (x >= hi)
      return cum.back();
    auto k = static_cast<std::size_t>((x - lo) / step);
    k = std::min(k, n_grid - 2);
    while (k > 0 && nodes[k] > x)
      --k;
    while (k + 2 < n_grid && nodes[k + 1] <= x)
      ++k;
    const double dx = x - nodes[k];
    const double slope = (th[k + 1] - th[k]) / (nodes[k + 1] - nodes[k]);
    const double th_x = th[k] + slope * dx;
    return cum[k] + 0.5 * dx * (th[k] + th_x);
  };

  double mean_anti = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    mean_anti += antiderivative(data.t()(static_cast<Eigen::Index>(i)));
  mean_anti /= static_cast<double>(n);

  out.values.reserve(grid_t.size());
  for (double t : grid_t)
    out.values.push_back(ybar + antiderivative(t) - mean_anti);
  return out;
}

//! theta_C on an arbitrary sorted grid (skips flagged).
inline CurveEstimate
theta_C_on_grid(const Dataset& data,
                const EstimParams& params,
                const std::vector<double>& grid,
                unsigned jobs = 1)
{
  CurveEvaluator eval(data, params);
  return std::move(eval.evaluate_grid(grid, true, false, jobs).at(EstimatorTag::ThetaC));
}

//! Reference integral estimator: theta_C on n_grid uniform nodes, integrated
//! by the trapezoid rule.
inline CurveEstimate
m_theta_quadrature_oracle(const Dataset& data,
                          const EstimParams& params,
                          std::size_t n_grid,
                          unsigned jobs = 1)
{
  const auto n = static_cast<std::size_t>(data.n());
  if (n_grid < 2 * n)
    fail(ErrorCode::InvalidArgument,
         "quadrature grid needs at least 2n nodes, got " + std::to_string(n_grid));
  const auto ts = order_statistics(data.t());
  const auto nodes = uniform_grid(ts.front(), ts.back(), n_grid);
  auto theta = theta_C_on_grid(data, params, nodes, jobs);
  const auto filled = fill_skipped(theta);
  auto lookup = [&](double x) { return interpolate_curve(nodes, filled, x); };
  auto out = m_theta_quadrature(data, lookup, n_grid);
  out.params = params;
  out.diagnostics = theta.diagnostics;
  return out;
}

//! theta_C, m_theta, m_RA and theta_RA from one set of local fits. Curves
//! are trimmed to the reporting region; the integral always uses the full
//! sample.
inline std::map<EstimatorTag, CurveEstimate>
estimate_curves(const Dataset& data,
                const EstimParams& params,
                std::span<const EstimatorTag> tags,
                unsigned jobs = 1)
{
  if (data.n() < 2)
    fail(ErrorCode::InsufficientData, "at least two observations are required");
  auto wants = [&](EstimatorTag tag) {
    return std::find(tags.begin(), tags.end(), tag) != tags.end();
  };
  const bool want_c = wants(EstimatorTag::ThetaC) || wants(EstimatorTag::MTheta);
  const bool want_ra = wants(EstimatorTag::MRA) || wants(EstimatorTag::ThetaRA);

  CurveEvaluator eval(data, params);
  auto full = eval.evaluate_grid(order_statistics(data.t()), want_c, want_ra, jobs);

  std::map<EstimatorTag, CurveEstimate> out;
  if (want_c) {
    const auto& theta = full.at(EstimatorTag::ThetaC);
    if (theta.diagnostics.skipped_points == theta.size())
      fail(ErrorCode::AllFitsFailed, "theta_C failed at every grid point");
    if (wants(EstimatorTag::MTheta))
      out.emplace(EstimatorTag::MTheta, trim_curve(data, m_theta_fast(data, theta)));
  }
  for (auto tag : { EstimatorTag::ThetaC, EstimatorTag::MRA, EstimatorTag::ThetaRA }) {
    if (!wants(tag))
      continue;
    const auto& c = full.at(tag);
    if (c.diagnostics.skipped_points == c.size())
      fail(ErrorCode::AllFitsFailed,
           std::string(estimator_name(tag)) + " failed at every grid point");
    out.emplace(tag, trim_curve(data, c));
  }
  return out;
}

} // namespace npdose
