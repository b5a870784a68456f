#pragma once

#include "bootstrap.hpp"
#include "errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace npdose {

//! One covariate point s on the level set {s : f(s) = t}, with the
//! identified surface value mu(f(s), s), its gradient v and the gradient g of
//! the treatment map f.
struct LevelSetPoint
{
  std::vector<double> s;
  double mu_val = 0.0;
  std::vector<double> v;
  std::vector<double> g;
};

struct LevelSetSample
{
  std::vector<LevelSetPoint> points;
};

//! [max mu - rho1, min mu + rho1]; empty when rho1 is below half the spread
//! of the surface values.
inline Interval
m_bound(const LevelSetSample& sample, double rho1)
{
  if (sample.points.empty())
    fail(ErrorCode::InvalidArgument, "level-set sample is empty");
  if (!(rho1 > 0.0))
    fail(ErrorCode::InvalidArgument, "rho1 must be positive");
  double hi_mu = -std::numeric_limits<double>::infinity();
  double lo_mu = std::numeric_limits<double>::infinity();
  for (const auto& p : sample.points) {
    hi_mu = std::max(hi_mu, p.mu_val);
    lo_mu = std::min(lo_mu, p.mu_val);
  }
  const Interval out{ hi_mu - rho1, lo_mu + rho1 };
  if (out.lo > out.hi)
    fail(ErrorCode::EmptyInterval,
         "m bound is empty: rho1 = " + std::to_string(rho1) +
           " is below half the spread of mu over the level set");
  return out;
}

//! Intersection over points and coordinates j of
//! [(v_j - sign(g_j) rho2) / g_j, (v_j + sign(g_j) rho2) / g_j].
inline Interval
theta_bound(const LevelSetSample& sample, double rho2)
{
  if (sample.points.empty())
    fail(ErrorCode::InvalidArgument, "level-set sample is empty");
  if (!(rho2 > 0.0))
    fail(ErrorCode::InvalidArgument, "rho2 must be positive");
  Interval out{ -std::numeric_limits<double>::infinity(),
                std::numeric_limits<double>::infinity() };
  for (const auto& p : sample.points) {
    if (p.v.size() != p.g.size() || p.g.empty())
      fail(ErrorCode::InvalidArgument,
           "each level-set point needs matching, nonempty v and g");
    for (std::size_t j = 0; j < p.g.size(); ++j) {
      const double g = p.g[j];
      if (g == 0.0)
        fail(ErrorCode::ZeroGradient,
             "gradient of the treatment map vanishes in coordinate " +
               std::to_string(j + 1));
      const double sign = g > 0.0 ? 1.0 : -1.0;
      out.lo = std::max(out.lo, (p.v[j] - sign * rho2) / g);
      out.hi = std::min(out.hi, (p.v[j] + sign * rho2) / g);
    }
  }
  if (out.lo > out.hi)
    fail(ErrorCode::EmptyInterval,
         "theta bound is empty: the per-coordinate intervals do not intersect");
  return out;
}

} // namespace npdose
