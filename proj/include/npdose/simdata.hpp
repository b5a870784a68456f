#pragma once

#include "dataset.hpp"
#include "errors.hpp"
#include "rng.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>

namespace npdose {

enum class SimModelTag
{
  SingleConf,
  LinearConf,
  NonlinearConf
};

//! A data-generating process with its true dose-response curve m and
//! derivative theta.
struct SimModel
{
  SimModelTag tag;
  double (*truth_m)(double);
  double (*truth_theta)(double);
  double support_lo;
  double support_hi;
  int d;

  Dataset generate(Eigen::Index n, std::uint64_t seed) const;
};

namespace detail {

inline double
quad_m(double t)
{
  return t * t + t + 1.0;
}
inline double
quad_theta(double t)
{
  return 2.0 * t + 1.0;
}
inline double
ident_m(double t)
{
  return t;
}
inline double
one(double)
{
  return 1.0;
}
inline double
quad0_m(double t)
{
  return t * t + t;
}

inline void
require_n(Eigen::Index n)
{
  if (n < 1)
    fail(ErrorCode::InvalidArgument, "sample size must be >= 1");
}

} // namespace detail

//! Y = T^2 + T + 1 + 10 S + eps, T = sin(pi S) + E,
//! S ~ U[-1,1], E ~ U[-0.3,0.3], eps ~ N(0,1).
inline Dataset
gen_single_conf(Eigen::Index n, std::uint64_t seed)
{
  detail::require_n(n);
  RandomStream rng(seed);
  Eigen::VectorXd y(n), t(n);
  RowMatrix s(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double si = rng.uniform(-1.0, 1.0);
    const double e = rng.uniform(-0.3, 0.3);
    const double eps = rng.normal();
    const double ti = std::sin(std::numbers::pi * si) + e;
    s(i, 0) = si;
    t(i) = ti;
    y(i) = ti * ti + ti + 1.0 + 10.0 * si + eps;
  }
  return Dataset(std::move(y), std::move(t), std::move(s));
}

//! Y = T + 6 S1 + 6 S2 + eps, T = 2 S1 + S2 + E,
//! S ~ U[-1,1]^2, E ~ U[-0.5,0.5], eps ~ N(0,1).
inline Dataset
gen_linear_conf(Eigen::Index n, std::uint64_t seed)
{
  detail::require_n(n);
  RandomStream rng(seed);
  Eigen::VectorXd y(n), t(n);
  RowMatrix s(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s1 = rng.uniform(-1.0, 1.0);
    const double s2 = rng.uniform(-1.0, 1.0);
    const double e = rng.uniform(-0.5, 0.5);
    const double eps = rng.normal();
    const double ti = 2.0 * s1 + s2 + e;
    s(i, 0) = s1;
    s(i, 1) = s2;
    t(i) = ti;
    y(i) = ti + 6.0 * s1 + 6.0 * s2 + eps;
  }
  return Dataset(std::move(y), std::move(t), std::move(s));
}

//! Y = T^2 + T + 10 Z + eps, T = cos(pi Z^3) + Z/4 + E, Z = 4 S1 + S2,
//! S ~ U[-1,1]^2, E ~ U[-0.1,0.1], eps ~ N(0,1).
inline Dataset
gen_nonlinear_conf(Eigen::Index n, std::uint64_t seed)
{
  detail::require_n(n);
  RandomStream rng(seed);
  Eigen::VectorXd y(n), t(n);
  RowMatrix s(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s1 = rng.uniform(-1.0, 1.0);
    const double s2 = rng.uniform(-1.0, 1.0);
    const double e = rng.uniform(-0.1, 0.1);
    const double eps = rng.normal();
    const double z = 4.0 * s1 + s2;
    const double ti = std::cos(std::numbers::pi * z * z * z) + z / 4.0 + e;
    s(i, 0) = s1;
    s(i, 1) = s2;
    t(i) = ti;
    y(i) = ti * ti + ti + 10.0 * z + eps;
  }
  return Dataset(std::move(y), std::move(t), std::move(s));
}

inline SimModel
sim_model(SimModelTag tag)
{
  switch (tag) {
    case SimModelTag::SingleConf:
      return { tag, detail::quad_m, detail::quad_theta, -1.3, 1.3, 1 };
    case SimModelTag::LinearConf:
      return { tag, detail::ident_m, detail::one, -3.5, 3.5, 2 };
    case SimModelTag::NonlinearConf:
      // T = cos(pi Z^3) + Z/4 + E with |Z| <= 5
      return { tag, detail::quad0_m, detail::quad_theta, -2.35, 2.35, 2 };
  }
  fail(ErrorCode::InvalidArgument, "unknown simulation model");
}

inline Dataset
SimModel::generate(Eigen::Index n, std::uint64_t seed) const
{
  switch (tag) {
    case SimModelTag::SingleConf:
      return gen_single_conf(n, seed);
    case SimModelTag::LinearConf:
      return gen_linear_conf(n, seed);
    case SimModelTag::NonlinearConf:
      return gen_nonlinear_conf(n, seed);
  }
  fail(ErrorCode::InvalidArgument, "unknown simulation model");
}

//! Accepts "single", "linear", "nonlinear" and the *_conf spellings.
inline SimModelTag
parse_sim_model(std::string_view name)
{
  if (name == "single" || name == "single_conf")
    return SimModelTag::SingleConf;
  if (name == "linear" || name == "linear_conf")
    return SimModelTag::LinearConf;
  if (name == "nonlinear" || name == "nonlinear_conf")
    return SimModelTag::NonlinearConf;
  fail(ErrorCode::InvalidArgument,
       "unknown model '" + std::string(name) +
         "' (expected single, linear or nonlinear)");
}

inline std::string_view
sim_model_name(SimModelTag tag)
{
  switch (tag) {
    case SimModelTag::SingleConf:
      return "single_conf";
    case SimModelTag::LinearConf:
      return "linear_conf";
    case SimModelTag::NonlinearConf:
      return "nonlinear_conf";
  }
  return "unknown";
}

} // namespace npdose
