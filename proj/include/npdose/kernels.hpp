#pragma once

#include "errors.hpp"

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>

namespace npdose {

enum class KernelKind
{
  Epanechnikov,
  Gaussian
};

inline std::string_view
kernel_name(KernelKind kind)
{
  return kind == KernelKind::Epanechnikov ? "epanechnikov" : "gaussian";
}

inline KernelKind
parse_kernel(std::string_view name)
{
  if (name == "epanechnikov")
    return KernelKind::Epanechnikov;
  if (name == "gaussian")
    return KernelKind::Gaussian;
  fail(ErrorCode::InvalidArgument,
       "unknown kernel '" + std::string(name) +
         "' (expected epanechnikov or gaussian)");
}

inline bool
has_compact_support(KernelKind kind)
{
  return kind == KernelKind::Epanechnikov;
}

inline double
eval_kernel(KernelKind kind, double u)
{
  switch (kind) {
    case KernelKind::Epanechnikov:
      return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
    case KernelKind::Gaussian:
      return std::numbers::inv_sqrtpi / std::numbers::sqrt2 *
             std::exp(-0.5 * u * u);
  }
  return 0.0;
}

//! kappa_j = int u^j K(u) du, closed form for j = 0..4.
inline double
kernel_moment(KernelKind kind, int j)
{
  if (j < 0 || j > 4)
    fail(ErrorCode::InvalidArgument,
         "kernel moment order must be in 0..4, got " + std::to_string(j));
  if (j % 2 == 1)
    return 0.0;
  if (kind == KernelKind::Epanechnikov) {
    // (3/4) * (2/(j+1) - 2/(j+3))
    constexpr double m[] = { 1.0, 0.0, 1.0 / 5.0, 0.0, 3.0 / 35.0 };
    return m[j];
  }
  // standard normal moments: 1, 0, 1, 0, 3
  constexpr double m[] = { 1.0, 0.0, 1.0, 0.0, 3.0 };
  return m[j];
}

//! nu_j = int u^j K(u)^2 du, closed form for j = 0..4.
inline double
kernel_sq_moment(KernelKind kind, int j)
{
  if (j < 0 || j > 4)
    fail(ErrorCode::InvalidArgument,
         "kernel moment order must be in 0..4, got " + std::to_string(j));
  if (j % 2 == 1)
    return 0.0;
  if (kind == KernelKind::Epanechnikov) {
    // (9/16) * int u^j (1-u^2)^2 du over [-1,1]
    constexpr double m[] = { 3.0 / 5.0, 0.0, 3.0 / 35.0, 0.0, 1.0 / 35.0 };
    return m[j];
  }
  // phi^2 is N(0, 1/2) scaled by 1/(2 sqrt(pi))
  const double c = 0.5 * std::numbers::inv_sqrtpi;
  constexpr double m[] = { 1.0, 0.0, 0.5, 0.0, 0.75 };
  return c * m[j];
}

inline double
product_kernel_weight(KernelKind kind, std::span<const double> u)
{
  double w = 1.0;
  for (double ui : u) {
    w *= eval_kernel(kind, ui);
    if (w == 0.0)
      break;
  }
  return w;
}

} // namespace npdose
