#pragma once

#include "dataset.hpp"
#include "errors.hpp"
#include "kernels.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <span>
#include <string>

namespace npdose {

//! Normalized Nadaraya-Watson weights over the treatment values.
struct NWWeights
{
  Eigen::VectorXd w;
  double total_raw = 0.0;
};

inline constexpr double kUnderflowGuard = 1e-300;

inline NWWeights
nw_weights(const Eigen::VectorXd& tvec, double t, double hbar, KernelKind kind)
{
  if (!(hbar > 0.0))
    fail(ErrorCode::InvalidArgument, "bandwidth hbar must be positive");
  NWWeights out;
  out.w.resize(tvec.size());
  for (Eigen::Index i = 0; i < tvec.size(); ++i)
    out.w(i) = eval_kernel(kind, (tvec(i) - t) / hbar);
  out.total_raw = out.w.sum();
  if (!(out.total_raw >= kUnderflowGuard))
    fail(ErrorCode::DegenerateWeights,
         "conditional CDF weights vanish at t = " + std::to_string(t) +
           "; widen hbar or use the gaussian kernel");
  out.w /= out.total_raw;
  return out;
}

//! Sum of NW weights over observations with S_i <= s in every coordinate.
inline double
cond_cdf(const Dataset& data,
         std::span<const double> s,
         double t,
         double hbar,
         KernelKind kind)
{
  if (static_cast<Eigen::Index>(s.size()) != data.d())
    fail(ErrorCode::InvalidArgument, "query covariate dimension mismatch");
  const auto weights = nw_weights(data.t(), t, hbar, kind);
  // numerator and normalizer summed in the same order, so a query above
  // every row gives exactly 1
  double acc = 0.0, all = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const auto row = data.s_row(i);
    bool below = true;
    for (size_t j = 0; j < s.size() && below; ++j)
      below = row[j] <= s[j];
    if (below)
      acc += weights.w(i);
    all += weights.w(i);
  }
  return std::min(1.0, acc / all);
}

} // namespace npdose
