#pragma once

#include "dataset.hpp"
#include "errors.hpp"
#include "kernels.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace npdose {

namespace detail {

inline double
sample_sd(const Eigen::VectorXd& x)
{
  const auto n = x.size();
  if (n < 2)
    return 0.0;
  const double mean = x.mean();
  return std::sqrt((x.array() - mean).square().sum() / static_cast<double>(n - 1));
}

//! Columns 1, z, ..., z^4 with z the standardized x (z = x - mean when x is
//! constant). Standardization leaves the fitted values unchanged.
inline Eigen::MatrixXd
quartic_basis(const Eigen::VectorXd& x, double& center, double& scale)
{
  center = x.mean();
  scale = sample_sd(x);
  if (!(scale > 0.0))
    scale = 1.0;
  Eigen::MatrixXd basis(x.size(), 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double z = (x(i) - center) / scale;
    double p = 1.0;
    for (int k = 0; k < 5; ++k) {
      basis(i, k) = p;
      p *= z;
    }
  }
  return basis;
}

inline Eigen::VectorXd
least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y)
{
  return design.colPivHouseholderQr().solve(y);
}

//! Average of the squared second derivative of the global quartic fit of y
//! on x, evaluated at the observed x.
inline double
quartic_curvature(const Eigen::VectorXd& x, const Eigen::VectorXd& y)
{
  double center, scale;
  const auto basis = quartic_basis(x, center, scale);
  const Eigen::VectorXd c = least_squares(basis, y);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double z = (x(i) - center) / scale;
    const double second = (2.0 * c(2) + 6.0 * c(3) * z + 12.0 * c(4) * z * z) /
                          (scale * scale);
    acc += second * second;
  }
  return acc / static_cast<double>(x.size());
}

inline void
require_rot_sample(const Dataset& data)
{
  if (data.n() <= 9 + data.d())
    fail(ErrorCode::InsufficientData,
         "rule-of-thumb fits need n > 9 + d observations, got n = " +
           std::to_string(data.n()));
}

} // namespace detail

//! R = RSS / (n - 5) of the global fit with basis
//! (1, T - mean, ..., (T - mean)^4, S - mean(S)).
inline double
residual_variance_hat(const Dataset& data)
{
  detail::require_rot_sample(data);
  const auto n = data.n(), d = data.d();
  double center, scale;
  const auto quartic = detail::quartic_basis(data.t(), center, scale);
  Eigen::MatrixXd design(n, 5 + d);
  design.leftCols(5) = quartic;
  for (Eigen::Index j = 0; j < d; ++j)
    design.col(5 + j) = data.s().col(j).array() - data.s().col(j).mean();
  const Eigen::VectorXd coef = detail::least_squares(design, data.y());
  const double rss = (data.y() - design * coef).squaredNorm();
  return rss / static_cast<double>(n - 5);
}

struct Curvatures
{
  double treatment = 0.0;
  std::vector<double> covariates;
};

//! Coordinatewise squared curvature of the conditional mean, each from its
//! own univariate global quartic regression.
inline Curvatures
curvature_hat(const Dataset& data)
{
  detail::require_rot_sample(data);
  Curvatures out;
  out.treatment = detail::quartic_curvature(data.t(), data.y());
  for (Eigen::Index j = 0; j < data.d(); ++j)
    out.covariates.push_back(
      detail::quartic_curvature(data.s().col(j), data.y()));
  return out;
}

inline constexpr double kCurvatureFloor = 1e-8;

//! Everything the rule-of-thumb formulas consume.
struct ROTInputs
{
  double C_h = 10.0;
  double C_b = 15.0;
  double rhat = 0.0;
  double curvature_t = 0.0;
  std::vector<double> curvature_s;
  double range_t = 0.0;
  std::vector<double> ranges_s;
  KernelKind kernel_t = KernelKind::Epanechnikov;
  KernelKind kernel_s = KernelKind::Epanechnikov;
};

struct Bandwidths
{
  double h = 0.0;
  std::vector<double> b;
  bool curvature_floored = false;
};

//! h = C_h [nu0^2 R range_T / (4 kappa2^2 C_T n)]^(1/5)
//! b_j = C_b [d nu0^(2d) R range_j / (4 kappa2^2 C_j)]^(-1/(d+5)) n^(-1/(d+1))
inline Bandwidths
rot_formula(const ROTInputs& in, double n)
{
  if (!(in.C_h > 0.0) || !(in.C_b > 0.0))
    fail(ErrorCode::InvalidScale, "scaling constants C_h and C_b must be positive");
  if (!(n > 0.0))
    fail(ErrorCode::InvalidArgument, "sample size must be positive");
  if (in.curvature_s.size() != in.ranges_s.size())
    fail(ErrorCode::InvalidArgument, "covariate curvature/range size mismatch");

  Bandwidths out;
  auto floored = [&](double c) {
    if (!(c >= kCurvatureFloor)) {
      out.curvature_floored = true;
      return kCurvatureFloor;
    }
    return c;
  };

  const double nu0_t = kernel_sq_moment(in.kernel_t, 0);
  const double kappa2_t = kernel_moment(in.kernel_t, 2);
  out.h = in.C_h * std::pow(nu0_t * nu0_t * in.rhat * in.range_t /
                              (4.0 * kappa2_t * kappa2_t *
                               floored(in.curvature_t) * n),
                            0.2);
  if (!(out.h > 0.0) || !std::isfinite(out.h))
    fail(ErrorCode::InvalidScale,
         "rule-of-thumb h is not a positive number (zero residual variance or "
         "treatment range?)");

  const auto d = static_cast<double>(in.ranges_s.size());
  const double nu0_s = kernel_sq_moment(in.kernel_s, 0);
  const double kappa2_s = kernel_moment(in.kernel_s, 2);
  for (std::size_t j = 0; j < in.ranges_s.size(); ++j) {
    const double bracket = d * std::pow(nu0_s, 2.0 * d) * in.rhat *
                           in.ranges_s[j] /
                           (4.0 * kappa2_s * kappa2_s * floored(in.curvature_s[j]));
    const double bj =
      in.C_b * std::pow(bracket, -1.0 / (d + 5.0)) * std::pow(n, -1.0 / (d + 1.0));
    if (!(bj > 0.0) || !std::isfinite(bj))
      fail(ErrorCode::InvalidScale,
           "rule-of-thumb b is not a positive number for covariate " +
             std::to_string(j + 1));
    out.b.push_back(bj);
  }
  return out;
}

struct RotOptions
{
  double C_h = 10.0;
  double C_b = 15.0;
  KernelKind kernel_t = KernelKind::Epanechnikov;
  KernelKind kernel_s = KernelKind::Epanechnikov;
  //! multiply h by sd(T) and b_j by sd(S_j)
  bool scale_by_sd = false;
};

inline ROTInputs
rot_inputs(const Dataset& data, const RotOptions& opt = {})
{
  ROTInputs in;
  in.C_h = opt.C_h;
  in.C_b = opt.C_b;
  in.kernel_t = opt.kernel_t;
  in.kernel_s = opt.kernel_s;
  in.rhat = residual_variance_hat(data);
  const auto curv = curvature_hat(data);
  in.curvature_t = curv.treatment;
  in.curvature_s = curv.covariates;
  in.range_t = data.t().maxCoeff() - data.t().minCoeff();
  for (Eigen::Index j = 0; j < data.d(); ++j)
    in.ranges_s.push_back(data.s().col(j).maxCoeff() - data.s().col(j).minCoeff());
  return in;
}

inline Bandwidths
rot_bandwidths(const Dataset& data, const RotOptions& opt = {})
{
  if (!(opt.C_h > 0.0) || !(opt.C_b > 0.0))
    fail(ErrorCode::InvalidScale, "scaling constants C_h and C_b must be positive");
  auto out = rot_formula(rot_inputs(data, opt), static_cast<double>(data.n()));
  if (opt.scale_by_sd) {
    out.h *= detail::sample_sd(data.t());
    for (Eigen::Index j = 0; j < data.d(); ++j)
      out.b[static_cast<std::size_t>(j)] *= detail::sample_sd(data.s().col(j));
    if (!(out.h > 0.0))
      fail(ErrorCode::InvalidScale, "sd-scaled h is zero (constant treatment)");
    for (double bj : out.b)
      if (!(bj > 0.0))
        fail(ErrorCode::InvalidScale, "sd-scaled b is zero (constant covariate)");
  }
  return out;
}

inline Bandwidths
rot_bandwidths(const Dataset& data, double C_h, double C_b)
{
  RotOptions opt;
  opt.C_h = C_h;
  opt.C_b = C_b;
  return rot_bandwidths(data, opt);
}

//! Normal reference rule (4 / (3n))^(1/5) sd(T).
inline double
nr_bandwidth(const Eigen::VectorXd& tvec)
{
  if (tvec.size() < 2)
    fail(ErrorCode::InsufficientData, "normal reference rule needs n >= 2");
  const double sd = detail::sample_sd(tvec);
  if (!(sd > 0.0))
    fail(ErrorCode::ZeroVariance, "treatment has zero sample variance");
  return std::pow(4.0 / (3.0 * static_cast<double>(tvec.size())), 0.2) * sd;
}

//! Defaults: rule-of-thumb h and b, normal-reference hbar.
inline EstimParams
default_params(const Dataset& data, const RotOptions& opt = {})
{
  const auto bw = rot_bandwidths(data, opt);
  EstimParams p;
  p.h = bw.h;
  p.b = bw.b;
  p.hbar = nr_bandwidth(data.t());
  p.kernel_t = opt.kernel_t;
  p.kernel_s = opt.kernel_s;
  return p;
}

} // namespace npdose
