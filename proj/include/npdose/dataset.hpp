#pragma once

#include "errors.hpp"
#include "kernels.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace npdose {

using RowMatrix =
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

//! Observations (Y_i, T_i, S_i), i = 1..n. Immutable after construction.
class Dataset
{
public:
  Dataset() = default;

  Dataset(Eigen::VectorXd y, Eigen::VectorXd t, RowMatrix s)
    : y_(std::move(y))
    , t_(std::move(t))
    , s_(std::move(s))
  {
    const auto n = y_.size();
    if (n < 1)
      fail(ErrorCode::EmptyData, "dataset must contain at least one row");
    if (t_.size() != n || s_.rows() != n)
      fail(ErrorCode::InvalidArgument,
           "Y, T and S must have the same number of rows");
    if (!y_.allFinite() || !t_.allFinite() || !s_.allFinite())
      fail(ErrorCode::InvalidArgument, "dataset entries must be finite");
  }

  //! Convenience constructor for covariate-free data (d = 0).
  Dataset(Eigen::VectorXd y, Eigen::VectorXd t)
    : Dataset(y, t, RowMatrix(y.size(), 0))
  {
  }

  Eigen::Index n() const { return y_.size(); }
  Eigen::Index d() const { return s_.cols(); }

  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::VectorXd& t() const { return t_; }
  const RowMatrix& s() const { return s_; }

  std::span<const double> s_row(Eigen::Index i) const
  {
    return { s_.data() + i * s_.cols(), static_cast<size_t>(s_.cols()) };
  }

  //! Rows picked by index, in the given order (used by resampling).
  Dataset select(std::span<const Eigen::Index> rows) const
  {
    const auto m = static_cast<Eigen::Index>(rows.size());
    Eigen::VectorXd y(m), t(m);
    RowMatrix s(m, d());
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto i = rows[static_cast<size_t>(k)];
      y(k) = y_(i);
      t(k) = t_(i);
      s.row(k) = s_.row(i);
    }
    return Dataset(std::move(y), std::move(t), std::move(s));
  }

private:
  Eigen::VectorXd y_;
  Eigen::VectorXd t_;
  RowMatrix s_;
};

//! Tuning of the local polynomial fit, the conditional CDF and the reported
//! region. Bandwidths are never chosen implicitly.
struct EstimParams
{
  int q = 2;
  double h = 1.0;
  std::vector<double> b;
  double hbar = 1.0;
  KernelKind kernel_t = KernelKind::Epanechnikov;
  KernelKind kernel_s = KernelKind::Epanechnikov;
  KernelKind kernel_cdf = KernelKind::Gaussian;
  double trim_lo = 0.0;
  double trim_hi = 1.0;
  double ridge_tol = 1e-10;

  void validate(Eigen::Index d) const
  {
    if (q < 1)
      fail(ErrorCode::InvalidArgument, "polynomial order q must be >= 1");
    if (!(h > 0.0) || !std::isfinite(h))
      fail(ErrorCode::InvalidArgument, "bandwidth h must be positive");
    if (!(hbar > 0.0) || !std::isfinite(hbar))
      fail(ErrorCode::InvalidArgument, "bandwidth hbar must be positive");
    if (static_cast<Eigen::Index>(b.size()) != d)
      fail(ErrorCode::InvalidArgument,
           "covariate bandwidth vector has " + std::to_string(b.size()) +
             " entries, data has d = " + std::to_string(d));
    for (double bj : b)
      if (!(bj > 0.0) || !std::isfinite(bj))
        fail(ErrorCode::InvalidArgument, "covariate bandwidths must be positive");
    if (!(trim_lo >= 0.0 && trim_hi <= 1.0 && trim_lo < trim_hi))
      fail(ErrorCode::InvalidArgument,
           "trim fractions must satisfy 0 <= lo < hi <= 1");
    if (!(ridge_tol >= 0.0))
      fail(ErrorCode::InvalidArgument, "ridge_tol must be nonnegative");
  }
};

} // namespace npdose
