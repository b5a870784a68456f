#pragma once

#include "dataset.hpp"
#include "errors.hpp"
#include "kernels.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace npdose {

//! Solution of one partial local polynomial problem at (t, s).
struct LocalFit
{
  Eigen::VectorXd beta;  //!< (q+1) coefficients of the treatment polynomial
  Eigen::VectorXd alpha; //!< d coefficients of the covariate block
  Eigen::Index eff_points = 0;
  bool rank_deficient = false;
};

//! (1, (T_i-t), ..., (T_i-t)^q, S_i1-s_1, ..., S_id-s_d)
inline Eigen::VectorXd
build_design_row(double t,
                 std::span<const double> s,
                 double t_i,
                 std::span<const double> s_i,
                 int q)
{
  if (q < 1)
    fail(ErrorCode::InvalidArgument, "polynomial order q must be >= 1");
  if (s.size() != s_i.size())
    fail(ErrorCode::InvalidArgument, "covariate dimension mismatch");
  const auto d = static_cast<Eigen::Index>(s.size());
  Eigen::VectorXd row(q + 1 + d);
  const double dt = t_i - t;
  double p = 1.0;
  for (int k = 0; k <= q; ++k) {
    row(k) = p;
    p *= dt;
  }
  for (Eigen::Index j = 0; j < d; ++j)
    row(q + 1 + j) = s_i[static_cast<size_t>(j)] - s[static_cast<size_t>(j)];
  return row;
}

inline double
mu_hat(const LocalFit& fit)
{
  return fit.beta(0);
}

inline double
beta2_hat(const LocalFit& fit)
{
  return fit.beta(1);
}

//! Local weighted least squares over a fixed dataset. Construction sorts the
//! treatment and the first covariate once so that compact kernels only visit
//! observations inside their window.
class LocalPolyFitter
{
public:
  //! Per-thread scratch space.
  struct Workspace
  {
    std::vector<std::pair<Eigen::Index, double>> hits;
    Eigen::VectorXd row;
  };

  LocalPolyFitter(const Dataset& data, EstimParams params)
    : data_(&data)
    , params_(std::move(params))
  {
    params_.validate(data.d());
    if (has_compact_support(params_.kernel_t))
      sort_column(data.t(), by_t_, t_sorted_);
    if (data.d() > 0 && has_compact_support(params_.kernel_s)) {
      Eigen::VectorXd s0 = data.s().col(0);
      sort_column(s0, by_s0_, s0_sorted_);
    }
  }

  const EstimParams& params() const { return params_; }
  const Dataset& data() const { return *data_; }

  //! Returns std::nullopt when no observation has positive weight.
  std::optional<LocalFit> try_fit(double t,
                                  std::span<const double> s,
                                  Workspace& ws) const
  {
    const auto& data = *data_;
    const int q = params_.q;
    const auto d = data.d();
    const auto p = q + 1 + d;
    if (static_cast<Eigen::Index>(s.size()) != d)
      fail(ErrorCode::InvalidArgument, "query covariate dimension mismatch");

    gather(t, s, ws);
    if (ws.hits.empty())
      return std::nullopt;

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    ws.row.resize(p);
    const double inv_h = 1.0 / params_.h;
    const auto& y = data.y();
    const auto& tv = data.t();
    for (const auto& [i, w] : ws.hits) {
      const double u = (tv(i) - t) * inv_h;
      double pw = 1.0;
      for (int m = 0; m <= q; ++m) {
        ws.row(m) = pw;
        pw *= u;
      }
      const double* si = data.s().data() + i * d;
      for (Eigen::Index j = 0; j < d; ++j)
        ws.row(q + 1 + j) = (si[j] - s[static_cast<size_t>(j)]) / params_.b[j];
      const double wy = w * y(i);
      for (Eigen::Index c = 0; c < p; ++c) {
        const double wc = w * ws.row(c);
        rhs(c) += wy * ws.row(c);
        for (Eigen::Index r = 0; r <= c; ++r)
          gram(r, c) += wc * ws.row(r);
      }
    }
    gram.triangularView<Eigen::StrictlyLower>() = gram.transpose();

    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(params_.ridge_tol);
    cod.compute(gram);
    Eigen::VectorXd gamma = cod.solve(rhs);
    const bool deficient = cod.rank() < p;
    if (deficient) {
      // Minimum norm over the non-intercept coefficients only: profile the
      // intercept out with weighted centring, so a response that is constant
      // on the window never leaks into the slopes.
      const double total = gram(0, 0);
      const Eigen::VectorXd mean = gram.row(0).tail(p - 1).transpose() / total;
      const double ybar = rhs(0) / total;
      const Eigen::MatrixXd centred =
        gram.bottomRightCorner(p - 1, p - 1) - total * mean * mean.transpose();
      const Eigen::VectorXd crhs = rhs.tail(p - 1) - total * ybar * mean;
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> slopes;
      slopes.setThreshold(params_.ridge_tol);
      slopes.compute(centred);
      gamma.tail(p - 1) = slopes.solve(crhs);
      gamma(0) = ybar - mean.dot(gamma.tail(p - 1));
    }

    LocalFit fit;
    fit.beta.resize(q + 1);
    double scale = 1.0;
    for (int m = 0; m <= q; ++m) {
      fit.beta(m) = gamma(m) * scale;
      scale *= inv_h;
    }
    fit.alpha.resize(d);
    for (Eigen::Index j = 0; j < d; ++j)
      fit.alpha(j) = gamma(q + 1 + j) / params_.b[j];
    fit.eff_points = static_cast<Eigen::Index>(ws.hits.size());
    fit.rank_deficient = deficient;
    return fit;
  }

  std::optional<LocalFit> try_fit(double t, std::span<const double> s) const
  {
    Workspace ws;
    return try_fit(t, s, ws);
  }

  LocalFit fit(double t, std::span<const double> s) const
  {
    auto result = try_fit(t, s);
    if (!result)
      fail(ErrorCode::NoLocalData,
           "no observation has positive kernel weight at t = " +
             std::to_string(t) + "; widen h or b");
    return *result;
  }

private:
  static void sort_column(const Eigen::VectorXd& col,
                          std::vector<Eigen::Index>& order,
                          std::vector<double>& sorted)
  {
    order.resize(static_cast<size_t>(col.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{ 0 });
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
      return col(a) < col(b);
    });
    sorted.resize(order.size());
    for (size_t k = 0; k < order.size(); ++k)
      sorted[k] = col(order[k]);
  }

  double weight(Eigen::Index i, double t, std::span<const double> s) const
  {
    const auto& data = *data_;
    double w = eval_kernel(params_.kernel_t, (data.t()(i) - t) / params_.h);
    if (w == 0.0)
      return 0.0;
    const auto d = data.d();
    const double* si = data.s().data() + i * d;
    for (Eigen::Index j = 0; j < d && w != 0.0; ++j)
      w *= eval_kernel(params_.kernel_s,
                       (si[j] - s[static_cast<size_t>(j)]) / params_.b[j]);
    return w;
  }

  //! Collects observations with positive weight, in index order.
  void gather(double t, std::span<const double> s, Workspace& ws) const
  {
    ws.hits.clear();
    const auto n = data_->n();

    auto window = [](const std::vector<double>& sorted, double lo, double hi) {
      auto first = std::lower_bound(sorted.begin(), sorted.end(), lo);
      auto last = std::upper_bound(first, sorted.end(), hi);
      return std::pair{ static_cast<size_t>(first - sorted.begin()),
                        static_cast<size_t>(last - sorted.begin()) };
    };

    const std::vector<Eigen::Index>* order = nullptr;
    std::pair<size_t, size_t> range{ 0, static_cast<size_t>(n) };
    if (!by_t_.empty()) {
      order = &by_t_;
      const double reach = params_.h * (1.0 + 1e-9);
      range = window(t_sorted_, t - reach, t + reach);
    }
    if (!by_s0_.empty()) {
      const double reach = params_.b[0] * (1.0 + 1e-9);
      auto r = window(s0_sorted_, s[0] - reach, s[0] + reach);
      if (order == nullptr || r.second - r.first < range.second - range.first) {
        order = &by_s0_;
        range = r;
      }
    }

    if (order == nullptr) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double w = weight(i, t, s);
        if (w > 0.0)
          ws.hits.emplace_back(i, w);
      }
      return;
    }

    for (size_t k = range.first; k < range.second; ++k) {
      const auto i = (*order)[k];
      const double w = weight(i, t, s);
      if (w > 0.0)
        ws.hits.emplace_back(i, w);
    }
    // summation order must not depend on which window was scanned
    std::sort(ws.hits.begin(), ws.hits.end(), [](const auto& a, const auto& b) {
      return a.first < b.first;
    });
  }

  const Dataset* data_;
  EstimParams params_;
  std::vector<Eigen::Index> by_t_;
  std::vector<double> t_sorted_;
  std::vector<Eigen::Index> by_s0_;
  std::vector<double> s0_sorted_;
};

//! One-shot fit; throws NoLocalData when the kernel window is empty.
inline LocalFit
local_fit(const Dataset& data,
          double t,
          std::span<const double> s,
          const EstimParams& params)
{
  return LocalPolyFitter(data, params).fit(t, s);
}

} // namespace npdose
