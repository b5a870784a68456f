#include <npdose/simdata.hpp>

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>

using namespace npdose;

TEST(SimData, Truths)
{
  const auto single = sim_model(SimModelTag::SingleConf);
  EXPECT_EQ(single.truth_m(0.0), 1.0);
  EXPECT_EQ(single.truth_theta(0.0), 1.0);
  const auto linear = sim_model(SimModelTag::LinearConf);
  EXPECT_EQ(linear.truth_theta(-2.0), 1.0);
  EXPECT_EQ(linear.truth_theta(3.0), 1.0);
  const auto nonlinear = sim_model(SimModelTag::NonlinearConf);
  EXPECT_EQ(nonlinear.truth_m(1.0), 2.0);
}

TEST(SimData, DerivativeMatchesCurve)
{
  for (auto tag : { SimModelTag::SingleConf, SimModelTag::LinearConf, SimModelTag::NonlinearConf }) {
    const auto m = sim_model(tag);
    for (double t = m.support_lo; t <= m.support_hi; t += 0.173) {
      const double h = 1e-5;
      const double fd = (m.truth_m(t + h) - m.truth_m(t - h)) / (2 * h);
      EXPECT_NEAR(fd, m.truth_theta(t), 1e-6) << sim_model_name(tag) << " t=" << t;
    }
  }
}

TEST(SimData, Supports)
{
  for (auto tag : { SimModelTag::SingleConf, SimModelTag::LinearConf, SimModelTag::NonlinearConf }) {
    const auto m = sim_model(tag);
    const auto data = m.generate(20000, 1);
    EXPECT_EQ(data.d(), m.d);
    EXPECT_GE(data.t().minCoeff(), m.support_lo) << sim_model_name(tag);
    EXPECT_LE(data.t().maxCoeff(), m.support_hi) << sim_model_name(tag);
    EXPECT_GE(data.s().minCoeff(), -1.0);
    EXPECT_LE(data.s().maxCoeff(), 1.0);
  }
  EXPECT_NEAR(sim_model(SimModelTag::SingleConf).support_hi, 1.3, 0);
  EXPECT_NEAR(sim_model(SimModelTag::LinearConf).support_hi, 3.5, 0);
}

TEST(SimData, CovariateMean)
{
  const Eigen::Index n = 20000;
  const auto data = sim_model(SimModelTag::SingleConf).generate(n, 2);
  EXPECT_LE(std::abs(data.s().col(0).mean()), 3.0 * 3.0 / std::sqrt(12.0 * n));
}

TEST(SimData, NonlinearIndexRange)
{
  const auto data = sim_model(SimModelTag::NonlinearConf).generate(20000, 3);
  Eigen::VectorXd z = 4.0 * data.s().col(0) + data.s().col(1);
  EXPECT_GE(z.minCoeff(), -5.0);
  EXPECT_LE(z.maxCoeff(), 5.0);
  EXPECT_NEAR(z.mean(), 0.0, 0.1);
}

TEST(SimData, LinearOlsRecovery)
{
  const Eigen::Index n = 100000;
  const auto data = sim_model(SimModelTag::LinearConf).generate(n, 4);
  Eigen::MatrixXd x(n, 4);
  x.col(0).setOnes();
  x.col(1) = data.t();
  x.col(2) = data.s().col(0);
  x.col(3) = data.s().col(1);
  const Eigen::VectorXd coef = x.colPivHouseholderQr().solve(data.y());
  EXPECT_NEAR(coef(1), 1.0, 0.05);
  EXPECT_NEAR(coef(2), 6.0, 0.05);
  EXPECT_NEAR(coef(3), 6.0, 0.05);
}

TEST(SimData, AdditiveMeanIdentity)
{
  for (auto tag : { SimModelTag::SingleConf, SimModelTag::LinearConf, SimModelTag::NonlinearConf }) {
    const auto m = sim_model(tag);
    const auto data = m.generate(100000, 5);
    double truth_mean = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i)
      truth_mean += m.truth_m(data.t()(i));
    truth_mean /= static_cast<double>(data.n());
    EXPECT_NEAR(data.y().mean() - truth_mean, 0.0, 0.1) << sim_model_name(tag);
  }
}

TEST(SimData, Determinism)
{
  const auto m = sim_model(SimModelTag::NonlinearConf);
  const auto a = m.generate(100, 9), b = m.generate(100, 9), c = m.generate(100, 10);
  EXPECT_EQ(a.y(), b.y());
  EXPECT_EQ(a.t(), b.t());
  EXPECT_EQ(a.s(), b.s());
  EXPECT_NE(a.y(), c.y());
}

TEST(SimData, Names)
{
  EXPECT_EQ(parse_sim_model("single"), SimModelTag::SingleConf);
  EXPECT_EQ(parse_sim_model("linear_conf"), SimModelTag::LinearConf);
  EXPECT_EQ(parse_sim_model("nonlinear"), SimModelTag::NonlinearConf);
  EXPECT_EQ(sim_model_name(SimModelTag::LinearConf), "linear_conf");
  EXPECT_THROW(parse_sim_model("quadratic"), Error);
  EXPECT_THROW(sim_model(SimModelTag::SingleConf).generate(0, 1), Error);
}
