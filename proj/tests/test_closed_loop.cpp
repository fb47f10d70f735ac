#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "twoswitch/closed_loop.hpp"
#include "twoswitch/estimator.hpp"
#include "twoswitch/presets.hpp"

using namespace twoswitch;
using testutil::scalar;

namespace {

ClosedLoopModel scalar_cl(double a, double b, double v, double w) {
  return {scalar(a), scalar(b), scalar(1), scalar(v), scalar(w), Vector::Zero(1), std::nullopt,
          scalar(1)};
}

ClosedLoopModel pendulum_cl() {
  ClosedLoopModel m;
  m.A = presets::control_A();
  m.B = presets::control_B();
  m.C = presets::position_angle_C();
  m.V = scalar(1e-3);
  m.W = 1e-3 * Matrix::Identity(2, 2);
  m.x1 = Vector::Zero(4);
  m.P1 = 0.01 * Matrix::Identity(4, 4);
  return m;
}

ChannelProbabilities probs_of(double p, double q, double p_d0) {
  ChannelProbabilities c;
  c.p = p;
  c.q = q;
  c.p_d0 = p_d0;
  c.gamma = p * q + p_d0 * (1 - q);
  return c;
}

} // namespace

TEST(ClPredict, HandWorkedScalar) {
  const ClosedLoopModel m = scalar_cl(1, 1, 1, 1);
  ClFilterState s = cl_init(m);
  s.x_post(0) = 1.0;
  s.P_post(0, 0) = 1.0;
  const auto n = cl_predict(s, Vector::Constant(1, 2.0), true, probs_of(0.5, 0.6, 0.2), m);
  EXPECT_DOUBLE_EQ(n.x_prior(0), 2.0);
  EXPECT_DOUBLE_EQ(n.P_prior(0, 0), 2.5);
  EXPECT_DOUBLE_EQ(n.X(0, 0), 4.0 + 2.5);
  EXPECT_DOUBLE_EQ(n.p_d, 0.5);
  EXPECT_EQ(n.k, 2u);
}

TEST(ClPredict, ReceiverOffDropsControlAndUsesOffTransmitProbability) {
  const ClosedLoopModel m = scalar_cl(1, 1, 1, 1);
  ClFilterState s = cl_init(m);
  s.x_post(0) = 1.0;
  s.P_post(0, 0) = 1.0;
  const auto n = cl_predict(s, Vector::Constant(1, 2.0), false, probs_of(0.5, 0.6, 0.2), m);
  EXPECT_DOUBLE_EQ(n.x_prior(0), 1.0);
  EXPECT_DOUBLE_EQ(n.P_prior(0, 0), 1.2);
  EXPECT_DOUBLE_EQ(n.p_d, 0.2);
}

TEST(ClPredict, ZeroControlIsOpenLoopPredictWithGatedNoise) {
  const ClosedLoopModel m = pendulum_cl();
  const auto probs = probs_of(0.8, 0.512, 0.3);
  for (bool sr : {true, false}) {
    ClFilterState s = cl_init(m);
    s.x_post << 0.1, 0.2, -0.3, 0.05;
    const auto n = cl_predict(s, Vector::Zero(1), sr, probs, m);
    const SystemModel open{m.A, m.C, probs.p_d(sr) * m.B * m.V * m.B.transpose() +
                                         1e-300 * Matrix::Identity(4, 4),
                           m.W, m.x1, std::nullopt, m.P1};
    FilterState o = s;
    o = predict(o, open);
    EXPECT_TRUE(n.x_prior.isApprox(o.x_prior, 1e-14));
    EXPECT_TRUE(n.P_prior.isApprox(o.P_prior, 1e-14));
  }
}

TEST(ClPredict, FullAvailabilityIsKalmanWithKnownInput) {
  const ClosedLoopModel m = pendulum_cl();
  ClFilterState s = cl_init(m);
  s.x_post << 0.1, 0.2, -0.3, 0.05;
  const Vector u = Vector::Constant(1, 0.7);
  const auto n = cl_predict(s, u, true, probs_of(1, 1, 0), m);
  EXPECT_TRUE(n.x_prior.isApprox(m.A * s.x_post + m.B * u, 1e-14));
  EXPECT_TRUE(n.P_prior.isApprox(m.A * s.P_post * m.A.transpose() + m.B * m.V * m.B.transpose(),
                                 1e-14));
}

TEST(ClPredict, InflationIsQuadraticInControl) {
  const ClosedLoopModel m = pendulum_cl();
  const auto probs = probs_of(0.6, 0.5, 0.3);
  ClFilterState s = cl_init(m);
  const Vector u = Vector::Constant(1, 1.0);
  const double base = cl_predict(s, 0.0 * u, true, probs, m).P_prior.trace();
  const double bu2 = (m.B * u).squaredNorm();
  double prev = base;
  for (double t : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double tr = cl_predict(s, t * u, true, probs, m).P_prior.trace();
    EXPECT_NEAR(tr - base, 0.6 * 0.4 * t * t * bu2, 1e-12);
    EXPECT_GT(tr, prev);
    prev = tr;
  }
}

TEST(ClPredict, CovariancesStayPsdUnderFuzz) {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u01;
  const ClosedLoopModel m = pendulum_cl();
  for (int t = 0; t < 200; ++t) {
    ClFilterState s = cl_init(m);
    Matrix L(4, 4);
    for (Eigen::Index i = 0; i < 16; ++i)
      L(i / 4, i % 4) = n(gen);
    s.P_post = L * L.transpose();
    s.x_post = Vector::NullaryExpr(4, [&] { return n(gen); });
    const double p = u01(gen), q = u01(gen);
    const auto out = cl_predict(s, Vector::Constant(1, 10 * n(gen)), u01(gen) < q,
                                probs_of(p, q, u01(gen) * p), m);
    EXPECT_TRUE(numerics::is_psd(out.P_prior));
    EXPECT_TRUE(numerics::is_psd(out.X - out.P_prior));
  }
}

TEST(Control, UsesPriorEstimateAndFeedforward) {
  const LinearController ctrl{presets::nominal_F(), Vector{}};
  Vector e1 = Vector::Zero(4);
  e1(0) = 1;
  EXPECT_NEAR(ctrl.control(e1)(0), 13.9382, 1e-12);
  const LinearController ff{presets::nominal_F(), Vector::Constant(1, 2.0)};
  EXPECT_NEAR(ff.control(e1, 0.5)(0), 13.9382 + 1.0, 1e-12);
  EXPECT_THROW(ctrl.control(Vector::Zero(3)), DimensionError);
  ClFilterState s = cl_init(pendulum_cl());
  s.x_prior = e1;
  s.x_post = Vector::Zero(4);
  EXPECT_NEAR(control(ctrl, s)(0), 13.9382, 1e-12);
}

TEST(ScaledLqr, FullAvailabilityIsPlainLqr) {
  const Matrix A = presets::control_A(), B = presets::control_B();
  const Matrix Q = presets::rescaled_Q(), R = scalar(1);
  const auto g = scaled_lqr_gain(A, B, probs_of(1, 1, 0), Q, R);
  EXPECT_TRUE(g.F.isApprox(numerics::lqr_gain(A, B, Q, R), 1e-12));
  EXPECT_LT(numerics::spectral_radius(A - B * g.F), 1.0);
}

TEST(ScaledLqr, StabilizesAveragedScalarPlant) {
  const auto g = scaled_lqr_gain(scalar(2), scalar(1), probs_of(0.9, 1.0, 0), scalar(1), scalar(1));
  EXPECT_LT(std::abs(2.0 - 0.9 * g.F(0, 0)), 1.0);
  const double pq = 0.5 * 0.512;
  const auto pend = scaled_lqr_gain(presets::control_A(), presets::control_B(), probs_of(0.5, 0.512, 0),
                                    presets::rescaled_Q(), scalar(1));
  EXPECT_LT(numerics::spectral_radius(presets::control_A() - pq * presets::control_B() * pend.F), 1.0);
}

TEST(Feedforward, UnitDcGainOnTrackedOutput) {
  const Matrix A = presets::control_A(), B = presets::control_B(), C = presets::position_angle_C();
  const Matrix F = presets::nominal_F();
  const Vector N = feedforward_gain(A, B, C, F, 0);
  const Matrix closed = Matrix::Identity(4, 4) - A + B * F;
  const Vector x_ss = closed.fullPivLu().solve(B * N);
  EXPECT_NEAR((C * x_ss)(0), 1.0, 1e-9);
  EXPECT_THROW(feedforward_gain(A, B, C, F, 2), ValidationError);
  EXPECT_THROW(feedforward_gain(scalar(1), scalar(1), scalar(1), scalar(0), 0), NumericError);
}

TEST(RunClosedLoop, FlagsDivergenceAndStops) {
  const ClosedLoopModel m = scalar_cl(2, 1, 1, 1);
  const LinearController ctrl{scalar(0), Vector{}};
  TrialStreams streams(trial_seed(1, 0));
  const auto run = run_closed_loop(m, ctrl, ChannelSchedule::single(PuTopology::uniform(1, 1, 1, 0.9)),
                                   Reference{}, 500, streams);
  ASSERT_LT(run.record.rows.size(), 500u);
  EXPECT_TRUE(run.record.diverged());
  for (std::size_t i = 0; i + 1 < run.record.rows.size(); ++i)
    EXPECT_FALSE(run.record.rows[i].diverged);
}

TEST(RunClosedLoop, StableLoopWithFullChannelStaysSmall) {
  const ClosedLoopModel m = pendulum_cl();
  const LinearController ctrl{presets::nominal_F(), Vector{}};
  TrialStreams streams(trial_seed(2, 0));
  const auto run = run_closed_loop(m, ctrl, ChannelSchedule::single(PuTopology::uniform(1, 1, 1, 1.0)),
                                   Reference{}, 2000, streams, true);
  ASSERT_EQ(run.record.rows.size(), 2000u);
  EXPECT_FALSE(run.record.diverged());
  EXPECT_EQ(run.states.size(), 2000u);
  EXPECT_LT(run.record.rows.back().x.norm(), 10.0);
}

TEST(RunClosedLoop, ReceiverOffMeansNoControlReachesPlant) {
  // Only the receiver-only PU is ever busy, so the plant sees noise alone.
  ClosedLoopModel m = scalar_cl(0.5, 1, 1, 1);
  const LinearController ctrl{scalar(0), Vector::Constant(1, 1.0)};
  Reference r;
  r.step = true;
  r.amplitude = 100.0;
  TrialStreams streams(trial_seed(3, 0));
  const PuTopology topo{0, 0, 1, {0.0}};
  const auto run = run_closed_loop(m, ctrl, ChannelSchedule::single(topo), r, 200, streams);
  for (const auto& row : run.record.rows) {
    EXPECT_FALSE(row.s_r);
    EXPECT_LT(std::abs(row.x(0)), 20.0);
  }
}
