#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles/kalman.hpp"
#include "test_util.hpp"
#include "twoswitch/estimator.hpp"
#include "twoswitch/presets.hpp"

using namespace twoswitch;
using testutil::scalar;

namespace {

SystemModel scalar_model(double a, double c, double v, double w, double x1, double P1) {
  return {scalar(a), scalar(c), scalar(v), scalar(w), Vector::Constant(1, x1), std::nullopt, scalar(P1)};
}

SystemModel pendulum_model() {
  SystemModel m;
  m.A = presets::estimation_A();
  m.C = presets::position_angle_C();
  m.V = numerics::nearest_spd(presets::estimation_V(), 1e-6);
  m.W = 1e-3 * Matrix::Identity(2, 2);
  m.x1 = Vector::Zero(4);
  m.x1(0) = 1.0;
  m.xhat1 = Vector::Zero(4);
  m.P1 = Matrix::Identity(4, 4);
  return m;
}

/// Trace of (I - s pKC) P (I - s pKC)' + s K W' K', the posterior error
/// covariance of an arbitrary gain K.
double posterior_trace(const Matrix& K, const Matrix& P, const Matrix& C, const Matrix& Weff,
                       double p) {
  const Matrix I = Matrix::Identity(P.rows(), P.cols());
  const Matrix G = I - p * K * C;
  return (G * P * G.transpose() + K * Weff * K.transpose()).trace();
}

} // namespace

TEST(Init, SecondMomentFromInitialState) {
  const auto s = init(scalar_model(1, 1, 1, 1, 2, 1));
  EXPECT_DOUBLE_EQ(s.X(0, 0), 5.0);
  SystemModel m = pendulum_model();
  m.x1.setZero();
  const auto z = init(m);
  EXPECT_TRUE(z.X.isApprox(Matrix::Identity(4, 4)));
  EXPECT_TRUE(z.x_prior.isZero());
  EXPECT_TRUE(z.P_post.isApprox(m.P1));
  const auto pend = init(pendulum_model());
  EXPECT_TRUE(numerics::is_psd(pend.X));
  EXPECT_DOUBLE_EQ(pend.X(0, 0), 2.0);
}

TEST(Init, RejectsIndefiniteNoise) {
  SystemModel m = pendulum_model();
  m.V = numerics::symmetrize(presets::estimation_V());
  EXPECT_THROW(init(m), ValidationError);
  m = pendulum_model();
  m.W = Matrix::Zero(2, 2);
  EXPECT_THROW(init(m), ValidationError);
}

TEST(Predict, ScalarArithmetic) {
  const SystemModel m = scalar_model(2, 1, 1, 1, 0, 1);
  FilterState s = init(m);
  s.x_post(0) = 0.5;
  s = predict(s, m);
  EXPECT_DOUBLE_EQ(s.P_prior(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(s.x_prior(0), 1.0);
  EXPECT_DOUBLE_EQ(s.X(0, 0), 4.0 * 1.0 + 1.0);
  EXPECT_EQ(s.k, 2u);
}

TEST(Predict, IdentityWithoutNoiseKeepsState) {
  SystemModel m = scalar_model(1, 1, 1, 1, 0, 1);
  FilterState s = init(m);
  m.V = scalar(0);
  s.x_post(0) = 3.0;
  s.P_post(0, 0) = 0.7;
  const auto n = predict(s, m);
  EXPECT_EQ(n.x_prior(0), 3.0);
  EXPECT_EQ(n.P_prior(0, 0), 0.7);
}

TEST(Predict, PendulumOneStep) {
  const SystemModel m = pendulum_model();
  const auto s = predict(init(m), m);
  const Matrix X1 = m.x1 * m.x1.transpose() + m.P1;
  EXPECT_TRUE(s.X.isApprox(m.A * X1 * m.A.transpose() + m.V, 1e-14));
}

TEST(Update, HandWorkedScalar) {
  const SystemModel m = scalar_model(1, 1, 0.1, 1, 0, 1);
  FilterState s = init(m);
  s.X(0, 0) = 2.0;
  s = update(s, Vector::Constant(1, 1.0), true, 0.5, m);
  EXPECT_DOUBLE_EQ(s.W_eff(0, 0), 1.5);
  EXPECT_NEAR(s.K(0, 0), 2.0 / 7.0, 1e-15);
  EXPECT_NEAR(s.x_post(0), 2.0 / 7.0, 1e-15);
  EXPECT_NEAR(s.P_post(0, 0), 6.0 / 7.0, 1e-15);
}

TEST(Update, ReceiverOffLeavesPriorAndIgnoresY) {
  const SystemModel m = pendulum_model();
  FilterState s = predict(init(m), m);
  const auto n = update(s, Vector::Constant(2, 123.0), false, 0.8, m);
  EXPECT_TRUE(n.x_post.isApprox(s.x_prior));
  EXPECT_TRUE(n.P_post.isApprox(s.P_prior));
}

TEST(Update, FullAvailabilityIsKalmanUpdate) {
  const SystemModel m = pendulum_model();
  FilterState s = predict(init(m), m);
  s.x_prior << 0.3, -0.1, 0.2, 0.05;
  const Vector y = (Vector(2) << 0.5, 0.02).finished();
  const auto n = update(s, y, true, 1.0, m);
  EXPECT_TRUE(n.W_eff.isApprox(m.W));
  const Matrix S = m.C * s.P_prior * m.C.transpose() + m.W;
  const Matrix K = s.P_prior * m.C.transpose() * S.inverse();
  EXPECT_TRUE(n.x_post.isApprox(s.x_prior + K * (y - m.C * s.x_prior), 1e-12));
  EXPECT_TRUE(n.P_post.isApprox(s.P_prior - K * m.C * s.P_prior, 1e-12));
}

TEST(Update, InvalidInputs) {
  const SystemModel m = scalar_model(1, 1, 1, 1, 0, 1);
  const auto s = init(m);
  EXPECT_THROW(update(s, Vector::Zero(1), true, 1.5, m), ValidationError);
  EXPECT_THROW(update(s, Vector::Zero(2), true, 0.5, m), DimensionError);
}

TEST(Update, TraceNeverIncreasesAndEffectiveNoiseDominatesW) {
  std::mt19937_64 gen(21);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u;
  const SystemModel m = pendulum_model();
  for (int t = 0; t < 300; ++t) {
    FilterState s = init(m);
    Matrix L(4, 4);
    for (Eigen::Index i = 0; i < 16; ++i)
      L(i / 4, i % 4) = n(gen);
    s.P_prior = L * L.transpose();
    s.X = s.P_prior + Matrix::Identity(4, 4);
    const bool sr = u(gen) < 0.5;
    const double p = u(gen);
    const Vector y = (Vector(2) << n(gen), n(gen)).finished();
    const auto out = update(s, y, sr, p, m);
    EXPECT_LE(out.P_post.trace(), s.P_prior.trace() + 1e-9);
    EXPECT_TRUE(numerics::is_psd(out.W_eff - m.W));
    EXPECT_TRUE(numerics::is_psd(s.P_prior - out.P_post, -1e-9));
  }
}

TEST(Update, GainMinimizesPosteriorTrace) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n;
  const SystemModel m = pendulum_model();
  for (double p : {0.3, 0.5, 0.8, 1.0}) {
    FilterState s = predict(init(m), m);
    const auto out = update(s, Vector::Zero(2), true, p, m);
    const double best = posterior_trace(out.K, s.P_prior, m.C, out.W_eff, p);
    // Posterior covariance of the optimal gain equals the update's P_post.
    EXPECT_NEAR(best, out.P_post.trace(), 1e-9 * (1 + best));
    for (int t = 0; t < 40; ++t) {
      Matrix D(4, 2);
      for (Eigen::Index i = 0; i < 8; ++i)
        D(i / 2, i % 2) = n(gen);
      for (double delta : {1e-4, -1e-4})
        EXPECT_GE(posterior_trace(out.K + delta * D, s.P_prior, m.C, out.W_eff, p), best - 1e-15);
    }
  }
}

TEST(RunFilter, FullAvailabilityMatchesTextbookKalman) {
  const SystemModel m = pendulum_model();
  const auto sched = ChannelSchedule::single(PuTopology::uniform(1, 1, 1, 1.0));
  TrialStreams streams(trial_seed(3, 0));
  const auto run = run_filter(m, sched, 100, streams);
  oracle::Kalman kf(testutil::to_rows(m.A), testutil::to_rows(m.C), testutil::to_rows(m.V),
                    testutil::to_rows(m.W), testutil::to_vec(m.initial_estimate()),
                    testutil::to_rows(m.P1));
  for (std::size_t k = 0; k < run.states.size(); ++k) {
    const auto ref = kf.step(testutil::to_vec(run.record.rows[k].y), k == 0);
    for (Eigen::Index i = 0; i < 4; ++i) {
      EXPECT_NEAR(run.states[k].x_post(i), ref.x_post[std::size_t(i)],
                  1e-9 * (1 + std::abs(ref.x_post[std::size_t(i)])));
      for (Eigen::Index j = 0; j < 4; ++j)
        EXPECT_NEAR(run.states[k].P_post(i, j), ref.P_post[std::size_t(i)][std::size_t(j)],
                    1e-9 * (1 + std::abs(ref.P_post[std::size_t(i)][std::size_t(j)])));
    }
  }
}

TEST(RunFilter, NoiselessFullAvailabilityHasZeroError) {
  SystemModel m = pendulum_model();
  m.xhat1 = m.x1;
  const auto sched = ChannelSchedule::single(PuTopology::uniform(1, 1, 1, 1.0));
  FilterState s = init(m);
  m.V.setZero();
  Vector x = m.x1;
  for (int k = 1; k <= 200; ++k) {
    if (k > 1) {
      x = m.A * x;
      s = predict(s, m);
    }
    s = update(s, m.C * x, true, 1.0, m);
    EXPECT_LT((s.x_post - x).norm(), 1e-12 * (1 + x.norm()));
  }
}

TEST(RunFilter, PendulumEstimatesStayBounded) {
  const SystemModel m = pendulum_model();
  const auto sched = ChannelSchedule::single(PuTopology::uniform(1, 1, 1, 0.8));
  TrialStreams streams(trial_seed(1, 0));
  const auto run = run_filter(m, sched, 3000, streams);
  ASSERT_EQ(run.record.rows.size(), 3000u);
  double max_trace = 0;
  for (const auto& r : run.record.rows)
    max_trace = std::max(max_trace, r.trace_P_post);
  EXPECT_TRUE(std::isfinite(max_trace));
  EXPECT_LT(max_trace, 100.0);
  EXPECT_LT(run.record.rows.back().trace_P_post, run.record.rows[50].trace_P_post);
}

TEST(Consistency, EmpiricalCovarianceMatchesFilterGivenCommonReceiverHistory) {
  // Scalar system, p = 0.5; one s_r history shared by all trials, x_1 ~ N(x̂_1, P_1).
  const SystemModel m = scalar_model(0.95, 1.0, 0.5, 1.0, 0.0, 1.0);
  const PuTopology topo{1, 1, 1, {0.5, 0.8, 0.8}};
  const double p = probabilities(topo).p;
  Rng hist(77);
  std::vector<bool> s_r(50);
  for (auto&& s : s_r)
    s = sample(topo, hist).s_r;

  // Filter covariances depend only on s_r, so one pass gives the reference.
  std::vector<FilterState> ref;
  FilterState f = init(m);
  for (std::size_t k = 0; k < 50; ++k) {
    if (k > 0)
      f = predict(f, m);
    f = update(f, Vector::Zero(1), s_r[k], p, m);
    ref.push_back(f);
  }

  const int trials = 10000;
  Rng rng(1234);
  double e2_10 = 0, e2_50 = 0, x2_10 = 0, x2_50 = 0;
  for (int t = 0; t < trials; ++t) {
    double x = m.initial_estimate()(0) + std::sqrt(m.P1(0, 0)) * rng.normal();
    FilterState s = init(m);
    for (std::size_t k = 0; k < 50; ++k) {
      if (k > 0) {
        x = 0.95 * x + std::sqrt(0.5) * rng.normal();
        s = predict(s, m);
      }
      const bool st = rng.bernoulli(p);
      const double y = s_r[k] ? (st ? x : 0.0) + rng.normal() : 0.0;
      s = update(s, Vector::Constant(1, y), s_r[k], p, m);
      const double e = x - s.x_post(0);
      if (k == 9) {
        e2_10 += e * e;
        x2_10 += x * x;
      }
      if (k == 49) {
        e2_50 += e * e;
        x2_50 += x * x;
      }
    }
  }
  EXPECT_NEAR(e2_10 / trials, ref[9].P_post(0, 0), 0.1 * ref[9].P_post(0, 0));
  EXPECT_NEAR(e2_50 / trials, ref[49].P_post(0, 0), 0.1 * ref[49].P_post(0, 0));
  EXPECT_NEAR(x2_10 / trials, ref[9].X(0, 0), 0.1 * ref[9].X(0, 0));
  EXPECT_NEAR(x2_50 / trials, ref[49].X(0, 0), 0.1 * ref[49].X(0, 0));
}
