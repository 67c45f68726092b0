#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "spdm/diffusion.hpp"
#include "spdm/errors.hpp"
#include "spdm/rng.hpp"

using namespace spdm;

TEST(VpSchedule, Endpoints) {
  const auto s = vp_schedule();
  EXPECT_EQ(s.alpha(0.0), 1.0);
  EXPECT_EQ(s.sigma(0.0), 0.0);
  for (double t : {0.1, 0.5, 1.0}) {
    EXPECT_NEAR(s.alpha(t), oracle::vp_alpha(t), 1e-14);
    EXPECT_NEAR(s.sigma2(t), oracle::vp_sigma2(t), 1e-14);
  }
}

TEST(VpSchedule, DiffusionEqualsBeta) {
  const auto s = vp_schedule();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 10; ++i) {
    const double t = u(rng), h = 1e-6;
    // g² = dσ²/dt − 2 σ² dlogα/dt from finite differences of the closed forms.
    const double ds2 = (oracle::vp_sigma2(t + h) - oracle::vp_sigma2(t - h)) / (2 * h);
    const double dla = (std::log(oracle::vp_alpha(t + h)) - std::log(oracle::vp_alpha(t - h))) / (2 * h);
    const double g2_fd = ds2 - 2 * oracle::vp_sigma2(t) * dla;
    const double beta = 0.1 + (20.0 - 0.1) * t;
    EXPECT_NEAR(s.g2(t), beta, 1e-10);
    EXPECT_NEAR(g2_fd, beta, 1e-6);
  }
}

TEST(VpSchedule, EtaDecreasing) {
  const auto s = vp_schedule();
  double prev = s.eta(0.001);
  for (int i = 2; i <= 1000; ++i) {
    const double e = s.eta(0.001 * i);
    EXPECT_LT(e, prev);
    prev = e;
  }
}

TEST(VpSchedule, RejectsBadParams) {
  EXPECT_THROW(vp_schedule(0.0, 20.0), InvalidParams);
  EXPECT_THROW(vp_schedule(5.0, 1.0), InvalidParams);
  EXPECT_THROW(ve_schedule(1.0, 0.5), InvalidParams);
}

TEST(VeSchedule, Basics) {
  const auto s = ve_schedule(0.01, 10.0);
  Vector x(3);
  x << 1, -2, 3;
  EXPECT_EQ(s.drift(x, 0.4), Vector::Zero(3));
  EXPECT_NEAR(s.sigma(1.0), 10.0, 1e-12);
  for (int i = 1; i <= 100; ++i) EXPECT_GT(s.g2(0.01 * i), 0.0);
}

TEST(Transition, Endpoints) {
  Vector x0(2);
  x0 << 0.7, -1.1;
  const auto p0 = transition(vp_schedule(), x0, 0.0);
  EXPECT_EQ(p0.mean, x0);
  EXPECT_EQ(p0.variance, 0.0);
  const auto pT = transition(ve_schedule(0.01, 10.0), x0, 1.0);
  EXPECT_EQ(pT.mean, x0);
  EXPECT_NEAR(pT.variance, 100.0, 1e-9);
  EXPECT_THROW(transition(vp_schedule(), x0, 1.5), TimeOutOfRange);
}

TEST(Transition, MonteCarloMoments) {
  const auto s = vp_schedule();
  const double t = 0.3;
  Vector x0(1);
  x0 << 2.0;
  const auto p = transition(s, x0, t);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n01;
  const int n = 100000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    // Closed form: x_t = α x0 + σ ε.
    const double v = oracle::vp_alpha(t) * 2.0 + std::sqrt(oracle::vp_sigma2(t)) * n01(rng);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, p.mean[0], 3 * std::sqrt(var / n));
  EXPECT_NEAR(var, p.variance, 3 * var * std::sqrt(2.0 / n));
}

TEST(BridgeH, VeSpecialCases) {
  const auto s = ve_schedule(1e-4, 5.0);
  Vector x0(2), xT(2);
  x0 << 0.3, 0.1;
  xT << -1.0, 2.0;
  const Vector h = grad_log_transition_h(s, x0, xT, 0.0);
  EXPECT_LE(((h - (xT - x0) / 25.0).cwiseAbs()).maxCoeff(), 1e-8);
  EXPECT_EQ(grad_log_transition_h(s, xT, xT, 0.4), Vector::Zero(2));
  EXPECT_THROW(grad_log_transition_h(s, x0, xT, 1.0), SingularAtTerminal);
}

TEST(BridgeH, VpMatchesFiniteDifferenceOfTransition) {
  const auto s = vp_schedule();
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.05, 0.9);
  for (int i = 0; i < 5; ++i) {
    const double t = u(rng);
    const Vector xt = standard_normal(rng, 3), xT = standard_normal(rng, 3);
    // x_T | x_t ~ N((α_T/α_t) x_t, α_T² (1/η_T − 1/η_t)) with η = α²/σ².
    const double at = oracle::vp_alpha(t), aT = oracle::vp_alpha(1.0);
    const double eta_t = at * at / oracle::vp_sigma2(t), eta_T = aT * aT / oracle::vp_sigma2(1.0);
    const double var = aT * aT * (1 / eta_T - 1 / eta_t);
    const auto logp = [&](const Vector& x) { return oracle::gaussian_logpdf(xT, (aT / at) * x, var); };
    EXPECT_LT(oracle::rel_err(grad_log_transition_h(s, xt, xT, t), oracle::central_gradient(logp, xt)), 1e-5);
  }
}

TEST(BridgeKernel, VeHalfwayAndEndpoints) {
  const double smin = 1e-3, smax = 4.0;
  const auto s = ve_schedule(smin, smax);
  // σ_t² = σ_T²/2 at t = T·log(σmax/√2/σmin)/log(σmax/σmin).
  const double t = std::log(smax / std::sqrt(2.0) / smin) / std::log(smax / smin);
  Vector x0(2), xT(2);
  x0 << 1.0, -2.0;
  xT << 3.0, 0.5;
  const auto k = bridge_kernel(s, x0, xT, t);
  EXPECT_LE((k.mean - 0.5 * (x0 + xT)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(k.variance, smax * smax / 4, 1e-10);
  const auto kT = bridge_kernel(s, x0, xT, 1.0);
  EXPECT_LE((kT.mean - xT).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(kT.variance, 0.0);
  const auto s2 = vp_schedule();
  const auto k0 = bridge_kernel(s2, x0, xT, 0.0);
  EXPECT_LE((k0.mean - x0).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(k0.variance, 1e-12);
}

TEST(BridgeDrift, VeFormula) {
  const auto s = ve_schedule(0.01, 3.0);
  Vector x(2), xT(2);
  x << 0.2, -0.4;
  xT << 1.0, 1.0;
  const double t = 0.37;
  const Vector expect = s.g2(t) * (xT - x) / (9.0 - s.sigma2(t));
  EXPECT_LE((bridge_forward_drift(s, x, xT, t) - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(bridge_forward_drift(s, xT, xT, t), Vector::Zero(2));
}

TEST(BridgeDrift, ForwardSimulationMatchesKernel) {
  const auto s = vp_schedule();
  Vector x0(1), xT(1);
  x0 << 0.8;
  xT << -0.5;
  const std::size_t n = 4000, steps = 2000;
  const double dt = (1.0 - s.t_clip()) / steps;
  std::vector<double> checkpoints{0.2, 0.4, 0.5, 0.6, 0.8};
  std::vector<std::vector<double>> snaps(checkpoints.size());
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n01;
  for (std::size_t c = 0; c < n; ++c) {
    Vector x = x0;
    std::size_t next = 0;
    for (std::size_t i = 0; i < steps; ++i) {
      const double t = i * dt;
      x += bridge_forward_drift(s, x, xT, t) * dt + Vector::Constant(1, std::sqrt(s.g2(t) * dt) * n01(rng));
      const double t1 = (i + 1) * dt;
      while (next < checkpoints.size() && t1 >= checkpoints[next] - 1e-12) snaps[next++].push_back(x[0]);
    }
    if (c == 0) EXPECT_LT(std::abs(x[0] - xT[0]), 6 * std::sqrt(bridge_kernel(s, x0, xT, 1.0 - s.t_clip()).variance) + 1e-3);
  }
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    const auto ref = bridge_kernel(s, x0, xT, checkpoints[k]);
    double mean = 0, sq = 0;
    for (double v : snaps[k]) mean += v;
    mean /= n;
    for (double v : snaps[k]) sq += (v - mean) * (v - mean);
    const double var = sq / n;
    EXPECT_NEAR(mean, ref.mean[0], 4 * std::sqrt(ref.variance / n)) << "t=" << checkpoints[k];
    EXPECT_NEAR(var, ref.variance, 4 * ref.variance * std::sqrt(2.0 / n) + 2e-3 * ref.variance) << "t=" << checkpoints[k];
  }
}

TEST(BridgeH, Equivariant) {
  const auto s = vp_schedule();
  std::mt19937_64 rng(15);
  const Vector x = standard_normal(rng, 2), xT = standard_normal(rng, 2);
  Matrix r(2, 2);
  r << 0, -1, 1, 0;
  EXPECT_LE((grad_log_transition_h(s, r * x, r * xT, 0.5) - r * grad_log_transition_h(s, x, xT, 0.5)).norm(), 1e-12);
}
