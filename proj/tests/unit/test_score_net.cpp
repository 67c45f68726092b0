#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "spdm/errors.hpp"
#include "spdm/mlp.hpp"
#include "spdm/rng.hpp"
#include "spdm/score_oracle.hpp"
#include "spdm/tied_conv.hpp"
#include "spdm/trainer.hpp"

using namespace spdm;

namespace {

Matrix rand_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  return oracle::normal_columns(rng, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
}

double half_sq(const Mlp& m, const Matrix& x, const Matrix& y, const Vector& t) {
  return 0.5 * m.forward(x, y, t).squaredNorm();
}

double max_rel(const Vector& a, const Vector& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1e-3, std::abs(a[i]) + std::abs(b[i])));
  return worst;
}

Vector fd_gradient(Vector params, const std::function<double(const Vector&)>& f) {
  Vector g(params.size());
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = f(params);
    params[i] = keep - h;
    const double down = f(params);
    params[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

Matrix gmm_data(std::size_t n, std::uint64_t seed) {
  Vector m1(2), m2(2);
  m1 << 1.5, 0.5;
  m2 << 0.3, 1.2;
  const auto mix = symmetrize(GaussianMixture({{0.6, m1, 0.05}, {0.4, m2, 0.08}}), make_point_group_2d(4, false));
  std::mt19937_64 rng(seed);
  return mix.sample(rng, n);
}

}  // namespace

TEST(Mlp, ZeroWeightsGiveFinalBias) {
  Mlp m(2, 0, {4}, 1.0);
  Vector p = Vector::Zero(static_cast<Eigen::Index>(m.parameter_count()));
  p.tail(2) << 0.25, -0.5;
  m.set_parameters(p);
  Vector x(2);
  x << 3, 4;
  const Vector out = m.evaluate(x, Vector(), 0.3);
  EXPECT_EQ(out[0], 0.25);
  EXPECT_EQ(out[1], -0.5);
}

TEST(Mlp, DeterministicAndBounded) {
  Mlp m(2, 0, {16, 16}, 1.0);
  m.initialize(31);
  Vector x(2);
  x << 1e6, -1e6;
  const Vector a = m.evaluate(x, Vector(), 0.5), b = m.evaluate(x, Vector(), 0.5);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.allFinite());
  Mlp other(2, 0, {16, 16}, 1.0);
  other.initialize(31);
  EXPECT_EQ(other.parameters(), m.parameters());
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(32);
  Mlp m(3, 2, {6, 5}, 1.0);
  m.initialize(33);
  const Matrix x = rand_mat(rng, 3, 4), y = rand_mat(rng, 2, 4);
  const Vector t = Vector::LinSpaced(4, 0.1, 0.9);
  Mlp::Tape tape;
  const Matrix out = m.forward(x, y, t, &tape);
  const Vector grad = m.backward(tape, out);
  const Vector fd = fd_gradient(m.parameters(), [&](const Vector& p) {
    Mlp probe = m;
    probe.set_parameters(p);
    return half_sq(probe, x, y, t);
  });
  EXPECT_LT(max_rel(grad, fd), 1e-5);
}

TEST(Mlp, BiasGradientEqualsAdjoint) {
  Mlp m(2, 0, {3}, 1.0);
  m.initialize(34);
  Mlp::Tape tape;
  m.forward(Matrix::Zero(2, 1), Matrix(0, 1), Vector::Constant(1, 0.0), &tape);
  Matrix adj(2, 1);
  adj << 0.7, -1.3;
  const Vector g = m.backward(tape, adj);
  EXPECT_EQ(g.tail(2), adj.col(0));
}

TEST(Mlp, LinearNetGradientIsLeastSquares) {
  std::mt19937_64 rng(35);
  Mlp m(2, 0, {}, 1.0);
  m.initialize(36);
  const Matrix x = rand_mat(rng, 2, 7), target = rand_mat(rng, 2, 7);
  const Vector t = Vector::LinSpaced(7, 0.0, 1.0);
  Mlp::Tape tape;
  const Matrix out = m.forward(x, Matrix(0, 7), t, &tape);
  const Vector g = m.backward(tape, out - target);
  // Loss ½‖W u + b − target‖² over the input features u: ∂W = R uᵀ, ∂b = R 1.
  const Matrix u = m.input_batch(x, Matrix(0, 7), t);
  const Matrix r = out - target;
  const Matrix gw = r * u.transpose();
  Eigen::Map<const Matrix> got_w(g.data(), 2, u.rows());
  EXPECT_LE((got_w - gw).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((g.tail(2) - r.rowwise().sum()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ScoreNet, TiedCopiesAreEquivariant) {
  const auto g = make_point_group_2d(4, true);
  Mlp m(2, 0, {8}, 1.0);
  m.initialize(37);
  const ScoreNet net(m, g);
  const auto f = net.field();
  std::mt19937_64 rng(38);
  for (int i = 0; i < 20; ++i) {
    const Vector x = standard_normal(rng, 2);
    for (const auto& k : g.elements()) EXPECT_LE((f(k.apply(x), Vector(), 0.3) - k.apply(f(x, Vector(), 0.3))).norm(), 1e-12);
  }
}

TEST(ScoreNet, TiedGradient) {
  std::mt19937_64 rng(39);
  Mlp m(2, 0, {5}, 1.0);
  m.initialize(40);
  const ScoreNet net(m, make_point_group_2d(4, false));
  const Matrix x = rand_mat(rng, 2, 3);
  const Vector t = Vector::LinSpaced(3, 0.2, 0.7);
  ScoreNet::Tape tape;
  const Matrix out = net.forward(x, Matrix(0, 3), t, &tape);
  const Vector grad = net.backward(tape, out);
  const Vector fd = fd_gradient(net.parameters(), [&](const Vector& p) {
    ScoreNet probe = net;
    probe.parameters() = p;
    return 0.5 * probe.forward(x, Matrix(0, 3), t).squaredNorm();
  });
  EXPECT_LT(max_rel(grad, fd), 1e-5);
}

TEST(DsmLoss, OracleBeatsZeroFunction) {
  const auto s = vp_schedule();
  Vector m1(2), m2(2);
  m1 << 1.5, 0.5;
  m2 << 0.3, 1.2;
  const auto mix = symmetrize(GaussianMixture({{0.6, m1, 0.05}, {0.4, m2, 0.08}}), make_point_group_2d(4, false));
  std::mt19937_64 rng(41);
  const Matrix x0 = mix.sample(rng, 4096);
  const NoisedBatch batch = noise_batch(s, x0, Matrix(0, 4096), rng);
  double oracle_loss = 0.0;
  for (Eigen::Index j = 0; j < 4096; ++j)
    oracle_loss += (batch.sigmas[j] * diffused_score(mix, s, batch.x_t.col(j), batch.times[j]) + batch.noise.col(j)).squaredNorm();
  oracle_loss /= 4096;
  Mlp zero(2, 0, {4}, 1.0);
  const LossTerms z = dsm_loss(ScoreNet(zero), batch);
  EXPECT_NEAR(z.loss, batch.noise.squaredNorm() / 4096, 1e-12);
  EXPECT_LT(oracle_loss, z.loss);
  EXPECT_GE(oracle_loss, 0.0);
}

TEST(DsmLoss, GradientMatchesFiniteDifferences) {
  const auto s = vp_schedule();
  std::mt19937_64 rng(42);
  Mlp m(2, 0, {6}, 1.0);
  m.initialize(43);
  const ScoreNet net(m);
  const NoisedBatch batch = noise_batch(s, rand_mat(rng, 2, 5), Matrix(0, 5), rng);
  const LossTerms terms = dsm_loss(net, batch);
  const Vector fd = fd_gradient(net.parameters(), [&](const Vector& p) {
    ScoreNet probe = net;
    probe.parameters() = p;
    return dsm_loss(probe, batch).loss;
  });
  EXPECT_LT(max_rel(terms.gradient, fd), 1e-5);
}

TEST(DsmLoss, LinearModelRidgeMinimizer) {
  // One data point, VE: the loss is quadratic in (W, b) of a linear model; its minimizer solves the normal equations.
  const auto s = ve_schedule(0.5, 5.0);
  std::mt19937_64 rng(44);
  Matrix x0(1, 64);
  x0.setConstant(0.7);
  const NoisedBatch batch = noise_batch(s, x0, Matrix(0, 64), rng);
  Mlp m(1, 0, {}, 1.0);
  const Matrix u = m.input_batch(batch.x_t, Matrix(0, 64), batch.times);
  // Residual σ_j(w·u_j + b) + ε_j: least squares in the augmented design [σu; σ].
  Matrix design(64, u.rows() + 1);
  for (Eigen::Index j = 0; j < 64; ++j) {
    design.row(j).head(u.rows()) = batch.sigmas[j] * u.col(j).transpose();
    design(j, u.rows()) = batch.sigmas[j];
  }
  const Vector rhs = -batch.noise.row(0).transpose();
  const Vector sol = (design.transpose() * design).ldlt().solve(design.transpose() * rhs);
  m.set_parameters(sol);
  const LossTerms at_min = dsm_loss(ScoreNet(m), batch);
  EXPECT_LE(at_min.gradient.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Regularizer, ZeroForEquivariantNetAtEma) {
  const auto g = make_point_group_2d(4, false);
  Mlp m(2, 0, {6}, 1.0);
  m.initialize(45);
  const ScoreNet net(m, g);
  std::mt19937_64 rng(46);
  const LossTerms r = equivariance_regularizer(net, net, g, vp_schedule(), rand_mat(rng, 2, 16), Matrix(0, 16), rng);
  EXPECT_LE(r.loss, 1e-24);
}

TEST(Regularizer, TrivialGroupMeasuresEmaDistance) {
  const auto g = make_trivial_group(2);
  Mlp m(2, 0, {6}, 1.0);
  m.initialize(47);
  const ScoreNet net(m);
  std::mt19937_64 rng(48);
  const NoisedBatch batch = noise_batch(vp_schedule(), rand_mat(rng, 2, 8), Matrix(0, 8), rng);
  EXPECT_EQ(equivariance_regularizer(net, net, g, batch, rng).loss, 0.0);
  ScoreNet ema = net;
  ema.parameters().array() += 0.01;
  const double expect = (net.forward(batch.x_t, batch.y, batch.times) - ema.forward(batch.x_t, batch.y, batch.times)).squaredNorm() / 8;
  EXPECT_NEAR(equivariance_regularizer(net, ema, g, batch, rng).loss, expect, 1e-14);
}

TEST(Regularizer, GradientTreatsEmaAsConstant) {
  const auto g = make_point_group_2d(4, true);
  Mlp m(2, 0, {5}, 1.0);
  m.initialize(49);
  const ScoreNet net(m);
  ScoreNet ema = net;
  ema.parameters().array() *= 0.9;
  std::mt19937_64 rng(50);
  const NoisedBatch batch = noise_batch(vp_schedule(), rand_mat(rng, 2, 6), Matrix(0, 6), rng);
  auto r0 = std::mt19937_64(51);
  const LossTerms terms = equivariance_regularizer(net, ema, g, batch, r0);
  const Vector fd = fd_gradient(net.parameters(), [&](const Vector& p) {
    ScoreNet probe = net;
    probe.parameters() = p;
    auto r = std::mt19937_64(51);
    return equivariance_regularizer(probe, ema, g, batch, r).loss;
  });
  EXPECT_LT(max_rel(terms.gradient, fd), 1e-5);
}

TEST(Ema, UpdateRule) {
  Vector a(3), b(3);
  a << 1, 2, 3;
  b << -1, 0, 5;
  EXPECT_EQ(ema_update(a, b, 0.0), b);
  EXPECT_EQ(ema_update(b, b, 0.9), b);
  EXPECT_EQ(TrainerConfig{}.ema_rate, 0.999);
  EXPECT_THROW(ema_update(a, b, 1.0), InvalidParams);
}

TEST(TiedKernel, FlipPattern) {
  const TiedKernel k(KernelSymmetry::flip, 3);
  EXPECT_EQ(k.spatial_free_count(), 6u);
  const auto& o = k.position_orbits();
  EXPECT_EQ(o[0], o[2]);
  EXPECT_EQ(o[3], o[5]);
  EXPECT_EQ(o[6], o[8]);
  EXPECT_EQ(std::set<std::size_t>({o[0], o[1], o[3], o[4], o[6], o[7]}).size(), 6u);
}

TEST(TiedKernel, RotationPatterns) {
  EXPECT_EQ(TiedKernel(KernelSymmetry::c4, 5).spatial_free_count(), 7u);
  EXPECT_EQ(TiedKernel(KernelSymmetry::d4, 5).spatial_free_count(), 6u);
  EXPECT_EQ(TiedKernel(KernelSymmetry::d4, 5, 2, 3).free_parameter_count(), 36u);
  EXPECT_THROW(TiedKernel(KernelSymmetry::c4, 4), UnsupportedSize);
  EXPECT_THROW(TiedKernel(KernelSymmetry::c4, 1), UnsupportedSize);
}

TEST(TiedKernel, ExpandedKernelIsFixedByGroup) {
  for (auto sym : {KernelSymmetry::flip, KernelSymmetry::c4, KernelSymmetry::d4}) {
    TiedKernel k(sym, 5);
    k.randomize(52);
    const Vector w = k.expand().weights;
    const auto g = k.kernel_group();
    for (const auto& e : g.elements()) EXPECT_EQ(e.apply(w), w);
  }
}

TEST(Conv2d, MatchesDirectLoopsAndIdentity) {
  std::mt19937_64 rng(53);
  const GridShape shape{6, 6, 2};
  const Vector x = standard_normal(rng, shape.size());
  const DenseKernel k = DenseKernel::random(3, 2, 3, 54);
  const Vector expect = oracle::conv(k.weights, 3, 2, 3, x, 6);
  EXPECT_LE((conv2d(k, x, shape) - expect).cwiseAbs().maxCoeff(), 1e-12);
  DenseKernel id{3, 2, 2, Vector::Zero(36)};
  for (std::size_t c = 0; c < 2; ++c) id.weights[static_cast<Eigen::Index>(id.index(1, 1, c, c))] = 1.0;
  EXPECT_EQ(conv2d(id, x, shape), x);
}

TEST(Conv2d, TiedCommutesDenseDoesNot) {
  std::mt19937_64 rng(55);
  const GridShape in{8, 8, 1}, out{8, 8, 1};
  for (auto sym : {KernelSymmetry::flip, KernelSymmetry::c4, KernelSymmetry::d4}) {
    TiedKernel k(sym, sym == KernelSymmetry::flip ? 3 : 5);
    k.randomize(56);
    const DenseKernel d = DenseKernel::random(k.size(), 1, 1, 57);
    const auto g = symmetry_group(sym, in);
    const Vector x = standard_normal(rng, in.size());
    double tied = 0, dense = 0;
    for (const auto& e : g.elements()) {
      tied = std::max(tied, (conv2d(k, e.apply(x), in) - e.apply(conv2d(k, x, in))).cwiseAbs().maxCoeff());
      dense = std::max(dense, (conv2d(d, e.apply(x), in) - e.apply(conv2d(d, x, in))).cwiseAbs().maxCoeff());
    }
    EXPECT_LE(tied, 1e-12);
    EXPECT_GT(dense, 0.01);
  }
  (void)out;
}

TEST(TiedConvNet, InvariantPooledFeatures) {
  const TiedConvNet net(KernelSymmetry::d4, 3, {1, 4, 4}, 58);
  const GridShape shape{8, 8, 1};
  const auto g = make_d4_group(shape);
  std::mt19937_64 rng(59);
  const Vector x = standard_normal(rng, shape.size());
  const Vector base = net.pooled(x, shape);
  for (const auto& e : g.elements()) EXPECT_LE((net.pooled(e.apply(x), shape) - base).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Train, ZeroStepsKeepsInitialization) {
  Mlp m(2, 0, {8}, 1.0);
  m.initialize(60);
  auto state = initial_train_state(ScoreNet(m));
  TrainerConfig cfg;
  cfg.steps = 0;
  train(state, cfg, gmm_data(100, 61), Matrix(), vp_schedule(), std::nullopt, TrainMode::plain);
  EXPECT_EQ(state.net.parameters(), m.parameters());
  EXPECT_TRUE(state.losses.empty());
}

TEST(Train, DeterministicResumeAndZeroWeight) {
  const Matrix data = gmm_data(500, 62);
  const auto g = make_point_group_2d(4, false);
  Mlp m(2, 0, {16}, 1.0);
  m.initialize(63);
  TrainerConfig cfg;
  cfg.steps = 30;
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-3;
  cfg.seed = 64;

  auto a = initial_train_state(ScoreNet(m));
  train(a, cfg, data, Matrix(), vp_schedule(), g, TrainMode::plain);
  auto b = initial_train_state(ScoreNet(m));
  cfg.steps = 12;
  train(b, cfg, data, Matrix(), vp_schedule(), g, TrainMode::plain);
  cfg.steps = 30;
  train(b, cfg, data, Matrix(), vp_schedule(), g, TrainMode::plain);
  EXPECT_EQ(a.net.parameters(), b.net.parameters());
  EXPECT_EQ(a.ema, b.ema);
  EXPECT_EQ(a.losses, b.losses);

  auto c = initial_train_state(ScoreNet(m));
  cfg.regularizer_weight = 0.0;
  train(c, cfg, data, Matrix(), vp_schedule(), g, TrainMode::regularized);
  EXPECT_EQ(a.net.parameters(), c.net.parameters());
  EXPECT_EQ(a.losses, c.losses);
}

TEST(Train, LossDecreases) {
  Mlp m(2, 0, {32, 32}, 1.0);
  m.initialize(65);
  auto state = initial_train_state(ScoreNet(m));
  TrainerConfig cfg;
  cfg.steps = 400;
  cfg.batch_size = 128;
  cfg.learning_rate = 2e-3;
  train(state, cfg, gmm_data(2000, 66), Matrix(), vp_schedule(), std::nullopt, TrainMode::plain);
  double early = 0, late = 0;
  for (int i = 0; i < 50; ++i) {
    early += state.losses[i];
    late += state.losses[350 + i];
  }
  EXPECT_LT(late, early);
}

TEST(Train, DivergenceIsReported) {
  Mlp m(2, 0, {4}, 1.0);
  m.initialize(67);
  auto state = initial_train_state(ScoreNet(m));
  TrainerConfig cfg;
  cfg.steps = 3;
  Matrix data = gmm_data(10, 68);
  data(0, 3) = std::numeric_limits<double>::quiet_NaN();
  data.colwise() = data.col(3);
  EXPECT_THROW(train(state, cfg, data, Matrix(), vp_schedule(), std::nullopt, TrainMode::plain), DivergedLoss);
  TrainerConfig bad;
  bad.learning_rate = 0.0;
  EXPECT_THROW(bad.validate(), InvalidParams);
}
