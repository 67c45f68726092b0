#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "spdm/errors.hpp"
#include "spdm/metrics.hpp"
#include "spdm/rng.hpp"
#include "spdm/sampler.hpp"
#include "spdm/score_oracle.hpp"

using namespace spdm;

namespace {

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

GaussianMixture asym_gmm() { return GaussianMixture({{0.6, v2(1.5, 0.5), 0.05}, {0.4, v2(0.3, 1.2), 0.08}}); }

}  // namespace

TEST(Divergence, ClosedFormFields) {
  std::mt19937_64 rng(101);
  Matrix a(3, 3);
  a << 1, 2, 3, -4, 5, 6, 7, 8, -9;
  const DriftField lin = [a](const Vector& x, double) { return Vector(a * x); };
  const DriftField rot = [](const Vector& x, double) { return v2(x[1], -x[0]); };
  const DriftField radial = [](const Vector& x, double) { return x; };
  const Vector x3 = standard_normal(rng, 3);
  EXPECT_NEAR(divergence(lin, x3, 0.3), a.trace(), 1e-6);
  EXPECT_NEAR(divergence(rot, v2(0.4, 2.5), 0.1), 0.0, 1e-8);
  EXPECT_NEAR(divergence(radial, x3, 0.0), 3.0, 1e-9);
}

TEST(Divergence, HutchinsonAgreesWithExact) {
  std::mt19937_64 rng(102);
  const DriftField f = [](const Vector& x, double t) {
    Vector out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = std::sin(x[i] * x[(i + 1) % x.size()]) + t * x[i] * x[i];
    return out;
  };
  const Vector x = standard_normal(rng, 8);
  const double exact = divergence(f, x, 0.4);
  const auto est = divergence(f, x, 0.4, DivergenceMode::hutchinson, 64, rng);
  EXPECT_GT(est.standard_error, 0.0);
  EXPECT_LT(std::abs(est.value - exact), 3 * est.standard_error);
  const auto ex = divergence(f, x, 0.4, DivergenceMode::exact_fd, 1, rng);
  EXPECT_EQ(ex.value, exact);
  EXPECT_EQ(ex.standard_error, 0.0);
}

TEST(Nll, StandardNormalClosedForm) {
  const auto s = vp_schedule();
  const GaussianMixture n01({{1.0, Vector::Zero(2), 1.0}});
  const auto score = analytic_score_field(n01, s);
  const auto grid = TimeGrid::sampling(s, 1000);
  std::mt19937_64 rng(103);
  for (int i = 0; i < 20; ++i) {
    const Vector x = standard_normal(rng, 2);
    const auto r = pf_ode_nll(score, s, x, grid, {});
    // At t_clip the marginal is N(0, α² + σ²) = N(0, 1) for VP.
    const double expect = oracle::gaussian_logpdf(x, Vector::Zero(2), 1.0);
    EXPECT_LT(std::abs(r.log_likelihood - expect) / 2, 1e-2);
    EXPECT_TRUE(r.prior_bias_flag);
    EXPECT_EQ(r.steps, 1000u);
  }
}

TEST(Nll, InvariantForEquivariantScoreOnly) {
  const auto s = vp_schedule();
  const auto g = make_point_group_2d(4, false);
  const auto grid = TimeGrid::sampling(s, 200);
  const auto sym = analytic_score_field(symmetrize(asym_gmm(), g), s);
  const auto asym = analytic_score_field(asym_gmm(), s);
  std::mt19937_64 rng(104);
  double control = 0.0;
  for (int i = 0; i < 5; ++i) {
    const Vector x = standard_normal(rng, 2);
    const double base = pf_ode_nll(sym, s, x, grid, {}).log_likelihood;
    const double cbase = pf_ode_nll(asym, s, x, grid, {}).log_likelihood;
    for (const auto& k : g.elements()) {
      EXPECT_LT(std::abs(pf_ode_nll(sym, s, k.apply(x), grid, {}).log_likelihood - base), 1e-6);
      control = std::max(control, std::abs(pf_ode_nll(asym, s, k.apply(x), grid, {}).log_likelihood - cbase));
    }
  }
  EXPECT_GT(control, 1e-2);
}

TEST(Nll, HutchinsonAndDequantization) {
  const auto s = vp_schedule();
  const auto score = analytic_score_field(symmetrize(asym_gmm(), make_point_group_2d(4, false)), s);
  const auto grid = TimeGrid::sampling(s, 200);
  const Vector x = v2(0.5, 1.0);
  const auto exact = pf_ode_nll(score, s, x, grid, {});
  const auto hutch = pf_ode_nll(score, s, x, grid, {DivergenceMode::hutchinson, 32, 105});
  EXPECT_GT(hutch.divergence_stderr, 0.0);
  EXPECT_LT(std::abs(hutch.log_likelihood - exact.log_likelihood), 4 * hutch.divergence_stderr + 1e-9);
  NllOptions opts;
  opts.dequantization_bins = 256;
  const auto deq = pf_ode_nll(score, s, x, grid, {}, opts);
  // A bin of width range/bins has probability about p·(range/bins)^d.
  const double shift = 2 * std::log(256.0 / 2.0);
  EXPECT_NEAR(deq.bits_per_dim, (-exact.log_likelihood + shift) / (2 * std::log(2.0)), 1e-9);
}

TEST(FeatureMap, DeterministicAndShaped) {
  FeatureSpec spec;
  spec.seed = 106;
  EXPECT_EQ(spec.feature_dim, 64u);
  const FeatureMap a(spec), b(spec);
  const Vector x = v2(0.3, -0.7);
  EXPECT_EQ(a(x), b(x));
  EXPECT_EQ(a(x).size(), 64);
  EXPECT_THROW(a(Vector::Zero(3)), ShapeMismatch);
  std::mt19937_64 rng(107);
  const Matrix p = oracle::normal_columns(rng, 2, 2000);
  const Matrix q = (oracle::normal_columns(rng, 2, 2000).array() + 3.0).matrix();
  EXPECT_GT(frechet_distance(feature_stats(a.apply(p)), feature_stats(a.apply(q))), 0.1);
}

TEST(Frechet, ClosedForms) {
  FeatureStats a{Vector::Zero(3), Matrix::Identity(3, 3), 10};
  EXPECT_LE(frechet_distance(a, a), 1e-8);
  FeatureStats b = a;
  b.mean << 1, 2, -2;
  EXPECT_NEAR(frechet_distance(a, b), 9.0, 1e-8);
  FeatureStats c{Vector::Zero(3), Vector(Eigen::Vector3d(1.0, 4.0, 0.25)).asDiagonal(), 10};
  FeatureStats d{Vector::Zero(3), Vector(Eigen::Vector3d(9.0, 1.0, 1.0)).asDiagonal(), 10};
  const double expect = std::pow(1 - 3, 2) + std::pow(2 - 1, 2) + std::pow(0.5 - 1, 2);
  EXPECT_NEAR(frechet_distance(c, d), expect, 1e-8);
  FeatureStats bad{Vector::Zero(2), Vector(Eigen::Vector2d(1.0, -1.0)).asDiagonal(), 10};
  EXPECT_THROW(frechet_distance(bad, bad), NonPsd);
}

TEST(FeatureStats, PopulationCovariance) {
  Matrix f(1, 4);
  f << 1, 2, 3, 6;
  const auto st = feature_stats(f);
  EXPECT_DOUBLE_EQ(st.mean[0], 3.0);
  EXPECT_DOUBLE_EQ(st.covariance(0, 0), (4 + 1 + 0 + 9) / 4.0);
}

TEST(GroupAveragedStats, MatchesAugmentedDataset) {
  const auto g = make_point_group_2d(4, true);
  FeatureSpec spec;
  spec.feature_dim = 8;
  spec.seed = 108;
  const FeatureMap fm(spec);
  std::mt19937_64 rng(109);
  const Matrix data = asym_gmm().sample(rng, 500);
  Matrix aug(2, 500 * 8);
  for (std::size_t k = 0; k < g.size(); ++k) aug.middleCols(static_cast<Eigen::Index>(k) * 500, 500) = g.element(k).apply_columns(data);
  const auto brute = feature_stats(fm.apply(aug));
  const auto tg = group_averaged_stats(data, g, fm);
  EXPECT_LE((tg.mean - brute.mean).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((tg.covariance - brute.covariance).cwiseAbs().maxCoeff(), 1e-10);
  const auto one = group_averaged_stats(data, make_trivial_group(2), fm);
  const auto plain = feature_stats(fm.apply(data));
  EXPECT_EQ(one.mean, plain.mean);
  EXPECT_EQ(one.covariance, plain.covariance);
}

TEST(InvFid, SymmetrizedVersusSingleOrientation) {
  const auto g = make_point_group_2d(4, false);
  FeatureSpec spec;
  spec.seed = 110;
  const FeatureMap fm(spec);
  std::mt19937_64 rng(111);
  const Matrix sym = symmetrize(asym_gmm(), g).sample(rng, 5000);
  const Matrix one = asym_gmm().sample(rng, 5000);
  const double inv = inv_fid(sym, g, fm), skew = inv_fid(one, g, fm);
  EXPECT_LT(inv, 0.05);
  EXPECT_GT(skew, 10 * inv);
  const auto pair = make_point_group_2d(2, false);
  const auto st0 = feature_stats(fm.apply(one));
  const auto st1 = feature_stats(fm.apply(pair.element(1).apply_columns(one)));
  EXPECT_NEAR(inv_fid(one, pair, fm), frechet_distance(st1, st0), 1e-8 * frechet_distance(st1, st0));
  EXPECT_NEAR(frechet_distance(st0, st1), frechet_distance(st1, st0), 1e-8 * frechet_distance(st1, st0));
  EXPECT_THROW(inv_fid(one, make_trivial_group(2), fm), InvalidParams);
}

TEST(DeltaX0, Cases) {
  const auto g = make_c4_group({3, 3, 1});
  std::mt19937_64 rng(112);
  std::vector<Vector> inputs;
  for (int i = 0; i < 16; ++i) inputs.push_back(standard_normal(rng, 9));
  const Model equi = [](const Vector& x) { return Vector(x.array().tanh()); };
  EXPECT_LE(delta_x0_gap(equi, inputs, g, 113), 1e-10);
  Vector c = Vector::LinSpaced(9, 0.0, 8.0);
  const Model constant = [c](const Vector&) { return c; };
  double expect_max = 0.0;
  for (std::size_t k = 1; k < g.size(); ++k) expect_max = std::max(expect_max, (c - g.element(k).apply(c)).cwiseAbs().maxCoeff());
  const double gap = delta_x0_gap(constant, inputs, g, 114);
  EXPECT_GT(gap, 0.0);
  EXPECT_LE(gap, expect_max);
  const auto two = make_flip_group(FlipAxis::vertical, {3, 3, 1});
  EXPECT_DOUBLE_EQ(delta_x0_gap(constant, inputs, two, 115), (c - two.element(1).apply(c)).cwiseAbs().maxCoeff());
  const Model shift = [](const Vector& x) { Vector y = x; y[0] += 1.0; return y; };
  EXPECT_GT(delta_x0_gap(shift, inputs, g, 116), 0.0);
}

TEST(EnergyTest, StatisticAndPValues) {
  std::mt19937_64 rng(117);
  const Matrix a = oracle::normal_columns(rng, 2, 60);
  const Matrix b = oracle::normal_columns(rng, 2, 80);
  EXPECT_NEAR(energy_distance_test(a, b, 0, 1).statistic, oracle::energy_statistic(a, b), 1e-12);
  EXPECT_NEAR(energy_distance_test(a, a, 10, 1).statistic, 0.0, 1e-12);
  const Matrix far = (oracle::normal_columns(rng, 2, 80).array() + 50.0).matrix();
  const auto r = energy_distance_test(a, far, 99, 2);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0 / 100.0);
  EXPECT_EQ(energy_distance_test(a, b, 99, 3).p_value, energy_distance_test(a, b, 99, 3).p_value);
}

TEST(EnergyTest, Calibration) {
  std::mt19937_64 rng(118);
  int pass = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Matrix a = oracle::normal_columns(rng, 2, 100), b = oracle::normal_columns(rng, 2, 100);
    if (energy_distance_test(a, b, 199, 1000 + rep).p_value > 0.01) ++pass;
  }
  EXPECT_GE(pass, 95);
}

TEST(FokkerPlanck, RotationalAndZeroDrift) {
  const Density gauss = [](const Vector& x, double) { return std::exp(-0.5 * x.squaredNorm()) / (2 * M_PI); };
  const DriftField rot = [](const Vector& x, double) { return v2(x[1], -x[0]); };
  const DriftField zero = [](const Vector& x, double) { return Vector(Vector::Zero(x.size())); };
  const auto none = [](double) { return 0.0; };
  const Grid2d grid{-4, 4, 0.05};
  EXPECT_LT(fokker_planck_residual(gauss, rot, none, 0.0, grid, 0.01).max_abs, 1e-6);
  const auto z = fokker_planck_residual(gauss, zero, none, 0.0, grid, 0.01);
  EXPECT_LE(z.max_abs, 1e-14);
  EXPECT_EQ(z.points, 161u * 161u);
}

TEST(FokkerPlanck, DiffusedMixtureUnderVe) {
  const auto s = ve_schedule(0.01, 10.0);
  const auto m = symmetrize(asym_gmm(), make_point_group_2d(4, false));
  const Density p = [&](const Vector& x, double t) { return std::exp(log_density(m, s, x, t)); };
  const DriftField zero = [](const Vector& x, double) { return Vector(Vector::Zero(x.size())); };
  const auto res = fokker_planck_residual(p, zero, [&](double t) { return s.g2(t); }, 0.3, Grid2d{}, 0.01);
  EXPECT_LT(res.max_abs, 1e-4);
}
