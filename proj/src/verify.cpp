#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "spdm/commands.hpp"
#include "spdm/metrics.hpp"
#include "spdm/mlp.hpp"
#include "spdm/rng.hpp"
#include "spdm/sampler.hpp"
#include "spdm/score_oracle.hpp"
#include "spdm/spdt.hpp"
#include "spdm/tied_conv.hpp"
#include "spdm/trainer.hpp"

namespace spdm {

namespace {

using nlohmann::json;

class Suite {
 public:
  void at_most(const std::string& name, double observed, double tol) {
    checks_.push_back({name, "<=", tol, observed, observed <= tol});
  }
  void above(const std::string& name, double observed, double tol) {
    checks_.push_back({name, ">", tol, observed, observed > tol});
  }
  void equals(const std::string& name, double observed, double expected) {
    checks_.push_back({name, "==", expected, observed, observed == expected});
  }
  const std::vector<VerifyCheck>& checks() const { return checks_; }

 private:
  std::vector<VerifyCheck> checks_;
};

Vector random_vector(std::mt19937_64& rng, std::size_t n) { return standard_normal(rng, n); }

void group_checks(Suite& suite, const IsometryGroup& g, const std::string& label) {
  const auto report = verify_group_axioms(g);
  for (const auto& c : report.checks) suite.equals("group_axioms." + label + "." + c.name, c.passed ? 1.0 : 0.0, 1.0);
}

double fa_gap(const ScoreField& field, const IsometryGroup& g, std::mt19937_64& rng, std::size_t probes) {
  double worst = 0.0;
  for (std::size_t p = 0; p < probes; ++p) {
    const Vector x = random_vector(rng, g.dimension());
    const double t = 0.05 + 0.9 * std::uniform_real_distribution<double>(0, 1)(rng);
    const Vector base = field(x, Vector(), t);
    for (const auto& kappa : g.elements())
      worst = std::max(worst, (field(kappa.apply(x), Vector(), t) - kappa.apply(base)).norm());
  }
  return worst;
}

}  // namespace

std::vector<VerifyCheck> cmd_verify(const CommandContext& ctx) {
  Suite suite;
  auto rng = rng_stream(ctx.seed, 99);
  const Schedule vp = vp_schedule();

  // Group algebra on grids and on the plane.
  const GridShape grid{4, 4, 2};
  IsometryGroup c4 = make_c4_group(grid);
  if (ctx.config.verify.inject_fault == "closure") c4 = c4.with_compose_entry(1, 2, c4.size());
  group_checks(suite, make_flip_group(FlipAxis::vertical, grid), "flip_v");
  group_checks(suite, make_flip_group(FlipAxis::horizontal, grid), "flip_h");
  group_checks(suite, c4, "C4");
  group_checks(suite, make_d4_group(grid), "D4");
  group_checks(suite, make_point_group_2d(4, false), "C4_point");
  group_checks(suite, make_point_group_2d(4, true), "D4_point");

  // Weight-tied kernels.
  suite.equals("tied_kernel.flip3.free_parameters", static_cast<double>(TiedKernel(KernelSymmetry::flip, 3).spatial_free_count()), 6);
  suite.equals("tied_kernel.c4_5.free_parameters", static_cast<double>(TiedKernel(KernelSymmetry::c4, 5).spatial_free_count()), 7);
  suite.equals("tied_kernel.d4_5.free_parameters", static_cast<double>(TiedKernel(KernelSymmetry::d4, 5).spatial_free_count()), 6);
  {
    const GridShape img{8, 8, 2};
    double tied_gap = 0.0, dense_gap = 0.0;
    for (auto sym : {KernelSymmetry::flip, KernelSymmetry::c4, KernelSymmetry::d4}) {
      TiedKernel k(sym, 3, 2, 3);
      k.randomize(rng());
      const DenseKernel dense = DenseKernel::random(3, 2, 3, rng());
      const IsometryGroup g = symmetry_group(sym, img);
      const IsometryGroup g_out = symmetry_group(sym, GridShape{8, 8, 3});
      for (int trial = 0; trial < 5; ++trial) {
        const Vector x = random_vector(rng, img.size());
        const Vector y = conv2d(k, x, img), yd = conv2d(dense, x, img);
        for (std::size_t e = 0; e < g.size(); ++e) {
          tied_gap = std::max(tied_gap, (conv2d(k, g.element(e).apply(x), img) - g_out.element(e).apply(y)).cwiseAbs().maxCoeff());
          dense_gap = std::max(dense_gap, (conv2d(dense, g.element(e).apply(x), img) - g_out.element(e).apply(yd)).cwiseAbs().maxCoeff());
        }
      }
    }
    suite.at_most("tied_conv.commutation_gap", tied_gap, 1e-12);
    suite.above("tied_conv.dense_control_gap", dense_gap, 0.01);
  }

  // Frame averaging of an arbitrary network.
  {
    Mlp mlp(2, 0, {16, 16}, 1.0);
    mlp.initialize(rng());
    const ScoreNet net(mlp);
    for (const auto& g : {make_point_group_2d(4, false), make_point_group_2d(4, true)})
      suite.at_most("frame_average." + g.tag(), fa_gap(frame_average(net.field(), g), g, rng, 100), 1e-12);
    suite.above("frame_average.control", fa_gap(net.field(), make_point_group_2d(4, false), rng, 100), 1e-3);
  }

  // Scores of symmetrized mixtures are equivariant.
  Vector m1(2), m2(2);
  m1 << 1.5, 0.5;
  m2 << 0.3, 1.2;
  const GaussianMixture asym({{0.6, m1, 0.05}, {0.4, m2, 0.08}});
  const IsometryGroup c4p = make_point_group_2d(4, false);
  const GaussianMixture sym = symmetrize(asym, c4p);
  suite.at_most("oracle.symmetrized_equivariance", fa_gap(analytic_score_field(sym, vp), c4p, rng, 100), 1e-10);
  suite.above("oracle.asymmetric_control", fa_gap(analytic_score_field(asym, vp), c4p, rng, 100), 0.1);

  // Deterministic trajectories commute with the group.
  {
    const ScoreField score = analytic_score_field(sym, vp);
    const TimeGrid tg = TimeGrid::sampling(vp, 100);
    double worst = 0.0;
    for (int p = 0; p < 4; ++p) {
      const Vector x = random_vector(rng, 2);
      const auto base = pf_ode_solve(score, vp, tg, x, Direction::backward);
      for (const auto& kappa : c4p.elements()) {
        const auto moved = pf_ode_solve(score, vp, tg, kappa.apply(x), Direction::backward);
        for (std::size_t i = 0; i < base.states.size(); ++i)
          worst = std::max(worst, (moved.states[i] - kappa.apply(base.states[i])).cwiseAbs().maxCoeff());
      }
    }
    suite.at_most("pf_ode.trajectory_equivariance", worst, 1e-10);
  }

  // Bridge sampler with frame-averaged score and aligned noise.
  {
    const GridShape img{4, 4, 1};
    const IsometryGroup g = make_c4_group(img);
    const std::size_t d = g.dimension();
    const GaussianCoupling coupling{0.8 * Matrix::Identity(d, d), 0.1};
    Mlp perturb(d, d, {8}, 1.0);
    perturb.initialize(rng());
    const ScoreField oracle = bridge_score_field(coupling, vp);
    const ScoreField approx = [oracle, perturb](const Vector& x, const Vector& y, double t) {
      return Vector(oracle(x, y, t) + 0.05 * perturb.evaluate(x, y, t));
    };
    const ScoreField fa = frame_average(approx, diagonal_pair_group(g));
    const Canonicalizer canon(g);
    const TimeGrid tg = TimeGrid::bridge(vp, 100);
    const std::uint64_t seed = rng();
    const Model m = [&](const Vector& x_T) {
      return Vector(ddbm_reverse_sample(fa, vp, x_T, 1.0, tg, equivariant_noise_sequence(x_T, seed, canon, tg.steps()))
                        .terminal());
    };
    std::vector<Vector> inputs;
    for (int i = 0; i < 4; ++i) inputs.push_back(random_vector(rng, d));
    suite.at_most("ddbm.fa_en_delta_x0", delta_x0_gap(m, inputs, g, rng()), 1e-10);
  }

  // Likelihood invariance.
  {
    const ScoreField score = analytic_score_field(sym, vp);
    const TimeGrid tg = TimeGrid::sampling(vp, 200);
    double worst = 0.0;
    for (int p = 0; p < 3; ++p) {
      const Vector x = random_vector(rng, 2);
      const double base = pf_ode_nll(score, vp, x, tg, {}).log_likelihood;
      for (const auto& kappa : c4p.elements())
        worst = std::max(worst, std::abs(pf_ode_nll(score, vp, kappa.apply(x), tg, {}).log_likelihood - base));
    }
    suite.at_most("nll.invariance_gap", worst, 1e-6);
  }

  // Bridge endpoints are pinned.
  {
    const Vector x0 = random_vector(rng, 2), xT = random_vector(rng, 2);
    suite.at_most("bridge_kernel.variance_at_0", bridge_kernel(vp, x0, xT, 0.0).variance, 1e-10);
    suite.at_most("bridge_kernel.variance_at_T", bridge_kernel(vp, x0, xT, vp.horizon()).variance, 1e-10);
  }

  // Rotational drift leaves N(0, I) unchanged.
  {
    const DriftField rot = [](const Vector& x, double) {
      Vector f(2);
      f << x[1], -x[0];
      return f;
    };
    const Density gauss = [](const Vector& x, double) {
      return std::exp(-0.5 * x.squaredNorm()) / (2.0 * M_PI);
    };
    const auto res = fokker_planck_residual(gauss, rot, [](double) { return 0.0; }, 0.5, Grid2d{-4.0, 4.0, 0.1}, 0.01);
    suite.at_most("fokker_planck.rotational_residual", res.max_abs, 1e-6);
  }

  // Exact gradients.
  {
    Mlp mlp(2, 1, {5, 4}, 1.0);
    mlp.initialize(rng());
    Matrix x(2, 3), y(1, 3);
    x.setRandom();
    y.setRandom();
    const Vector times = Vector::LinSpaced(3, 0.2, 0.8);
    Mlp::Tape tape;
    const Matrix out = mlp.forward(x, y, times, &tape);
    const Vector grad = mlp.backward(tape, out);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
      Mlp probe = mlp;
      const double h = 1e-6;
      probe.parameters()[i] += h;
      const double up = 0.5 * probe.forward(x, y, times).squaredNorm();
      probe.parameters()[i] -= 2 * h;
      const double down = 0.5 * probe.forward(x, y, times).squaredNorm();
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1e-3, std::abs(fd) + std::abs(grad[i])));
    }
    suite.at_most("mlp.gradient_rel_error", worst, 1e-5);
  }

  // Fréchet distance closed forms.
  {
    FeatureStats a{Vector::Zero(3), Matrix::Identity(3, 3), 1}, b = a;
    b.mean << 1.0, -2.0, 0.5;
    suite.at_most("frechet.identical", frechet_distance(a, a), 1e-8);
    suite.at_most("frechet.mean_shift_error", std::abs(frechet_distance(a, b) - b.mean.squaredNorm()), 1e-8);
  }

  // EMA contraction and SPDT round trip.
  {
    const Vector theta = random_vector(rng, 10), bar = random_vector(rng, 10);
    const Vector next = ema_update(bar, theta, 0.9);
    suite.at_most("ema.contraction_excess", (next - theta).norm() - 0.9 * (bar - theta).norm(), 1e-12);
    const Tensor t{{2, 3}, {0.1, -2.5, 3e300, -0.0, 1e-310, 7.0}};
    const Tensor back = decode_spdt(encode_spdt(t));
    suite.equals("spdt.round_trip_bit_exact",
                 (back.dims == t.dims &&
                  std::memcmp(back.data.data(), t.data.data(), t.data.size() * sizeof(double)) == 0)
                     ? 1.0
                     : 0.0,
                 1.0);
  }

  bool all = true;
  json checks = json::array();
  for (const auto& c : suite.checks()) {
    all = all && c.passed;
    checks.push_back({{"name", c.name},
                      {"comparison", c.comparison},
                      {"tolerance", c.tolerance},
                      {"observed", c.observed},
                      {"passed", c.passed}});
  }
  json report{{"passed", all}, {"checks", checks}, {"config_hash", ctx.hash}, {"seed", ctx.seed}};
  const auto path = (std::filesystem::path(ctx.out_dir) / "verify.json").string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << report.dump(2) << "\n";
  out.close();
  if (!all) {
    std::string failed;
    for (const auto& c : suite.checks())
      if (!c.passed) failed += (failed.empty() ? "" : ", ") + c.name;
    throw VerificationFailed("failed checks: " + failed);
  }
  return suite.checks();
}

}  // namespace spdm
