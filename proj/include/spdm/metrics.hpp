#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "spdm/diffusion.hpp"
#include "spdm/group.hpp"
#include "spdm/sampler.hpp"
#include "spdm/types.hpp"

namespace spdm {

enum class DivergenceMode { exact_fd, hutchinson };

std::string to_string(DivergenceMode mode);

struct DivergenceSpec {
  DivergenceMode mode = DivergenceMode::exact_fd;
  std::size_t probes = 16;  // hutchinson only
  std::uint64_t seed = 0;   // hutchinson only
};

struct DivergenceEstimate {
  double value = 0.0;
  double standard_error = 0.0;  // zero for exact_fd
};

/// ∇·f at x. exact_fd sums d central differences with step 1e-5·(1+|x_j|);
/// hutchinson averages vᵀ(Jv) over Rademacher probes drawn from rng, using a
/// central directional difference with step 1e-5·(1+‖x‖∞).
DivergenceEstimate divergence(const DriftField& f, const Vector& x, double t, DivergenceMode mode,
                              std::size_t probes, std::mt19937_64& rng);
double divergence(const DriftField& f, const Vector& x, double t);

struct NllOptions {
  /// Adds the uniform-dequantization offset ln(bins / data_range) per
  /// dimension to bits-per-dim. Zero bins disables it.
  std::size_t dequantization_bins = 0;
  double data_range = 2.0;
};

struct NllReport {
  double log_likelihood = 0.0;  // log p₀(x₀) in nats
  double prior_log_density = 0.0;
  double divergence_integral = 0.0;
  double divergence_stderr = 0.0;
  double bits_per_dim = 0.0;
  DivergenceMode mode = DivergenceMode::exact_fd;
  std::size_t steps = 0;
  /// α_T ≥ 1e-4: the prior N(0, σ_T² I) ignores a non-negligible α_T x₀ term.
  bool prior_bias_flag = false;
  Vector terminal;
};

/// Integrates the PF-ODE forward from grid.front() to grid.back() with Heun,
/// carrying ∫ ∇·f̃ dt along, and adds the log prior density at the end.
NllReport pf_ode_nll(const ScoreField& score, const Schedule& s, const Vector& x0,
                     const TimeGrid& grid, const DivergenceSpec& div, const NllOptions& options = {},
                     const Vector& y = Vector());

struct FeatureSpec {
  std::size_t input_dim = 2;
  std::size_t feature_dim = 64;
  std::uint64_t seed = 0;
};

/// tanh(Wx + b) with W ~ N(0, 1/input_dim) and b ~ N(0, 1), drawn once from the seed.
class FeatureMap {
 public:
  explicit FeatureMap(const FeatureSpec& spec);

  const FeatureSpec& spec() const { return spec_; }
  /// Throws ShapeMismatch.
  Vector operator()(const Vector& x) const;
  /// Columns in, columns out.
  Matrix apply(const Matrix& xs) const;

 private:
  FeatureSpec spec_;
  Matrix w_;
  Vector b_;
};

struct FeatureStats {
  Vector mean;
  Matrix covariance;
  std::size_t count = 0;
};

/// Mean and population covariance (divisor N) of the columns.
FeatureStats feature_stats(const Matrix& features);

/// ‖μ_A-μ_B‖² + Tr(Σ_A + Σ_B - 2(Σ_A^{1/2} Σ_B Σ_A^{1/2})^{1/2}), clamped at 0.
/// Throws NonPsd when an eigenvalue falls below -1e-6.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

/// T_G(D): the mean and raw second moment of the features of κD are averaged
/// with weight 1/|G| and Σ is re-derived about the averaged mean, which
/// equals the statistics of the augmented set ∪_κ κD.
FeatureStats group_averaged_stats(const Matrix& data, const IsometryGroup& group, const FeatureMap& features);

/// Largest Fréchet distance between T(κ₁D) and T(κ₂D) over unordered pairs κ₁ ≠ κ₂.
double inv_fid(const Matrix& data, const IsometryGroup& group, const FeatureMap& features);

using Model = std::function<Vector(const Vector&)>;

/// Mean over inputs of max |m(κx) - κ m(x)|, with κ drawn uniformly from the
/// non-identity elements for each input. Values are in the data's own scale.
double delta_x0_gap(const Model& m, const std::vector<Vector>& inputs, const IsometryGroup& group,
                    std::uint64_t seed);

struct EnergyTestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t permutations = 0;
};

/// Energy statistic 2E‖a-b‖ - E‖a-a'‖ - E‖b-b'‖ (V-statistic) with a seeded
/// permutation p-value (1 + #{E_perm ≥ E_obs}) / (permutations + 1).
EnergyTestResult energy_distance_test(const Matrix& a, const Matrix& b, std::size_t permutations,
                                      std::uint64_t seed);

struct Grid2d {
  double lo = -4.0;
  double hi = 4.0;
  double spacing = 0.01;
};

struct FokkerPlanckResidual {
  double max_abs = 0.0;
  double l2 = 0.0;
  std::size_t points = 0;
};

using Density = std::function<double(const Vector& x, double t)>;

/// ∂p/∂t + ∇·(p f) - ½ g² Δp on a 2D grid using fourth-order central
/// differences of step fd_step in x and t.
FokkerPlanckResidual fokker_planck_residual(const Density& p, const DriftField& f,
                                            const std::function<double(double)>& g2, double t,
                                            const Grid2d& grid, double fd_step);

}  // namespace spdm
