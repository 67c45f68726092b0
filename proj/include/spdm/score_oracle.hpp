#pragma once

#include <random>
#include <vector>

#include "spdm/diffusion.hpp"
#include "spdm/group.hpp"
#include "spdm/types.hpp"

namespace spdm {

struct MixtureComponent {
  double weight = 0.0;
  Vector mean;
  double variance = 1.0;
};

/// Isotropic Gaussian mixture. Weights must sum to one within 1e-12 and every
/// variance must be positive; the constructor throws InvalidParams otherwise.
class GaussianMixture {
 public:
  explicit GaussianMixture(std::vector<MixtureComponent> components);

  const std::vector<MixtureComponent>& components() const { return components_; }
  std::size_t dimension() const { return dimension_; }

  /// Draws n samples as the columns of a dimension × n matrix.
  Matrix sample(std::mt19937_64& rng, std::size_t n) const;

 private:
  std::vector<MixtureComponent> components_;
  std::size_t dimension_ = 0;
};

/// Replicates every component under every κ ∈ G with weight w/|G|.
GaussianMixture symmetrize(const GaussianMixture& mixture, const IsometryGroup& group);

/// log p_t(x) of the mixture pushed through the forward kernel; t = 0 is the
/// data mixture itself.
double log_density(const GaussianMixture& mixture, const Schedule& s, const Vector& x, double t);

/// ∇ₓ log p_t(x) for t ∈ (0, T]. Throws TimeOutOfRange otherwise.
Vector diffused_score(const GaussianMixture& mixture, const Schedule& s, const Vector& x, double t);

/// ∇ₓ log p_0(x) of the undiffused mixture.
Vector mixture_score(const GaussianMixture& mixture, const Vector& x);

/// The exact diffused score as a ScoreField (y is ignored).
ScoreField analytic_score_field(GaussianMixture mixture, Schedule s);

/// x₀ | x_T ~ N(map · x_T, noise_variance · I).
struct GaussianCoupling {
  Matrix map;
  double noise_variance = 0.0;
};

/// q_t(x_t | x_T): the pinned kernel mixed over x₀ | x_T.
/// Throws TimeOutOfRange outside [0, T] and DegenerateCoupling for a negative
/// noise variance, a non-square map or a point-mass result.
GaussianParams bridge_conditional(const GaussianCoupling& coupling, const Schedule& s,
                                  const Vector& x_T, double t);

/// ∇_{x_t} log q_t(x_t | x_T) for t ∈ (0, T).
Vector bridge_score_oracle(const GaussianCoupling& coupling, const Schedule& s,
                           const Vector& x_t, const Vector& x_T, double t);

/// bridge_score_oracle as a conditional ScoreField s(x_t, x_T, t).
ScoreField bridge_score_field(GaussianCoupling coupling, Schedule s);

}  // namespace spdm
