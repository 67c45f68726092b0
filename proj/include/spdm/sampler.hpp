#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spdm/diffusion.hpp"
#include "spdm/group.hpp"
#include "spdm/types.hpp"

namespace spdm {

/// Strictly increasing times t_0 < t_1 < ... < t_n. Samplers walk it from the
/// top down; a single point is a zero-step grid.
class TimeGrid {
 public:
  /// Throws InvalidParams unless nonempty and strictly increasing.
  explicit TimeGrid(std::vector<double> times);

  /// steps + 1 evenly spaced points on [lo, hi].
  static TimeGrid uniform(double lo, double hi, std::size_t steps);
  /// [t_clip, T], 400 steps by default.
  static TimeGrid sampling(const Schedule& s, std::size_t steps = 400);
  /// [t_clip, T - t_clip] for bridges.
  static TimeGrid bridge(const Schedule& s, std::size_t steps = 400);

  std::size_t steps() const { return times_.size() - 1; }
  std::size_t size() const { return times_.size(); }
  double operator[](std::size_t i) const { return times_[i]; }
  double front() const { return times_.front(); }
  double back() const { return times_.back(); }
  const std::vector<double>& times() const { return times_; }

 private:
  std::vector<double> times_;
};

/// ε_i ~ N(0, I) regenerated from (seed, i), optionally re-oriented by κ.
/// Index 0 is the initial noise of SDEdit; reverse step i (t_i → t_{i-1}) uses ε_i.
class NoiseSequence {
 public:
  NoiseSequence(std::uint64_t seed, std::size_t dimension,
                std::optional<GroupElement> orientation = std::nullopt);

  std::uint64_t seed() const { return seed_; }
  std::size_t dimension() const { return dimension_; }
  const std::optional<GroupElement>& orientation() const { return orientation_; }

  Vector base(std::size_t i) const;
  /// κ ε_i (or ε_i without an orientation).
  Vector operator()(std::size_t i) const;

 private:
  std::uint64_t seed_;
  std::size_t dimension_;
  std::optional<GroupElement> orientation_;
};

/// Picks the orientation of a tensor. For a grid group the pixel holding the
/// largest entry (first in flattened order on ties) is moved into a reference
/// region: the upper half for flip_v, the left half for flip_h, the top-left
/// quadrant for C4 and D4. Remaining ambiguity (D4 has two such elements, and
/// a maximum on a symmetry axis fits none) is resolved by the lexicographically
/// largest κ⁻¹x, then by the smallest element id. Groups without a grid
/// region use the lexicographic rule alone.
class Canonicalizer {
 public:
  explicit Canonicalizer(IsometryGroup group);

  const IsometryGroup& group() const { return group_; }

  /// Element id κ with κ⁻¹x in canonical orientation, so that
  /// canonicalize(gx) = g ∘ canonicalize(x).
  std::size_t canonicalize(const Vector& x) const;

 private:
  bool in_reference_region(std::size_t pixel) const;

  enum class Region { upper_half, left_half, top_left_quadrant, none };
  IsometryGroup group_;
  Region region_ = Region::none;
};

/// κ = c(x_ref) ∘ c(ε_n)⁻¹, so that {κ ε_i} is aligned with x_ref.
NoiseSequence equivariant_noise_sequence(const Vector& x_ref, std::uint64_t seed,
                                         const Canonicalizer& c, std::size_t n);

struct Trajectory {
  TimeGrid grid;
  /// One state per grid point in integration order (first entry is the start).
  std::vector<Vector> states;
  double noise_scale = 0.0;  // λ or τ
  std::uint64_t seed = 0;
  std::string score_id;

  const Vector& terminal() const { return states.back(); }
};

/// Euler–Maruyama for the reverse λ-family from grid.back() down to grid.front():
/// x_{i-1} = x_i + f̄ (t_{i-1} - t_i) + λ g(t_i) √(t_i - t_{i-1}) ε_i,
/// f̄ = u - ((1+λ²)/2) g² s. y is passed through to the score.
/// Throws InvalidParams for λ < 0 and NonFiniteState on blow-up.
Trajectory reverse_sde_sample(const ScoreField& score, const Schedule& s, double lambda,
                              const TimeGrid& grid, const Vector& x_T, const NoiseSequence& noise,
                              const Vector& y = Vector());

/// Terminal states of independent chains (one per column of x_T); chain j uses
/// the noise seed derive_seed(seed, j), aligned to its own x_T when a
/// canonicalizer is given. Work is split over `threads` workers without
/// changing the result.
Matrix reverse_sde_terminal(const ScoreField& score, const Schedule& s, double lambda,
                            const TimeGrid& grid, const Matrix& x_T, std::uint64_t seed,
                            std::size_t threads = 1, const Canonicalizer* align = nullptr);

/// n draws from the N(0, σ_T² I) prior as columns.
Matrix sample_prior(const Schedule& s, std::size_t dimension, std::size_t n, std::uint64_t seed);

enum class Direction { forward, backward };

/// Heun integration of dx = [u - ½ g² s] dt, forward (grid.front() → grid.back())
/// or backward.
Trajectory pf_ode_solve(const ScoreField& score, const Schedule& s, const TimeGrid& grid,
                        const Vector& x_start, Direction direction, const Vector& y = Vector());

/// Euler–Maruyama for the bridge family with drift u + g²h - ((1+τ²)/2) g² s(x|x_T)
/// and noise τ g, from grid.back() down to grid.front(). The chain starts at
/// x_start when given, else at x_T. Throws SingularAtTerminal when the grid
/// reaches closer than t_clip to T.
Trajectory ddbm_reverse_sample(const ScoreField& cond_score, const Schedule& s, const Vector& x_T,
                               double tau, const TimeGrid& grid, const NoiseSequence& noise,
                               const std::optional<Vector>& x_start = std::nullopt);

/// Diffuses x̃₀ to t_start with ε_0 and then runs the λ = 1 reverse SDE on a
/// uniform grid of `steps` steps down to t_clip. With a canonicalizer and
/// use_en the whole noise sequence is aligned to x̃₀.
Vector sdedit_denoise(const ScoreField& score, const Schedule& s, const Vector& x0_tilde,
                      double t_start, std::size_t steps, const Canonicalizer* canonicalizer,
                      bool use_en, std::uint64_t seed);

using DriftField = std::function<Vector(const Vector& x, double t)>;

/// Euler integration of dx = f(x, t) dt for every column of x0 over the grid.
Matrix simulate_drift_only(const DriftField& drift, const Matrix& x0, const TimeGrid& grid);

}  // namespace spdm
