#include "spdm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "spdm/errors.hpp"
#include "spdm/rng.hpp"

namespace spdm {

namespace {

void check_finite(const Vector& x, std::size_t step) {
  if (!x.allFinite()) throw NonFiniteState(step, "sampler state became non-finite");
}

}  // namespace

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.empty()) throw InvalidParams("time grid needs at least one point");
  for (std::size_t i = 1; i < times_.size(); ++i)
    if (!(times_[i] > times_[i - 1])) throw InvalidParams("time grid must be strictly increasing");
}

TimeGrid TimeGrid::uniform(double lo, double hi, std::size_t steps) {
  if (steps == 0) return TimeGrid({hi});
  if (!(hi > lo)) throw InvalidParams("uniform grid needs hi > lo");
  std::vector<double> t(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i)
    t[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps);
  t.back() = hi;
  return TimeGrid(std::move(t));
}

TimeGrid TimeGrid::sampling(const Schedule& s, std::size_t steps) {
  return uniform(s.t_clip(), s.horizon(), steps);
}

TimeGrid TimeGrid::bridge(const Schedule& s, std::size_t steps) {
  return uniform(s.t_clip(), s.horizon() - s.t_clip(), steps);
}

NoiseSequence::NoiseSequence(std::uint64_t seed, std::size_t dimension,
                             std::optional<GroupElement> orientation)
    : seed_(seed), dimension_(dimension), orientation_(std::move(orientation)) {
  if (orientation_ && orientation_->dimension() != dimension)
    throw ShapeMismatch("noise orientation acts on a different dimension");
}

Vector NoiseSequence::base(std::size_t i) const {
  auto rng = rng_stream(seed_, i);
  return standard_normal(rng, dimension_);
}

Vector NoiseSequence::operator()(std::size_t i) const {
  Vector eps = base(i);
  return orientation_ ? orientation_->apply(eps) : eps;
}

Canonicalizer::Canonicalizer(IsometryGroup group) : group_(std::move(group)) {
  if (!group_.is_grid()) return;
  const std::string& tag = group_.tag();
  if (tag == "flip_v")
    region_ = Region::upper_half;
  else if (tag == "flip_h")
    region_ = Region::left_half;
  else if (tag == "C4" || tag == "D4")
    region_ = Region::top_left_quadrant;
}

bool Canonicalizer::in_reference_region(std::size_t pixel) const {
  const GridShape& shape = group_.element(0).grid_shape();
  const std::size_t row = pixel / shape.width, col = pixel % shape.width;
  switch (region_) {
    case Region::upper_half: return 2 * row + 1 < shape.height;
    case Region::left_half: return 2 * col + 1 < shape.width;
    case Region::top_left_quadrant: return 2 * row + 1 < shape.height && 2 * col + 1 < shape.width;
    case Region::none: return true;
  }
  return true;
}

std::size_t Canonicalizer::canonicalize(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != group_.dimension())
    throw ShapeMismatch("canonicalizer input has the wrong size");
  std::vector<std::size_t> candidates;
  if (region_ != Region::none) {
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < x.size(); ++i)
      if (x[i] > x[arg]) arg = i;
    const std::size_t pixel = static_cast<std::size_t>(arg) / group_.element(0).grid_shape().channels;
    for (std::size_t k = 0; k < group_.size(); ++k) {
      // κ⁻¹ moves the maximum to κ⁻¹(pixel).
      const auto& inv = group_.element(group_.inverse(k));
      if (in_reference_region(inv.pixel_destination(pixel))) candidates.push_back(k);
    }
  }
  if (candidates.empty())
    for (std::size_t k = 0; k < group_.size(); ++k) candidates.push_back(k);
  if (candidates.size() == 1) return candidates.front();

  std::size_t best = candidates.front();
  Vector best_view = group_.element(group_.inverse(best)).apply(x);
  for (std::size_t c = 1; c < candidates.size(); ++c) {
    const std::size_t k = candidates[c];
    const Vector view = group_.element(group_.inverse(k)).apply(x);
    if (std::lexicographical_compare(best_view.begin(), best_view.end(), view.begin(), view.end())) {
      best = k;
      best_view = view;
    }
  }
  return best;
}

NoiseSequence equivariant_noise_sequence(const Vector& x_ref, std::uint64_t seed,
                                         const Canonicalizer& c, std::size_t n) {
  const auto& g = c.group();
  const NoiseSequence plain(seed, g.dimension());
  const std::size_t k_ref = c.canonicalize(x_ref);
  const std::size_t k_eps = c.canonicalize(plain.base(n));
  const std::size_t kappa = g.compose(k_ref, g.inverse(k_eps));
  return NoiseSequence(seed, g.dimension(), g.element(kappa));
}

Trajectory reverse_sde_sample(const ScoreField& score, const Schedule& s, double lambda,
                              const TimeGrid& grid, const Vector& x_T, const NoiseSequence& noise,
                              const Vector& y) {
  if (!(lambda >= 0.0)) throw InvalidParams("lambda must be >= 0");
  Trajectory traj{grid, {}, lambda, noise.seed(), {}};
  traj.states.reserve(grid.size());
  Vector x = x_T;
  traj.states.push_back(x);
  const double coef = 0.5 * (1.0 + lambda * lambda);
  for (std::size_t i = grid.steps(); i >= 1; --i) {
    const double t = grid[i], dt = grid[i] - grid[i - 1];
    const double g2 = s.g2(t);
    const Vector drift = s.drift(x, t) - coef * g2 * score(x, y, t);
    x -= drift * dt;
    if (lambda > 0.0) x += (lambda * std::sqrt(g2 * dt)) * noise(i);
    check_finite(x, i);
    traj.states.push_back(x);
  }
  return traj;
}

Matrix reverse_sde_terminal(const ScoreField& score, const Schedule& s, double lambda,
                            const TimeGrid& grid, const Matrix& x_T, std::uint64_t seed,
                            std::size_t threads, const Canonicalizer* align) {
  Matrix out(x_T.rows(), x_T.cols());
  const auto chains = static_cast<std::size_t>(x_T.cols());
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      const Vector start = x_T.col(col);
      const NoiseSequence noise =
          align ? equivariant_noise_sequence(start, derive_seed(seed, j), *align, grid.steps())
                : NoiseSequence(derive_seed(seed, j), static_cast<std::size_t>(x_T.rows()));
      out.col(col) = reverse_sde_sample(score, s, lambda, grid, start, noise).terminal();
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, chains));
  if (threads == 1) {
    run(0, chains);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    const std::size_t begin = chains * w / threads, end = chains * (w + 1) / threads;
    pool.emplace_back([&, w, begin, end] {
      try {
        run(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Matrix sample_prior(const Schedule& s, std::size_t dimension, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng = rng_stream(seed, 0, 7);
  std::normal_distribution<double> normal(0.0, std::sqrt(s.prior_variance()));
  Matrix out(dimension, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < dimension; ++k) out(k, j) = normal(rng);
  return out;
}

Trajectory pf_ode_solve(const ScoreField& score, const Schedule& s, const TimeGrid& grid,
                        const Vector& x_start, Direction direction, const Vector& y) {
  Trajectory traj{grid, {}, 0.0, 0, {}};
  traj.states.reserve(grid.size());
  auto f = [&](const Vector& x, double t) -> Vector {
    return s.drift(x, t) - 0.5 * s.g2(t) * score(x, y, t);
  };
  Vector x = x_start;
  traj.states.push_back(x);
  const std::size_t n = grid.steps();
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = direction == Direction::forward ? k : n - k;
    const std::size_t b = direction == Direction::forward ? k + 1 : n - k - 1;
    const double ta = grid[a], tb = grid[b], h = tb - ta;
    const Vector k1 = f(x, ta);
    const Vector x_pred = x + h * k1;
    const Vector k2 = f(x_pred, tb);
    x += (0.5 * h) * (k1 + k2);
    check_finite(x, b);
    traj.states.push_back(x);
  }
  return traj;
}

Trajectory ddbm_reverse_sample(const ScoreField& cond_score, const Schedule& s, const Vector& x_T,
                               double tau, const TimeGrid& grid, const NoiseSequence& noise,
                               const std::optional<Vector>& x_start) {
  if (!(tau >= 0.0)) throw InvalidParams("tau must be >= 0");
  if (s.horizon() - grid.back() < s.t_clip() * (1.0 - 1e-9))
    throw SingularAtTerminal("bridge grid must stop t_clip before T");
  Trajectory traj{grid, {}, tau, noise.seed(), {}};
  traj.states.reserve(grid.size());
  Vector x = x_start ? *x_start : x_T;
  if (x.size() != x_T.size()) throw ShapeMismatch("bridge start and x_T differ in size");
  traj.states.push_back(x);
  const double coef = 0.5 * (1.0 + tau * tau);
  for (std::size_t i = grid.steps(); i >= 1; --i) {
    const double t = grid[i], dt = grid[i] - grid[i - 1];
    const double g2 = s.g2(t);
    const Vector drift = bridge_forward_drift(s, x, x_T, t) - coef * g2 * cond_score(x, x_T, t);
    x -= drift * dt;
    if (tau > 0.0) x += (tau * std::sqrt(g2 * dt)) * noise(i);
    check_finite(x, i);
    traj.states.push_back(x);
  }
  return traj;
}

Vector sdedit_denoise(const ScoreField& score, const Schedule& s, const Vector& x0_tilde,
                      double t_start, std::size_t steps, const Canonicalizer* canonicalizer,
                      bool use_en, std::uint64_t seed) {
  if (!(t_start >= s.t_clip() * (1.0 - 1e-12) && t_start < s.horizon()))
    throw TimeOutOfRange("SDEdit start time must lie in [t_clip, T)");
  const auto dim = static_cast<std::size_t>(x0_tilde.size());
  const bool zero_length = t_start <= s.t_clip();
  const TimeGrid grid = zero_length ? TimeGrid({t_start}) : TimeGrid::uniform(s.t_clip(), t_start, steps);
  const NoiseSequence noise = (use_en && canonicalizer)
                                  ? equivariant_noise_sequence(x0_tilde, seed, *canonicalizer, grid.steps())
                                  : NoiseSequence(seed, dim);
  const Vector x_start = s.alpha(t_start) * x0_tilde + s.sigma(t_start) * noise(0);
  return reverse_sde_sample(score, s, 1.0, grid, x_start, noise).terminal();
}

Matrix simulate_drift_only(const DriftField& drift, const Matrix& x0, const TimeGrid& grid) {
  Matrix x = x0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Vector v = x.col(j);
    for (std::size_t i = 0; i < grid.steps(); ++i) {
      v += (grid[i + 1] - grid[i]) * drift(v, grid[i]);
      check_finite(v, i + 1);
    }
    x.col(j) = v;
  }
  return x;
}

}  // namespace spdm
