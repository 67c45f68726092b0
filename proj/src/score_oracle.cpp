#include "spdm/score_oracle.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "spdm/errors.hpp"

namespace spdm {

namespace {

struct DiffusedComponent {
  double log_weight;
  double mean_scale;  // component mean is mean_scale · μᵢ
  double variance;
};

double log_gaussian(const Vector& x, const Vector& mean, double scale, double variance) {
  const double d = static_cast<double>(x.size());
  const double sq = (x - scale * mean).squaredNorm();
  return -0.5 * d * std::log(2.0 * std::numbers::pi * variance) - 0.5 * sq / variance;
}

void require_dimension(const GaussianMixture& m, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != m.dimension())
    throw ShapeMismatch("mixture dimension " + std::to_string(m.dimension()) + ", got " +
                        std::to_string(x.size()));
}

// Responsibility-weighted score; scale/var describe the diffused components.
Vector mixture_gradient(const GaussianMixture& m, const Vector& x, double alpha, double add_var,
                        double* log_p) {
  require_dimension(m, x);
  const auto& comps = m.components();
  std::vector<double> logs(comps.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < comps.size(); ++i) {
    if (comps[i].weight <= 0.0) {
      logs[i] = -std::numeric_limits<double>::infinity();
      continue;
    }
    const double var = alpha * alpha * comps[i].variance + add_var;
    logs[i] = std::log(comps[i].weight) + log_gaussian(x, comps[i].mean, alpha, var);
    top = std::max(top, logs[i]);
  }
  double total = 0.0;
  Vector grad = Vector::Zero(x.size());
  for (std::size_t i = 0; i < comps.size(); ++i) {
    if (!std::isfinite(logs[i])) continue;
    const double w = std::exp(logs[i] - top);
    const double var = alpha * alpha * comps[i].variance + add_var;
    total += w;
    grad.noalias() -= (w / var) * (x - alpha * comps[i].mean);
  }
  if (log_p) *log_p = top + std::log(total);
  return grad / total;
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<MixtureComponent> components)
    : components_(std::move(components)) {
  if (components_.empty()) throw InvalidParams("mixture needs at least one component");
  dimension_ = static_cast<std::size_t>(components_.front().mean.size());
  if (dimension_ == 0) throw InvalidParams("mixture components need a nonempty mean");
  double total = 0.0;
  for (const auto& c : components_) {
    if (static_cast<std::size_t>(c.mean.size()) != dimension_)
      throw ShapeMismatch("mixture components differ in dimension");
    if (!(c.weight >= 0.0)) throw InvalidParams("mixture weights must be nonnegative");
    if (!(c.variance > 0.0)) throw InvalidParams("mixture variances must be positive");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw InvalidParams("mixture weights must sum to 1");
}

Matrix GaussianMixture::sample(std::mt19937_64& rng, std::size_t n) const {
  std::vector<double> weights;
  for (const auto& c : components_) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(dimension_, n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& c = components_[pick(rng)];
    const double sd = std::sqrt(c.variance);
    for (std::size_t k = 0; k < dimension_; ++k) out(k, j) = c.mean[k] + sd * normal(rng);
  }
  return out;
}

GaussianMixture symmetrize(const GaussianMixture& mixture, const IsometryGroup& group) {
  if (group.dimension() != mixture.dimension())
    throw ShapeMismatch("group acts on dimension " + std::to_string(group.dimension()) +
                        ", mixture has " + std::to_string(mixture.dimension()));
  std::vector<MixtureComponent> out;
  const double share = 1.0 / static_cast<double>(group.size());
  for (const auto& c : mixture.components())
    for (const auto& kappa : group.elements())
      out.push_back({c.weight * share, kappa.apply(c.mean), c.variance});
  // Re-normalize away the rounding of w/|G|.
  double total = 0.0;
  for (const auto& c : out) total += c.weight;
  for (auto& c : out) c.weight /= total;
  return GaussianMixture(std::move(out));
}

double log_density(const GaussianMixture& mixture, const Schedule& s, const Vector& x, double t) {
  double log_p = 0.0;
  if (t == 0.0) {
    mixture_gradient(mixture, x, 1.0, 0.0, &log_p);
  } else {
    const auto kernel = transition(s, Vector::Zero(1), t);
    mixture_gradient(mixture, x, s.alpha(t), kernel.variance, &log_p);
  }
  return log_p;
}

Vector diffused_score(const GaussianMixture& mixture, const Schedule& s, const Vector& x, double t) {
  if (!(t > 0.0 && t <= s.horizon() * (1.0 + 1e-12)))
    throw TimeOutOfRange("diffused score needs t in (0, T], got " + std::to_string(t));
  return mixture_gradient(mixture, x, s.alpha(t), s.sigma2(t), nullptr);
}

Vector mixture_score(const GaussianMixture& mixture, const Vector& x) {
  return mixture_gradient(mixture, x, 1.0, 0.0, nullptr);
}

ScoreField analytic_score_field(GaussianMixture mixture, Schedule s) {
  return [mixture = std::move(mixture), s](const Vector& x, const Vector&, double t) {
    return diffused_score(mixture, s, x, t);
  };
}

GaussianParams bridge_conditional(const GaussianCoupling& coupling, const Schedule& s,
                                  const Vector& x_T, double t) {
  if (coupling.map.rows() != coupling.map.cols() || coupling.map.rows() != x_T.size())
    throw DegenerateCoupling("coupling map must be square and match x_T");
  if (!(coupling.noise_variance >= 0.0))
    throw DegenerateCoupling("coupling noise variance must be nonnegative");
  const Vector x0_mean = coupling.map * x_T;
  const GaussianParams pinned = bridge_kernel(s, x0_mean, x_T, t);
  // The pinned mean is affine in x₀ with slope α_t(1 - η_T/η_t).
  const double slope = s.alpha(t) * (1.0 - eta_ratio(s, t));
  return {pinned.mean, pinned.variance + slope * slope * coupling.noise_variance};
}

Vector bridge_score_oracle(const GaussianCoupling& coupling, const Schedule& s, const Vector& x_t,
                           const Vector& x_T, double t) {
  if (!(t > 0.0 && t < s.horizon()))
    throw TimeOutOfRange("bridge score needs t in (0, T), got " + std::to_string(t));
  if (x_t.size() != x_T.size()) throw ShapeMismatch("x_t and x_T differ in size");
  const GaussianParams q = bridge_conditional(coupling, s, x_T, t);
  if (!(q.variance > 0.0)) throw DegenerateCoupling("conditional law is a point mass");
  return -(x_t - q.mean) / q.variance;
}

ScoreField bridge_score_field(GaussianCoupling coupling, Schedule s) {
  return [coupling = std::move(coupling), s](const Vector& x, const Vector& y, double t) {
    return bridge_score_oracle(coupling, s, x, y, t);
  };
}

}  // namespace spdm
