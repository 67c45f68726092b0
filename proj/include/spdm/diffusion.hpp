#pragma once

#include "spdm/types.hpp"

namespace spdm {

enum class ProcessKind { vp, ve };

/// Coefficients of a linear forward SDE dx = u(x,t) dt + g(t) dw with
/// marginal kernel p(x_t | x_0) = N(α_t x_0, σ_t² I).
///
/// VP: α_t = exp(-¼ t²(β_max-β_min)/T - ½ t β_min), σ_t² = 1 - α_t².
/// VE: α_t = 1, σ_t = σ_min (σ_max/σ_min)^{t/T}.
class Schedule {
 public:
  static Schedule vp(double beta_min, double beta_max, double horizon);
  static Schedule ve(double sigma_min, double sigma_max, double horizon);

  ProcessKind kind() const { return kind_; }
  double horizon() const { return horizon_; }
  /// Distance from the singular endpoints kept by every integrator: 1e-3·T.
  double t_clip() const { return 1e-3 * horizon_; }

  double alpha(double t) const;
  double sigma(double t) const;
  double sigma2(double t) const;
  /// η_t = α_t²/σ_t² (infinite where σ_t = 0).
  double eta(double t) const;

  double dlog_alpha_dt(double t) const;
  double dsigma2_dt(double t) const;
  /// g(t)² = dσ_t²/dt - (d log α_t²/dt) σ_t².
  double g2(double t) const;
  /// u(x,t) = (d log α_t/dt) x.
  Vector drift(const Vector& x, double t) const;

  /// Variance of the terminal reference Gaussian N(0, σ_T² I) used as the prior.
  double prior_variance() const { return sigma2(horizon_); }

  // Raw parameters: (β_min, β_max) for VP, (σ_min, σ_max) for VE.
  double param_lo() const { return lo_; }
  double param_hi() const { return hi_; }

 private:
  Schedule(ProcessKind kind, double lo, double hi, double horizon)
      : kind_(kind), lo_(lo), hi_(hi), horizon_(horizon) {}

  ProcessKind kind_;
  double lo_;
  double hi_;
  double horizon_;
};

/// Defaults β_min = 0.1, β_max = 20, T = 1. Throws InvalidParams.
Schedule vp_schedule(double beta_min = 0.1, double beta_max = 20.0, double horizon = 1.0);
/// Throws InvalidParams unless 0 < σ_min < σ_max and T > 0.
Schedule ve_schedule(double sigma_min, double sigma_max, double horizon = 1.0);

/// Isotropic Gaussian N(mean, variance·I).
struct GaussianParams {
  Vector mean;
  double variance = 0.0;
};

/// p(x_t | x_0). Throws TimeOutOfRange outside [0, T].
GaussianParams transition(const Schedule& s, const Vector& x0, double t);

/// h = ∇_{x_t} log p(x_T | x_t). Throws SingularAtTerminal when T - t < t_clip.
Vector grad_log_transition_h(const Schedule& s, const Vector& x_t, const Vector& x_T, double t);

/// Pinned kernel p_t(x_t | x_0, x_T). Throws TimeOutOfRange outside [0, T].
GaussianParams bridge_kernel(const Schedule& s, const Vector& x0, const Vector& xT, double t);

/// u(x,t) + g(t)² h(x, x_T, t).
Vector bridge_forward_drift(const Schedule& s, const Vector& x, const Vector& xT, double t);

/// Ratio η_T/η_t ∈ [0, 1], finite at t = 0 for VP.
double eta_ratio(const Schedule& s, double t);

}  // namespace spdm
