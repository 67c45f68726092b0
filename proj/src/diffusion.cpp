#include "spdm/diffusion.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "spdm/errors.hpp"

namespace spdm {

namespace {

void require_time(const Schedule& s, double t) {
  const double slack = 1e-12 * s.horizon();
  if (!(t >= -slack && t <= s.horizon() + slack))
    throw TimeOutOfRange("t = " + std::to_string(t) + " outside [0, " +
                         std::to_string(s.horizon()) + "]");
}

}  // namespace

Schedule Schedule::vp(double beta_min, double beta_max, double horizon) {
  if (!(beta_min > 0.0 && beta_min <= beta_max && horizon > 0.0))
    throw InvalidParams("VP schedule needs 0 < beta_min <= beta_max and T > 0");
  return Schedule(ProcessKind::vp, beta_min, beta_max, horizon);
}

Schedule Schedule::ve(double sigma_min, double sigma_max, double horizon) {
  if (!(sigma_min > 0.0 && sigma_min < sigma_max && horizon > 0.0))
    throw InvalidParams("VE schedule needs 0 < sigma_min < sigma_max and T > 0");
  return Schedule(ProcessKind::ve, sigma_min, sigma_max, horizon);
}

Schedule vp_schedule(double beta_min, double beta_max, double horizon) {
  return Schedule::vp(beta_min, beta_max, horizon);
}

Schedule ve_schedule(double sigma_min, double sigma_max, double horizon) {
  return Schedule::ve(sigma_min, sigma_max, horizon);
}

double Schedule::alpha(double t) const {
  if (kind_ == ProcessKind::ve) return 1.0;
  return std::exp(-0.25 * t * t * (hi_ - lo_) / horizon_ - 0.5 * t * lo_);
}

double Schedule::sigma2(double t) const {
  if (kind_ == ProcessKind::ve) {
    const double s = lo_ * std::pow(hi_ / lo_, t / horizon_);
    return s * s;
  }
  const double log_alpha2 = -0.5 * t * t * (hi_ - lo_) / horizon_ - t * lo_;
  return -std::expm1(log_alpha2);
}

double Schedule::sigma(double t) const { return std::sqrt(sigma2(t)); }

double Schedule::eta(double t) const {
  const double s2 = sigma2(t);
  if (s2 == 0.0) return std::numeric_limits<double>::infinity();
  const double a = alpha(t);
  return a * a / s2;
}

double Schedule::dlog_alpha_dt(double t) const {
  if (kind_ == ProcessKind::ve) return 0.0;
  return -0.5 * t * (hi_ - lo_) / horizon_ - 0.5 * lo_;
}

double Schedule::dsigma2_dt(double t) const {
  if (kind_ == ProcessKind::ve) return 2.0 * sigma2(t) * std::log(hi_ / lo_) / horizon_;
  const double a = alpha(t);
  return -2.0 * a * a * dlog_alpha_dt(t);
}

double Schedule::g2(double t) const {
  return dsigma2_dt(t) - 2.0 * dlog_alpha_dt(t) * sigma2(t);
}

Vector Schedule::drift(const Vector& x, double t) const {
  if (kind_ == ProcessKind::ve) return Vector::Zero(x.size());
  return dlog_alpha_dt(t) * x;
}

double eta_ratio(const Schedule& s, double t) {
  // η_T/η_t = α_T² σ_t² / (σ_T² α_t²); with α ≡ 1 this is σ_t²/σ_T² (VE).
  const double T = s.horizon();
  if (t >= T) return 1.0;
  const double aT = s.alpha(T), at = s.alpha(t);
  return (aT * aT * s.sigma2(t)) / (s.sigma2(T) * at * at);
}

GaussianParams transition(const Schedule& s, const Vector& x0, double t) {
  require_time(s, t);
  return {s.alpha(t) * x0, s.sigma2(t)};
}

Vector grad_log_transition_h(const Schedule& s, const Vector& x_t, const Vector& x_T, double t) {
  if (x_t.size() != x_T.size()) throw ShapeMismatch("x_t and x_T differ in size");
  require_time(s, t);
  const double T = s.horizon();
  if (T - t < s.t_clip() * (1.0 - 1e-9))
    throw SingularAtTerminal("h is singular within t_clip of T (t = " + std::to_string(t) + ")");
  const double at = s.alpha(t), aT = s.alpha(T);
  if (s.kind() == ProcessKind::ve) return (x_T - x_t) / (s.sigma2(T) - s.sigma2(t));
  // σ_t²(η_t/η_T - 1) = α_t² σ_T²/α_T² - σ_t², finite at t = 0.
  const double denom = at * at * s.sigma2(T) / (aT * aT) - s.sigma2(t);
  return ((at / aT) * x_T - x_t) / denom;
}

GaussianParams bridge_kernel(const Schedule& s, const Vector& x0, const Vector& xT, double t) {
  if (x0.size() != xT.size()) throw ShapeMismatch("x0 and xT differ in size");
  require_time(s, t);
  const double T = s.horizon();
  const double at = s.alpha(t), aT = s.alpha(T);
  const double r = std::min(1.0, eta_ratio(s, t));
  GaussianParams out;
  if (s.kind() == ProcessKind::ve) {
    out.mean = r * xT + (1.0 - r) * x0;
  } else {
    out.mean = r * (at / aT) * xT + at * (1.0 - r) * x0;
  }
  out.variance = std::max(0.0, s.sigma2(t) * (1.0 - r));
  return out;
}

Vector bridge_forward_drift(const Schedule& s, const Vector& x, const Vector& xT, double t) {
  return s.drift(x, t) + s.g2(t) * grad_log_transition_h(s, x, xT, t);
}

}  // namespace spdm
