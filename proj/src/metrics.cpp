#include "spdm/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "spdm/errors.hpp"
#include "spdm/rng.hpp"

namespace spdm {

std::string to_string(DivergenceMode mode) {
  return mode == DivergenceMode::exact_fd ? "exact_fd" : "hutchinson";
}

DivergenceEstimate divergence(const DriftField& f, const Vector& x, double t, DivergenceMode mode,
                              std::size_t probes, std::mt19937_64& rng) {
  if (mode == DivergenceMode::exact_fd) {
    double total = 0.0;
    Vector xp = x;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      const double h = 1e-5 * (1.0 + std::abs(x[j]));
      xp[j] = x[j] + h;
      const double up = f(xp, t)[j];
      xp[j] = x[j] - h;
      const double down = f(xp, t)[j];
      xp[j] = x[j];
      total += (up - down) / (2.0 * h);
    }
    return {total, 0.0};
  }
  if (probes == 0) throw InvalidParams("hutchinson needs at least one probe");
  const double h = 1e-5 * (1.0 + x.cwiseAbs().maxCoeff());
  std::bernoulli_distribution coin(0.5);
  double sum = 0.0, sum_sq = 0.0;
  Vector v(x.size());
  for (std::size_t p = 0; p < probes; ++p) {
    for (auto& e : v) e = coin(rng) ? 1.0 : -1.0;
    const double est = v.dot(f(x + h * v, t) - f(x - h * v, t)) / (2.0 * h);
    sum += est;
    sum_sq += est * est;
  }
  const double n = static_cast<double>(probes);
  const double mean = sum / n;
  const double var = probes > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0)) : 0.0;
  return {mean, std::sqrt(var / n)};
}

double divergence(const DriftField& f, const Vector& x, double t) {
  std::mt19937_64 unused(0);
  return divergence(f, x, t, DivergenceMode::exact_fd, 0, unused).value;
}

NllReport pf_ode_nll(const ScoreField& score, const Schedule& s, const Vector& x0,
                     const TimeGrid& grid, const DivergenceSpec& div, const NllOptions& options,
                     const Vector& y) {
  const DriftField f = [&](const Vector& x, double t) -> Vector {
    return s.drift(x, t) - 0.5 * s.g2(t) * score(x, y, t);
  };
  NllReport report;
  report.mode = div.mode;
  report.steps = grid.steps();
  Vector x = x0;
  double integral = 0.0, var = 0.0;
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double ta = grid[k], tb = grid[k + 1], h = tb - ta;
    auto rng = rng_stream(div.seed, k, 3);
    const Vector k1 = f(x, ta);
    const auto d1 = divergence(f, x, ta, div.mode, div.probes, rng);
    const Vector x_pred = x + h * k1;
    const Vector k2 = f(x_pred, tb);
    const auto d2 = divergence(f, x_pred, tb, div.mode, div.probes, rng);
    x += (0.5 * h) * (k1 + k2);
    if (!x.allFinite()) throw NonFiniteState(k + 1, "NLL trajectory became non-finite");
    integral += 0.5 * h * (d1.value + d2.value);
    var += 0.25 * h * h * (d1.standard_error * d1.standard_error + d2.standard_error * d2.standard_error);
  }
  const double d = static_cast<double>(x0.size());
  const double prior_var = s.prior_variance();
  report.prior_log_density =
      -0.5 * d * std::log(2.0 * std::numbers::pi * prior_var) - 0.5 * x.squaredNorm() / prior_var;
  report.divergence_integral = integral;
  report.divergence_stderr = std::sqrt(var);
  report.log_likelihood = report.prior_log_density + integral;
  double per_dim = -report.log_likelihood / d;
  if (options.dequantization_bins > 0)
    per_dim += std::log(static_cast<double>(options.dequantization_bins) / options.data_range);
  report.bits_per_dim = per_dim / std::numbers::ln2;
  report.prior_bias_flag = s.alpha(s.horizon()) >= 1e-4;
  report.terminal = x;
  return report;
}

FeatureMap::FeatureMap(const FeatureSpec& spec) : spec_(spec) {
  if (spec.input_dim == 0 || spec.feature_dim == 0) throw InvalidParams("feature dims must be positive");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  w_.resize(spec.feature_dim, spec.input_dim);
  b_.resize(spec.feature_dim);
  for (Eigen::Index i = 0; i < w_.rows(); ++i)
    for (Eigen::Index j = 0; j < w_.cols(); ++j) w_(i, j) = scale * normal(rng);
  for (auto& v : b_) v = normal(rng);
}

Vector FeatureMap::operator()(const Vector& x) const {
  if (x.size() != w_.cols()) throw ShapeMismatch("feature map input dimension mismatch");
  return (w_ * x + b_).array().tanh();
}

Matrix FeatureMap::apply(const Matrix& xs) const {
  if (xs.rows() != w_.cols()) throw ShapeMismatch("feature map input dimension mismatch");
  Matrix z = w_ * xs;
  z.colwise() += b_;
  return z.array().tanh();
}

FeatureStats feature_stats(const Matrix& features) {
  if (features.cols() == 0) throw InvalidParams("feature statistics need samples");
  const double n = static_cast<double>(features.cols());
  FeatureStats st;
  st.count = static_cast<std::size_t>(features.cols());
  st.mean = features.rowwise().sum() / n;
  const Matrix centered = features.colwise() - st.mean;
  st.covariance = centered * centered.transpose() / n;
  return st;
}

namespace {

// Symmetric square root; eigenvalues below -1e-6 are an error, smaller
// negative ones are rounding and clamp to zero.
Eigen::SelfAdjointEigenSolver<Matrix> checked_eigen(const Matrix& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NonPsd(std::string("eigen-decomposition failed for ") + what);
  if (es.eigenvalues().size() > 0 && es.eigenvalues().minCoeff() < -1e-6)
    throw NonPsd(std::string(what) + " has eigenvalue " + std::to_string(es.eigenvalues().minCoeff()));
  return es;
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size() != b.mean.size()) throw ShapeMismatch("feature dimensions differ");
  const auto ea = checked_eigen(a.covariance, "covariance A");
  checked_eigen(b.covariance, "covariance B");
  const Vector root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Matrix sqrt_a = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
  const auto em = checked_eigen(sqrt_a * b.covariance * sqrt_a, "covariance product");
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double dist = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() -
                      2.0 * tr_sqrt;
  return std::max(0.0, dist);
}

FeatureStats group_averaged_stats(const Matrix& data, const IsometryGroup& group,
                                  const FeatureMap& features) {
  if (data.cols() == 0) throw InvalidParams("dataset is empty");
  if (group.size() == 1) return feature_stats(features.apply(group.element(0).apply_columns(data)));
  const double n = static_cast<double>(data.cols());
  const auto fd = static_cast<Eigen::Index>(features.spec().feature_dim);
  Vector mean = Vector::Zero(fd);
  Matrix second = Matrix::Zero(fd, fd);
  for (const auto& kappa : group.elements()) {
    const Matrix f = features.apply(kappa.apply_columns(data));
    mean += f.rowwise().sum() / n;
    second += f * f.transpose() / n;
  }
  const double g = static_cast<double>(group.size());
  FeatureStats st;
  st.count = static_cast<std::size_t>(data.cols()) * group.size();
  st.mean = mean / g;
  st.covariance = second / g - st.mean * st.mean.transpose();
  st.covariance = 0.5 * (st.covariance + st.covariance.transpose()).eval();
  return st;
}

double inv_fid(const Matrix& data, const IsometryGroup& group, const FeatureMap& features) {
  if (group.size() < 2) throw InvalidParams("Inv-FID needs a group with at least two elements");
  std::vector<FeatureStats> stats;
  for (const auto& kappa : group.elements())
    stats.push_back(feature_stats(features.apply(kappa.apply_columns(data))));
  double worst = 0.0;
  for (std::size_t i = 0; i < stats.size(); ++i)
    for (std::size_t j = i + 1; j < stats.size(); ++j)
      worst = std::max(worst, frechet_distance(stats[i], stats[j]));
  return worst;
}

double delta_x0_gap(const Model& m, const std::vector<Vector>& inputs, const IsometryGroup& group,
                    std::uint64_t seed) {
  if (inputs.empty()) throw InvalidParams("delta_x0_gap needs inputs");
  std::vector<std::size_t> others;
  for (std::size_t k = 0; k < group.size(); ++k)
    if (k != group.identity()) others.push_back(k);
  if (others.empty()) return 0.0;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
  double total = 0.0;
  for (const auto& x : inputs) {
    const auto& kappa = group.element(others[pick(rng)]);
    total += (m(kappa.apply(x)) - kappa.apply(m(x))).cwiseAbs().maxCoeff();
  }
  return total / static_cast<double>(inputs.size());
}

EnergyTestResult energy_distance_test(const Matrix& a, const Matrix& b, std::size_t permutations,
                                      std::uint64_t seed) {
  if (a.cols() == 0 || b.cols() == 0) throw InvalidParams("energy test needs nonempty samples");
  if (a.rows() != b.rows()) throw ShapeMismatch("energy test samples differ in dimension");
  const Eigen::Index n = a.cols(), m = b.cols(), total = n + m;
  Matrix pooled(a.rows(), total);
  pooled << a, b;
  Matrix dist(total, total);
  for (Eigen::Index j = 0; j < total; ++j)
    dist.col(j) = (pooled.colwise() - pooled.col(j)).colwise().norm().transpose();
  const Vector row_sums = dist.rowwise().sum();
  const double grand = row_sums.sum();
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  // E from the pooled quadratic forms: zᵀDz, 1ᵀDz and 1ᵀD1.
  auto energy = [&](double zdz, double onedz) {
    const double s_ab = onedz - zdz;
    const double s_bb = grand - 2.0 * onedz + zdz;
    return 2.0 * s_ab / (dn * dm) - zdz / (dn * dn) - s_bb / (dm * dm);
  };

  EnergyTestResult result;
  result.permutations = permutations;
  {
    const double s_ab = dist.block(0, n, n, m).sum();
    const double s_aa = dist.topLeftCorner(n, n).sum();
    const double s_bb = dist.bottomRightCorner(m, m).sum();
    result.statistic = 2.0 * s_ab / (dn * dm) - s_aa / (dn * dn) - s_bb / (dm * dm);
  }
  if (permutations == 0) return result;

  Vector z0 = Vector::Zero(total);
  z0.head(n).setOnes();
  const Vector dz0 = dist * z0;
  const double observed = energy(z0.dot(dz0), row_sums.dot(z0));

  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
  std::size_t exceed = 0;
  constexpr std::size_t batch = 32;
  for (std::size_t done = 0; done < permutations; done += batch) {
    const std::size_t count = std::min(batch, permutations - done);
    Matrix z = Matrix::Zero(total, static_cast<Eigen::Index>(count));
    for (std::size_t c = 0; c < count; ++c) {
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index k = 0; k < n; ++k) z(order[static_cast<std::size_t>(k)], static_cast<Eigen::Index>(c)) = 1.0;
    }
    const Matrix dz = dist * z;
    for (std::size_t c = 0; c < count; ++c) {
      const auto col = static_cast<Eigen::Index>(c);
      const double e = energy(z.col(col).dot(dz.col(col)), row_sums.dot(z.col(col)));
      if (e >= observed * (1.0 - 1e-12)) ++exceed;
    }
  }
  result.p_value = static_cast<double>(1 + exceed) / static_cast<double>(permutations + 1);
  return result;
}

FokkerPlanckResidual fokker_planck_residual(const Density& p, const DriftField& f,
                                            const std::function<double(double)>& g2, double t,
                                            const Grid2d& grid, double fd_step) {
  if (!(grid.hi > grid.lo) || !(grid.spacing > 0.0) || !(fd_step > 0.0))
    throw InvalidParams("invalid residual grid");
  const auto count = static_cast<std::size_t>(std::llround((grid.hi - grid.lo) / grid.spacing)) + 1;
  const double h = fd_step;
  // Fourth-order central first and second derivatives.
  auto d1 = [h](double m2, double m1, double p1, double p2) {
    return (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
  };
  auto d2 = [h](double m2, double m1, double c, double p1, double p2) {
    return (-m2 + 16.0 * m1 - 30.0 * c + 16.0 * p1 - p2) / (12.0 * h * h);
  };
  const double diffusion = 0.5 * g2(t);
  FokkerPlanckResidual out;
  double sum_sq = 0.0;
  Vector x(2);
  for (std::size_t iy = 0; iy < count; ++iy) {
    for (std::size_t ix = 0; ix < count; ++ix) {
      x << grid.lo + grid.spacing * static_cast<double>(ix), grid.lo + grid.spacing * static_cast<double>(iy);
      const double dp_dt = d1(p(x, t - 2 * h), p(x, t - h), p(x, t + h), p(x, t + 2 * h));
      double flux = 0.0, laplace = 0.0;
      const double centre = p(x, t);
      for (int j = 0; j < 2; ++j) {
        std::array<double, 5> pv{}, qv{};
        for (int k = -2; k <= 2; ++k) {
          Vector xs = x;
          xs[j] += k * h;
          const double pk = k == 0 ? centre : p(xs, t);
          pv[static_cast<std::size_t>(k + 2)] = pk;
          qv[static_cast<std::size_t>(k + 2)] = pk * f(xs, t)[j];
        }
        flux += d1(qv[0], qv[1], qv[3], qv[4]);
        laplace += d2(pv[0], pv[1], pv[2], pv[3], pv[4]);
      }
      const double r = dp_dt + flux - diffusion * laplace;
      out.max_abs = std::max(out.max_abs, std::abs(r));
      sum_sq += r * r;
      ++out.points;
    }
  }
  out.l2 = std::sqrt(sum_sq * grid.spacing * grid.spacing);
  return out;
}

}  // namespace spdm
