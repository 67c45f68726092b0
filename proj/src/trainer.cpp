#include "spdm/trainer.hpp"

#include <cmath>
#include <string>

#include "spdm/errors.hpp"
#include "spdm/rng.hpp"

namespace spdm {

void TrainerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidParams("learning_rate must be positive");
  if (batch_size == 0) throw InvalidParams("batch_size must be positive");
  if (!(ema_rate >= 0.0 && ema_rate < 1.0)) throw InvalidParams("ema_rate must lie in [0, 1)");
  if (!(regularizer_weight >= 0.0)) throw InvalidParams("regularizer_weight must be >= 0");
}

NoisedBatch noise_batch(const Schedule& s, const Matrix& x0, const Matrix& y, std::mt19937_64& rng) {
  const Eigen::Index batch = x0.cols();
  if (batch == 0) throw InvalidParams("empty training batch");
  std::uniform_real_distribution<double> uniform(s.t_clip(), s.horizon());
  std::normal_distribution<double> normal(0.0, 1.0);
  NoisedBatch out;
  out.times.resize(batch);
  out.sigmas.resize(batch);
  out.noise.resize(x0.rows(), batch);
  out.x_t.resize(x0.rows(), batch);
  out.y = y;
  for (Eigen::Index j = 0; j < batch; ++j) {
    const double t = uniform(rng);
    out.times[j] = t;
    out.sigmas[j] = s.sigma(t);
    for (Eigen::Index k = 0; k < x0.rows(); ++k) out.noise(k, j) = normal(rng);
    out.x_t.col(j) = s.alpha(t) * x0.col(j) + out.sigmas[j] * out.noise.col(j);
  }
  return out;
}

LossTerms dsm_loss(const ScoreNet& net, const NoisedBatch& batch) {
  ScoreNet::Tape tape;
  const Matrix out = net.forward(batch.x_t, batch.y, batch.times, &tape);
  const auto n = static_cast<double>(batch.x_t.cols());
  // residual = σ s + ε
  Matrix residual = out * batch.sigmas.asDiagonal();
  residual += batch.noise;
  LossTerms terms;
  terms.loss = residual.squaredNorm() / n;
  const Matrix adjoint = (2.0 / n) * residual * batch.sigmas.asDiagonal();
  terms.gradient = net.backward(tape, adjoint);
  return terms;
}

LossTerms dsm_loss(const ScoreNet& net, const Schedule& s, const Matrix& x0, const Matrix& y,
                   std::mt19937_64& rng) {
  return dsm_loss(net, noise_batch(s, x0, y, rng));
}

namespace {

Matrix act_columns(const IsometryGroup& g, const std::vector<std::size_t>& picks, const Matrix& m) {
  if (m.rows() == 0 || static_cast<std::size_t>(m.rows()) != g.dimension()) return m;
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) out.col(j) = g.element(picks[j]).apply(m.col(j));
  return out;
}

}  // namespace

LossTerms equivariance_regularizer(const ScoreNet& net, const ScoreNet& ema_net,
                                   const IsometryGroup& group, const NoisedBatch& batch,
                                   std::mt19937_64& rng) {
  const Eigen::Index n = batch.x_t.cols();
  std::uniform_int_distribution<std::size_t> pick(0, group.size() - 1);
  std::vector<std::size_t> picks(static_cast<std::size_t>(n));
  for (auto& p : picks) p = pick(rng);

  const Matrix target = act_columns(group, picks, ema_net.forward(batch.x_t, batch.y, batch.times));
  ScoreNet::Tape tape;
  const Matrix out = net.forward(act_columns(group, picks, batch.x_t),
                                 act_columns(group, picks, batch.y), batch.times, &tape);
  const Matrix diff = out - target;
  LossTerms terms;
  terms.loss = diff.squaredNorm() / static_cast<double>(n);
  terms.gradient = net.backward(tape, (2.0 / static_cast<double>(n)) * diff);
  return terms;
}

LossTerms equivariance_regularizer(const ScoreNet& net, const ScoreNet& ema_net,
                                   const IsometryGroup& group, const Schedule& s,
                                   const Matrix& x0, const Matrix& y, std::mt19937_64& rng) {
  const NoisedBatch batch = noise_batch(s, x0, y, rng);
  return equivariance_regularizer(net, ema_net, group, batch, rng);
}

Vector ema_update(const Vector& ema, const Vector& params, double mu) {
  if (!(mu >= 0.0 && mu < 1.0)) throw InvalidParams("EMA rate must lie in [0, 1)");
  if (ema.size() != params.size()) throw ShapeMismatch("EMA and parameters differ in size");
  return mu * ema + (1.0 - mu) * params;
}

void adam_step(Vector& params, const Vector& gradient, AdamState& state, double learning_rate) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (state.m.size() != params.size()) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
  }
  ++state.step;
  state.m = beta1 * state.m + (1.0 - beta1) * gradient;
  state.v = beta2 * state.v + (1.0 - beta2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  params.array() -= learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

TrainState initial_train_state(ScoreNet net) {
  TrainState state{std::move(net), Vector(), AdamState{}, {}, 0};
  state.ema = state.net.parameters();
  return state;
}

void train(TrainState& state, const TrainerConfig& config, const Matrix& data,
           const Matrix& conditions, const Schedule& schedule,
           const std::optional<IsometryGroup>& group, TrainMode mode) {
  config.validate();
  if (data.cols() == 0) throw InvalidParams("training data is empty");
  if (conditions.size() > 0 && conditions.cols() != data.cols())
    throw ShapeMismatch("conditions must have one column per sample");
  if (mode == TrainMode::regularized && !group)
    throw InvalidParams("regularized training needs a group");
  if (mode == TrainMode::weight_tied && !state.net.tied_group())
    throw InvalidParams("weight-tied training needs a network with a tied group");

  const auto batch = static_cast<Eigen::Index>(config.batch_size);
  const bool has_y = conditions.size() > 0;
  for (; state.step < config.steps; ++state.step) {
    auto rng = rng_stream(config.seed, state.step, 0);
    std::uniform_int_distribution<Eigen::Index> pick(0, data.cols() - 1);
    Matrix x0(data.rows(), batch);
    Matrix y = has_y ? Matrix(conditions.rows(), batch) : Matrix(0, batch);
    for (Eigen::Index j = 0; j < batch; ++j) {
      const Eigen::Index k = pick(rng);
      x0.col(j) = data.col(k);
      if (has_y) y.col(j) = conditions.col(k);
    }
    const NoisedBatch noised = noise_batch(schedule, x0, y, rng);
    LossTerms terms = dsm_loss(state.net, noised);
    if (mode == TrainMode::regularized && config.regularizer_weight > 0.0) {
      ScoreNet ema_net = state.net;
      ema_net.parameters() = state.ema;
      auto kappa_rng = rng_stream(config.seed, state.step, 1);
      const LossTerms reg = equivariance_regularizer(state.net, ema_net, *group, noised, kappa_rng);
      terms.loss += config.regularizer_weight * reg.loss;
      terms.gradient += config.regularizer_weight * reg.gradient;
    }
    if (!std::isfinite(terms.loss) || !terms.gradient.allFinite())
      throw DivergedLoss(state.step, "training loss became non-finite at step " +
                                         std::to_string(state.step));
    adam_step(state.net.parameters(), terms.gradient, state.adam, config.learning_rate);
    state.ema = ema_update(state.ema, state.net.parameters(), config.ema_rate);
    state.losses.push_back(terms.loss);
  }
}

double equivariance_gap(const ScoreField& field, const IsometryGroup& group, const Matrix& x,
                        const Vector& times) {
  if (times.size() != x.cols()) throw ShapeMismatch("one time per column required");
  double total = 0.0;
  const Vector none;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Vector base = field(x.col(j), none, times[j]);
    for (const auto& kappa : group.elements())
      total += (field(kappa.apply(x.col(j)), none, times[j]) - kappa.apply(base)).squaredNorm();
  }
  return total / static_cast<double>(x.cols() * static_cast<Eigen::Index>(group.size()));
}

}  // namespace spdm
