#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "spdm/diffusion.hpp"
#include "spdm/group.hpp"
#include "spdm/mlp.hpp"

namespace spdm {

enum class TrainMode { plain, weight_tied, regularized };

struct TrainerConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 128;
  std::size_t steps = 1000;
  double ema_rate = 0.999;
  double regularizer_weight = 0.1;
  std::uint64_t seed = 0;

  /// Throws InvalidParams.
  void validate() const;
};

/// Value and flat-parameter gradient of a scalar objective.
struct LossTerms {
  double loss = 0.0;
  Vector gradient;
};

/// One minibatch after forward noising: x_t = α_t x₀ + σ_t ε with t ~ U(t_clip, T).
struct NoisedBatch {
  Matrix x_t;
  Matrix y;
  Matrix noise;
  Vector times;
  Vector sigmas;
};

NoisedBatch noise_batch(const Schedule& s, const Matrix& x0, const Matrix& y, std::mt19937_64& rng);

/// Denoising score matching with weight σ_t²: mean ‖σ_t s_θ(x_t, t) + ε‖².
LossTerms dsm_loss(const ScoreNet& net, const NoisedBatch& batch);
LossTerms dsm_loss(const ScoreNet& net, const Schedule& s, const Matrix& x0, const Matrix& y,
                   std::mt19937_64& rng);

/// One-sample equivariance penalty mean ‖s_θ(κx, κy, t) - κ s_θ̄(x, y, t)‖² with κ
/// drawn uniformly per item. The EMA network is a constant: gradients flow
/// only through `net`.
LossTerms equivariance_regularizer(const ScoreNet& net, const ScoreNet& ema_net,
                                   const IsometryGroup& group, const NoisedBatch& batch,
                                   std::mt19937_64& rng);
LossTerms equivariance_regularizer(const ScoreNet& net, const ScoreNet& ema_net,
                                   const IsometryGroup& group, const Schedule& s,
                                   const Matrix& x0, const Matrix& y, std::mt19937_64& rng);

/// θ̄ ← μθ̄ + (1-μ)θ.
Vector ema_update(const Vector& ema, const Vector& params, double mu);

struct AdamState {
  Vector m;
  Vector v;
  std::size_t step = 0;
};

/// Bias-corrected Adam (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
void adam_step(Vector& params, const Vector& gradient, AdamState& state, double learning_rate);

struct TrainState {
  ScoreNet net;
  Vector ema;
  AdamState adam;
  std::vector<double> losses;  // one entry per completed step
  std::size_t step = 0;
};

TrainState initial_train_state(ScoreNet net);

/// Runs steps state.step .. config.steps-1. Each step draws its minibatch from
/// an engine keyed by (seed, step), so a resumed run continues bit-identically.
/// `data` holds one sample per column; `conditions` is empty or matches its columns.
/// Throws DivergedLoss when the loss turns non-finite.
void train(TrainState& state, const TrainerConfig& config, const Matrix& data,
           const Matrix& conditions, const Schedule& schedule,
           const std::optional<IsometryGroup>& group, TrainMode mode);

/// E ‖s(κx, t) - κ s(x, t)‖² over κ ∈ G, columns of x and the given times.
double equivariance_gap(const ScoreField& field, const IsometryGroup& group, const Matrix& x,
                        const Vector& times);

}  // namespace spdm
