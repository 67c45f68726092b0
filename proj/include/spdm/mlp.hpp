#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "spdm/group.hpp"
#include "spdm/types.hpp"

namespace spdm {

/// Number of time-embedding features: (t/T, sin 2πt/T, cos 2πt/T).
inline constexpr std::size_t kTimeFeatures = 3;

/// Fully connected tanh network s_θ(x, [y], t) with a linear output layer.
/// Parameters live in one flat vector: for each layer, the weight matrix
/// (column-major, out × in) followed by its bias.
class Mlp {
 public:
  /// layer_sizes = {n₀, n₁, ..., n_L}; n₀ must equal x_dim + y_dim + kTimeFeatures
  /// and n_L must equal x_dim.
  Mlp(std::size_t x_dim, std::size_t y_dim, std::vector<std::size_t> hidden, double horizon);

  /// Glorot-normal weights from the seed, zero biases.
  void initialize(std::uint64_t seed);

  std::size_t x_dim() const { return x_dim_; }
  std::size_t y_dim() const { return y_dim_; }
  double horizon() const { return horizon_; }
  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }

  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }
  void set_parameters(const Vector& p);

  /// Activations of every layer for one batch, kept for backward().
  struct Tape {
    std::vector<Matrix> activations;  // activations[0] is the input batch
  };

  /// Columns of x (and y) are samples; times has one entry per column.
  /// Returns the x_dim × batch output.
  Matrix forward(const Matrix& x, const Matrix& y, const Vector& times, Tape* tape = nullptr) const;
  /// Gradient of a scalar loss w.r.t. the flat parameters, given ∂loss/∂output.
  Vector backward(const Tape& tape, const Matrix& output_adjoint) const;

  Vector evaluate(const Vector& x, const Vector& y, double t) const;

  Matrix input_batch(const Matrix& x, const Matrix& y, const Vector& times) const;

 private:
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }

  std::size_t x_dim_;
  std::size_t y_dim_;
  double horizon_;
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  Vector params_;
};

/// Score network used for training: a plain MLP, or (when a group is attached)
/// the weight-tied variant whose parameters are shared across the group orbit,
/// s(x) = (1/|G|) Σ κ⁻¹ mlp(κx, κy), which is equivariant by construction.
class ScoreNet {
 public:
  explicit ScoreNet(Mlp mlp, std::optional<IsometryGroup> tied_group = std::nullopt);

  const Mlp& mlp() const { return mlp_; }
  Mlp& mlp() { return mlp_; }
  const std::optional<IsometryGroup>& tied_group() const { return tied_; }

  const Vector& parameters() const { return mlp_.parameters(); }
  Vector& parameters() { return mlp_.parameters(); }

  struct Tape {
    std::vector<Mlp::Tape> copies;
  };

  Matrix forward(const Matrix& x, const Matrix& y, const Vector& times, Tape* tape = nullptr) const;
  Vector backward(const Tape& tape, const Matrix& output_adjoint) const;

  /// The network as a ScoreField (copies the current parameters).
  ScoreField field() const;

 private:
  Mlp mlp_;
  std::optional<IsometryGroup> tied_;
};

}  // namespace spdm
