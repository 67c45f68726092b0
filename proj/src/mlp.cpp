#include "spdm/mlp.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include "spdm/errors.hpp"

namespace spdm {

Mlp::Mlp(std::size_t x_dim, std::size_t y_dim, std::vector<std::size_t> hidden, double horizon)
    : x_dim_(x_dim), y_dim_(y_dim), horizon_(horizon) {
  if (x_dim == 0) throw InvalidParams("mlp needs x_dim > 0");
  if (!(horizon > 0.0)) throw InvalidParams("mlp needs a positive horizon");
  sizes_.push_back(x_dim + y_dim + kTimeFeatures);
  for (auto h : hidden) {
    if (h == 0) throw InvalidParams("hidden layers must be nonempty");
    sizes_.push_back(h);
  }
  sizes_.push_back(x_dim);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(offset);
    offset += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(offset));
}

void Mlp::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  params_.setZero();
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const double sd = std::sqrt(2.0 / static_cast<double>(sizes_[l] + sizes_[l + 1]));
    std::normal_distribution<double> normal(0.0, sd);
    const std::size_t n = sizes_[l] * sizes_[l + 1];
    for (std::size_t k = 0; k < n; ++k) params_[static_cast<Eigen::Index>(offsets_[l] + k)] = normal(rng);
  }
}

void Mlp::set_parameters(const Vector& p) {
  if (p.size() != params_.size()) throw ShapeMismatch("parameter vector size mismatch");
  params_ = p;
}

Matrix Mlp::input_batch(const Matrix& x, const Matrix& y, const Vector& times) const {
  const Eigen::Index batch = x.cols();
  if (static_cast<std::size_t>(x.rows()) != x_dim_) throw ShapeMismatch("mlp: x dimension mismatch");
  if (y_dim_ > 0 && (static_cast<std::size_t>(y.rows()) != y_dim_ || y.cols() != batch))
    throw ShapeMismatch("mlp: y dimension mismatch");
  if (times.size() != batch) throw ShapeMismatch("mlp: one time per column required");
  Matrix in(sizes_[0], batch);
  in.topRows(x_dim_) = x;
  if (y_dim_ > 0) in.middleRows(x_dim_, y_dim_) = y;
  for (Eigen::Index j = 0; j < batch; ++j) {
    const double u = times[j] / horizon_;
    in(x_dim_ + y_dim_, j) = u;
    in(x_dim_ + y_dim_ + 1, j) = std::sin(2.0 * std::numbers::pi * u);
    in(x_dim_ + y_dim_ + 2, j) = std::cos(2.0 * std::numbers::pi * u);
  }
  return in;
}

Matrix Mlp::forward(const Matrix& x, const Matrix& y, const Vector& times, Tape* tape) const {
  Matrix a = input_batch(x, y, times);
  if (tape) {
    tape->activations.clear();
    tape->activations.push_back(a);
  }
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    Eigen::Map<const Matrix> w(params_.data() + offsets_[l], out, in);
    Eigen::Map<const Vector> b(params_.data() + offsets_[l] + out * in, out);
    Matrix z = w * a;
    z.colwise() += b;
    a = (l + 1 < layers) ? Matrix(z.array().tanh()) : z;
    if (tape) tape->activations.push_back(a);
  }
  return a;
}

Vector Mlp::backward(const Tape& tape, const Matrix& output_adjoint) const {
  const std::size_t layers = sizes_.size() - 1;
  if (tape.activations.size() != layers + 1) throw InvalidParams("mlp backward needs a full tape");
  Vector grad = Vector::Zero(params_.size());
  Matrix delta = output_adjoint;
  for (std::size_t l = layers; l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    const Matrix& a_prev = tape.activations[l];
    Eigen::Map<Matrix> gw(grad.data() + offsets_[l], out, in);
    Eigen::Map<Vector> gb(grad.data() + offsets_[l] + out * in, out);
    gw.noalias() = delta * a_prev.transpose();
    gb = delta.rowwise().sum();
    if (l > 0) {
      Eigen::Map<const Matrix> w(params_.data() + offsets_[l], out, in);
      Matrix back = w.transpose() * delta;
      delta = back.array() * (1.0 - a_prev.array().square());
    }
  }
  return grad;
}

Vector Mlp::evaluate(const Vector& x, const Vector& y, double t) const {
  Matrix ym = y_dim_ > 0 ? Matrix(y) : Matrix(0, 1);
  return forward(Matrix(x), ym, Vector::Constant(1, t)).col(0);
}

ScoreNet::ScoreNet(Mlp mlp, std::optional<IsometryGroup> tied_group)
    : mlp_(std::move(mlp)), tied_(std::move(tied_group)) {
  if (tied_ && tied_->dimension() != mlp_.x_dim())
    throw ShapeMismatch("tied group must act on the network's x dimension");
}

namespace {

Matrix act_on_y(const GroupElement& kappa, const Matrix& y) {
  if (y.rows() == 0 || static_cast<std::size_t>(y.rows()) != kappa.dimension()) return y;
  return kappa.apply_columns(y);
}

}  // namespace

Matrix ScoreNet::forward(const Matrix& x, const Matrix& y, const Vector& times, Tape* tape) const {
  if (!tied_) {
    if (tape) tape->copies.resize(1);
    return mlp_.forward(x, y, times, tape ? &tape->copies[0] : nullptr);
  }
  const auto& g = *tied_;
  if (tape) tape->copies.resize(g.size());
  Matrix total = Matrix::Zero(x.rows(), x.cols());
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto& kappa = g.element(k);
    const auto& kappa_inv = g.element(g.inverse(k));
    const Matrix out = mlp_.forward(kappa.apply_columns(x), act_on_y(kappa, y), times,
                                    tape ? &tape->copies[k] : nullptr);
    total += kappa_inv.apply_columns(out);
  }
  return total / static_cast<double>(g.size());
}

Vector ScoreNet::backward(const Tape& tape, const Matrix& output_adjoint) const {
  if (!tied_) return mlp_.backward(tape.copies.at(0), output_adjoint);
  const auto& g = *tied_;
  Vector grad = Vector::Zero(mlp_.parameter_count());
  // out = (1/|G|) Σ A_κᵀ o_κ  ⇒  ∂L/∂o_κ = (1/|G|) A_κ ∂L/∂out.
  for (std::size_t k = 0; k < g.size(); ++k)
    grad += mlp_.backward(tape.copies.at(k), g.element(k).apply_columns(output_adjoint));
  return grad / static_cast<double>(g.size());
}

ScoreField ScoreNet::field() const {
  auto self = std::make_shared<const ScoreNet>(*this);
  return [self](const Vector& x, const Vector& y, double t) {
    const Matrix ym = self->mlp().y_dim() > 0 ? Matrix(y) : Matrix(0, 1);
    return Vector(self->forward(Matrix(x), ym, Vector::Constant(1, t)).col(0));
  };
}

}  // namespace spdm
