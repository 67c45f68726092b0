#include "spdm/tied_conv.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <random>

#include "spdm/errors.hpp"

namespace spdm {

std::string to_string(KernelSymmetry sym) {
  switch (sym) {
    case KernelSymmetry::flip: return "flip";
    case KernelSymmetry::c4: return "C4";
    case KernelSymmetry::d4: return "D4";
  }
  return "?";
}

KernelSymmetry parse_kernel_symmetry(const std::string& tag) {
  std::string t = tag;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "flip") return KernelSymmetry::flip;
  if (t == "c4") return KernelSymmetry::c4;
  if (t == "d4") return KernelSymmetry::d4;
  throw InvalidParams("unknown kernel symmetry '" + tag + "'");
}

IsometryGroup symmetry_group(KernelSymmetry sym, GridShape shape) {
  switch (sym) {
    case KernelSymmetry::flip: return make_flip_group(FlipAxis::horizontal, shape);
    case KernelSymmetry::c4: return make_c4_group(shape);
    case KernelSymmetry::d4: return make_d4_group(shape);
  }
  throw InvalidParams("unknown kernel symmetry");
}

DenseKernel DenseKernel::random(std::size_t size, std::size_t in_channels,
                                std::size_t out_channels, std::uint64_t seed) {
  DenseKernel k{size, in_channels, out_channels, Vector(size * size * in_channels * out_channels)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < k.weights.size(); ++i) k.weights[i] = normal(rng);
  return k;
}

TiedKernel::TiedKernel(KernelSymmetry symmetry, std::size_t size, std::size_t in_channels,
                       std::size_t out_channels)
    : symmetry_(symmetry), size_(size), in_(in_channels), out_(out_channels) {
  if (size < 3 || size % 2 == 0)
    throw UnsupportedSize("tied kernels need an odd size >= 3, got " + std::to_string(size));
  if (in_ == 0 || out_ == 0) throw InvalidParams("kernel channels must be positive");
  const IsometryGroup g = symmetry_group(symmetry, GridShape{size, size, 1});
  constexpr auto unset = std::numeric_limits<std::size_t>::max();
  orbit_of_.assign(size * size, unset);
  for (std::size_t p = 0; p < orbit_of_.size(); ++p) {
    if (orbit_of_[p] != unset) continue;
    for (const auto& kappa : g.elements()) orbit_of_[kappa.pixel_destination(p)] = orbit_count_;
    ++orbit_count_;
  }
  free_ = Vector::Zero(static_cast<Eigen::Index>(free_parameter_count()));
}

void TiedKernel::set_free_parameters(const Vector& p) {
  if (p.size() != free_.size()) throw ShapeMismatch("free parameter count mismatch");
  free_ = p;
}

void TiedKernel::randomize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(size_ * size_ * in_));
  std::normal_distribution<double> normal(0.0, sd);
  for (Eigen::Index i = 0; i < free_.size(); ++i) free_[i] = normal(rng);
}

DenseKernel TiedKernel::expand() const {
  DenseKernel k{size_, in_, out_, Vector(size_ * size_ * in_ * out_)};
  for (std::size_t a = 0; a < size_; ++a)
    for (std::size_t b = 0; b < size_; ++b) {
      const std::size_t orbit = orbit_of_[a * size_ + b];
      for (std::size_t ci = 0; ci < in_; ++ci)
        for (std::size_t co = 0; co < out_; ++co)
          k.weights[static_cast<Eigen::Index>(k.index(a, b, ci, co))] =
              free_[static_cast<Eigen::Index>((orbit * in_ + ci) * out_ + co)];
    }
  return k;
}

IsometryGroup TiedKernel::kernel_group() const {
  return symmetry_group(symmetry_, GridShape{size_, size_, in_ * out_});
}

Vector conv2d(const DenseKernel& kernel, const Vector& image, GridShape shape) {
  if (static_cast<std::size_t>(image.size()) != shape.size())
    throw ShapeMismatch("image size does not match its shape");
  if (shape.channels != kernel.in_channels)
    throw ShapeMismatch("image has " + std::to_string(shape.channels) + " channels, kernel expects " +
                        std::to_string(kernel.in_channels));
  const auto h = static_cast<long>(shape.height), w = static_cast<long>(shape.width);
  const auto half = static_cast<long>(kernel.size / 2);
  const std::size_t cin = kernel.in_channels, cout = kernel.out_channels;
  Vector out = Vector::Zero(static_cast<Eigen::Index>(shape.pixels() * cout));
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j) {
      double* dst = out.data() + (i * w + j) * static_cast<long>(cout);
      for (long a = 0; a < static_cast<long>(kernel.size); ++a) {
        const long r = i + a - half;
        if (r < 0 || r >= h) continue;
        for (long b = 0; b < static_cast<long>(kernel.size); ++b) {
          const long c = j + b - half;
          if (c < 0 || c >= w) continue;
          const double* src = image.data() + (r * w + c) * static_cast<long>(cin);
          const double* taps =
              kernel.weights.data() + kernel.index(static_cast<std::size_t>(a), static_cast<std::size_t>(b), 0, 0);
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t co = 0; co < cout; ++co) dst[co] += taps[ci * cout + co] * src[ci];
        }
      }
    }
  return out;
}

Vector conv2d(const TiedKernel& kernel, const Vector& image, GridShape shape) {
  return conv2d(kernel.expand(), image, shape);
}

TiedConvNet::TiedConvNet(KernelSymmetry symmetry, std::size_t kernel_size,
                         std::vector<std::size_t> channels, std::uint64_t seed) {
  if (channels.size() < 2) throw InvalidParams("conv net needs at least input and output channels");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (std::size_t l = 0; l + 1 < channels.size(); ++l) {
    TiedKernel k(symmetry, kernel_size, channels[l], channels[l + 1]);
    k.randomize(rng());
    layers_.push_back(std::move(k));
    Vector b(static_cast<Eigen::Index>(channels[l + 1]));
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = normal(rng);
    biases_.push_back(std::move(b));
  }
}

std::size_t TiedConvNet::free_parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l)
    n += layers_[l].free_parameter_count() + static_cast<std::size_t>(biases_[l].size());
  return n;
}

Vector TiedConvNet::forward(const Vector& image, GridShape shape) const {
  Vector a = image;
  GridShape cur = shape;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Vector z = conv2d(layers_[l], a, cur);
    cur.channels = layers_[l].out_channels();
    const auto c = static_cast<Eigen::Index>(cur.channels);
    for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(cur.pixels()); ++p)
      z.segment(p * c, c) += biases_[l];
    a = (l + 1 < layers_.size()) ? Vector(z.array().tanh()) : z;
  }
  return a;
}

Vector TiedConvNet::pooled(const Vector& image, GridShape shape) const {
  const Vector features = forward(image, shape);
  const auto c = static_cast<Eigen::Index>(layers_.back().out_channels());
  const auto pixels = static_cast<Eigen::Index>(shape.pixels());
  Vector out = Vector::Zero(c);
  for (Eigen::Index p = 0; p < pixels; ++p) out += features.segment(p * c, c);
  return out / static_cast<double>(pixels);
}

}  // namespace spdm
