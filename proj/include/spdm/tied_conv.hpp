#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spdm/group.hpp"
#include "spdm/types.hpp"

namespace spdm {

enum class KernelSymmetry { flip, c4, d4 };

std::string to_string(KernelSymmetry sym);
/// Accepts "flip", "C4", "D4" (case-insensitive). Throws InvalidParams.
KernelSymmetry parse_kernel_symmetry(const std::string& tag);

/// Dense k × k kernel mapping c_in to c_out channels.
/// weights[((a·k + b)·c_in + ci)·c_out + co] is the tap at row a, column b.
struct DenseKernel {
  std::size_t size = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Vector weights;

  static DenseKernel random(std::size_t size, std::size_t in_channels, std::size_t out_channels,
                            std::uint64_t seed);
  std::size_t index(std::size_t a, std::size_t b, std::size_t ci, std::size_t co) const {
    return ((a * size + b) * in_channels + ci) * out_channels + co;
  }
};

/// A kernel whose taps are shared across the orbits of the symmetry group
/// acting on kernel positions, so the expanded kernel is fixed by the group.
/// The "flip" kernel is mirror symmetric (columns reversed), giving the
/// d,a,d / e,b,e / f,c,f pattern on 3×3.
class TiedKernel {
 public:
  /// Throws UnsupportedSize unless size is odd and ≥ 3.
  TiedKernel(KernelSymmetry symmetry, std::size_t size, std::size_t in_channels = 1,
             std::size_t out_channels = 1);

  KernelSymmetry symmetry() const { return symmetry_; }
  std::size_t size() const { return size_; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

  /// Number of distinct spatial taps (per channel pair).
  std::size_t spatial_free_count() const { return orbit_count_; }
  std::size_t free_parameter_count() const { return orbit_count_ * in_ * out_; }
  /// Orbit id of each kernel position, row-major; ids follow first appearance.
  const std::vector<std::size_t>& position_orbits() const { return orbit_of_; }

  const Vector& free_parameters() const { return free_; }
  void set_free_parameters(const Vector& p);
  void randomize(std::uint64_t seed);

  DenseKernel expand() const;

  /// The symmetry group acting on the kernel as a k × k grid with c_in·c_out channels.
  IsometryGroup kernel_group() const;

 private:
  KernelSymmetry symmetry_;
  std::size_t size_;
  std::size_t in_;
  std::size_t out_;
  std::size_t orbit_count_ = 0;
  std::vector<std::size_t> orbit_of_;
  Vector free_;
};

/// The group of a kernel symmetry acting on images of the given shape.
IsometryGroup symmetry_group(KernelSymmetry sym, GridShape shape);

/// Same-size zero-padded cross-correlation of a channels-last H × W × C image.
/// Throws ShapeMismatch when the image or kernel channels disagree.
Vector conv2d(const DenseKernel& kernel, const Vector& image, GridShape shape);
Vector conv2d(const TiedKernel& kernel, const Vector& image, GridShape shape);

/// Stack of tied convolutions with tanh between layers. forward() returns the
/// final feature map (equivariant); pooled() averages it over all pixels
/// (invariant).
class TiedConvNet {
 public:
  TiedConvNet(KernelSymmetry symmetry, std::size_t kernel_size, std::vector<std::size_t> channels,
              std::uint64_t seed);

  std::size_t free_parameter_count() const;
  Vector forward(const Vector& image, GridShape shape) const;
  Vector pooled(const Vector& image, GridShape shape) const;

 private:
  std::vector<TiedKernel> layers_;
  std::vector<Vector> biases_;
};

}  // namespace spdm
