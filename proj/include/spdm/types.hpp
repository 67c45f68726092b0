#pragma once

#include <cstddef>

#include <Eigen/Dense>

namespace spdm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Shape of an image tensor stored channels-last: index (row * width + col) * channels + c.
struct GridShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;

  std::size_t pixels() const { return height * width; }
  std::size_t size() const { return height * width * channels; }
  bool operator==(const GridShape&) const = default;
};

}  // namespace spdm
