#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spdm/types.hpp"

namespace spdm {

/// SPDT binary tensor file:
///   "SPDT" | u32 version (1) | u32 dtype (1 = f64) | u32 rank | u64 dims[rank] | f64 payload
/// All fields little-endian; the payload is row-major.
struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  std::uint64_t element_count() const;
};

inline constexpr std::uint32_t kSpdtVersion = 1;
inline constexpr std::uint32_t kSpdtFloat64 = 1;

std::vector<unsigned char> encode_spdt(const Tensor& t);
/// Throws IoError for a bad magic, version, dtype or payload length.
Tensor decode_spdt(const std::vector<unsigned char>& bytes);

void write_spdt(const std::string& path, const Tensor& t);
Tensor read_spdt(const std::string& path);

/// Samples stored as columns of a d × N matrix map to an N × d tensor.
Tensor samples_to_tensor(const Matrix& samples);
Matrix tensor_to_samples(const Tensor& t);

Tensor vector_to_tensor(const Vector& v);
Vector tensor_to_vector(const Tensor& t);

}  // namespace spdm
