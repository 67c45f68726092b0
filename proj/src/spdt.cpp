#include "spdm/spdt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "spdm/errors.hpp"

namespace spdm {

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  std::uint64_t take(std::size_t width) {
    if (pos_ + width > bytes_.size()) throw IoError("SPDT file is truncated");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += width;
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<unsigned char> encode_spdt(const Tensor& t) {
  if (t.element_count() != t.data.size()) throw ShapeMismatch("tensor dims do not match its data");
  std::vector<unsigned char> out{'S', 'P', 'D', 'T'};
  out.reserve(16 + 8 * t.dims.size() + 8 * t.data.size());
  put_u32(out, kSpdtVersion);
  put_u32(out, kSpdtFloat64);
  put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_u64(out, d);
  for (double v : t.data) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Tensor decode_spdt(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "SPDT", 4) != 0) throw IoError("not an SPDT file");
  Reader r(bytes);
  r.take(4);
  if (r.take(4) != kSpdtVersion) throw IoError("unsupported SPDT version");
  if (r.take(4) != kSpdtFloat64) throw IoError("unsupported SPDT dtype");
  const auto rank = r.take(4);
  Tensor t;
  for (std::uint64_t i = 0; i < rank; ++i) t.dims.push_back(r.take(8));
  const std::uint64_t n = t.element_count();
  if (r.remaining() != 8 * n) throw IoError("SPDT payload length does not match its dims");
  t.data.resize(n);
  for (auto& v : t.data) v = std::bit_cast<double>(r.take(8));
  return t;
}

void write_spdt(const std::string& path, const Tensor& t) {
  const auto bytes = encode_spdt(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

Tensor read_spdt(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_spdt(bytes);
}

Tensor samples_to_tensor(const Matrix& samples) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(samples.cols()), static_cast<std::uint64_t>(samples.rows())};
  t.data.assign(samples.data(), samples.data() + samples.size());
  return t;
}

Matrix tensor_to_samples(const Tensor& t) {
  if (t.dims.size() != 2) throw IoError("expected a rank-2 sample tensor");
  Matrix m(static_cast<Eigen::Index>(t.dims[1]), static_cast<Eigen::Index>(t.dims[0]));
  std::copy(t.data.begin(), t.data.end(), m.data());
  return m;
}

Tensor vector_to_tensor(const Vector& v) {
  return Tensor{{static_cast<std::uint64_t>(v.size())}, std::vector<double>(v.begin(), v.end())};
}

Vector tensor_to_vector(const Tensor& t) {
  if (t.dims.size() != 1) throw IoError("expected a rank-1 tensor");
  Vector v(static_cast<Eigen::Index>(t.data.size()));
  std::copy(t.data.begin(), t.data.end(), v.data());
  return v;
}

}  // namespace spdm
