#ifndef TDIST_BINARY_IO_HPP
#define TDIST_BINARY_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "tdist/common.hpp"

// Little-endian primitives shared by the checkpoint, float-raw and NORB
// container readers/writers.
namespace tdist::bio {

template <typename T>
T byteswap_integral(T v) {
  unsigned char* b = reinterpret_cast<unsigned char*>(&v);
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  return v;
}

inline void write_u32le(std::ostream& os, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap_integral(v);
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline bool read_u32le(std::istream& is, std::uint32_t& out) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) return false;
  if constexpr (std::endian::native == std::endian::big) v = byteswap_integral(v);
  out = v;
  return true;
}

inline void write_i32le(std::ostream& os, std::int32_t v) {
  write_u32le(os, static_cast<std::uint32_t>(v));
}

inline bool read_i32le(std::istream& is, std::int32_t& out) {
  std::uint32_t u = 0;
  if (!read_u32le(is, u)) return false;
  out = static_cast<std::int32_t>(u);
  return true;
}

inline void write_f32le(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  write_u32le(os, v);
}

inline bool read_f32le(std::istream& is, float& out) {
  std::uint32_t v = 0;
  if (!read_u32le(is, v)) return false;
  std::memcpy(&out, &v, 4);
  return true;
}

inline void write_matrix_f32(std::ostream& os, const MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      write_f32le(os, static_cast<float>(m(r, c)));
}

inline MatrixXd read_matrix_f32(std::istream& is, Eigen::Index rows, Eigen::Index cols,
                                const std::string& what) {
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      float f;
      if (!read_f32le(is, f)) throw std::runtime_error("truncated file while reading " + what);
      m(r, c) = f;
    }
  return m;
}

inline VectorXd read_vector_f32(std::istream& is, Eigen::Index n, const std::string& what) {
  return read_matrix_f32(is, n, 1, what).col(0);
}

}  // namespace tdist::bio

#endif  // TDIST_BINARY_IO_HPP
