#pragma once

// Little-endian primitives for the snapshot, corpus and checkpoint files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "memground/errors.hpp"
#include "memground/tensor.hpp"

namespace memground::binio {

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

}  // namespace detail

template <typename T>
void put(std::ostream& os, T v) {
  v = detail::to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw InputError("unexpected end of binary stream");
  return detail::to_little(v);
}

inline void put_u32(std::ostream& os, std::uint32_t v) { put(os, v); }
inline void put_u64(std::ostream& os, std::uint64_t v) { put(os, v); }
inline void put_f64(std::ostream& os, double v) { put(os, std::bit_cast<std::uint64_t>(v)); }
inline std::uint32_t get_u32(std::istream& is) { return get<std::uint32_t>(is); }
inline std::uint64_t get_u64(std::istream& is) { return get<std::uint64_t>(is); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get<std::uint64_t>(is)); }

inline void put_string(std::ostream& os, std::string_view s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, std::size_t max_len = std::size_t{1} << 30) {
  const auto n = get_u64(is);
  if (n > max_len) throw InputError("string length exceeds limit in binary stream");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw InputError("unexpected end of binary stream");
  return s;
}

inline void put_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!is || got != magic) throw InputError("bad file magic, expected " + std::string(magic));
}

// rows, cols (u64) then row-major f64 values.
inline void put_matrix(std::ostream& os, const Matrix& m) {
  put_u64(os, static_cast<std::uint64_t>(m.rows()));
  put_u64(os, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) put_f64(os, m.data()[i]);
}

inline Matrix get_matrix(std::istream& is) {
  const auto r = get_u64(is);
  const auto c = get_u64(is);
  if (r > (1u << 24) || c > (1u << 24) || r * c > (std::uint64_t{1} << 32)) {
    throw InputError("matrix dimensions out of range in binary stream");
  }
  Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f64(is);
  return m;
}

}  // namespace memground::binio
