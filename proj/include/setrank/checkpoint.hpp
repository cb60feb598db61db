#pragma once

// Flat parameter archive: path-named tensors stored as shape plus raw
// little-endian IEEE-754 doubles behind a versioned header.
//
//   magic   8 bytes  "SRCKPT\0\0"
//   version u32
//   count   u32
//   entries count x { u32 name_len, name, u32 ndim, u64 dims[ndim],
//                     f64 values[prod(dims)] }

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "setrank/tensor.hpp"

namespace setrank {

using ParamMap = std::map<std::string, Tensor>;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'R', 'C', 'K', 'P', 'T', 0, 0};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_uint(std::istream& is, int bytes, const std::string& what) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) {
      throw FormatError("checkpoint truncated while reading " + what);
    }
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ParamMap& params) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(tensor.rank()));
    for (auto d : tensor.shape()) detail::put_u64(os, d);
    for (double v : tensor.data()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
}

inline ParamMap read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof(magic)) ||
      !std::equal(magic, magic + 8, kCheckpointMagic)) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  const auto version = detail::get_uint(is, 4, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = detail::get_uint(is, 4, "entry count");
  ParamMap params;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = detail::get_uint(is, 4, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len))) {
      throw FormatError("checkpoint truncated in entry name");
    }
    const auto ndim = detail::get_uint(is, 4, name + " rank");
    Shape shape(ndim);
    for (auto& d : shape) d = detail::get_uint(is, 8, name + " shape");
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(detail::get_uint(is, 8, name));
    if (!params.emplace(name, Tensor::from(shape, std::move(values))).second) {
      throw FormatError("duplicate checkpoint entry " + name);
    }
  }
  return params;
}

inline void save_checkpoint(const std::string& path, const ParamMap& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  write_checkpoint(os, params);
}

inline ParamMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace setrank
