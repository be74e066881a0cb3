#pragma once

// Binary tensor archive. All integers are little-endian u32:
//
//   "NAPL" | version | tensor_count
//   per tensor: name_len | name (UTF-8) | rank | dims... | f32 values (LE)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "napl/common.hpp"
#include "napl/tensor.hpp"

namespace napl {

inline constexpr std::array<char, 4> kCheckpointMagic{'N', 'A', 'P', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

inline void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const std::vector<char>& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw ParseError("checkpoint truncated at byte offset " + std::to_string(pos));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace detail

inline std::vector<char> encode_checkpoint(const NamedTensors& tensors) {
  std::vector<char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline NamedTensors decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 12 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    throw ParseError("not a NAPL checkpoint (bad magic)");
  }
  std::size_t pos = 4;
  const std::uint32_t version = detail::get_u32(bytes, pos);
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(bytes, pos);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = detail::get_u32(bytes, pos);
    if (pos + name_len > bytes.size()) throw ParseError("checkpoint truncated at byte offset " + std::to_string(pos));
    std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + name_len));
    pos += name_len;
    const std::uint32_t rank = detail::get_u32(bytes, pos);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u32(bytes, pos);
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<float>(detail::get_u32(bytes, pos));
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (pos != bytes.size()) throw ParseError("trailing bytes after checkpoint at offset " + std::to_string(pos));
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace napl
