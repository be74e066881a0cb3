#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "napl/common.hpp"

namespace napl {

/// Label value for points excluded from losses and metrics.
inline constexpr int kIgnoreLabel = 0;

/// N points with optional intensity and optional labels in {1..C}
/// (kIgnoreLabel marks unlabeled points).
struct PointCloud {
  std::vector<std::array<float, 3>> coords;
  std::vector<float> intensity;
  std::vector<int> labels;

  std::size_t size() const { return coords.size(); }
  bool has_intensity() const { return !intensity.empty(); }
  bool has_labels() const { return !labels.empty(); }

  void validate(int num_classes) const {
    require(!coords.empty(), "point cloud must contain at least one point");
    require(intensity.empty() || intensity.size() == coords.size(), "intensity length differs from point count");
    require(labels.empty() || labels.size() == coords.size(), "label length differs from point count");
    for (const auto& c : coords) {
      require(std::isfinite(c[0]) && std::isfinite(c[1]) && std::isfinite(c[2]), "non-finite point coordinate");
    }
    for (int l : labels) {
      require(l == kIgnoreLabel || (l >= 1 && l <= num_classes), "label " + std::to_string(l) + " outside 1.." +
                                                                     std::to_string(num_classes));
    }
  }
};

// ------------------------------------------------------------ SemanticKITTI

inline constexpr int kKittiNumClasses = 19;

inline const std::array<std::string_view, kKittiNumClasses>& kitti_class_names() {
  static const std::array<std::string_view, kKittiNumClasses> names{
      "car",      "bicycle",  "motorcycle", "truck",        "other-vehicle", "person",     "bicyclist",
      "motorcyclist", "road", "parking",    "sidewalk",     "other-ground",  "building",   "fence",
      "vegetation", "trunk",  "terrain",    "pole",         "traffic-sign"};
  return names;
}

/// Raw semantic id (lower 16 bits of a label word) to training id, 0 = ignore.
using RemapTable = std::vector<int>;

/// The conventional 19-class learning map. Ids not listed map to ignore.
inline RemapTable default_kitti_remap() {
  RemapTable table(260, kIgnoreLabel);
  const std::pair<int, int> entries[] = {
      {10, 1},   {11, 2},   {13, 5},   {15, 3},   {16, 5},   {18, 4},   {20, 5},   {30, 6},   {31, 7},
      {32, 8},   {40, 9},   {44, 10},  {48, 11},  {49, 12},  {50, 13},  {51, 14},  {60, 9},   {70, 15},
      {71, 16},  {72, 17},  {80, 18},  {81, 19},  {252, 1},  {253, 7},  {254, 6},  {255, 8},  {256, 5},
      {257, 5},  {258, 4},  {259, 5}};
  for (auto [raw, train] : entries) table[raw] = train;
  return table;
}

/// Reads a remap asset: {"learning_map": {"<raw id>": <train id>, ...}}.
inline RemapTable load_remap_table(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open remap table " + path.string());
  const auto doc = nlohmann::json::parse(is);
  RemapTable table;
  for (const auto& [key, value] : doc.at("learning_map").items()) {
    const int raw = std::stoi(key);
    require(raw >= 0 && raw <= 0xFFFF, "remap raw id out of range: " + key);
    if (static_cast<std::size_t>(raw) >= table.size()) table.resize(raw + 1, kIgnoreLabel);
    table[raw] = value.get<int>();
  }
  return table;
}

inline std::uint32_t semantic_id(std::uint32_t label_word) { return label_word & 0xFFFFu; }

inline int remap_semantic(std::uint32_t raw_id, const RemapTable& table) {
  return raw_id < table.size() ? table[raw_id] : kIgnoreLabel;
}

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::uint32_t le_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void append_le_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace detail

/// Parses a velodyne scan: consecutive little-endian f32 (x, y, z, intensity).
inline PointCloud parse_kitti_scan(const std::vector<unsigned char>& bytes) {
  if (bytes.empty()) throw ParseError("empty scan file");
  if (bytes.size() % 16 != 0) {
    throw ParseError("truncated scan record at byte offset " + std::to_string(bytes.size() / 16 * 16));
  }
  PointCloud pc;
  const std::size_t n = bytes.size() / 16;
  pc.coords.resize(n);
  pc.intensity.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + 16 * i;
    for (int a = 0; a < 3; ++a) pc.coords[i][a] = std::bit_cast<float>(detail::le_u32(rec + 4 * a));
    pc.intensity[i] = std::bit_cast<float>(detail::le_u32(rec + 12));
  }
  return pc;
}

inline std::vector<std::uint32_t> parse_kitti_labels(const std::vector<unsigned char>& bytes) {
  if (bytes.size() % 4 != 0) {
    throw ParseError("truncated label word at byte offset " + std::to_string(bytes.size() / 4 * 4));
  }
  std::vector<std::uint32_t> words(bytes.size() / 4);
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = detail::le_u32(bytes.data() + 4 * i);
  return words;
}

inline std::vector<std::uint32_t> read_kitti_label_words(const std::filesystem::path& path) {
  return parse_kitti_labels(detail::read_bytes(path));
}

/// Loads a scan and, when given, its label file. Labels are the lower 16
/// bits of each word mapped through `remap`.
inline PointCloud load_kitti_scan(const std::filesystem::path& scan_path,
                                  const std::optional<std::filesystem::path>& label_path = std::nullopt,
                                  const RemapTable& remap = default_kitti_remap()) {
  PointCloud pc = parse_kitti_scan(detail::read_bytes(scan_path));
  if (label_path) {
    const auto words = read_kitti_label_words(*label_path);
    if (words.size() != pc.size()) {
      throw ContractError("label count " + std::to_string(words.size()) + " does not match scan point count " +
                          std::to_string(pc.size()));
    }
    pc.labels.resize(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) pc.labels[i] = remap_semantic(semantic_id(words[i]), remap);
  }
  return pc;
}

inline std::vector<unsigned char> encode_kitti_scan(const PointCloud& pc) {
  std::vector<unsigned char> out;
  out.reserve(pc.size() * 16);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    for (int a = 0; a < 3; ++a) detail::append_le_u32(out, std::bit_cast<std::uint32_t>(pc.coords[i][a]));
    const float inten = pc.has_intensity() ? pc.intensity[i] : 0.0f;
    detail::append_le_u32(out, std::bit_cast<std::uint32_t>(inten));
  }
  return out;
}

inline std::vector<unsigned char> encode_kitti_labels(const std::vector<std::uint32_t>& words) {
  std::vector<unsigned char> out;
  out.reserve(words.size() * 4);
  for (auto w : words) detail::append_le_u32(out, w);
  return out;
}

inline void write_kitti_scan(const std::filesystem::path& path, const PointCloud& pc) {
  detail::write_bytes(path, encode_kitti_scan(pc));
}

inline void write_kitti_labels(const std::filesystem::path& path, const std::vector<std::uint32_t>& words) {
  detail::write_bytes(path, encode_kitti_labels(words));
}

}  // namespace napl
