#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "napl/common.hpp"
#include "napl/ops.hpp"
#include "napl/point_cloud.hpp"
#include "napl/tensor.hpp"

namespace napl {

using VoxelIndex = std::array<int, 3>;

inline std::uint64_t pack_voxel(const VoxelIndex& v) {
  constexpr std::int64_t kBias = 1 << 20;
  auto part = [](int c) { return static_cast<std::uint64_t>(static_cast<std::int64_t>(c) + kBias) & 0x1FFFFFu; };
  return (part(v[0]) << 42) | (part(v[1]) << 21) | part(v[2]);
}

inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

/// Occupied voxels of a point cloud. Voxel of point i is
/// floor((coords_i − origin) / voxel_size); voxels are sorted lexicographically.
struct VoxelGrid {
  double voxel_size = 0.05;
  std::array<double, 3> origin{0, 0, 0};
  std::vector<VoxelIndex> voxels;
  std::vector<std::size_t> point_to_voxel;
  std::size_t feature_dim = 0;
  /// voxels.size() × feature_dim: mean offset of member points from the voxel
  /// center in voxel units, then mean intensity when the cloud has one.
  std::vector<float> features;

  std::size_t num_voxels() const { return voxels.size(); }
};

inline VoxelIndex voxel_of(const std::array<float, 3>& p, double voxel_size, const std::array<double, 3>& origin) {
  VoxelIndex v{};
  for (int a = 0; a < 3; ++a) {
    v[a] = static_cast<int>(std::floor((static_cast<double>(p[a]) - origin[a]) / voxel_size));
  }
  return v;
}

inline VoxelGrid voxelize(const PointCloud& pc, double voxel_size, std::array<double, 3> origin = {0, 0, 0}) {
  require(voxel_size > 0, "voxelize: voxel_size must be positive");
  require(pc.size() > 0, "voxelize: empty point cloud");
  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.origin = origin;
  std::vector<VoxelIndex> per_point(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) per_point[i] = voxel_of(pc.coords[i], voxel_size, origin);
  grid.voxels = per_point;
  std::sort(grid.voxels.begin(), grid.voxels.end());
  grid.voxels.erase(std::unique(grid.voxels.begin(), grid.voxels.end()), grid.voxels.end());
  std::unordered_map<std::uint64_t, std::size_t> lookup;
  lookup.reserve(grid.voxels.size() * 2);
  for (std::size_t v = 0; v < grid.voxels.size(); ++v) lookup.emplace(pack_voxel(grid.voxels[v]), v);
  grid.point_to_voxel.resize(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) grid.point_to_voxel[i] = lookup.at(pack_voxel(per_point[i]));

  grid.feature_dim = pc.has_intensity() ? 4 : 3;
  const std::size_t fd = grid.feature_dim;
  std::vector<double> acc(grid.voxels.size() * fd, 0.0);
  std::vector<double> count(grid.voxels.size(), 0.0);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const std::size_t v = grid.point_to_voxel[i];
    count[v] += 1;
    for (int a = 0; a < 3; ++a) {
      const double center = origin[a] + (grid.voxels[v][a] + 0.5) * voxel_size;
      acc[v * fd + a] += (pc.coords[i][a] - center) / voxel_size;
    }
    if (pc.has_intensity()) acc[v * fd + 3] += pc.intensity[i];
  }
  grid.features.resize(acc.size());
  for (std::size_t v = 0; v < grid.voxels.size(); ++v) {
    for (std::size_t c = 0; c < fd; ++c) grid.features[v * fd + c] = static_cast<float>(acc[v * fd + c] / count[v]);
  }
  return grid;
}

/// Gives every point the feature row of its voxel. The adjoint scatter-adds
/// point gradients back onto voxels.
template <typename T>
BasicTensor<T> devoxelize(const VoxelGrid& grid, const BasicTensor<T>& voxel_features) {
  if (voxel_features.rank() != 2 || voxel_features.dim(0) != grid.num_voxels()) {
    throw ContractError("devoxelize: feature tensor " + shape_str(voxel_features.shape()) + " does not index " +
                        std::to_string(grid.num_voxels()) + " voxels");
  }
  return gather_rows(voxel_features, std::span<const std::size_t>(grid.point_to_voxel));
}

/// One resolution of the encoder pyramid. Level s has cells of 2^s voxels.
struct GridLevel {
  int stride = 1;
  std::vector<VoxelIndex> cells;
  std::vector<std::size_t> parent;  // index into the next coarser level
  // Directed 26-neighborhood edges (source cell feeds destination cell).
  std::vector<std::size_t> neighbor_src;
  std::vector<std::size_t> neighbor_dst;
};

struct VoxelHierarchy {
  std::vector<GridLevel> levels;
};

inline void build_neighbors(GridLevel& level) {
  std::unordered_map<std::uint64_t, std::size_t> lookup;
  lookup.reserve(level.cells.size() * 2);
  for (std::size_t i = 0; i < level.cells.size(); ++i) lookup.emplace(pack_voxel(level.cells[i]), i);
  for (std::size_t i = 0; i < level.cells.size(); ++i) {
    const auto& c = level.cells[i];
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          auto it = lookup.find(pack_voxel({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == lookup.end()) continue;
          level.neighbor_src.push_back(it->second);
          level.neighbor_dst.push_back(i);
        }
      }
    }
  }
}

/// Base voxels plus `coarse_levels` successive stride-2 poolings.
inline VoxelHierarchy build_hierarchy(const VoxelGrid& grid, std::size_t coarse_levels) {
  VoxelHierarchy h;
  GridLevel base;
  base.stride = 1;
  base.cells = grid.voxels;
  h.levels.push_back(std::move(base));
  for (std::size_t s = 1; s <= coarse_levels; ++s) {
    GridLevel& fine = h.levels.back();
    std::vector<VoxelIndex> coarse(fine.cells.size());
    for (std::size_t i = 0; i < fine.cells.size(); ++i) {
      for (int a = 0; a < 3; ++a) coarse[i][a] = floor_div(fine.cells[i][a], 2);
    }
    GridLevel next;
    next.stride = fine.stride * 2;
    next.cells = coarse;
    std::sort(next.cells.begin(), next.cells.end());
    next.cells.erase(std::unique(next.cells.begin(), next.cells.end()), next.cells.end());
    std::unordered_map<std::uint64_t, std::size_t> lookup;
    for (std::size_t i = 0; i < next.cells.size(); ++i) lookup.emplace(pack_voxel(next.cells[i]), i);
    fine.parent.resize(fine.cells.size());
    for (std::size_t i = 0; i < fine.cells.size(); ++i) fine.parent[i] = lookup.at(pack_voxel(coarse[i]));
    h.levels.push_back(std::move(next));
  }
  for (std::size_t s = 1; s < h.levels.size(); ++s) build_neighbors(h.levels[s]);
  return h;
}

}  // namespace napl
