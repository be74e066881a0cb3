#pragma once

// Point feature extraction: a U-shaped encoder-decoder over occupied voxels.
// Each coarse level pools its children (stride 2) and mixes every cell with
// the mean of its occupied 26-neighbors. The upsampling path concatenates the
// coarse feature of each cell's parent with the skip feature of that cell.

#include <array>
#include <cmath>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "napl/nn.hpp"
#include "napl/ops.hpp"
#include "napl/point_cloud.hpp"
#include "napl/voxel.hpp"

namespace napl {

struct EncoderConfig {
  std::size_t in_channels = 4;
  std::vector<std::size_t> stage_widths{16, 32, 64, 128};
  std::size_t feature_dim = 32;
  double voxel_size = 0.05;

  std::size_t num_stages() const { return stage_widths.size(); }
  /// Width of level 0 (stem) and of level s ≥ 1 (stage s).
  std::size_t level_width(std::size_t level) const { return stage_widths[level == 0 ? 0 : level - 1]; }

  void validate() const {
    require(!stage_widths.empty(), "encoder needs at least one stage");
    for (auto w : stage_widths) require(w > 0, "encoder stage widths must be positive");
    require(feature_dim > 0, "encoder feature_dim must be positive");
    require(in_channels >= 3, "encoder in_channels must cover the three offset channels");
    require(voxel_size > 0, "voxel_size must be positive");
  }
};

/// relu(norm(x·W_self + b + mean_{occupied neighbors}(x)·W_nbr)).
template <typename T>
struct GridBlock {
  Linear<T> self;
  BasicTensor<T> neighbor_weight;  // undefined at level 0
  LayerNorm<T> norm;

  static GridBlock init(std::size_t in, std::size_t out, bool with_neighbors, Rng& rng) {
    GridBlock b{Linear<T>::init(in, out, rng), {}, LayerNorm<T>::init(out)};
    if (with_neighbors) b.neighbor_weight = normal_tensor<T>({in, out}, 1.0 / std::sqrt(double(in)), rng);
    return b;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x, const GridLevel& level) const {
    auto y = self(x);
    if (neighbor_weight.defined() && !level.neighbor_src.empty()) {
      auto gathered = gather_rows(x, std::span<const std::size_t>(level.neighbor_src));
      auto pooled = segment_mean(gathered, std::span<const std::size_t>(level.neighbor_dst), x.dim(0));
      y = add(y, matmul(pooled, neighbor_weight));
    }
    return relu(norm(y));
  }

  ParamList<T> params(const std::string& prefix) const {
    auto out = self.params(prefix + ".self");
    if (neighbor_weight.defined()) out.emplace_back(prefix + ".neighbor.weight", neighbor_weight);
    append_params(out, norm.params(prefix + ".norm"));
    return out;
  }
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  GridBlock<T> stem;
  std::vector<GridBlock<T>> down;  // down[s-1] produces level s
  std::vector<GridBlock<T>> up;    // up[l] produces decoded level l
  Linear<T> head;

  static EncoderParams init(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderParams p;
    p.config = cfg;
    const std::size_t S = cfg.num_stages();
    p.stem = GridBlock<T>::init(cfg.in_channels, cfg.level_width(0), false, rng);
    for (std::size_t s = 1; s <= S; ++s) {
      p.down.push_back(GridBlock<T>::init(cfg.level_width(s - 1), cfg.level_width(s), true, rng));
    }
    for (std::size_t l = 0; l < S; ++l) {
      const std::size_t coarse = l + 1 == S ? cfg.level_width(S) : cfg.level_width(l + 1);
      p.up.push_back(GridBlock<T>::init(coarse + cfg.level_width(l), cfg.level_width(l), l > 0, rng));
    }
    p.head = Linear<T>::init(cfg.level_width(0), cfg.feature_dim, rng, 1.0);
    return p;
  }

  /// Stem and downsampling stages.
  ParamList<T> backbone_params() const {
    auto out = stem.params("encoder.stem");
    for (std::size_t i = 0; i < down.size(); ++i) append_params(out, down[i].params("encoder.down" + std::to_string(i)));
    return out;
  }

  /// Upsampling stages and the per-point output head.
  ParamList<T> point_decoder_params() const {
    ParamList<T> out;
    for (std::size_t i = 0; i < up.size(); ++i) append_params(out, up[i].params("encoder.up" + std::to_string(i)));
    append_params(out, head.params("encoder.head"));
    return out;
  }

  ParamList<T> params() const {
    auto out = backbone_params();
    append_params(out, point_decoder_params());
    return out;
  }
};

/// Geometry shared by every forward pass over one cloud.
struct EncoderInput {
  VoxelGrid grid;
  VoxelHierarchy hierarchy;
  std::size_t num_points = 0;
};

inline EncoderInput prepare_encoder_input(const PointCloud& pc, const EncoderConfig& cfg) {
  EncoderInput in;
  in.grid = voxelize(pc, cfg.voxel_size);
  in.hierarchy = build_hierarchy(in.grid, cfg.num_stages());
  in.num_points = pc.size();
  return in;
}

template <typename T>
struct EncoderOutput {
  BasicTensor<T> features;                         // N × D
  BasicTensor<T> intermediate;                     // deepest-level cells × widest stage
  std::vector<std::array<float, 3>> intermediate_coords;  // cell centers, meters
};

template <typename T>
EncoderOutput<T> extract_features(const EncoderInput& in, const EncoderParams<T>& p) {
  const auto& cfg = p.config;
  const auto& levels = in.hierarchy.levels;
  const std::size_t S = cfg.num_stages();
  require(levels.size() == S + 1, "extract_features: hierarchy depth does not match encoder stages");
  require(in.num_points > 0, "extract_features: empty cloud");

  const std::size_t v0 = in.grid.num_voxels(), fd = in.grid.feature_dim;
  require(fd <= cfg.in_channels, "extract_features: voxel feature width exceeds encoder input");
  std::vector<T> x0(v0 * cfg.in_channels, T(0));
  for (std::size_t v = 0; v < v0; ++v) {
    for (std::size_t c = 0; c < fd; ++c) x0[v * cfg.in_channels + c] = static_cast<T>(in.grid.features[v * fd + c]);
  }
  auto input = BasicTensor<T>::from({v0, cfg.in_channels}, std::move(x0));

  std::vector<BasicTensor<T>> skip(S + 1);
  skip[0] = p.stem(input, levels[0]);
  for (std::size_t s = 1; s <= S; ++s) {
    auto pooled = segment_mean(skip[s - 1], std::span<const std::size_t>(levels[s - 1].parent), levels[s].cells.size());
    skip[s] = p.down[s - 1](pooled, levels[s]);
  }

  auto decoded = skip[S];
  for (std::size_t l = S; l-- > 0;) {
    auto lifted = gather_rows(decoded, std::span<const std::size_t>(levels[l].parent));
    decoded = p.up[l](concat_cols<T>({lifted, skip[l]}), levels[l]);
  }
  auto voxel_features = p.head(decoded);

  EncoderOutput<T> out;
  out.features = devoxelize(in.grid, voxel_features);
  out.intermediate = skip[S];
  const auto& deepest = levels[S];
  const double cell = cfg.voxel_size * deepest.stride;
  out.intermediate_coords.reserve(deepest.cells.size());
  for (const auto& c : deepest.cells) {
    out.intermediate_coords.push_back({static_cast<float>(in.grid.origin[0] + (c[0] + 0.5) * cell),
                                       static_cast<float>(in.grid.origin[1] + (c[1] + 0.5) * cell),
                                       static_cast<float>(in.grid.origin[2] + (c[2] + 0.5) * cell)});
  }
  return out;
}

template <typename T>
EncoderOutput<T> extract_features(const PointCloud& pc, const EncoderParams<T>& p) {
  return extract_features(prepare_encoder_input(pc, p.config), p);
}

// ------------------------------------------------------------- PWC baseline

/// One weight row per class: p(c|i) = softmax_c(w_c·f_i + b_c).
template <typename T>
struct PwcClassifier {
  BasicTensor<T> weight;  // C × D
  BasicTensor<T> bias;    // C

  static PwcClassifier init(std::size_t num_classes, std::size_t dim, Rng& rng) {
    return {normal_tensor<T>({num_classes, dim}, 1.0 / std::sqrt(double(dim)), rng),
            constant_tensor<T>({num_classes}, T(0))};
  }

  std::size_t num_classes() const { return weight.dim(0); }

  ParamList<T> params() const { return {{"pwc.weight", weight}, {"pwc.bias", bias}}; }
};

template <typename T>
BasicTensor<T> pwc_logits(const BasicTensor<T>& features, const PwcClassifier<T>& clf) {
  if (features.rank() != 2 || features.dim(1) != clf.weight.dim(1)) {
    throw ContractError("pwc: feature width of " + shape_str(features.shape()) + " does not match classifier " +
                        shape_str(clf.weight.shape()));
  }
  return add_rowvec(matmul_nt(features, clf.weight), clf.bias);
}

/// Per-point class probabilities, N × C.
template <typename T>
BasicTensor<T> pwc_classify(const BasicTensor<T>& features, const PwcClassifier<T>& clf) {
  return softmax(pwc_logits(features, clf));
}

namespace detail {

template <typename T>
BasicTensor<T> mean_nll(const BasicTensor<T>& log_probs, std::span<const int> labels) {
  require(labels.size() == log_probs.rows(), "pwc_loss: label count does not match prediction rows");
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    require(labels[i] >= 1 && static_cast<std::size_t>(labels[i]) <= log_probs.cols(), "pwc_loss: label out of range");
    rows.push_back(i);
    cols.push_back(static_cast<std::size_t>(labels[i] - 1));
  }
  if (rows.empty()) {
    std::cerr << "warning: pwc_loss over a frame with only ignored points; loss defined as 0\n";
    return BasicTensor<T>::scalar(T(0));
  }
  auto picked = pick(log_probs, std::span<const std::size_t>(rows), std::span<const std::size_t>(cols));
  std::vector<double> w(rows.size(), -1.0 / static_cast<double>(rows.size()));
  return weighted_sum(picked, std::span<const double>(w));
}

}  // namespace detail

/// Mean negative log-likelihood of `probs` (N × C) over non-ignored points.
template <typename T>
BasicTensor<T> pwc_loss(const BasicTensor<T>& probs, std::span<const int> labels) {
  return detail::mean_nll(log(probs), labels);
}

/// Same objective evaluated from logits with a fused log-softmax.
template <typename T>
BasicTensor<T> pwc_loss_from_logits(const BasicTensor<T>& logits, std::span<const int> labels) {
  return detail::mean_nll(log_softmax(logits), labels);
}

}  // namespace napl
