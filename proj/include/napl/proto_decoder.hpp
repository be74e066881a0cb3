#pragma once

// Prototype learning module: learnable queries refined by cross-attention to
// the deepest encoder level, self-attention, and a feed-forward block. Each
// refined query yields one prototype vector and one score row over C + 1
// classes, the last column being "no object".

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "napl/encoder.hpp"
#include "napl/nn.hpp"
#include "napl/ops.hpp"

namespace napl {

struct DecoderConfig {
  std::size_t num_queries = 50;
  std::size_t num_layers = 3;
  std::size_t num_heads = 4;
  std::size_t query_dim = 64;
  std::size_t feature_dim = 32;   // prototype width, equals the encoder's D
  std::size_t memory_dim = 128;   // width of the deepest encoder level
  std::size_t num_classes = 6;    // real classes; scores have one more column
  double position_scale = 8.0;    // meters mapped to unit range for key positions

  void validate() const {
    require(num_queries > 0, "decoder needs at least one query");
    require(num_heads > 0 && query_dim % num_heads == 0, "query_dim must be divisible by num_heads");
    require(feature_dim > 0 && memory_dim > 0 && num_classes > 0, "decoder dimensions must be positive");
  }
};

template <typename T>
struct AttentionParams {
  Linear<T> query, key, value, output;
  LayerNorm<T> norm;

  static AttentionParams init(std::size_t dim, Rng& rng) {
    return {Linear<T>::init(dim, dim, rng, 1.0), Linear<T>::init(dim, dim, rng, 1.0),
            Linear<T>::init(dim, dim, rng, 1.0), Linear<T>::init(dim, dim, rng, 1.0), LayerNorm<T>::init(dim)};
  }

  ParamList<T> params(const std::string& prefix) const {
    auto out = query.params(prefix + ".q");
    append_params(out, key.params(prefix + ".k"));
    append_params(out, value.params(prefix + ".v"));
    append_params(out, output.params(prefix + ".o"));
    append_params(out, norm.params(prefix + ".norm"));
    return out;
  }
};

/// norm(Q + Wo·concat_h softmax(q_h k_hᵀ / √d_h) v_h).
template <typename T>
BasicTensor<T> attention_block(const BasicTensor<T>& queries, const BasicTensor<T>& keys,
                               const BasicTensor<T>& values, const AttentionParams<T>& p, std::size_t num_heads) {
  require(keys.dim(0) == values.dim(0), "attention_block: key and value counts differ");
  require(keys.dim(0) > 0, "attention_block: no keys");
  const std::size_t dim = p.query.out_dim();
  require(dim % num_heads == 0, "attention_block: width not divisible by heads");
  const std::size_t head_dim = dim / num_heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));

  auto q = p.query(queries);
  auto k = p.key(keys);
  auto v = p.value(values);
  std::vector<BasicTensor<T>> heads;
  heads.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    auto qh = slice_cols(q, h * head_dim, head_dim);
    auto kh = slice_cols(k, h * head_dim, head_dim);
    auto vh = slice_cols(v, h * head_dim, head_dim);
    auto weights = softmax(scale(matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(matmul(weights, vh));
  }
  auto mixed = num_heads == 1 ? heads[0] : concat_cols(heads);
  return p.norm(add(queries, p.output(mixed)));
}

template <typename T>
struct DecoderLayerParams {
  AttentionParams<T> cross;
  AttentionParams<T> self;
  Linear<T> ffn_in, ffn_out;
  LayerNorm<T> ffn_norm;

  static DecoderLayerParams init(std::size_t dim, Rng& rng) {
    return {AttentionParams<T>::init(dim, rng), AttentionParams<T>::init(dim, rng),
            Linear<T>::init(dim, 2 * dim, rng), Linear<T>::init(2 * dim, dim, rng, 1.0), LayerNorm<T>::init(dim)};
  }

  ParamList<T> params(const std::string& prefix) const {
    auto out = cross.params(prefix + ".cross");
    append_params(out, self.params(prefix + ".self"));
    append_params(out, ffn_in.params(prefix + ".ffn_in"));
    append_params(out, ffn_out.params(prefix + ".ffn_out"));
    append_params(out, ffn_norm.params(prefix + ".ffn_norm"));
    return out;
  }
};

template <typename T>
struct DecoderParams {
  DecoderConfig config;
  BasicTensor<T> queries;  // N_q × D_q
  Linear<T> memory_proj;   // deepest encoder width → D_q
  Linear<T> position_proj; // normalized xyz → D_q, added to keys only
  std::vector<DecoderLayerParams<T>> layers;
  Linear<T> class_head;    // D_q → C + 1
  Linear<T> proto_hidden;  // D_q → D_q
  Linear<T> proto_out;     // D_q → D

  static DecoderParams init(const DecoderConfig& cfg, Rng& rng) {
    cfg.validate();
    DecoderParams p;
    p.config = cfg;
    p.queries = normal_tensor<T>({cfg.num_queries, cfg.query_dim}, 1.0, rng);
    p.memory_proj = Linear<T>::init(cfg.memory_dim, cfg.query_dim, rng, 1.0);
    p.position_proj = Linear<T>::init(3, cfg.query_dim, rng, 1.0);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) p.layers.push_back(DecoderLayerParams<T>::init(cfg.query_dim, rng));
    p.class_head = Linear<T>::init(cfg.query_dim, cfg.num_classes + 1, rng, 1.0);
    p.proto_hidden = Linear<T>::init(cfg.query_dim, cfg.query_dim, rng);
    p.proto_out = Linear<T>::init(cfg.query_dim, cfg.feature_dim, rng, 1.0);
    return p;
  }

  ParamList<T> params() const {
    ParamList<T> out{{"decoder.queries", queries}};
    append_params(out, memory_proj.params("decoder.memory_proj"));
    append_params(out, position_proj.params("decoder.position_proj"));
    for (std::size_t l = 0; l < layers.size(); ++l) append_params(out, layers[l].params("decoder.layer" + std::to_string(l)));
    append_params(out, class_head.params("decoder.class_head"));
    append_params(out, proto_hidden.params("decoder.proto_hidden"));
    append_params(out, proto_out.params("decoder.proto_out"));
    return out;
  }
};

/// N_q prototypes P [N_q × D] and class scores S [N_q × (C+1)]; the last
/// score column is "no object".
template <typename T>
struct PrototypeSet {
  BasicTensor<T> prototypes;
  BasicTensor<T> class_logits;
  BasicTensor<T> scores;

  std::size_t num_queries() const { return prototypes.dim(0); }
  std::size_t num_classes() const { return scores.dim(1) - 1; }

  /// Argmax score column of prototype k (0-based; num_classes() means ∅).
  std::size_t predicted_column(std::size_t k) const {
    const std::size_t n = scores.dim(1);
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c) {
      if (scores(k, c) > scores(k, best)) best = c;
    }
    return best;
  }

  /// Prototypes whose argmax is a real class.
  std::size_t retained_count() const {
    std::size_t k = 0;
    for (std::size_t q = 0; q < num_queries(); ++q) k += predicted_column(q) != num_classes();
    return k;
  }
};

template <typename T>
PrototypeSet<T> decode_prototypes(const BasicTensor<T>& memory, const std::vector<std::array<float, 3>>& memory_coords,
                                  const DecoderParams<T>& p) {
  const auto& cfg = p.config;
  require(memory.rank() == 2 && memory.dim(0) > 0, "decode_prototypes: empty intermediate features");
  require(memory.dim(0) == memory_coords.size(), "decode_prototypes: coordinate count mismatch");
  require(memory.dim(1) == cfg.memory_dim, "decode_prototypes: memory width " + shape_str(memory.shape()) +
                                               " does not match decoder memory_dim");

  std::vector<T> pos(memory_coords.size() * 3);
  for (std::size_t i = 0; i < memory_coords.size(); ++i) {
    for (int a = 0; a < 3; ++a) pos[i * 3 + a] = static_cast<T>(memory_coords[i][a] / cfg.position_scale);
  }
  auto positions = BasicTensor<T>::from({memory_coords.size(), 3}, std::move(pos));

  auto values = p.memory_proj(memory);
  auto keys = add(values, p.position_proj(positions));
  auto state = p.queries;
  for (const auto& layer : p.layers) {
    state = attention_block(state, keys, values, layer.cross, cfg.num_heads);
    state = attention_block(state, state, state, layer.self, cfg.num_heads);
    state = layer.ffn_norm(add(state, layer.ffn_out(relu(layer.ffn_in(state)))));
  }
  PrototypeSet<T> out;
  out.class_logits = p.class_head(state);
  out.scores = softmax(out.class_logits);
  out.prototypes = p.proto_out(relu(p.proto_hidden(state)));
  return out;
}

template <typename T>
PrototypeSet<T> decode_prototypes(const EncoderOutput<T>& enc, const DecoderParams<T>& p) {
  return decode_prototypes(enc.intermediate, enc.intermediate_coords, p);
}

}  // namespace napl
