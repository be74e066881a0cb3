#pragma once

// Run configuration: one flat JSON object. Every field has a default; keys
// not listed here are rejected.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "napl/common.hpp"
#include "napl/encoder.hpp"
#include "napl/matching_loss.hpp"
#include "napl/optim.hpp"
#include "napl/proto_decoder.hpp"

namespace napl {

enum class DatasetKind { Synthetic, Kitti };

inline std::string to_string(DatasetKind d) { return d == DatasetKind::Synthetic ? "synthetic" : "kitti"; }

inline DatasetKind parse_dataset(const std::string& s) {
  if (s == "synthetic") return DatasetKind::Synthetic;
  if (s == "kitti") return DatasetKind::Kitti;
  throw ConfigError("unknown dataset '" + s + "' (expected synthetic or kitti)");
}

/// Model variants: A is the point-wise classifier alone; B adds
/// the prototype decoder; C also starts from the pretrained backbone; full
/// also trains with prototype dropout.
enum class Ablation { A, B, C, Full };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::A: return "A";
    case Ablation::B: return "B";
    case Ablation::C: return "C";
    default: return "full";
  }
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "A" || s == "a") return Ablation::A;
  if (s == "B" || s == "b") return Ablation::B;
  if (s == "C" || s == "c") return Ablation::C;
  if (s == "full" || s == "Full") return Ablation::Full;
  throw ConfigError("unknown ablation '" + s + "' (expected A, B, C or full)");
}

struct RunConfig {
  // data
  DatasetKind dataset = DatasetKind::Synthetic;
  std::string data_root;  // kitti: dataset root; synthetic: optional directory holding manifest.json
  std::string out_dir = "runs/default";
  std::string remap_path;  // kitti label remap JSON; empty uses the built-in table
  std::uint64_t seed = 1;
  std::size_t train_scenes = 200;
  std::size_t val_scenes = 50;
  std::vector<std::string> train_sequences{"00", "01", "02", "03", "04", "05", "06", "07", "09", "10"};
  std::vector<std::string> val_sequences{"08"};
  bool augment = true;

  // model
  std::size_t feature_dim = 32;
  std::vector<std::size_t> stage_widths{16, 32, 64, 128};
  double voxel_size = 0.05;
  std::size_t num_queries = 50;
  std::size_t decoder_layers = 3;
  std::size_t decoder_heads = 4;
  std::size_t query_dim = 64;
  double position_scale = 8.0;

  // training
  std::size_t batch_size = 4;
  std::size_t epochs = 30;
  std::size_t pretrain_epochs = 30;
  std::size_t max_steps = 0;  // 0: run every epoch
  bool overfit = false;       // train and validate on the first training scene only
  std::size_t dropout_count = 10;
  double lr = 1e-3;           // decoder, point decoder, and the whole model when training from scratch
  double backbone_lr = 1e-4;  // pretrained backbone
  double pwc_lr = 1e-3;
  double schedule_power = 0.9;
  double weight_decay = 0.01;
  double focal_weight = 1.0;
  double dice_weight = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double no_object_weight = 1.0;

  // ablation switches
  bool use_transformer = true;
  bool use_pretrained_backbone = true;
  bool use_prototype_dropout = true;

  /// Full-scale defaults used for SemanticKITTI.
  static RunConfig kitti_profile() {
    RunConfig c;
    c.dataset = DatasetKind::Kitti;
    c.batch_size = 16;
    c.epochs = 20;
    c.pretrain_epochs = 20;
    c.position_scale = 50.0;
    return c;
  }

  static RunConfig defaults_for(DatasetKind d) { return d == DatasetKind::Kitti ? kitti_profile() : RunConfig{}; }

  void apply_ablation(Ablation a) {
    use_transformer = a != Ablation::A;
    use_pretrained_backbone = a == Ablation::C || a == Ablation::Full;
    use_prototype_dropout = a == Ablation::Full;
  }

  Ablation ablation() const {
    if (!use_transformer) return Ablation::A;
    if (!use_pretrained_backbone) return Ablation::B;
    return use_prototype_dropout ? Ablation::Full : Ablation::C;
  }

  EncoderConfig encoder_config() const {
    EncoderConfig e;
    e.stage_widths = stage_widths;
    e.feature_dim = feature_dim;
    e.voxel_size = voxel_size;
    return e;
  }

  DecoderConfig decoder_config(std::size_t num_classes) const {
    DecoderConfig d;
    d.num_queries = num_queries;
    d.num_layers = decoder_layers;
    d.num_heads = decoder_heads;
    d.query_dim = query_dim;
    d.feature_dim = feature_dim;
    d.memory_dim = stage_widths.empty() ? 0 : stage_widths.back();
    d.num_classes = num_classes;
    d.position_scale = position_scale;
    return d;
  }

  NaplLossConfig loss_config() const {
    NaplLossConfig l;
    l.mask = {focal_weight, dice_weight, focal_alpha, focal_gamma};
    l.no_object_weight = no_object_weight;
    l.dropout_count = dropout_count;
    l.use_dropout = use_prototype_dropout;
    return l;
  }

  AdamWConfig optimizer_config() const {
    AdamWConfig a;
    a.weight_decay = weight_decay;
    return a;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (num_queries == 0) fail("num_queries must be positive");
    if (dropout_count >= num_queries) {
      fail("dropout_count (" + std::to_string(dropout_count) + ") must be smaller than num_queries (" +
           std::to_string(num_queries) + ")");
    }
    if (!(lr > 0) || !(backbone_lr > 0) || !(pwc_lr > 0)) fail("learning rates must be positive");
    if (!(voxel_size > 0)) fail("voxel_size must be positive");
    if (batch_size == 0) fail("batch_size must be positive");
    if (stage_widths.empty()) fail("stage_widths must not be empty");
    for (auto w : stage_widths) {
      if (w == 0) fail("stage_widths must be positive");
    }
    if (feature_dim == 0) fail("feature_dim must be positive");
    if (decoder_heads == 0 || query_dim % decoder_heads != 0) fail("query_dim must be divisible by decoder_heads");
    if (!(schedule_power > 0)) fail("schedule_power must be positive");
    if (!(position_scale > 0)) fail("position_scale must be positive");
    if (!use_transformer && (use_pretrained_backbone || use_prototype_dropout)) {
      fail("use_pretrained_backbone and use_prototype_dropout require use_transformer");
    }
    if (dataset == DatasetKind::Kitti && data_root.empty()) fail("kitti dataset needs data_root");
    if (dataset == DatasetKind::Synthetic && !overfit && (train_scenes == 0 || val_scenes == 0)) {
      fail("synthetic dataset needs at least one training and one validation scene");
    }
  }
};

namespace detail {

using Json = nlohmann::json;

template <typename V>
V json_get(const Json& j, const std::string& key) {
  try {
    return j.get<V>();
  } catch (const Json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + j.dump());
  }
}

}  // namespace detail

/// Field-wise JSON mapping shared by the reader and the snapshot writer.
inline void visit_config_fields(RunConfig& c, auto&& field) {
  field("data_root", c.data_root);
  field("out_dir", c.out_dir);
  field("remap_path", c.remap_path);
  field("seed", c.seed);
  field("train_scenes", c.train_scenes);
  field("val_scenes", c.val_scenes);
  field("train_sequences", c.train_sequences);
  field("val_sequences", c.val_sequences);
  field("augment", c.augment);
  field("feature_dim", c.feature_dim);
  field("stage_widths", c.stage_widths);
  field("voxel_size", c.voxel_size);
  field("num_queries", c.num_queries);
  field("decoder_layers", c.decoder_layers);
  field("decoder_heads", c.decoder_heads);
  field("query_dim", c.query_dim);
  field("position_scale", c.position_scale);
  field("batch_size", c.batch_size);
  field("epochs", c.epochs);
  field("pretrain_epochs", c.pretrain_epochs);
  field("max_steps", c.max_steps);
  field("overfit", c.overfit);
  field("dropout_count", c.dropout_count);
  field("lr", c.lr);
  field("backbone_lr", c.backbone_lr);
  field("pwc_lr", c.pwc_lr);
  field("schedule_power", c.schedule_power);
  field("weight_decay", c.weight_decay);
  field("focal_weight", c.focal_weight);
  field("dice_weight", c.dice_weight);
  field("focal_alpha", c.focal_alpha);
  field("focal_gamma", c.focal_gamma);
  field("no_object_weight", c.no_object_weight);
  field("use_transformer", c.use_transformer);
  field("use_pretrained_backbone", c.use_pretrained_backbone);
  field("use_prototype_dropout", c.use_prototype_dropout);
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["dataset"] = to_string(cfg.dataset);
  auto copy = cfg;
  visit_config_fields(copy, [&](const std::string& key, auto& value) { j[key] = value; });
  return j;
}

/// Starts from the defaults of the document's dataset (synthetic unless
/// given) and overrides every listed field.
inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  if (auto it = j.find("dataset"); it != j.end()) {
    cfg = RunConfig::defaults_for(parse_dataset(detail::json_get<std::string>(*it, "dataset")));
  }
  std::map<std::string, bool> seen{{"dataset", true}, {"ablation", true}};
  // An ablation preset sets the three switches; explicit switches win.
  if (auto it = j.find("ablation"); it != j.end()) {
    cfg.apply_ablation(parse_ablation(detail::json_get<std::string>(*it, "ablation")));
  }
  visit_config_fields(cfg, [&](const std::string& key, auto& value) {
    seen[key] = true;
    if (auto it = j.find(key); it != j.end()) value = detail::json_get<std::remove_reference_t<decltype(value)>>(*it, key);
  });
  for (const auto& [key, _] : j.items()) {
    if (!seen.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace napl
