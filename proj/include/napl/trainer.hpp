#pragma once

// Training protocol: point-wise classifier pretraining, prototype-learning
// fine-tuning, evaluation, and prototype statistics export.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "napl/checkpoint.hpp"
#include "napl/config.hpp"
#include "napl/inference.hpp"
#include "napl/optim.hpp"
#include "napl/synthetic.hpp"

namespace napl {

namespace fs = std::filesystem;
using Json = nlohmann::json;

// ------------------------------------------------------------------ data

struct SceneSource {
  std::string id;
  std::uint64_t seed = 0;  // synthetic scenes
  fs::path scan, label;    // kitti scans
};

class Dataset {
 public:
  static Dataset synthetic(SyntheticSceneConfig scene_cfg, const std::vector<std::uint64_t>& train_seeds,
                           const std::vector<std::uint64_t>& val_seeds) {
    scene_cfg.validate();
    Dataset d;
    d.kind_ = DatasetKind::Synthetic;
    d.scene_cfg_ = std::move(scene_cfg);
    for (const auto& c : d.scene_cfg_.classes) d.class_names_.push_back(c.name);
    auto fill = [](std::vector<SceneSource>& out, const std::vector<std::uint64_t>& seeds) {
      for (auto s : seeds) out.push_back({"seed-" + std::to_string(s), s, {}, {}});
    };
    fill(d.train_, train_seeds);
    fill(d.val_, val_seeds);
    return d;
  }

  /// `root/sequences/<seq>/velodyne/*.bin` with labels in `.../labels/*.label`.
  static Dataset kitti(const fs::path& root, const std::vector<std::string>& train_seqs,
                       const std::vector<std::string>& val_seqs, RemapTable remap) {
    if (!fs::is_directory(root)) throw ConfigError("dataset path " + root.string() + " does not exist");
    Dataset d;
    d.kind_ = DatasetKind::Kitti;
    d.remap_ = std::move(remap);
    for (auto name : kitti_class_names()) d.class_names_.emplace_back(name);
    auto fill = [&](std::vector<SceneSource>& out, const std::vector<std::string>& seqs) {
      for (const auto& seq : seqs) {
        const fs::path dir = root / "sequences" / seq;
        if (!fs::is_directory(dir / "velodyne")) throw ConfigError("missing scan directory " + (dir / "velodyne").string());
        std::vector<fs::path> scans;
        for (const auto& e : fs::directory_iterator(dir / "velodyne")) {
          if (e.path().extension() == ".bin") scans.push_back(e.path());
        }
        std::sort(scans.begin(), scans.end());
        for (const auto& s : scans) {
          out.push_back({seq + "/" + s.stem().string(), 0, s, dir / "labels" / (s.stem().string() + ".label")});
        }
      }
    };
    fill(d.train_, train_seqs);
    fill(d.val_, val_seqs);
    return d;
  }

  DatasetKind kind() const { return kind_; }
  std::size_t num_classes() const { return class_names_.size(); }
  const std::vector<std::string>& class_names() const { return class_names_; }
  const SyntheticSceneConfig& scene_config() const { return scene_cfg_; }

  const std::vector<SceneSource>& split(const std::string& name) const {
    if (name == "train") return train_;
    if (name == "val") return val_;
    throw ConfigError("unknown split '" + name + "' (expected train or val)");
  }

  PointCloud load(const SceneSource& s) const {
    if (kind_ == DatasetKind::Synthetic) return generate_synthetic_scene(scene_cfg_, s.seed);
    return load_kitti_scan(s.scan, fs::exists(s.label) ? std::optional<fs::path>(s.label) : std::nullopt, remap_);
  }

  /// Training and validation both reduced to the first training scene.
  Dataset overfit_view() const {
    require(!train_.empty(), "overfit mode needs at least one training scene");
    Dataset d = *this;
    d.train_.resize(1);
    d.val_ = d.train_;
    return d;
  }

 private:
  DatasetKind kind_ = DatasetKind::Synthetic;
  SyntheticSceneConfig scene_cfg_;
  RemapTable remap_;
  std::vector<std::string> class_names_;
  std::vector<SceneSource> train_, val_;
};

inline constexpr std::uint64_t kValSeedOffset = 1'000'000;

/// Seeds and split assignment of a synthetic dataset.
inline Json synthetic_manifest(const RunConfig& cfg) {
  Json j;
  j["generator"] = "default_urban";
  j["base_seed"] = cfg.seed;
  j["train"] = Json::array();
  j["val"] = Json::array();
  for (std::size_t i = 0; i < cfg.train_scenes; ++i) j["train"].push_back(derive_seed(cfg.seed, i));
  for (std::size_t i = 0; i < cfg.val_scenes; ++i) j["val"].push_back(derive_seed(cfg.seed, kValSeedOffset + i));
  return j;
}

inline Dataset dataset_from_manifest(const Json& manifest) {
  try {
    if (manifest.at("generator").get<std::string>() != "default_urban") {
      throw ConfigError("unknown synthetic generator " + manifest.at("generator").dump());
    }
    return Dataset::synthetic(SyntheticSceneConfig::default_urban(),
                              manifest.at("train").get<std::vector<std::uint64_t>>(),
                              manifest.at("val").get<std::vector<std::uint64_t>>());
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed synthetic manifest: ") + e.what());
  }
}

inline Dataset open_dataset(const RunConfig& cfg) {
  if (cfg.dataset == DatasetKind::Kitti) {
    return Dataset::kitti(cfg.data_root, cfg.train_sequences, cfg.val_sequences,
                          cfg.remap_path.empty() ? default_kitti_remap() : load_remap_table(cfg.remap_path));
  }
  if (cfg.data_root.empty()) return dataset_from_manifest(synthetic_manifest(cfg));
  const fs::path manifest = fs::path(cfg.data_root) / "manifest.json";
  if (!fs::exists(manifest)) throw ConfigError("dataset path " + manifest.string() + " does not exist");
  std::ifstream in(manifest);
  try {
    return dataset_from_manifest(Json::parse(in));
  } catch (const Json::parse_error& e) {
    throw ConfigError("manifest " + manifest.string() + " is not valid JSON: " + e.what());
  }
}

struct PreparedScene {
  PointCloud cloud;
  EncoderInput input;
};

/// Scenes of one split with their voxel geometry, kept in memory for
/// synthetic data and loaded on demand otherwise.
class SceneCache {
 public:
  SceneCache(const Dataset& ds, const std::string& split, const EncoderConfig& ecfg)
      : ds_(&ds), sources_(&ds.split(split)), ecfg_(ecfg) {
    if (ds.kind() == DatasetKind::Synthetic) {
      for (const auto& s : *sources_) cached_.push_back(prepare(s));
    }
  }

  std::size_t size() const { return sources_->size(); }

  PreparedScene get(std::size_t i) const { return cached_.empty() ? prepare((*sources_)[i]) : cached_[i]; }

  const PreparedScene* cached(std::size_t i) const { return cached_.empty() ? nullptr : &cached_[i]; }

 private:
  PreparedScene prepare(const SceneSource& s) const {
    PreparedScene p{ds_->load(s), {}};
    p.input = prepare_encoder_input(p.cloud, ecfg_);
    return p;
  }

  const Dataset* ds_;
  const std::vector<SceneSource>* sources_;
  EncoderConfig ecfg_;
  std::vector<PreparedScene> cached_;
};

// ----------------------------------------------------------------- model

enum class ModelKind { Pwc, Napl };

inline std::string to_string(ModelKind k) { return k == ModelKind::Pwc ? "pwc" : "napl"; }

struct Model {
  ModelKind kind = ModelKind::Pwc;
  EncoderParams<float> encoder;
  PwcClassifier<float> classifier;  // Pwc only
  DecoderParams<float> decoder;     // Napl only

  static Model init(ModelKind kind, const RunConfig& cfg, std::size_t num_classes, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x1417));
    Model m;
    m.kind = kind;
    m.encoder = EncoderParams<float>::init(cfg.encoder_config(), rng);
    if (kind == ModelKind::Pwc) {
      m.classifier = PwcClassifier<float>::init(num_classes, cfg.feature_dim, rng);
    } else {
      m.decoder = DecoderParams<float>::init(cfg.decoder_config(num_classes), rng);
    }
    return m;
  }

  std::size_t num_classes() const {
    return kind == ModelKind::Pwc ? classifier.num_classes() : decoder.config.num_classes;
  }

  ParamList<float> params() const {
    auto out = encoder.params();
    append_params(out, kind == ModelKind::Pwc ? classifier.params() : decoder.params());
    return out;
  }
};

inline std::vector<Tensor> tensors_of(const ParamList<float>& list) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : list) out.push_back(t);
  return out;
}

/// Copies every tensor of `src` whose name passes `select` into the matching
/// model tensor. Returns the number copied.
inline std::size_t assign_tensors(const ParamList<float>& dst, const NamedTensors& src, const auto& select,
                                  bool require_all) {
  std::size_t copied = 0;
  for (const auto& [name, target] : dst) {
    if (!select(name)) continue;
    auto it = std::find_if(src.begin(), src.end(), [&](const auto& p) { return p.first == name; });
    if (it == src.end()) {
      if (require_all) throw ConfigError("checkpoint is missing tensor '" + name + "'");
      continue;
    }
    if (it->second.shape() != target.shape()) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                        " but the model expects " + shape_str(target.shape()));
    }
    Tensor handle = target;
    std::copy(it->second.values().begin(), it->second.values().end(), handle.values().begin());
    ++copied;
  }
  return copied;
}

struct CheckpointMeta {
  ModelKind kind = ModelKind::Pwc;
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  std::size_t num_classes = 0;
  double val_miou = 0;
  Json config;
};

inline fs::path meta_path(const fs::path& ckpt) { return fs::path(ckpt.string() + ".json"); }

/// Tensors go to `path`; the run configuration snapshot and step counter go
/// to the `<path>.json` sidecar.
inline void save_model(const fs::path& path, const Model& model, const CheckpointMeta& meta) {
  NamedTensors named;
  for (const auto& [name, t] : model.params()) named.emplace_back(name, t);
  save_checkpoint(path, named);
  Json j;
  j["kind"] = to_string(meta.kind);
  j["step"] = meta.step;
  j["epoch"] = meta.epoch;
  j["num_classes"] = meta.num_classes;
  j["val_miou"] = meta.val_miou;
  j["config"] = meta.config;
  std::ofstream(meta_path(path)) << j.dump(2) << "\n";
}

inline CheckpointMeta load_meta(const fs::path& ckpt) {
  const auto p = meta_path(ckpt);
  if (!fs::exists(p)) throw ConfigError("checkpoint metadata " + p.string() + " not found");
  std::ifstream in(p);
  try {
    const Json j = Json::parse(in);
    CheckpointMeta m;
    m.kind = j.at("kind").get<std::string>() == "pwc" ? ModelKind::Pwc : ModelKind::Napl;
    m.step = j.at("step").get<std::uint64_t>();
    m.epoch = j.at("epoch").get<std::size_t>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.val_miou = j.at("val_miou").get<double>();
    m.config = j.at("config");
    return m;
  } catch (const Json::exception& e) {
    throw ConfigError("malformed checkpoint metadata " + p.string() + ": " + e.what());
  }
}

/// Builds the model described by `cfg` and fills it from `ckpt`; any missing
/// tensor or shape mismatch is an error naming the tensor.
inline Model load_model(const fs::path& ckpt, const RunConfig& cfg, std::size_t num_classes) {
  if (!fs::exists(ckpt)) throw ConfigError("checkpoint " + ckpt.string() + " not found");
  const auto meta = load_meta(ckpt);
  auto model = Model::init(meta.kind, cfg, num_classes, cfg.seed);
  assign_tensors(model.params(), load_checkpoint(ckpt), [](const std::string&) { return true; }, true);
  return model;
}

// ------------------------------------------------------------- inference

struct FramePrediction {
  std::vector<int> labels;
  std::optional<PrototypeStats> stats;  // Napl only
};

inline FramePrediction predict(const Model& model, const PreparedScene& scene) {
  NoGradGuard no_grad;
  auto enc = extract_features(scene.input, model.encoder);
  FramePrediction out;
  if (model.kind == ModelKind::Pwc) {
    auto logits = pwc_logits(enc.features, model.classifier);
    const std::size_t C = logits.cols();
    out.labels.resize(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c) {
        if (logits(i, c) > logits(i, best)) best = c;
      }
      out.labels[i] = static_cast<int>(best) + 1;
    }
  } else {
    auto protos = decode_prototypes(enc, model.decoder);
    out.labels = semantic_inference(enc.features, protos).labels;
    out.stats = count_prototypes(protos, enc.features, std::span<const int>(scene.cloud.labels));
  }
  return out;
}

struct EvalReport {
  ModelKind kind = ModelKind::Pwc;
  std::string split;
  std::size_t scenes = 0;
  ConfusionMatrix confusion;
  IouReport iou;
  std::optional<PrototypeStats> stats;
};

inline EvalReport evaluate_model(const Model& model, const SceneCache& scenes, const std::string& split) {
  if (scenes.size() == 0) throw ConfigError("split '" + split + "' is empty");
  EvalReport r;
  r.kind = model.kind;
  r.split = split;
  r.scenes = scenes.size();
  r.confusion = ConfusionMatrix(model.num_classes());
  if (model.kind == ModelKind::Napl) {
    r.stats = PrototypeStats{};
    r.stats->num_classes = model.num_classes();
  }
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const PreparedScene* cached = scenes.cached(i);
    const PreparedScene loaded = cached ? PreparedScene{} : scenes.get(i);
    const PreparedScene& scene = cached ? *cached : loaded;
    if (!scene.cloud.has_labels()) throw ConfigError("scene " + std::to_string(i) + " of split '" + split + "' has no labels");
    const auto pred = predict(model, scene);
    accumulate_confusion(pred.labels, scene.cloud.labels, r.confusion);
    if (r.stats) r.stats->merge(*pred.stats);
  }
  r.iou = miou(r.confusion);
  return r;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json report_json(const EvalReport& r, const std::vector<std::string>& class_names) {
  Json j;
  j["model"] = to_string(r.kind);
  j["split"] = r.split;
  j["scenes"] = r.scenes;
  j["miou"] = r.iou.mean;
  j["per_class"] = Json::array();
  std::vector<std::optional<double>> averages;
  if (r.stats) averages = r.stats->averages();
  for (std::size_t c = 0; c < r.iou.per_class.size(); ++c) {
    Json row;
    row["class"] = c + 1;
    row["name"] = c < class_names.size() ? class_names[c] : std::to_string(c + 1);
    row["iou"] = optional_json(r.iou.per_class[c]);
    if (r.stats) row["avg_prototypes"] = optional_json(averages[c]);
    j["per_class"].push_back(row);
  }
  return j;
}

inline std::string format_number(const std::optional<double>& v) {
  if (!v) return "";
  return Json(*v).dump();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------- logging

class JsonlLog {
 public:
  explicit JsonlLog(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw ConfigError("cannot write log " + path.string());
  }
  void write(const Json& j) { out_ << j.dump() << "\n"; }

 private:
  std::ofstream out_;
};

// --------------------------------------------------------------- training

struct TrainSummary {
  fs::path checkpoint;
  double best_val_miou = -1;
  std::size_t best_epoch = 0;
  std::uint64_t steps = 0;
  std::vector<double> val_miou;    // per evaluation
  std::vector<double> step_loss;   // per optimizer step, batch mean
  double final_val_miou = 0;
  // Path instrumentation.
  std::uint64_t dropout_calls = 0;
  std::size_t pretrained_tensors = 0;
  double backbone_base_lr = 0;
  double head_base_lr = 0;
};

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0xE90C0000ull + epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

struct StepPlan {
  std::size_t batch = 1;
  std::size_t steps_per_epoch = 1;
  std::size_t epochs = 1;
  std::uint64_t total_steps = 1;
};

inline StepPlan plan_steps(const RunConfig& cfg, std::size_t train_size, std::size_t epochs) {
  require(train_size > 0, "training split is empty");
  StepPlan p;
  p.batch = std::min(cfg.batch_size, train_size);
  p.steps_per_epoch = (train_size + p.batch - 1) / p.batch;
  if (cfg.max_steps > 0) {
    p.total_steps = cfg.max_steps;
    p.epochs = (cfg.max_steps + p.steps_per_epoch - 1) / p.steps_per_epoch;
  } else {
    p.epochs = std::max<std::size_t>(1, epochs);
    p.total_steps = p.epochs * p.steps_per_epoch;
  }
  return p;
}

inline PreparedScene training_scene(const Dataset& ds, const SceneCache& cache, std::size_t index, const RunConfig& cfg,
                                    const EncoderConfig& ecfg, std::uint64_t draw) {
  if (!cfg.augment || cfg.overfit) {
    if (const auto* c = cache.cached(index)) return *c;
    return cache.get(index);
  }
  PreparedScene s{augment_scene(ds.load(ds.split("train")[index]), derive_seed(cfg.seed, draw)), {}};
  s.input = prepare_encoder_input(s.cloud, ecfg);
  return s;
}

struct ParamGroup {
  std::vector<Tensor> tensors;
  OptimizerState state;
  LrSchedule schedule;
};

inline double apply_groups(std::vector<ParamGroup>& groups, std::uint64_t step, const AdamWConfig& opt) {
  double lr0 = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& group = groups[g];
    const double lr = poly_lr(step, group.schedule);
    if (g == 0) lr0 = lr;
    const auto report = adamw_step(std::span<Tensor>(group.tensors), group.state, lr, opt);
    if (!report.applied) throw ContractError("training diverged: " + report.diagnostic);
    zero_grad(std::span<Tensor>(group.tensors));
  }
  return lr0;
}

/// Shared epoch loop. `sample_loss(scene, step, slot, record)` builds one
/// sample's loss graph and may add diagnostics to `record`.
template <typename SampleLoss>
TrainSummary run_training(const std::string& phase, const RunConfig& cfg, const Dataset& ds, Model& model,
                          std::vector<ParamGroup>& groups, std::size_t epochs, SampleLoss&& sample_loss) {
  const auto ecfg = cfg.encoder_config();
  const SceneCache train(ds, "train", ecfg);
  const SceneCache val(ds, "val", ecfg);
  if (train.size() == 0) throw ConfigError("split 'train' is empty");
  if (val.size() == 0) throw ConfigError("split 'val' is empty");
  const auto plan = plan_steps(cfg, train.size(), epochs);
  for (auto& g : groups) g.schedule = {g.schedule.base_lr, plan.total_steps, cfg.schedule_power};
  const auto opt = cfg.optimizer_config();

  fs::create_directories(cfg.out_dir);
  JsonlLog log(fs::path(cfg.out_dir) / (phase + "_log.jsonl"));
  TrainSummary summary;
  summary.checkpoint = fs::path(cfg.out_dir) / (phase + "_best.ckpt");
  std::uint64_t step = 0;

  auto evaluate_and_keep = [&](std::size_t epoch) {
    const auto report = evaluate_model(model, val, "val");
    summary.val_miou.push_back(report.iou.mean);
    summary.final_val_miou = report.iou.mean;
    Json j{{"event", "epoch"}, {"phase", phase}, {"epoch", epoch}, {"step", step}, {"val_miou", report.iou.mean}};
    if (report.stats) {
      Json avg = Json::array();
      for (const auto& a : report.stats->averages()) avg.push_back(optional_json(a));
      j["avg_prototypes"] = avg;
    }
    log.write(j);
    if (report.iou.mean > summary.best_val_miou) {
      summary.best_val_miou = report.iou.mean;
      summary.best_epoch = epoch;
      save_model(summary.checkpoint, model,
                 {model.kind, step, epoch, model.num_classes(), report.iou.mean, config_to_json(cfg)});
    }
  };

  for (std::size_t epoch = 0; epoch < plan.epochs && step < plan.total_steps; ++epoch) {
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    for (std::size_t b = 0; b < plan.steps_per_epoch && step < plan.total_steps; ++b) {
      const std::size_t begin = b * plan.batch, end = std::min(order.size(), begin + plan.batch);
      const double inv = 1.0 / static_cast<double>(end - begin);
      double batch_loss = 0;
      Json samples = Json::array();
      for (std::size_t slot = begin; slot < end; ++slot) {
        const auto scene = training_scene(ds, train, order[slot], cfg, ecfg, step * plan.batch + (slot - begin));
        Json record;
        Tensor loss = sample_loss(scene, step, slot - begin, record);
        batch_loss += loss.item() * inv;
        scale(loss, static_cast<float>(inv)).backward();
        samples.push_back(record);
      }
      const double lr = apply_groups(groups, step, opt);
      summary.step_loss.push_back(batch_loss);
      log.write({{"event", "step"}, {"phase", phase}, {"epoch", epoch}, {"step", step}, {"lr", lr},
                 {"loss", batch_loss}, {"samples", samples}});
      ++step;
    }
    if (!cfg.overfit || step >= plan.total_steps) evaluate_and_keep(epoch);
  }
  summary.steps = step;
  return summary;
}

}  // namespace detail

/// Encoder plus point-wise classifier trained with the mean NLL. The best
/// validation checkpoint is kept.
inline TrainSummary train_pwc(const RunConfig& cfg, const Dataset& dataset) {
  cfg.validate();
  const Dataset ds = cfg.overfit ? dataset.overfit_view() : dataset;
  auto model = Model::init(ModelKind::Pwc, cfg, ds.num_classes(), cfg.seed);
  std::vector<detail::ParamGroup> groups(1);
  groups[0].tensors = tensors_of(model.params());
  groups[0].schedule.base_lr = cfg.pwc_lr;
  auto summary = detail::run_training("pwc", cfg, ds, model, groups, cfg.pretrain_epochs,
                                      [&](const PreparedScene& scene, std::uint64_t, std::size_t, Json& record) {
                                        auto enc = extract_features(scene.input, model.encoder);
                                        auto loss = pwc_loss_from_logits(pwc_logits(enc.features, model.classifier),
                                                                         std::span<const int>(scene.cloud.labels));
                                        record = {{"loss", loss.item()}};
                                        return loss;
                                      });
  summary.head_base_lr = cfg.pwc_lr;
  return summary;
}

/// Prototype-learning model. With `use_pretrained_backbone` the encoder
/// (stem, downsampling and upsampling stages, point head) starts from `init`
/// and the classifier head of `init` is discarded.
inline TrainSummary train_napl(const RunConfig& cfg, const Dataset& dataset, const std::optional<fs::path>& init) {
  cfg.validate();
  if (!cfg.use_transformer) {
    throw ConfigError("train-napl needs use_transformer; the point-wise baseline (ablation A) is trained by train-pwc");
  }
  if (cfg.use_pretrained_backbone && !init) {
    throw ConfigError("use_pretrained_backbone is set but no pretrained checkpoint was given");
  }
  const Dataset ds = cfg.overfit ? dataset.overfit_view() : dataset;
  auto model = Model::init(ModelKind::Napl, cfg, ds.num_classes(), cfg.seed);

  TrainSummary pre;
  if (cfg.use_pretrained_backbone) {
    if (!fs::exists(*init)) throw ConfigError("pretrained checkpoint " + init->string() + " not found");
    if (load_meta(*init).kind != ModelKind::Pwc) throw ConfigError("pretrained checkpoint must come from train-pwc");
    pre.pretrained_tensors = assign_tensors(model.encoder.params(), load_checkpoint(*init),
                                            [](const std::string& n) { return n.rfind("encoder.", 0) == 0; }, true);
  }

  std::vector<detail::ParamGroup> groups(2);
  groups[0].tensors = tensors_of(model.encoder.backbone_params());
  groups[0].schedule.base_lr = cfg.use_pretrained_backbone ? cfg.backbone_lr : cfg.lr;
  groups[1].tensors = tensors_of(model.encoder.point_decoder_params());
  for (const auto& t : tensors_of(model.decoder.params())) groups[1].tensors.push_back(t);
  groups[1].schedule.base_lr = cfg.lr;

  const auto loss_cfg = cfg.loss_config();
  const auto dropout_before = prototype_dropout_invocations();
  auto summary = detail::run_training(
      "napl", cfg, ds, model, groups, cfg.epochs,
      [&](const PreparedScene& scene, std::uint64_t step, std::size_t slot, Json& record) {
        Rng rng(derive_seed(derive_seed(cfg.seed, 0xD409), step * 4096 + slot));
        auto enc = extract_features(scene.input, model.encoder);
        auto protos = decode_prototypes(enc, model.decoder);
        auto obj = napl_objective(enc.features, protos, std::span<const int>(scene.cloud.labels), loss_cfg, rng);
        Json matched = Json::array();
        for (std::size_t i = 0; i < obj.num_segments; ++i) {
          matched.push_back(obj.survivors[obj.matching.assignment[i]]);
        }
        record = {{"loss", obj.loss.item()},
                  {"cross_entropy", obj.cross_entropy},
                  {"mask", obj.mask},
                  {"segments", obj.num_segments},
                  {"matched_queries", matched}};
        return obj.loss;
      });
  summary.dropout_calls = prototype_dropout_invocations() - dropout_before;
  summary.pretrained_tensors = pre.pretrained_tensors;
  summary.backbone_base_lr = groups[0].schedule.base_lr;
  summary.head_base_lr = groups[1].schedule.base_lr;
  return summary;
}

/// Evaluates `ckpt` on `split`; writes `metrics_<split>.json` and `.csv`
/// into `cfg.out_dir`.
inline Json evaluate(const fs::path& ckpt, const RunConfig& cfg, const Dataset& dataset, const std::string& split) {
  const Dataset ds = cfg.overfit ? dataset.overfit_view() : dataset;
  const auto model = load_model(ckpt, cfg, ds.num_classes());
  const SceneCache scenes(ds, split, cfg.encoder_config());
  const auto report = evaluate_model(model, scenes, split);
  const auto j = report_json(report, ds.class_names());
  write_text(fs::path(cfg.out_dir) / ("metrics_" + split + ".json"), j.dump(2) + "\n");
  std::string csv = "class,name,iou";
  csv += report.stats ? ",avg_prototypes\n" : "\n";
  const auto averages = report.stats ? report.stats->averages() : std::vector<std::optional<double>>{};
  for (std::size_t c = 0; c < report.iou.per_class.size(); ++c) {
    csv += std::to_string(c + 1) + "," + ds.class_names()[c] + "," + format_number(report.iou.per_class[c]);
    if (report.stats) csv += "," + format_number(averages[c]);
    csv += "\n";
  }
  write_text(fs::path(cfg.out_dir) / ("metrics_" + split + ".csv"), csv);
  return j;
}

/// Average prototype count per class over `split`; writes
/// `prototype_stats.csv` and `prototype_stats.json` into `cfg.out_dir`.
inline Json export_stats(const fs::path& ckpt, const RunConfig& cfg, const Dataset& dataset,
                         const std::string& split = "val") {
  if (load_meta(ckpt).kind != ModelKind::Napl) {
    throw ConfigError("prototype statistics need a prototype-learning checkpoint; " + ckpt.string() +
                      " holds a point-wise classifier");
  }
  const Dataset ds = cfg.overfit ? dataset.overfit_view() : dataset;
  const SceneCache scenes(ds, split, cfg.encoder_config());
  if (scenes.size() == 0) throw ConfigError("split '" + split + "' is empty; no statistics to export");
  const auto model = load_model(ckpt, cfg, ds.num_classes());
  const auto report = evaluate_model(model, scenes, split);
  const auto averages = report.stats->averages();
  Json j;
  j["split"] = split;
  j["frames"] = report.stats->frames();
  j["classes"] = Json::array();
  std::string csv = "class,name,avg_prototypes,frames_present\n";
  for (std::size_t c = 0; c < averages.size(); ++c) {
    std::size_t present = 0;
    for (const auto& p : report.stats->presence) present += p[c];
    j["classes"].push_back({{"class", c + 1},
                            {"name", ds.class_names()[c]},
                            {"avg_prototypes", optional_json(averages[c])},
                            {"frames_present", present}});
    csv += std::to_string(c + 1) + "," + ds.class_names()[c] + "," + format_number(averages[c]) + "," +
           std::to_string(present) + "\n";
  }
  write_text(fs::path(cfg.out_dir) / "prototype_stats.csv", csv);
  write_text(fs::path(cfg.out_dir) / "prototype_stats.json", j.dump(2) + "\n");
  return j;
}

}  // namespace napl
