// Command-line front end: data generation, training, evaluation, statistics.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "napl/napl.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string ablation;
  std::string dataset;
  std::string data_root;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Run seed (data, initialization, dropout)");
  cmd->add_option("--out-dir", o.out_dir, "Directory for checkpoints, logs and metrics");
  cmd->add_option("--ablation", o.ablation, "Model variant")->check(CLI::IsMember({"A", "B", "C", "full"}));
  cmd->add_option("--dataset", o.dataset, "Dataset kind")->check(CLI::IsMember({"synthetic", "kitti"}));
  cmd->add_option("--data-root", o.data_root, "KITTI root or directory with a synthetic manifest.json");
}

napl::RunConfig resolve_config(const CommonOptions& o) {
  napl::RunConfig cfg;
  if (!o.config_path.empty()) {
    cfg = napl::load_config(o.config_path);
    if (!o.dataset.empty()) cfg.dataset = napl::parse_dataset(o.dataset);
  } else if (!o.dataset.empty()) {
    cfg = napl::RunConfig::defaults_for(napl::parse_dataset(o.dataset));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.ablation.empty()) cfg.apply_ablation(napl::parse_ablation(o.ablation));
  if (!o.data_root.empty()) cfg.data_root = o.data_root;
  cfg.validate();
  return cfg;
}

napl::Json summary_json(const napl::TrainSummary& s) {
  return {{"checkpoint", s.checkpoint.string()}, {"best_val_miou", s.best_val_miou}, {"best_epoch", s.best_epoch},
          {"steps", s.steps},                    {"final_val_miou", s.final_val_miou}};
}

void write_config_snapshot(const napl::RunConfig& cfg, const std::string& name) {
  napl::write_text(std::filesystem::path(cfg.out_dir) / name, napl::config_to_json(cfg).dump(2) + "\n");
}

/// Manifest plus every scene in KITTI byte layout; label words carry the
/// class id directly.
void generate_data(const napl::RunConfig& cfg) {
  namespace fs = std::filesystem;
  const auto manifest = napl::synthetic_manifest(cfg);
  const fs::path root(cfg.out_dir);
  napl::write_text(root / "manifest.json", manifest.dump(2) + "\n");
  const auto ds = napl::dataset_from_manifest(manifest);
  for (const std::string split : {"train", "val"}) {
    const auto& sources = ds.split(split);
    const fs::path dir = root / "scenes" / split;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const auto pc = ds.load(sources[i]);
      char stem[16];
      std::snprintf(stem, sizeof stem, "%06zu", i);
      napl::write_kitti_scan(dir / (std::string(stem) + ".bin"), pc);
      std::vector<std::uint32_t> words(pc.labels.begin(), pc.labels.end());
      napl::write_kitti_labels(dir / (std::string(stem) + ".label"), words);
    }
  }
  std::cout << napl::Json{{"manifest", (root / "manifest.json").string()},
                          {"train", ds.split("train").size()},
                          {"val", ds.split("val").size()}}
                   .dump()
            << "\n";
}

}  // namespace

// Training reallocates the same large buffers every step; keeping them in
// the heap instead of fresh mappings avoids a page-fault storm.
static void keep_heap_warm() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

int main(int argc, char** argv) {
  keep_heap_warm();
  CLI::App app{"Prototype-learning point cloud segmentation: data, training, evaluation, statistics"};
  app.require_subcommand(1);

  CommonOptions pwc_opts, napl_opts, eval_opts, stats_opts, gen_opts;
  std::string init_path, eval_ckpt, stats_ckpt, eval_split = "val", stats_split = "val";

  auto* pwc = app.add_subcommand("train-pwc", "Train the encoder with a point-wise classifier");
  add_common(pwc, pwc_opts);

  auto* napl_cmd = app.add_subcommand("train-napl", "Train the prototype-learning model");
  add_common(napl_cmd, napl_opts);
  napl_cmd->add_option("--init", init_path, "Checkpoint from train-pwc used to initialize the encoder");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write metrics JSON and CSV");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required();
  eval->add_option("--split", eval_split, "Split to evaluate")->check(CLI::IsMember({"train", "val"}));

  auto* stats = app.add_subcommand("stats", "Export per-class prototype counts");
  add_common(stats, stats_opts);
  stats->add_option("--checkpoint", stats_ckpt, "Prototype-learning checkpoint")->required();
  stats->add_option("--split", stats_split, "Split to analyze")->check(CLI::IsMember({"train", "val"}));

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset manifest and its scenes");
  add_common(gen, gen_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (pwc->parsed()) {
      const auto cfg = resolve_config(pwc_opts);
      write_config_snapshot(cfg, "pwc_config.json");
      std::cout << summary_json(napl::train_pwc(cfg, napl::open_dataset(cfg))).dump() << "\n";
    } else if (napl_cmd->parsed()) {
      const auto cfg = resolve_config(napl_opts);
      write_config_snapshot(cfg, "napl_config.json");
      std::optional<std::filesystem::path> init;
      if (!init_path.empty()) init = init_path;
      std::cout << summary_json(napl::train_napl(cfg, napl::open_dataset(cfg), init)).dump() << "\n";
    } else if (eval->parsed()) {
      const auto cfg = resolve_config(eval_opts);
      std::cout << napl::evaluate(eval_ckpt, cfg, napl::open_dataset(cfg), eval_split).dump() << "\n";
    } else if (stats->parsed()) {
      const auto cfg = resolve_config(stats_opts);
      std::cout << napl::export_stats(stats_ckpt, cfg, napl::open_dataset(cfg), stats_split).dump() << "\n";
    } else if (gen->parsed()) {
      const auto cfg = resolve_config(gen_opts);
      if (cfg.dataset != napl::DatasetKind::Synthetic) throw napl::ConfigError("gen-data only produces synthetic data");
      generate_data(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
