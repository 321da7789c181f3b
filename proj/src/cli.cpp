#include "salm2/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "salm2/checkpoint.hpp"
#include "salm2/training.hpp"

namespace fs = std::filesystem;

namespace salm2::cli {

namespace {

std::string resolve_clip_weights(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  const char* env = std::getenv("SALM2_CLIP_WEIGHTS");
  return env ? env : "";
}

ModelConfig config_from_file(const std::string& path) {
  if (path.empty()) return ModelConfig{};
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  nlohmann::json j;
  in >> j;
  return ModelConfig::from_json(j);
}

LoadedCheckpoint load_for_inference(const std::string& ckpt, const std::string& clip_flag) {
  return load_checkpoint(ckpt, resolve_clip_weights(clip_flag));
}

std::vector<float> predict_map(SalM2<float>& model, const std::string& image_path) {
  NoGradGuard ng;
  RawImage raw = load_image_rgb(image_path);
  const int64_t size = model.config().input_size;
  auto input = Tensor<float>::from({1, 3, size, size}, preprocess(raw, size));
  auto pred = model.forward(input);
  return pred.values();
}

int cmd_train(const std::string& data_root, const std::string& out_dir, uint64_t seed,
              int64_t epochs, int64_t batch, double lr, const std::string& clip_flag,
              const std::string& split, const std::string& val_split, const std::string& config_path) {
  ModelConfig mcfg = config_from_file(config_path);
  mcfg.seed = seed;
  const std::string clip = resolve_clip_weights(clip_flag);
  if (!clip.empty()) {
    mcfg.provider = "clip";
    mcfg.clip_weights = clip;
  } else if (mcfg.provider == "clip") {
    throw AdapterUnavailableError("config selects the clip provider but no weights were given");
  } else {
    std::cerr << "note: no clip weights given, using the stub semantic encoder\n";
  }
  SalM2<float> model(mcfg);

  Dataset train_ds = load_dataset(data_root, split);
  Dataset val_ds;
  if (fs::is_directory(fs::path(data_root) / val_split)) {
    val_ds = load_dataset(data_root, val_split);
  } else {
    std::cerr << "note: no '" << val_split << "' split, validating on '" << split << "'\n";
    val_ds = train_ds;
  }

  TrainConfig tcfg;
  tcfg.seed = seed;
  tcfg.epochs = epochs;
  tcfg.batch_size = batch;
  tcfg.learning_rate = lr;
  auto result = train_model(model, train_ds, val_ds, tcfg, &std::cout);

  fs::create_directories(out_dir);
  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.salm2").string();
  save_checkpoint(model, ckpt_path,
                  {{"trained_epochs", result.history.size()},
                   {"best_epoch", result.best_epoch},
                   {"best_val_cc", result.best_val_cc}});
  atomic_write_file((fs::path(out_dir) / "history.json").string(),
                    result.history_json(tcfg).dump(2));
  std::cout << "checkpoint: " << ckpt_path << "\nbest epoch " << result.best_epoch << " (val CC "
            << result.best_val_cc << ")\n";
  return 0;
}

int cmd_eval(const std::string& data_root, const std::string& ckpt, const std::string& split,
             const std::string& metrics_flag, const std::string& out_path,
             const std::string& clip_flag) {
  auto loaded = load_for_inference(ckpt, clip_flag);
  Dataset ds = load_dataset(data_root, split);
  auto report = validate(loaded.model, ds);
  auto doc = report.to_json();

  static const std::set<std::string> known = {"auc_borji", "auc_judd", "nss", "cc", "sim", "kld"};
  std::set<std::string> selected;
  if (metrics_flag == "all" || metrics_flag.empty()) {
    selected = known;
  } else {
    std::stringstream ss(metrics_flag);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      std::transform(tok.begin(), tok.end(), tok.begin(), ::tolower);
      if (!known.count(tok)) throw ConfigError("unknown metric '" + tok + "' in --metrics");
      selected.insert(tok);
    }
  }
  atomic_write_file(out_path, doc.dump(2));
  auto show = [&](const std::string& key, const std::string& flag) {
    if (!selected.count(flag)) return;
    const auto& v = doc["metrics"][key];
    std::cout << key << ": " << (v.is_null() ? "unavailable" : std::to_string(v.get<double>()))
              << "\n";
  };
  show("AUC_Borji", "auc_borji");
  show("AUC_Judd", "auc_judd");
  show("NSS", "nss");
  show("CC", "cc");
  show("SIM", "sim");
  show("KLD", "kld");
  std::cout << "report: " << out_path << " (" << report.sample_count << " samples)\n";
  return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& image, const std::string& out,
                const std::string& clip_flag) {
  auto loaded = load_for_inference(ckpt, clip_flag);
  const int64_t size = loaded.model.config().input_size;
  auto map = predict_map(loaded.model, image);
  save_gray_png(out, map, size, size);
  std::cout << "saliency map: " << out << "\n";
  return 0;
}

int cmd_overlay(const std::string& ckpt, const std::string& image, const std::string& out,
                const std::string& clip_flag) {
  auto loaded = load_for_inference(ckpt, clip_flag);
  const int64_t size = loaded.model.config().input_size;
  auto map = predict_map(loaded.model, image);
  RawImage frame = load_image_rgb(image);
  auto blended = overlay_saliency(frame, map, size, size);
  save_rgb_png(out, blended, frame.height, frame.width);
  std::cout << "overlay: " << out << "\n";
  return 0;
}

int cmd_count_params(const std::string& config_path) {
  ModelConfig cfg = config_from_file(config_path);
  SalM2<float> model(cfg);
  std::cout << "trainable parameters: " << model.count_trainable_params() << "\n";
  std::cout << "  (reference decomposition target: 75900 backbone + 3100 projector + 1 fusion scale)\n";
  for (const auto& [module, count] : model.param_breakdown())
    std::cout << "  " << module << ": " << count << "\n";
  for (int64_t size : {cfg.input_size, cfg.input_size * 2}) {
    try {
      auto rep = estimate_flops(cfg, size);
      std::cout << "flops @ " << size << "x" << size << ": " << rep.total << " ("
                << static_cast<double>(rep.total) / 1e9 << " G)\n";
    } catch (const ConfigError& e) {
      std::cout << "flops @ " << size << "x" << size << ": not estimable (" << e.what() << ")\n";
    }
  }
  return 0;
}

int cmd_gen_synthetic(int64_t n, uint64_t seed, const std::string& out_root,
                      const std::string& split, int64_t size, double sigma) {
  auto manifest = generate_synthetic(n, seed, out_root, split, size, sigma);
  std::cout << "wrote " << manifest.ids.size() << " samples to " << out_root << "/" << split
            << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"SalM2 driver-saliency toolkit"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model on a dataset root");
  std::string tr_data, tr_out, tr_clip, tr_split = "train", tr_val_split = "val", tr_config;
  uint64_t tr_seed = 0;
  int64_t tr_epochs = 40, tr_batch = 16;
  double tr_lr = 1e-3;
  train->add_option("--data", tr_data, "Dataset root")->required();
  train->add_option("--out", tr_out, "Output directory")->required();
  train->add_option("--seed", tr_seed, "Seed for init and shuffling")->required();
  train->add_option("--epochs", tr_epochs, "Training epochs");
  train->add_option("--batch", tr_batch, "Batch size");
  train->add_option("--lr", tr_lr, "Learning rate");
  train->add_option("--clip-weights", tr_clip, "Frozen encoder weight archive");
  train->add_option("--split", tr_split, "Training split name");
  train->add_option("--val-split", tr_val_split, "Validation split name");
  train->add_option("--config", tr_config, "Model config JSON file");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, write metrics.json");
  std::string ev_data, ev_ckpt, ev_split = "val", ev_metrics = "all", ev_out = "metrics.json",
              ev_clip;
  eval->add_option("--data", ev_data, "Dataset root")->required();
  eval->add_option("--ckpt", ev_ckpt, "Checkpoint archive")->required();
  eval->add_option("--split", ev_split, "Split name");
  eval->add_option("--metrics", ev_metrics, "all or a comma list of auc_borji,auc_judd,nss,cc,sim,kld");
  eval->add_option("--out", ev_out, "Report path");
  eval->add_option("--clip-weights", ev_clip, "Frozen encoder weight archive");

  // predict
  auto* predict = app.add_subcommand("predict", "Write an 8-bit saliency map for one image");
  std::string pr_ckpt, pr_image, pr_out, pr_clip;
  predict->add_option("--ckpt", pr_ckpt, "Checkpoint archive")->required();
  predict->add_option("--image", pr_image, "Input frame")->required();
  predict->add_option("--out", pr_out, "Output PNG")->required();
  predict->add_option("--clip-weights", pr_clip, "Frozen encoder weight archive");

  // overlay
  auto* overlay = app.add_subcommand("overlay", "Blend the predicted saliency onto the frame");
  std::string ov_ckpt, ov_image, ov_out, ov_clip;
  overlay->add_option("--ckpt", ov_ckpt, "Checkpoint archive")->required();
  overlay->add_option("--image", ov_image, "Input frame")->required();
  overlay->add_option("--out", ov_out, "Output PNG")->required();
  overlay->add_option("--clip-weights", ov_clip, "Frozen encoder weight archive");

  // count-params
  auto* count = app.add_subcommand("count-params", "Print the parameter and FLOP audit");
  std::string cp_config;
  count->add_option("--config", cp_config, "Model config JSON file");

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic dataset");
  std::string gs_out, gs_split = "train";
  uint64_t gs_seed = 0;
  int64_t gs_n = 0, gs_size = 256;
  double gs_sigma = 10.0;
  gen->add_option("--n", gs_n, "Number of samples")->required();
  gen->add_option("--seed", gs_seed, "Generator seed")->required();
  gen->add_option("--out", gs_out, "Dataset root to create")->required();
  gen->add_option("--split", gs_split, "Split name");
  gen->add_option("--size", gs_size, "Image size in pixels");
  gen->add_option("--sigma", gs_sigma, "Fixation blur sigma in pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train)
      return cmd_train(tr_data, tr_out, tr_seed, tr_epochs, tr_batch, tr_lr, tr_clip, tr_split,
                       tr_val_split, tr_config);
    if (*eval) return cmd_eval(ev_data, ev_ckpt, ev_split, ev_metrics, ev_out, ev_clip);
    if (*predict) return cmd_predict(pr_ckpt, pr_image, pr_out, pr_clip);
    if (*overlay) return cmd_overlay(ov_ckpt, ov_image, ov_out, ov_clip);
    if (*count) return cmd_count_params(cp_config);
    if (*gen) return cmd_gen_synthetic(gs_n, gs_seed, gs_out, gs_split, gs_size, gs_sigma);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace salm2::cli
