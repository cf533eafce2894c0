// lobekit command-line driver.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
// Progress and diagnostics go to stderr as one JSON object per line.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lobekit/lobekit.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lobekit;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void log_event(const std::string& event, json fields = json::object()) {
  fields["event"] = event;
  std::cerr << fields.dump() << std::endl;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig: return kExitConfig;
    case ErrorKind::NonFiniteLoss: return kExitNumeric;
    default: return kExitData;
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_history(const fs::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoFailure, "cannot write " + path.string());
  out << "epoch,mean_loss,wall_seconds\n";
  char line[128];
  for (const auto& r : history) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.3f\n", r.epoch, r.mean_loss, r.wall_seconds);
    out << line;
  }
}

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  int threads = 1;
};

RunConfig resolve_config(const Globals& g, const std::string& local_config) {
  const std::string path = !local_config.empty() ? local_config : g.config;
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  if (g.seed) {
    cfg.network.seed = *g.seed;
    cfg.train.seed = *g.seed;
    cfg.train.augment.seed = *g.seed;
    cfg.split.seed = *g.seed;
  }
  return cfg;
}

json region_json(const CropRegion& r, const Vec3& spacing, const Dims& dims) {
  return {{"lo", {{"z", r.lo[0]}, {"y", r.lo[1]}, {"x", r.lo[2]}}},
          {"hi", {{"z", r.hi[0]}, {"y", r.hi[1]}, {"x", r.hi[2]}}},
          {"spacing", {{"z", spacing[0]}, {"y", spacing[1]}, {"x", spacing[2]}}},
          {"input_dims", {{"z", dims.z}, {"y", dims.y}, {"x", dims.x}}}};
}

EpochCallback epoch_logger(std::string tag) {
  return [tag](const EpochRecord& r) {
    log_event("epoch", {{"run", tag}, {"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"wall_seconds", r.wall_seconds}});
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pulmonary lobe segmentation toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed overriding every seed in the run config");
  app.add_option("--config", g.config, "Run config JSON");
  app.add_option("--threads", g.threads, "Worker threads for matrix kernels")->check(CLI::PositiveNumber);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Crop a CT scan to the dilated convex hull of the lungs");
  std::string pre_in, pre_out, pre_hull, pre_region, pre_labels, pre_labels_out;
  pre->add_option("--in", pre_in, "Input scan (.mhd, HU)")->required();
  pre->add_option("--out", pre_out, "Cropped normalized volume (.mhd)")->required();
  pre->add_option("--hull", pre_hull, "Dilated hull mask on the input grid (.mhd)");
  pre->add_option("--region", pre_region, "Crop region JSON");
  pre->add_option("--labels", pre_labels, "Label mask to crop alongside the scan");
  pre->add_option("--labels-out", pre_labels_out, "Where to write the cropped labels");

  // phantom-gen
  auto* gen = app.add_subcommand("phantom-gen", "Write synthetic five-lobe phantoms");
  std::size_t gen_n = 10;
  std::vector<int> gen_dims{32, 64, 64};
  std::string gen_out;
  gen->add_option("--n", gen_n, "Number of phantoms")->check(CLI::PositiveNumber);
  gen->add_option("--dims", gen_dims, "Grid size z y x")->expected(3);
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* trn = app.add_subcommand("train", "Train LobeNet on a dataset directory");
  std::string trn_config, trn_data, trn_out, trn_history;
  trn->add_option("--config", trn_config, "Run config JSON");
  trn->add_option("--data", trn_data, "Dataset directory with manifest.json")->required();
  trn->add_option("--out", trn_out, "Checkpoint path")->required();
  trn->add_option("--history", trn_history, "Loss history CSV (default: <out>.history.csv)");

  // infer
  auto* inf = app.add_subcommand("infer", "Segment a scan with a trained checkpoint");
  std::string inf_ckpt, inf_in, inf_out;
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint")->required();
  inf->add_option("--in", inf_in, "Input scan (.mhd, HU)")->required();
  inf->add_option("--out", inf_out, "Predicted label mask (.mhd)")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Per-lobe dice of a prediction against ground truth");
  std::string ev_pred, ev_gt, ev_out;
  ev->add_option("--pred", ev_pred, "Predicted labels (.mhd)")->required();
  ev->add_option("--gt", ev_gt, "Ground-truth labels (.mhd)")->required();
  ev->add_option("--out", ev_out, "Report JSON");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train and compare DL, DL+FL and DL+FL+CH");
  std::string abl_data, abl_config, abl_out;
  abl->add_option("--data", abl_data, "Dataset directory with manifest.json")->required();
  abl->add_option("--config", abl_config, "Base run config JSON");
  abl->add_option("--out", abl_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  if (*seed_opt) g.seed = seed_value;
#ifdef _OPENMP
  omp_set_num_threads(g.threads);
#endif
  Eigen::setNbThreads(g.threads);

  try {
    if (*pre) {
      const RunConfig cfg = resolve_config(g, "");
      const Volume hu = read_volume(pre_in);
      const LungCrop lc = lung_crop_pipeline(hu, cfg.preprocess);
      write_metaimage(lc.cropped, pre_out);
      if (!pre_hull.empty()) write_metaimage(lc.hull, pre_hull);
      if (!pre_region.empty()) write_json(pre_region, region_json(lc.region, hu.spacing(), hu.dims()));
      if (!pre_labels.empty()) {
        const LabelMask labels = read_label_mask(pre_labels);
        if (!(labels.dims() == hu.dims())) fail(ErrorKind::ShapeMismatch, "labels and scan dims differ");
        write_metaimage(crop(labels, lc.region), pre_labels_out.empty() ? fs::path(pre_out).replace_extension(".labels.mhd")
                                                                        : fs::path(pre_labels_out));
      }
      log_event("preprocess", {{"threshold", lc.threshold}, {"region", region_json(lc.region, hu.spacing(), hu.dims())}});
    } else if (*gen) {
      PhantomConfig pc;
      pc.dims = {gen_dims[0], gen_dims[1], gen_dims[2]};
      const std::uint64_t seed = g.seed.value_or(0);
      const auto samples = generate_phantom_set(gen_n, pc, seed);
      json extra{{"generator", "lobekit phantom"}, {"seed", seed}, {"dims", gen_dims}};
      extra["phantom_seeds"] = json::array();
      for (std::size_t k = 0; k < gen_n; ++k) extra["phantom_seeds"].push_back(phantom_seed(seed, k));
      write_dataset(gen_out, samples, extra);
      log_event("phantom-gen", {{"count", gen_n}, {"out", gen_out}});
    } else if (*trn) {
      const RunConfig cfg = resolve_config(g, trn_config);
      const auto raw = read_dataset(trn_data);
      std::vector<TrainingSample> samples;
      for (const auto& r : raw) samples.push_back(prepare_sample(r, cfg.hull_crop(), cfg.preprocess).sample);
      log_event("train_start", {{"samples", samples.size()}, {"config", to_json(cfg)}});
      TrainResult result = train(samples, cfg.train, cfg.network, epoch_logger(to_string(cfg.mode)));
      save_checkpoint(result.net, trn_out, {{"hull_crop", cfg.hull_crop()}, {"mode", to_string(cfg.mode)}, {"run_config", to_json(cfg)}});
      write_history(trn_history.empty() ? fs::path(trn_out + ".history.csv") : fs::path(trn_history), result.history);
      log_event("train_done", {{"out", trn_out}, {"final_loss", result.history.back().mean_loss}, {"order_hash", result.order_hash}});
    } else if (*inf) {
      Checkpoint ck = load_checkpoint(inf_ckpt);
      const bool hull_crop = ck.metadata.value("hull_crop", false);
      RunConfig cfg;
      if (ck.metadata.contains("run_config")) cfg = parse_run_config(ck.metadata["run_config"]);
      const Volume hu = read_volume(inf_in);
      const LabelMask pred = segment(ck.net, hu, hull_crop, cfg.preprocess);
      write_metaimage(pred, inf_out);
      log_event("infer", {{"out", inf_out}, {"hull_crop", hull_crop}});
    } else if (*ev) {
      const LabelMask pred = read_label_mask(ev_pred);
      const LabelMask gt = read_label_mask(ev_gt);
      const DiceReport report = dice_average(pred, gt);
      if (!ev_out.empty()) write_json(ev_out, to_json(report));
      std::cout << dice_table({{"pred", report}});
    } else if (*abl) {
      const RunConfig cfg = resolve_config(g, abl_config);
      const auto data = read_dataset(abl_data);
      const AblationReport report = run_ablation(data, cfg, [](AblationMode m, const EpochRecord& r) {
        log_event("epoch", {{"run", to_string(m)}, {"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"wall_seconds", r.wall_seconds}});
      });
      fs::create_directories(abl_out);
      json j = to_json(report);
      j["base_config"] = to_json(cfg);
      write_json(fs::path(abl_out) / "report.json", j);
      for (const auto& arm : report.arms) {
        std::string name = to_string(arm.mode);
        std::replace(name.begin(), name.end(), '+', '_');
        write_history(fs::path(abl_out) / (name + ".history.csv"), arm.history);
      }
      const std::string table = ablation_table(report);
      std::ofstream(fs::path(abl_out) / "table.txt") << table;
      std::cout << table;
    }
  } catch (const Error& e) {
    log_event("error", {{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}});
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    log_event("error", {{"kind", "Internal"}, {"message", e.what()}});
    return kExitData;
  }
  return 0;
}
