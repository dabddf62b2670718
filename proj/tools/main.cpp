#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "marsrec/config.hpp"
#include "marsrec/eigencam.hpp"
#include "marsrec/evaluator.hpp"
#include "marsrec/plot.hpp"
#include "marsrec/png_io.hpp"
#include "marsrec/trainer.hpp"

namespace fs = std::filesystem;
using namespace marsrec;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  out << text;
}

struct DataBundle {
  PatchDataset ds;
  bool has_nav = false;
  NavSequence nav;
};

// dataset_path is either "synth:<instances>x<res>@<seed>" (hermetic,
// in-memory) or a directory holding patches/ and optionally nav/.
DataBundle load_data(const std::string& path) {
  DataBundle b;
  if (path.rfind("synth:", 0) == 0) {
    int n = 0, res = 0;
    unsigned long long seed = 1;
    const int got = std::sscanf(path.c_str(), "synth:%dx%d@%llu", &n, &res, &seed);
    if (got < 2)
      throw InputError("bad synthetic dataset spec '" + path +
                       "'; expected synth:<instances>x<res>[@<seed>]");
    b.ds = synth_landmarks(n, res, seed);
    return b;
  }
  const std::string patches = (fs::path(path) / "patches").string();
  b.ds = load_patch_dataset(fs::exists(patches) ? patches : path);
  const fs::path nav_dir = fs::path(path) / "nav";
  if (fs::exists(nav_dir / "manifest.json")) {
    b.nav = load_nav_sequence(nav_dir.string());
    b.has_nav = true;
  }
  return b;
}

std::vector<int> nav_ids_of(const DataBundle& b) {
  return b.has_nav ? nav_visible_ids(b.nav) : std::vector<int>{};
}

void print_report_table(const std::vector<RAReport>& rs) {
  std::printf("%-14s %-12s %10s %8s %10s %7s %8s\n", "protocol", "subset", "seed", "correct",
              "incorrect", "missed", "RA");
  for (const auto& r : rs)
    std::printf("%-14s %-12s %10" PRIu64 " %8" PRId64 " %10" PRId64 " %7" PRId64 " %8.2f\n",
                r.protocol.c_str(), r.transform_subset.c_str(), r.seed, r.correct, r.incorrect,
                r.missed, r.ra);
}

// Per-block per-epoch means of the raw regularizer terms, read back from
// the metrics CSV so resumed runs plot their full history.
void plot_mars_curves(const std::string& csv_path, const std::string& png_path) {
  std::ifstream in(csv_path);
  if (!in) throw InputError("cannot read " + csv_path);
  std::string header;
  std::getline(in, header);
  int num_blocks = 0;
  for (size_t pos = 0; (pos = header.find("_ch", pos)) != std::string::npos; ++pos) ++num_blocks;
  if (num_blocks == 0) return;

  std::vector<std::vector<double>> sum;  // [epoch-1][block]
  std::vector<int> count;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(std::stod(cell));
    if (cells.size() != static_cast<size_t>(3 + 2 * num_blocks))
      throw InputError(csv_path + ": malformed row");
    const int epoch = static_cast<int>(cells[1]);
    if (static_cast<int>(sum.size()) < epoch) {
      sum.resize(epoch, std::vector<double>(num_blocks, 0.0));
      count.resize(epoch, 0);
    }
    for (int b = 0; b < num_blocks; ++b) sum[epoch - 1][b] += cells[3 + 2 * b] + cells[4 + 2 * b];
    ++count[epoch - 1];
  }
  if (sum.empty()) return;

  std::vector<PlotSeries> series(num_blocks);
  for (int b = 0; b < num_blocks; ++b) {
    series[b].label = "block " + std::to_string(b + 1);
    for (size_t e = 0; e < sum.size(); ++e) {
      series[b].x.push_back(static_cast<double>(e + 1));
      series[b].y.push_back(count[e] ? sum[e][b] / count[e] : 0.0);
    }
  }
  write_line_chart(png_path, "mars loss per block", "epoch", "ch + sp", series);
}

Embedder resized_embedder(const std::shared_ptr<nn::Model<float>>& model, int model_res) {
  Embedder raw = make_embedder(model);
  return [raw, model_res](const Image& img, int id) {
    if (img.dim(0) == model_res && img.dim(1) == model_res) return raw(img, id);
    return raw(resize_bilinear(img, model_res, model_res), id);
  };
}

int cmd_train(const std::string& config_path, std::optional<uint64_t> seed,
              std::optional<std::string> out, bool resume, bool force) {
  RunConfig rc = run_config_from_json(nlohmann::json::parse(read_text(config_path)), true);
  if (seed) rc.train.seed = *seed;
  if (out) rc.out_dir = *out;
  rc.validate();

  fs::create_directories(rc.out_dir);
  const fs::path marker = fs::path(rc.out_dir) / "run_config.json";
  if (fs::exists(marker) && !resume && !force)
    throw InputError(rc.out_dir +
                     " already holds a run; pass --resume to continue or --force to overwrite");
  write_text(marker.string(), run_config_json(rc).dump(2) + "\n");

  DataBundle data = load_data(rc.train.dataset_path);
  const Split split =
      split_train_test(data.ds.num_instances(), nav_ids_of(data), rc.train.seed);
  Trainer trainer(rc.train, data.ds, split.train_ids);
  const Checkpoint final_ck = trainer.fit(rc.out_dir, resume);

  const std::string csv = (fs::path(rc.out_dir) / "metrics.csv").string();
  if (rc.train.model.mars_enabled)
    plot_mars_curves(csv, (fs::path(rc.out_dir) / "mars_loss_per_block.png").string());

  std::printf("trained %d epochs (%" PRId64 " steps) on %zu instances\n", final_ck.epoch,
              final_ck.step, split.train_ids.size());
  std::printf("artifacts in %s: checkpoint_final.ckpt, metrics.csv%s\n", rc.out_dir.c_str(),
              rc.train.model.mars_enabled ? ", mars_loss_per_block.png" : "");
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& protocol,
             const std::string& data_path, std::optional<uint64_t> seed,
             const std::string& subset, double threshold, std::optional<std::string> out) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const TrainConfig& tc = ck.config;
  DataBundle data = load_data(data_path.empty() ? tc.dataset_path : data_path);

  auto model = model_from_checkpoint(ck);
  const int model_res = tc.model.input_h;
  const Embedder embed = resized_embedder(model, model_res);
  const Split split =
      split_train_test(data.ds.num_instances(), nav_ids_of(data), tc.seed);
  const uint64_t eval_seed = seed ? *seed : tc.seed;
  const std::string out_dir = out ? *out : fs::path(ckpt_path).parent_path().string();
  if (!out_dir.empty()) fs::create_directories(out_dir);

  const auto with_subset = [&](RAReport r) {
    r.transform_subset = subset;
    return r;
  };
  const TransformRanges ranges = tc.transforms.restricted(subset);

  std::vector<RAReport> reports;
  if (protocol == "recall1") {
    const double v = recall_at_1(data.ds, split.test_ids, embed, ranges, eval_seed);
    RAReport r;
    r.protocol = "recall1";
    r.seed = eval_seed;
    const auto n = static_cast<int64_t>(split.test_ids.size());
    r.correct = static_cast<int64_t>(std::llround(v * n / 100.0));
    r.incorrect = n - r.correct;
    r.missed = 0;
    r.ra = v;
    reports.push_back(with_subset(r));
  } else if (protocol == "incremental") {
    reports.push_back(with_subset(
        incremental_recall(data.ds, split.test_ids, embed, ranges, threshold, eval_seed)));
  } else if (protocol == "navigation" || protocol == "lost-in-space") {
    if (!data.has_nav)
      throw InputError("protocol '" + protocol + "' needs a dataset with a nav/ sequence");
    reports.push_back(with_subset(
        protocol == "navigation"
            ? moon_navigation_eval(data.nav, embed, model_res, ranges, threshold, eval_seed)
            : lost_in_space_eval(data.nav, embed, model_res, ranges, threshold, eval_seed)));
  } else {  // ablation; protocol names are pre-validated by the parser
    reports = ablation_driver(tc.transforms, [&](const TransformRanges& r, const std::string&) {
      return incremental_recall(data.ds, split.test_ids, embed, r, threshold, eval_seed);
    });
  }

  for (const auto& r : reports) {
    const std::string name =
        protocol == "ablation" ? "ablation_" + r.transform_subset + ".json" : protocol + ".json";
    write_text((fs::path(out_dir) / name).string(), ra_report_json(r));
  }
  print_report_table(reports);
  return 0;
}

int cmd_synth(const std::string& out, int instances, int frames, int orbits, uint64_t seed,
              int res, int frame_res, bool force) {
  fs::create_directories(out);
  if (!fs::is_empty(out) && !force)
    throw InputError(out + " is not empty; pass --force to write into it");

  PatchDataset ds = synth_landmarks(instances, res, seed);
  write_patch_dataset(ds, (fs::path(out) / "patches").string());
  std::printf("wrote %d patch instances (%dx%d) to %s/patches\n", instances, res, res,
              out.c_str());
  if (frames > 0) {
    NavSequence nav = synth_navigation(ds, frames, orbits, frame_res, seed);
    write_nav_sequence(nav, (fs::path(out) / "nav").string());
    std::printf("wrote %d nav frames (%dx%d, %d orbits) to %s/nav\n", frames, frame_res,
                frame_res, orbits, out.c_str());
  }
  return 0;
}

int cmd_cam(const std::string& ckpt_path, const std::string& image_path,
            const std::string& image2_path, const std::vector<double>& rot,
            const std::vector<double>& tx, const std::vector<double>& ty,
            const std::vector<double>& brightness, bool apply, const std::string& out) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  auto model = model_from_checkpoint(ck);
  const int H = ck.config.model.input_h, W = ck.config.model.input_w;

  std::vector<Image> views(2);
  views[0] = resize_bilinear(read_png_gray(image_path), H, W);
  views[1] = image2_path.empty() ? views[0] : resize_bilinear(read_png_gray(image2_path), H, W);

  std::vector<TransformSpec> specs(2);
  for (int v = 0; v < 2; ++v) {
    specs[v].brightness_factor = brightness[v];
    specs[v].rotation_deg = rot[v];
    specs[v].translate_x = tx[v];
    specs[v].translate_y = ty[v];
    specs[v].ref_h = H;
    specs[v].ref_w = W;
    if (apply) views[v] = apply_transform(views[v], specs[v]);
  }

  fs::create_directories(out);
  const int num_blocks = ck.config.model.num_blocks;
  std::vector<std::vector<Tensor<float>>> heat(2);  // [view][block]
  for (int v = 0; v < 2; ++v) {
    Tensor<float> batch({1, 1, H, W});
    std::copy(views[v].vec().begin(), views[v].vec().end(), batch.data());
    auto fwd = model->forward(ad::leaf(batch, false), false);
    for (int b = 0; b < num_blocks; ++b) {
      auto normalized = pose_normalize(ad::constant(fwd.attention[b]->value), {specs[v]});
      const auto& m = normalized->value;
      Tensor<float> block({m.dim(1), m.dim(2), m.dim(3)});
      std::copy(m.vec().begin(), m.vec().end(), block.data());
      heat[v].push_back(eigencam(block, H, W));
    }
  }

  const int gap = 8;
  for (int b = 0; b < num_blocks; ++b) {
    Tensor<float> side({H, 2 * W + gap});
    side.fill(1.0f);
    for (int v = 0; v < 2; ++v)
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) side.at(r, v * (W + gap) + c) = heat[v][b].at(r, c);
    const std::string path = (fs::path(out) / ("cam_block" + std::to_string(b + 1) + ".png")).string();
    write_png_gray(path, side);
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}

int cmd_report(const std::string& dir, const std::vector<std::string>& files) {
  std::vector<RAReport> reports;
  std::vector<std::string> paths = files;
  if (!dir.empty()) {
    if (!fs::is_directory(dir)) throw InputError(dir + " is not a directory");
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".json") paths.push_back(e.path().string());
    std::sort(paths.begin(), paths.end());
  }
  for (const auto& p : paths) {
    try {
      reports.push_back(ra_report_parse(read_text(p)));
    } catch (const InputError&) {
      // Not every .json in a run dir is a report; configs are skipped.
    }
  }
  if (reports.empty()) throw InputError("no recognition reports found");
  print_report_table(reports);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crater landmark recognition: training, evaluation, and visualization"};
  app.require_subcommand(1);

  std::string config_path, out, data_path, ckpt_path, protocol, subset = "all";
  std::string image_path, image2_path, report_dir;
  std::vector<std::string> report_files;
  uint64_t seed = 0;
  bool have_seed = false, have_out = false, resume = false, force = false, apply = false;
  int instances = 60, frames = 0, orbits = 3, res = 64, frame_res = 256;
  double threshold = 0.9;
  std::vector<double> rot{0.0, 0.0}, tx{0.0, 0.0}, ty{0.0, 0.0}, brightness{1.0, 1.0};

  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  auto* out_opt = app.add_option("--out", out, "output directory");
  app.add_flag("--force", force, "overwrite existing outputs");
  app.fallthrough();

  auto* train = app.add_subcommand("train", "fit a model from a run config");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_flag("--resume", resume, "continue from the latest checkpoint in the output dir");

  auto* eval = app.add_subcommand("eval", "score a checkpoint under a protocol");
  eval->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  eval->add_option("--protocol", protocol, "evaluation protocol")
      ->required()
      ->check(CLI::IsMember(known_protocols()));
  eval->add_option("--data", data_path, "dataset root (default: the checkpoint's)");
  eval->add_option("--transform-subset", subset, "restrict query transforms")
      ->check(CLI::IsMember(known_subsets()));
  eval->add_option("--threshold", threshold, "match acceptance cosine threshold");

  auto* synth = app.add_subcommand("synth", "generate a synthetic crater dataset");
  synth->add_option("--instances", instances, "number of landmark instances");
  synth->add_option("--frames", frames, "navigation frames (0 = patches only)");
  synth->add_option("--orbits", orbits, "orbits in the navigation sequence");
  synth->add_option("--res", res, "patch resolution");
  synth->add_option("--frame-res", frame_res, "navigation frame resolution");

  auto* cam = app.add_subcommand("cam", "export per-block attention heatmap pairs");
  cam->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  cam->add_option("--image", image_path, "first view image")->required();
  cam->add_option("--image2", image2_path, "second view image (default: first)");
  cam->add_option("--rot", rot, "per-view rotation, degrees")->expected(2);
  cam->add_option("--tx", tx, "per-view x translation, pixels")->expected(2);
  cam->add_option("--ty", ty, "per-view y translation, pixels")->expected(2);
  cam->add_option("--brightness", brightness, "per-view brightness factor")->expected(2);
  cam->add_flag("--apply", apply, "apply the specs to the images to create the views");

  auto* report = app.add_subcommand("report", "tabulate recognition reports");
  report->add_option("--dir", report_dir, "directory of report JSONs");
  report->add_option("files", report_files, "report JSON files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }
  have_seed = seed_opt->count() > 0;
  have_out = out_opt->count() > 0;

  try {
    if (train->parsed())
      return cmd_train(config_path, have_seed ? std::optional(seed) : std::nullopt,
                       have_out ? std::optional(out) : std::nullopt, resume, force);
    if (eval->parsed())
      return cmd_eval(ckpt_path, protocol, data_path,
                      have_seed ? std::optional(seed) : std::nullopt, subset, threshold,
                      have_out ? std::optional(out) : std::nullopt);
    if (synth->parsed()) {
      if (!have_out) throw InputError("synth needs --out");
      return cmd_synth(out, instances, frames, orbits, have_seed ? seed : 1, res, frame_res,
                       force);
    }
    if (cam->parsed()) {
      if (!have_out) throw InputError("cam needs --out");
      return cmd_cam(ckpt_path, image_path, image2_path, rot, tx, ty, brightness, apply, out);
    }
    if (report->parsed()) return cmd_report(report_dir, report_files);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
