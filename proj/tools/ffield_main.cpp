// ffield command-line front end. Links only the C interface.
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>

#include "ffield/ffield.h"

namespace {

struct Failure {
  std::string message;
};

void Check(ff_status status, const std::string& what) {
  if (status != FF_OK) {
    throw Failure{what + ": " + ff_status_name(status) + ": " + ff_last_error()};
  }
}

std::string ReadText(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure{"cannot read " + path};
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<double> ParseNumbers(std::string text, const std::string& what) {
  for (char& c : text) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(text);
  std::vector<double> out;
  std::string token;
  while (in >> token) {
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') throw Failure{what + ": not a number: " + token};
    out.push_back(v);
  }
  return out;
}

// A pose file, or the 16 values inline.
std::vector<double> LoadPose(const std::string& arg) {
  const bool file = std::filesystem::exists(arg);
  const std::vector<double> v = ParseNumbers(file ? ReadText(arg) : arg, "pose");
  if (v.size() != 16) {
    throw Failure{"pose needs 16 values (row-major camera-to-world), got " + std::to_string(v.size())};
  }
  return v;
}

std::unique_ptr<ff_intrinsics> LoadIntrinsics(const std::string& path) {
  if (path.empty()) return nullptr;
  const std::vector<double> v = ParseNumbers(ReadText(path), path);
  if (v.size() != 6) throw Failure{path + ": expected fx fy cx cy width height"};
  return std::make_unique<ff_intrinsics>(
      ff_intrinsics{v[0], v[1], v[2], v[3], static_cast<int>(v[4]), static_cast<int>(v[5])});
}

struct Model {
  ff_model* handle = nullptr;
  explicit Model(const std::string& path) { Check(ff_model_load(path.c_str(), &handle), path); }
  ~Model() { ff_model_free(handle); }
};

struct Embeddings {
  ff_embeddings* handle = nullptr;
  ~Embeddings() { ff_embeddings_free(handle); }
};

struct OwnedString {
  char* s = nullptr;
  ~OwnedString() { ff_string_free(s); }
};

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Failure{"cannot write " + path};
  out << text;
}

std::string DefaultEmbeddings(const std::string& checkpoint) {
  return (std::filesystem::path(checkpoint).parent_path() / "embeddings.txt").string();
}

// Dictionary rows for the prompts, or the whole dictionary when none given.
void LoadPrompts(const std::string& dictionary_path, const std::string& prompts, Embeddings& out) {
  Embeddings dictionary;
  Check(ff_embeddings_load(dictionary_path.c_str(), &dictionary.handle), dictionary_path);
  if (prompts.empty()) {
    std::swap(out.handle, dictionary.handle);
    return;
  }
  Check(ff_embeddings_select(dictionary.handle, prompts.c_str(), &out.handle), "prompts");
}

void ProgressPrinter(const ff_step_stats* s, void* user) {
  const int every = *static_cast<int*>(user);
  if (every > 0 && (s->iteration % every == 0 || s->iteration == 1)) {
    std::printf("iter %6lld  l_rgb %.6f  l_d %.6f  l_f %.6f  total %.6f  %.1f ms\n",
                static_cast<long long>(s->iteration), s->loss_rgb, s->loss_depth, s->loss_feature,
                s->loss_total, s->milliseconds);
    std::fflush(stdout);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural feature fields: train, render and segment open-vocabulary scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ff_version()));

  // make-synthetic
  ff_synthetic_options syn;
  ff_synthetic_options_default(&syn);
  std::string syn_out;
  bool syn_no_depth = false;
  auto* make = app.add_subcommand("make-synthetic", "Generate the labeled synthetic room scene");
  make->add_option("--out", syn_out, "Output scene directory")->required();
  make->add_option("--train-views", syn.train_views, "Training views")->capture_default_str();
  make->add_option("--heldout-views", syn.heldout_views, "Held-out views")->capture_default_str();
  make->add_option("--width", syn.width, "Image width")->capture_default_str();
  make->add_option("--height", syn.height, "Image height")->capture_default_str();
  make->add_option("--feature-dim", syn.feature_dim, "Feature dimension D")->capture_default_str();
  make->add_option("--feature-noise", syn.feature_noise, "Gaussian feature noise sigma")->capture_default_str();
  make->add_option("--feature-downsample", syn.feature_downsample, "Feature map stride")->capture_default_str();
  make->add_flag("--correlated", syn.correlated, "Correlated instead of orthonormal label embeddings");
  make->add_option("--correlation", syn.correlation, "Pairwise cosine for --correlated")->capture_default_str();
  make->add_flag("--no-depth", syn_no_depth, "Omit depth images");
  make->add_option("--seed", syn.seed, "Random seed")->capture_default_str();

  // train
  ff_train_options tr;
  ff_train_options_default(&tr);
  std::string tr_scene, tr_out, tr_log;
  int tr_print = 100;
  bool tr_no_stratified = false, tr_bilinear = false;
  auto* train = app.add_subcommand("train", "Fit a feature field to a scene directory");
  train->add_option("--scene", tr_scene, "Scene directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", tr_out, "Checkpoint path (default <scene>/model.ffld)");
  train->add_option("--log", tr_log, "Metrics log (default <checkpoint>.log.tsv)");
  train->add_option("--iterations", tr.iterations, "Optimizer steps")->capture_default_str();
  train->add_option("--batch-rays", tr.batch_rays, "Rays per step")->capture_default_str();
  train->add_option("--samples", tr.samples, "Samples per ray")->capture_default_str();
  train->add_option("--micro-batch", tr.micro_batch_rays, "Rays per forward/backward pass")->capture_default_str();
  train->add_option("--lr", tr.learning_rate, "Adam learning rate")->capture_default_str();
  train->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
  train->add_option("--snapshot-interval", tr.snapshot_interval, "Checkpoint every N steps")->capture_default_str();
  train->add_option("--lambda-depth", tr.lambda_depth, "Depth loss weight")->capture_default_str();
  train->add_option("--lambda-feature", tr.lambda_feature, "Feature loss weight")->capture_default_str();
  train->add_option("--levels", tr.hash_levels, "Hash grid levels")->capture_default_str();
  train->add_option("--table-log2", tr.table_size_log2, "log2 hash table rows per level")->capture_default_str();
  train->add_option("--base-resolution", tr.base_resolution, "Coarsest grid resolution")->capture_default_str();
  train->add_option("--level-scale", tr.per_level_scale, "Resolution growth per level")->capture_default_str();
  train->add_flag("--no-stratified", tr_no_stratified, "Bin midpoints instead of jittered samples");
  train->add_flag("--bilinear-features", tr_bilinear, "Bilinear feature lookup on coarse feature maps");
  train->add_option("--print-every", tr_print, "Progress line interval (0: quiet)")->capture_default_str();

  // render
  std::string r_ckpt, r_pose, r_out, r_intr;
  ff_render_options ro;
  ff_render_options_default(&ro);
  auto* render = app.add_subcommand("render", "Render color, depth and opacity for a pose");
  render->add_option("--checkpoint", r_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  render->add_option("--pose", r_pose, "Pose file or 16 comma-separated values")->required();
  render->add_option("--out", r_out, "Output stem: <stem>.color.png, .depth.png, .opacity.png")->required();
  render->add_option("--intrinsics", r_intr, "Intrinsics file (default: from the checkpoint)");
  render->add_option("--width", ro.width, "Output width (0: native)")->capture_default_str();
  render->add_option("--height", ro.height, "Output height (0: native)")->capture_default_str();
  render->add_option("--samples", ro.samples, "Samples per ray")->capture_default_str();

  // segment
  std::string s_ckpt, s_pose, s_out, s_intr, s_prompts, s_emb, s_points;
  ff_segment_options so;
  ff_segment_options_default(&so);
  bool s_cosine = false, s_scores = false;
  auto* segment = app.add_subcommand("segment", "Open-vocabulary segmentation of a view or a point file");
  segment->add_option("--checkpoint", s_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  segment->add_option("--prompts", s_prompts, "Comma-separated labels (default: whole dictionary)");
  segment->add_option("--embeddings", s_emb, "Label dictionary (default: embeddings.txt beside the checkpoint)");
  auto* s_pose_opt = segment->add_option("--pose", s_pose, "Pose file or 16 comma-separated values");
  auto* s_points_opt = segment->add_option("--points", s_points, "Point file (x y z [label]) to classify")
                           ->check(CLI::ExistingFile);
  s_pose_opt->excludes(s_points_opt);
  segment->add_option("--out", s_out, "Output stem (view) or point file (points)")->required();
  segment->add_option("--intrinsics", s_intr, "Intrinsics file (default: from the checkpoint)");
  segment->add_option("--width", so.render.width, "Output width (0: native)")->capture_default_str();
  segment->add_option("--height", so.render.height, "Output height (0: native)")->capture_default_str();
  segment->add_option("--samples", so.render.samples, "Samples per ray")->capture_default_str();
  segment->add_option("--opacity-threshold", so.opacity_threshold, "Background below this opacity")->capture_default_str();
  segment->add_flag("--cosine", s_cosine, "Normalize features and embeddings before the dot product");
  segment->add_flag("--scores", s_scores, "Also write <stem>.scores.bin (per-class scores)");

  // eval
  std::string e_pred, e_ref, e_pred_pts, e_ref_pts, e_json;
  bool e_macro = false;
  auto* eval = app.add_subcommand("eval", "mIoU / mAcc of predicted label maps or point labels");
  auto* e_pd = eval->add_option("--pred-dir", e_pred, "Predicted label maps")->check(CLI::ExistingDirectory);
  auto* e_rd = eval->add_option("--ref-dir", e_ref, "Reference label maps")->check(CLI::ExistingDirectory);
  auto* e_pp = eval->add_option("--pred-points", e_pred_pts, "Predicted point file")->check(CLI::ExistingFile);
  auto* e_rp = eval->add_option("--ref-points", e_ref_pts, "Reference point file")->check(CLI::ExistingFile);
  e_pd->needs(e_rd);
  e_rd->needs(e_pd);
  e_pp->needs(e_rp);
  e_rp->needs(e_pp);
  e_pd->excludes(e_pp);
  eval->add_flag("--macro", e_macro, "Average per-map scores instead of pooling counts");
  eval->add_option("--json", e_json, "Also write the JSON score record here");

  // benchmark
  std::string b_ckpt, b_json;
  ff_benchmark_options bo;
  ff_benchmark_options_default(&bo);
  auto* bench = app.add_subcommand("benchmark", "Point-query and ray-query throughput and latency");
  bench->add_option("--checkpoint", b_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  bench->add_option("--points", bo.point_batch, "3D queries per timed call")->capture_default_str();
  bench->add_option("--width", bo.width, "Frame width for ray queries")->capture_default_str();
  bench->add_option("--height", bo.height, "Frame height for ray queries")->capture_default_str();
  bench->add_option("--samples", bo.samples, "Samples per ray")->capture_default_str();
  bench->add_option("--repeats", bo.repeats, "Timed repetitions")->capture_default_str();
  bench->add_option("--seed", bo.seed, "Seed for the query positions")->capture_default_str();
  bench->add_option("--json", b_json, "Also write the JSON report here");

  // serve
  ff_server_options sv;
  ff_server_options_default(&sv);
  std::string sv_host = sv.host;
  auto* serve = app.add_subcommand("serve", "HTTP endpoint for sessions, rendering and prompts");
  serve->add_option("--host", sv_host, "Bind address")->capture_default_str();
  serve->add_option("--port", sv.port, "Port (0: any free port)")->capture_default_str();
  serve->add_option("--width", sv.default_width, "Default render width")->capture_default_str();
  serve->add_option("--height", sv.default_height, "Default render height")->capture_default_str();
  serve->add_option("--samples", sv.default_samples, "Default samples per ray")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make) {
      syn.write_depth = syn_no_depth ? 0 : 1;
      Check(ff_make_synthetic(syn_out.c_str(), &syn), "make-synthetic");
      std::printf("wrote scene to %s\n", syn_out.c_str());
    } else if (*train) {
      if (tr_out.empty()) tr_out = (std::filesystem::path(tr_scene) / "model.ffld").string();
      if (tr_log.empty()) tr_log = tr_out + ".log.tsv";
      tr.stratified = tr_no_stratified ? 0 : 1;
      tr.bilinear_features = tr_bilinear ? 1 : 0;
      ff_step_stats last{};
      Check(ff_train(tr_scene.c_str(), tr_out.c_str(), tr_log.c_str(), &tr, ProgressPrinter,
                     &tr_print, &last),
            "train");
      std::printf("done: %lld iterations, total loss %.6f\ncheckpoint %s\nlog %s\n",
                  static_cast<long long>(last.iteration), last.loss_total, tr_out.c_str(),
                  tr_log.c_str());
    } else if (*render) {
      Model model(r_ckpt);
      const auto pose = LoadPose(r_pose);
      const auto k = LoadIntrinsics(r_intr);
      Check(ff_render(model.handle, pose.data(), k.get(), &ro, r_out.c_str()), "render");
      std::printf("wrote %s.color.png, %s.depth.png, %s.opacity.png\n", r_out.c_str(),
                  r_out.c_str(), r_out.c_str());
    } else if (*segment) {
      if (s_pose.empty() == s_points.empty()) throw Failure{"segment needs exactly one of --pose or --points"};
      Model model(s_ckpt);
      Embeddings prompts;
      LoadPrompts(s_emb.empty() ? DefaultEmbeddings(s_ckpt) : s_emb, s_prompts, prompts);
      so.cosine = s_cosine ? 1 : 0;
      if (!s_points.empty()) {
        std::size_t outside = 0;
        Check(ff_segment_points(model.handle, s_points.c_str(), prompts.handle, so.cosine,
                                s_out.c_str(), &outside),
              "segment");
        std::printf("wrote %s (%zu points outside the scene bounds)\n", s_out.c_str(), outside);
      } else {
        so.write_scores = s_scores ? 1 : 0;
        const auto pose = LoadPose(s_pose);
        const auto k = LoadIntrinsics(s_intr);
        Check(ff_segment(model.handle, pose.data(), k.get(), prompts.handle, &so, s_out.c_str()),
              "segment");
        std::printf("wrote %s.png and %s.labels.txt\n", s_out.c_str(), s_out.c_str());
      }
    } else if (*eval) {
      ff_eval_result result{};
      OwnedString table, json;
      if (!e_pred.empty()) {
        Check(ff_eval_maps(e_pred.c_str(), e_ref.c_str(), e_macro ? 1 : 0, &result, &table.s, &json.s),
              "eval");
      } else if (!e_pred_pts.empty()) {
        Check(ff_eval_points(e_pred_pts.c_str(), e_ref_pts.c_str(), &result, &table.s, &json.s),
              "eval");
      } else {
        throw Failure{"eval needs --pred-dir/--ref-dir or --pred-points/--ref-points"};
      }
      std::printf("%s", table.s);
      if (!e_json.empty()) WriteText(e_json, json.s);
    } else if (*bench) {
      Model model(b_ckpt);
      ff_benchmark_result result{};
      OwnedString report, json;
      Check(ff_benchmark(model.handle, &bo, &result, &report.s, &json.s), "benchmark");
      std::printf("%s", report.s);
      if (!b_json.empty()) WriteText(b_json, json.s);
    } else if (*serve) {
      // Signals are taken synchronously by this thread; server threads
      // inherit the blocked mask.
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);
      sv.host = sv_host.c_str();
      ff_server* server = nullptr;
      Check(ff_server_start(&sv, &server), "serve");
      std::printf("listening on http://%s:%d\n", sv_host.c_str(), ff_server_port(server));
      std::fflush(stdout);
      int sig = 0;
      sigwait(&set, &sig);
      ff_server_stop(server);
      ff_server_free(server);
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return 1;
  }
  return 0;
}
