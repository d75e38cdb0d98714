// Command-line front end: synthetic dataset generation, training,
// evaluation, and appearance-conditioned rendering.
//
// Exit codes: 0 ok, 1 internal failure, 2 io, 3 missing artifact,
// 4 bad input.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hanerf/errors.hpp"
#include "hanerf/eval.hpp"
#include "hanerf/hashing.hpp"
#include "hanerf/image.hpp"
#include "hanerf/renderer.hpp"
#include "hanerf/scene.hpp"
#include "hanerf/trainer.hpp"

namespace {

using namespace hanerf;
using nlohmann::json;

json file_stamp(const std::string& path) {
  return json{{"path", path}, {"sha256", sha256_file(path)}};
}

void write_run_json(const std::string& dir, const json& j) {
  std::error_code ec;
  std::filesystem::create_directories(dir.empty() ? "." : dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  std::string path = (dir.empty() ? "." : dir) + std::string("/run.json");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

CameraPose pose_from_values(const std::vector<double>& v) {
  if (v.size() != 16)
    throw InputError("a pose needs 16 row-major camera-to-world values, got " +
                     std::to_string(v.size()));
  const double kTol = 1e-6;
  if (std::abs(v[12]) > kTol || std::abs(v[13]) > kTol ||
      std::abs(v[14]) > kTol || std::abs(v[15] - 1.0) > kTol)
    throw InputError("pose bottom row must be 0 0 0 1");
  CameraPose pose;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      pose.rotation.m[r * 3 + c] = v[static_cast<size_t>(r * 4 + c)];
  pose.translation = {v[3], v[7], v[11]};
  validate(pose, 1e-4);
  return pose;
}

CameraPose pose_from_string(const std::string& text) {
  std::string s = text;
  for (char& c : s)
    if (c == ',' || c == ';') c = ' ';
  std::istringstream in(s);
  std::vector<double> v;
  double x;
  while (in >> x) v.push_back(x);
  if (!in.eof()) throw InputError("malformed pose: '" + text + "'");
  return pose_from_values(v);
}

const FrameRecord& frame_by_id(const DatasetManifest& man, int64_t id) {
  for (const FrameRecord& f : man.frames)
    if (f.id == id) return f;
  throw InputError("frame id " + std::to_string(id) + " is not in the manifest");
}

// Frame selector: "train", "test", "all", or a comma-separated id list.
std::vector<const FrameRecord*> select_frames(const DatasetManifest& man,
                                              const std::string& spec) {
  std::vector<const FrameRecord*> out;
  if (spec == "train" || spec == "test") {
    out = man.split(spec);
  } else if (spec == "all") {
    for (const FrameRecord& f : man.frames) out.push_back(&f);
  } else {
    std::string s = spec;
    for (char& c : s)
      if (c == ',') c = ' ';
    std::istringstream in(s);
    int64_t id;
    while (in >> id) out.push_back(&frame_by_id(man, id));
    if (!in.eof() || out.empty())
      throw InputError("malformed frame selector: '" + spec + "'");
  }
  std::sort(out.begin(), out.end(),
            [](const FrameRecord* a, const FrameRecord* b) {
              return a->id < b->id;
            });
  return out;
}

// Appearance vector for rendering: encoded example image when the mode has
// a live encoder, otherwise the zero vector the model was trained with.
Tensor<float> appearance_for(const LoadedRun& run,
                             const std::string& example_path,
                             json* provenance) {
  const TrainConfig& cfg = run.header.config;
  if (!uses_appearance(cfg.mode) || example_path.empty()) {
    if (!example_path.empty())
      std::fprintf(stderr,
                   "note: mode %s ignores appearance images; "
                   "using the zero vector\n",
                   mode_name(cfg.mode).c_str());
    if (provenance) (*provenance)["appearance"] = "zero";
    return Tensor<float>::zeros({cfg.field.appearance_dim});
  }
  if (provenance) (*provenance)["appearance"] = file_stamp(example_path);
  return run.models.encoder.encode_value(read_png_rgb(example_path));
}

Tensor<float> render_once(const LoadedRun& run, const CameraPose& pose,
                          const Tensor<float>& appearance, uint64_t seed) {
  const TrainConfig& cfg = run.header.config;
  Rng rng(seed);
  return render_image(run.models.field, run.header.intrinsics, pose,
                      appearance, cfg.k, rng, cfg.tnear, cfg.tfar);
}

struct PoseArgs {
  std::string pose_text;
  int64_t pose_frame = -1;
  std::string dataset;

  void attach(CLI::App* cmd, bool list_variant = false) {
    if (!list_variant) {
      cmd->add_option("--pose", pose_text,
                      "16 row-major camera-to-world values");
      cmd->add_option("--pose-frame", pose_frame,
                      "frame id resolved through --dataset");
    }
    cmd->add_option("--dataset", dataset, "manifest path for frame lookups");
  }

  CameraPose resolve(json* provenance) const {
    if (!pose_text.empty() && pose_frame >= 0)
      throw InputError("give either --pose or --pose-frame, not both");
    if (!pose_text.empty()) {
      if (provenance) (*provenance)["pose"] = pose_text;
      return pose_from_string(pose_text);
    }
    if (pose_frame >= 0) {
      if (dataset.empty())
        throw InputError("--pose-frame needs --dataset");
      if (provenance) {
        (*provenance)["pose_frame"] = pose_frame;
        (*provenance)["dataset"] = file_stamp(dataset);
      }
      return frame_by_id(load_manifest(dataset), pose_frame).pose;
    }
    throw InputError("no pose given (use --pose or --pose-frame)");
  }
};

int run_cli(int argc, char** argv) {
  CLI::App app{"Appearance-hallucinating radiance field toolkit"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand(
      "synth", "generate a synthetic multi-view dataset with perturbations");
  uint64_t scene_seed = 1;
  int n_train = 100, n_test = 8, size = 64;
  double coverage = -1;
  std::string perturb = "both", synth_out;
  synth->add_option("--scene-seed", scene_seed, "scene and dataset seed");
  synth->add_option("--n-train", n_train, "training images");
  synth->add_option("--n-test", n_test, "held-out test images");
  synth->add_option("--size", size, "square image side in pixels");
  synth->add_option("--coverage", coverage,
                    "fixed occluder coverage fraction (default: 0.10-0.30)");
  synth->add_option("--perturb", perturb,
                    "perturbations on training images")
      ->check(CLI::IsMember({"both", "color", "occlusion", "none"}));
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->callback([&] {
    Rng scene_rng(scene_seed);
    SyntheticScene scene = random_scene(scene_rng);
    PerturbationSpec spec;
    spec.color = perturb == "both" || perturb == "color";
    spec.occluders = perturb == "both" || perturb == "occlusion";
    if (coverage >= 0) spec.min_coverage = spec.max_coverage = coverage;
    generate_dataset(scene, n_train, n_test, size, size, spec, scene_seed,
                     synth_out);
    std::string manifest = synth_out + "/manifest.json";
    write_run_json(synth_out,
                   {{"command", "synth"},
                    {"options",
                     {{"scene_seed", scene_seed},
                      {"n_train", n_train},
                      {"n_test", n_test},
                      {"size", size},
                      {"coverage", coverage},
                      {"perturb", perturb}}},
                    {"outputs", {{"manifest", file_stamp(manifest)}}}});
    std::printf("%s\n", manifest.c_str());
  });

  // ---- train ----
  auto* tr = app.add_subcommand("train", "optimize a model on a dataset");
  std::string tr_config, tr_dataset, tr_out, tr_mode, tr_resume;
  int64_t tr_iters = -1;
  uint64_t tr_seed = 0;
  double tr_lambda = -1, tr_lambda_o = -1, tr_lambda_o_warm = -1;
  int tr_k = -1, tr_batch = -1, tr_grid = -1;
  tr->add_option("--config", tr_config, "JSON config file (flags override)");
  tr->add_option("--dataset", tr_dataset, "manifest path");
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--mode", tr_mode, "nerf | nerf-a | nerf-t | ha-nerf");
  tr->add_option("--iterations", tr_iters, "training iterations");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--lambda", tr_lambda, "view-consistency weight");
  tr->add_option("--lambda-o", tr_lambda_o, "visibility regularizer weight");
  tr->add_option("--lambda-o-warm", tr_lambda_o_warm,
                 "initial regularizer weight; anneals down to --lambda-o");
  tr->add_option("--k", tr_k, "samples per ray");
  tr->add_option("--ray-batch", tr_batch, "rays per iteration");
  tr->add_option("--grid-s", tr_grid, "hallucination grid side");
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");
  tr->callback([&] {
    json cfg_json = json::parse(to_json_string(TrainConfig{}));
    json provenance = json::object();
    if (!tr_config.empty()) {
      std::ifstream in(tr_config);
      if (!in) throw ArtifactError("config file not found: " + tr_config);
      json file;
      try {
        in >> file;
      } catch (const json::exception& e) {
        throw FormatError("config parse failure: " + std::string(e.what()));
      }
      if (file.contains("dataset") && tr_dataset.empty())
        tr_dataset = file.at("dataset");
      if (file.contains("out") && tr_out.empty()) tr_out = file.at("out");
      file.erase("dataset");
      file.erase("out");
      cfg_json.merge_patch(file);
      provenance["config_file"] = file_stamp(tr_config);
    }
    if (!tr_mode.empty()) cfg_json["mode"] = tr_mode;
    if (tr_iters >= 0) cfg_json["iterations"] = tr_iters;
    if (tr->count("--seed")) cfg_json["seed"] = tr_seed;
    if (tr_lambda >= 0) cfg_json["lambda"] = tr_lambda;
    if (tr_lambda_o >= 0) cfg_json["lambda_o"] = tr_lambda_o;
    if (tr_lambda_o_warm >= 0) cfg_json["lambda_o_warm"] = tr_lambda_o_warm;
    if (tr_k >= 0) cfg_json["k"] = tr_k;
    if (tr_batch >= 0) cfg_json["ray_batch"] = tr_batch;
    if (tr_grid >= 0) cfg_json["grid_s"] = tr_grid;
    TrainConfig cfg = train_config_from_json(cfg_json.dump());
    if (tr_dataset.empty())
      throw InputError("no dataset given (flag --dataset or config key)");
    if (tr_out.empty())
      throw InputError("no output directory given (flag --out or config key)");
    provenance["dataset"] = file_stamp(tr_dataset);
    if (!tr_resume.empty()) provenance["resume"] = file_stamp(tr_resume);
    TrainResult res = train(tr_dataset, cfg, tr_out, tr_resume);
    write_run_json(tr_out, {{"command", "train"},
                            {"config", json::parse(to_json_string(cfg))},
                            {"inputs", provenance},
                            {"outputs",
                             {{"final_checkpoint", res.final_checkpoint},
                              {"metrics_csv", res.metrics_csv}}}});
    std::printf("%s\n", res.final_checkpoint.c_str());
    std::printf("iterations %lld  final loss %.6g\n",
                static_cast<long long>(res.iterations_run), res.final_total);
  });

  // ---- eval ----
  auto* ev = app.add_subcommand(
      "eval", "render all test views and score them against ground truth");
  std::string ev_ckpt, ev_dataset, ev_out;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--dataset", ev_dataset, "manifest path")->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->callback([&] {
    EvalReport rep = evaluate_checkpoint(ev_ckpt, ev_dataset, ev_out);
    write_run_json(ev_out, {{"command", "eval"},
                            {"inputs",
                             {{"ckpt", file_stamp(ev_ckpt)},
                              {"dataset", file_stamp(ev_dataset)}}},
                            {"outputs", {{"report", ev_out + "/report.json"}}}});
    std::printf("mode %s  clean PSNR %.3f dB  clean SSIM %.4f  "
                "transfer PSNR %.3f dB",
                rep.mode.c_str(), rep.mean_clean_psnr(), rep.mean_clean_ssim(),
                rep.mean_transfer_psnr());
    if (!rep.visibility.empty())
      std::printf("  visibility IoU %.3f", rep.median_visibility_iou());
    std::printf("\n");
  });

  // ---- render ----
  auto* rd = app.add_subcommand("render",
                                "render one view from a trained checkpoint");
  std::string rd_ckpt, rd_example, rd_out;
  uint64_t rd_seed = 1234;
  PoseArgs rd_pose;
  rd->add_option("--ckpt", rd_ckpt, "checkpoint path")->required();
  rd_pose.attach(rd);
  rd->add_option("--appearance-image", rd_example,
                 "example image to condition on");
  rd->add_option("--seed", rd_seed, "quadrature jitter seed");
  rd->add_option("--out", rd_out, "output PNG path")->required();
  rd->callback([&] {
    LoadedRun run(rd_ckpt);
    json inputs = {{"ckpt", file_stamp(rd_ckpt)}};
    CameraPose pose = rd_pose.resolve(&inputs);
    Tensor<float> app_vec = appearance_for(run, rd_example, &inputs);
    Tensor<float> img = render_once(run, pose, app_vec, rd_seed);
    write_png_rgb(rd_out, img);
    write_run_json(parent_dir(rd_out), {{"command", "render"},
                                        {"inputs", inputs},
                                        {"options", {{"seed", rd_seed}}},
                                        {"outputs", {{"image", rd_out}}}});
    std::printf("%s\n", rd_out.c_str());
  });

  // ---- transfer ----
  auto* tf = app.add_subcommand(
      "transfer", "render several poses conditioned on one example image");
  std::string tf_ckpt, tf_example, tf_out, tf_frames = "test";
  std::vector<std::string> tf_poses;
  uint64_t tf_seed = 1234;
  PoseArgs tf_pose;
  tf->add_option("--ckpt", tf_ckpt, "checkpoint path")->required();
  tf->add_option("--example", tf_example, "appearance example image")
      ->required();
  tf_pose.attach(tf, /*list_variant=*/true);
  tf->add_option("--frames", tf_frames,
                 "train | test | all | comma-separated frame ids");
  tf->add_option("--pose", tf_poses,
                 "explicit pose (16 values); repeatable, overrides --frames");
  tf->add_option("--seed", tf_seed, "quadrature jitter seed");
  tf->add_option("--out", tf_out, "output directory")->required();
  tf->callback([&] {
    LoadedRun run(tf_ckpt);
    json inputs = {{"ckpt", file_stamp(tf_ckpt)}};
    Tensor<float> app_vec = appearance_for(run, tf_example, &inputs);
    std::vector<std::pair<std::string, CameraPose>> views;
    if (!tf_poses.empty()) {
      for (size_t i = 0; i < tf_poses.size(); ++i)
        views.emplace_back(std::to_string(i), pose_from_string(tf_poses[i]));
      inputs["poses"] = tf_poses;
    } else {
      if (tf_pose.dataset.empty())
        throw InputError("transfer needs --dataset (or explicit --pose)");
      DatasetManifest man = load_manifest(tf_pose.dataset);
      inputs["dataset"] = file_stamp(tf_pose.dataset);
      inputs["frames"] = tf_frames;
      for (const FrameRecord* f : select_frames(man, tf_frames))
        views.emplace_back(std::to_string(f->id), f->pose);
    }
    std::error_code ec;
    std::filesystem::create_directories(tf_out, ec);
    if (ec) throw IoError("cannot create " + tf_out + ": " + ec.message());
    json outputs = json::array();
    for (const auto& [label, pose] : views) {
      Tensor<float> img = render_once(run, pose, app_vec, tf_seed);
      std::string path = tf_out + "/transfer_" + label + ".png";
      write_png_rgb(path, img);
      outputs.push_back(path);
    }
    write_run_json(tf_out, {{"command", "transfer"},
                            {"inputs", inputs},
                            {"options", {{"seed", tf_seed}}},
                            {"outputs", outputs}});
    std::printf("%zu renders in %s\n", views.size(), tf_out.c_str());
  });

  // ---- interpolate ----
  auto* ip = app.add_subcommand(
      "interpolate", "render a strip blending two example appearances");
  std::string ip_ckpt, ip_a, ip_b, ip_out;
  int ip_steps = 5;
  uint64_t ip_seed = 1234;
  PoseArgs ip_pose;
  ip->add_option("--ckpt", ip_ckpt, "checkpoint path")->required();
  ip->add_option("--a", ip_a, "first example image")->required();
  ip->add_option("--b", ip_b, "second example image")->required();
  ip->add_option("--steps", ip_steps, "number of renders (>= 2)");
  ip_pose.attach(ip);
  ip->add_option("--seed", ip_seed, "quadrature jitter seed");
  ip->add_option("--out", ip_out, "output directory")->required();
  ip->callback([&] {
    if (ip_steps < 2) throw InputError("--steps must be at least 2");
    LoadedRun run(ip_ckpt);
    json inputs = {{"ckpt", file_stamp(ip_ckpt)}};
    CameraPose pose = ip_pose.resolve(&inputs);
    Tensor<float> la = appearance_for(run, ip_a, nullptr);
    Tensor<float> lb = appearance_for(run, ip_b, nullptr);
    inputs["a"] = file_stamp(ip_a);
    inputs["b"] = file_stamp(ip_b);
    std::error_code ec;
    std::filesystem::create_directories(ip_out, ec);
    if (ec) throw IoError("cannot create " + ip_out + ": " + ec.message());
    json outputs = json::array();
    for (int i = 0; i < ip_steps; ++i) {
      double t = static_cast<double>(i) / (ip_steps - 1);
      Tensor<float> mix = interpolate_appearance(la, lb, t);
      Tensor<float> img = render_once(run, pose, mix, ip_seed);
      std::string path = ip_out + "/interp_" + std::to_string(i) + ".png";
      write_png_rgb(path, img);
      outputs.push_back(path);
    }
    write_run_json(ip_out, {{"command", "interpolate"},
                            {"inputs", inputs},
                            {"options",
                             {{"steps", ip_steps}, {"seed", ip_seed}}},
                            {"outputs", outputs}});
    std::printf("%d renders in %s\n", ip_steps, ip_out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 4;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const ArtifactError& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return 3;
  } catch (const InputError& e) {
    std::fprintf(stderr, "bad input: %s\n", e.what());
    return 4;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "bad configuration: %s\n", e.what());
    return 4;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "malformed file: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
