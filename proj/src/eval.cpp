#include "hanerf/eval.hpp"

#include <algorithm>
#include <filesystem>

#include "hanerf/errors.hpp"
#include "hanerf/image.hpp"
#include "hanerf/renderer.hpp"

namespace hanerf {

namespace {

Models<float> build_models(const CheckpointHeader& h, ParameterSet<float>& ps) {
  // Initialization values are immediately overwritten by the load.
  Rng scratch(0);
  return make_models(h.config, h.n_train_images, h.intrinsics.width,
                     h.intrinsics.height, ps, scratch);
}

}  // namespace

LoadedRun::LoadedRun(const std::string& checkpoint_path)
    : header(read_checkpoint_header(checkpoint_path)),
      ps(),
      models(build_models(header, ps)) {
  load_checkpoint(checkpoint_path, ps);
}

std::unique_ptr<LoadedRun> load_run(const std::string& checkpoint_path) {
  return std::make_unique<LoadedRun>(checkpoint_path);
}

EvalReport evaluate(const LoadedRun& run, const std::string& manifest_path,
                    const std::string& out_dir) {
  const TrainConfig& cfg = run.header.config;
  DatasetManifest manifest = load_manifest(manifest_path);
  std::string dir = parent_dir(manifest_path);
  if (manifest.intrinsics.width != run.header.intrinsics.width ||
      manifest.intrinsics.height != run.header.intrinsics.height)
    throw ArtifactError("manifest image size disagrees with the checkpoint");

  bool use_app = uses_appearance(cfg.mode);
  bool use_vis = uses_visibility(cfg.mode);

  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  }

  EvalReport report;
  report.mode = mode_name(cfg.mode);
  report.config_json = to_json_string(cfg);

  Tensor<float> zero_app =
      Tensor<float>::zeros({cfg.field.appearance_dim});

  std::vector<const FrameRecord*> tests = manifest.split("test");
  std::sort(tests.begin(), tests.end(),
            [](const FrameRecord* a, const FrameRecord* b) {
              return a->id < b->id;
            });
  for (const FrameRecord* f : tests) {
    Tensor<float> clean_gt = read_png_rgb(dir + "/" + f->clean);
    Tensor<float> variant_gt = read_png_rgb(dir + "/" + f->image);

    Tensor<float> clean_app =
        use_app ? run.models.encoder.encode_value(clean_gt) : zero_app;
    Rng render_rng(9000 + static_cast<uint64_t>(f->id));
    Tensor<float> clean_render =
        render_image(run.models.field, manifest.intrinsics, f->pose,
                     clean_app, cfg.k, render_rng, cfg.tnear, cfg.tfar);
    report.clean.push_back(
        {f->id, psnr(clean_render, clean_gt), ssim(clean_render, clean_gt)});

    // Without an encoder the conditioning cannot change; reuse the render.
    Tensor<float> transfer_render = clean_render;
    if (use_app) {
      Tensor<float> variant_app = run.models.encoder.encode_value(variant_gt);
      Rng transfer_rng(9000 + static_cast<uint64_t>(f->id));
      transfer_render =
          render_image(run.models.field, manifest.intrinsics, f->pose,
                       variant_app, cfg.k, transfer_rng, cfg.tnear, cfg.tfar);
    }
    report.transfer.push_back({f->id, psnr(transfer_render, variant_gt),
                               ssim(transfer_render, variant_gt)});

    if (!out_dir.empty()) {
      std::string tag = std::to_string(f->id);
      write_png_rgb(out_dir + "/render_" + tag + ".png", clean_render);
      write_png_rgb(out_dir + "/transfer_" + tag + ".png", transfer_render);
    }
  }

  if (use_vis) {
    std::vector<const FrameRecord*> train = manifest.split("train");
    std::sort(train.begin(), train.end(),
              [](const FrameRecord* a, const FrameRecord* b) {
                return a->id < b->id;
              });
    if (static_cast<int64_t>(train.size()) != run.header.n_train_images)
      throw ArtifactError("manifest train count disagrees with checkpoint");
    for (size_t i = 0; i < train.size(); ++i) {
      const FrameRecord* f = train[i];
      if (f->mask.empty()) continue;
      Tensor<float> gt_mask = read_png_gray(dir + "/" + f->mask);
      Tensor<float> vis = run.models.visibility.visibility_map(
          static_cast<int64_t>(i), manifest.intrinsics.height,
          manifest.intrinsics.width);
      // Occluded where the model believes the static scene is hidden.
      Tensor<float> predicted(vis.shape);
      for (int64_t p = 0; p < vis.numel(); ++p)
        predicted[p] = vis[p] < 0.5f ? 1.0f : 0.0f;
      report.visibility.push_back(
          {static_cast<int64_t>(i), mask_iou(predicted, gt_mask)});
    }
  }

  if (!out_dir.empty()) {
    save_report_json(report, out_dir + "/report.json");
    save_report_csv(report, out_dir + "/report.csv");
  }
  return report;
}

EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                               const std::string& manifest_path,
                               const std::string& out_dir) {
  LoadedRun run(checkpoint_path);
  return evaluate(run, manifest_path, out_dir);
}

}  // namespace hanerf
