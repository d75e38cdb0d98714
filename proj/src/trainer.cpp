#include "hanerf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "hanerf/checkpoint.hpp"
#include "hanerf/errors.hpp"
#include "hanerf/image.hpp"

namespace hanerf {

using nlohmann::json;

Mode parse_mode(const std::string& name) {
  if (name == "nerf") return Mode::kNerf;
  if (name == "nerf-a") return Mode::kNerfA;
  if (name == "nerf-t") return Mode::kNerfT;
  if (name == "ha-nerf") return Mode::kHaNerf;
  throw InputError("unknown mode '" + name +
                   "' (expected nerf, nerf-a, nerf-t, ha-nerf)");
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kNerf: return "nerf";
    case Mode::kNerfA: return "nerf-a";
    case Mode::kNerfT: return "nerf-t";
    case Mode::kHaNerf: return "ha-nerf";
  }
  throw ConfigError("invalid mode value");
}

void TrainConfig::validate() const {
  if (!(lambda > 0) || !(lambda_o > 0))
    throw ConfigError("loss weights must be positive");
  if (!(lambda_o_warm >= lambda_o))
    throw ConfigError("lambda_o_warm must be >= lambda_o");
  if (!(lambda_o_anneal > 0) || lambda_o_anneal > 1)
    throw ConfigError("lambda_o_anneal must lie in (0, 1]");
  if (k < 2) throw ConfigError("need at least 2 samples per ray");
  if (ray_batch < 1 || grid_s < 2)
    throw ConfigError("batch and grid sizes must be positive");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(lr_start > 0) || !(lr_end > 0))
    throw ConfigError("learning rates must be positive");
  if (max_grad_norm < 0) throw ConfigError("max_grad_norm must be >= 0");
  if (!(tnear > 0 && tnear < tfar)) throw ConfigError("need 0 < tnear < tfar");
  if (log_every < 1 || checkpoint_every < 1)
    throw ConfigError("logging cadences must be positive");
}

double TrainConfig::learning_rate(int64_t iteration) const {
  if (iterations <= 1) return lr_start;
  double frac = static_cast<double>(iteration) /
                static_cast<double>(iterations);
  return lr_start * std::pow(lr_end / lr_start, frac);
}

double TrainConfig::lambda_o_at(int64_t iteration) const {
  if (iterations <= 1 || lambda_o_warm <= lambda_o) return lambda_o;
  double span = lambda_o_anneal * static_cast<double>(iterations);
  double u = std::min(1.0, static_cast<double>(iteration) / span);
  return lambda_o_warm * std::pow(lambda_o / lambda_o_warm, u);
}

std::string to_json_string(const TrainConfig& cfg) {
  json j;
  j["mode"] = mode_name(cfg.mode);
  j["lambda"] = cfg.lambda;
  j["lambda_o"] = cfg.lambda_o;
  j["lambda_o_warm"] = cfg.lambda_o_warm;
  j["lambda_o_anneal"] = cfg.lambda_o_anneal;
  j["k"] = cfg.k;
  j["ray_batch"] = cfg.ray_batch;
  j["grid_s"] = cfg.grid_s;
  j["iterations"] = cfg.iterations;
  j["lr_start"] = cfg.lr_start;
  j["lr_end"] = cfg.lr_end;
  j["max_grad_norm"] = cfg.max_grad_norm;
  j["seed"] = cfg.seed;
  j["tnear"] = cfg.tnear;
  j["tfar"] = cfg.tfar;
  j["log_every"] = cfg.log_every;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["field"] = {{"pos_freqs", cfg.field.pos_freqs},
                {"dir_freqs", cfg.field.dir_freqs},
                {"include_raw", cfg.field.include_raw},
                {"depth", cfg.field.depth},
                {"width", cfg.field.width},
                {"skip_layer", cfg.field.skip_layer},
                {"color_hidden", cfg.field.color_hidden},
                {"appearance_dim", cfg.field.appearance_dim}};
  j["encoder"] = {{"channels", cfg.encoder.channels},
                  {"appearance_dim", cfg.encoder.appearance_dim},
                  {"min_input", cfg.encoder.min_input}};
  j["visibility"] = {{"pixel_freqs", cfg.visibility.pixel_freqs},
                     {"include_raw", cfg.visibility.include_raw},
                     {"width", cfg.visibility.width},
                     {"layers", cfg.visibility.layers},
                     {"embed_dim", cfg.visibility.embed_dim},
                     {"embed_stddev", cfg.visibility.embed_stddev}};
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("config parse failure: " + std::string(e.what()));
  }
  TrainConfig cfg;
  try {
    cfg.mode = parse_mode(j.at("mode"));
    cfg.lambda = j.at("lambda");
    cfg.lambda_o = j.at("lambda_o");
    cfg.lambda_o_warm = j.at("lambda_o_warm");
    cfg.lambda_o_anneal = j.at("lambda_o_anneal");
    cfg.k = j.at("k");
    cfg.ray_batch = j.at("ray_batch");
    cfg.grid_s = j.at("grid_s");
    cfg.iterations = j.at("iterations");
    cfg.lr_start = j.at("lr_start");
    cfg.lr_end = j.at("lr_end");
    cfg.max_grad_norm = j.at("max_grad_norm");
    cfg.seed = j.at("seed");
    cfg.tnear = j.at("tnear");
    cfg.tfar = j.at("tfar");
    cfg.log_every = j.at("log_every");
    cfg.checkpoint_every = j.at("checkpoint_every");
    const json& f = j.at("field");
    cfg.field.pos_freqs = f.at("pos_freqs");
    cfg.field.dir_freqs = f.at("dir_freqs");
    cfg.field.include_raw = f.at("include_raw");
    cfg.field.depth = f.at("depth");
    cfg.field.width = f.at("width");
    cfg.field.skip_layer = f.at("skip_layer");
    cfg.field.color_hidden = f.at("color_hidden");
    cfg.field.appearance_dim = f.at("appearance_dim");
    const json& e = j.at("encoder");
    cfg.encoder.channels = e.at("channels").get<std::vector<int64_t>>();
    cfg.encoder.appearance_dim = e.at("appearance_dim");
    cfg.encoder.min_input = e.at("min_input");
    const json& v = j.at("visibility");
    cfg.visibility.pixel_freqs = v.at("pixel_freqs");
    cfg.visibility.include_raw = v.at("include_raw");
    cfg.visibility.width = v.at("width");
    cfg.visibility.layers = v.at("layers");
    cfg.visibility.embed_dim = v.at("embed_dim");
    cfg.visibility.embed_stddev = v.at("embed_stddev");
  } catch (const json::exception& e) {
    throw FormatError("config field error: " + std::string(e.what()));
  }
  cfg.validate();
  return cfg;
}

namespace {

bool config_matches_ignoring_iterations(const TrainConfig& a,
                                        const TrainConfig& b) {
  json ja = json::parse(to_json_string(a));
  json jb = json::parse(to_json_string(b));
  ja.erase("iterations");
  jb.erase("iterations");
  return ja == jb;
}

}  // namespace

template <class T>
Models<T> make_models(const TrainConfig& cfg, int64_t n_train_images,
                      int64_t image_w, int64_t image_h, ParameterSet<T>& ps,
                      Rng& rng) {
  if (cfg.field.appearance_dim != cfg.encoder.appearance_dim)
    throw ConfigError("field and encoder disagree on appearance dimension");
  // Fixed construction order pins the parameter layout for checkpoints.
  return Models<T>{
      FieldModel<T>(cfg.field, ps, "field", rng),
      EncoderModel<T>(cfg.encoder, ps, "encoder", rng),
      VisibilityModel<T>(cfg.visibility, n_train_images, image_w, image_h, ps,
                         "visibility", rng)};
}

template Models<float> make_models(const TrainConfig&, int64_t, int64_t,
                                   int64_t, ParameterSet<float>&, Rng&);
template Models<double> make_models(const TrainConfig&, int64_t, int64_t,
                                    int64_t, ParameterSet<double>&, Rng&);

DatasetCache load_train_cache(const std::string& manifest_path) {
  DatasetManifest manifest = load_manifest(manifest_path);
  DatasetCache cache;
  cache.dir = parent_dir(manifest_path);
  cache.intrinsics = manifest.intrinsics;
  std::vector<const FrameRecord*> train = manifest.split("train");
  if (train.empty()) throw ArtifactError("manifest has no training frames");
  std::sort(train.begin(), train.end(),
            [](const FrameRecord* a, const FrameRecord* b) {
              return a->id < b->id;
            });
  for (const FrameRecord* f : train) {
    Tensor<float> img = read_png_rgb(cache.dir + "/" + f->image);
    if (img.shape[0] != cache.intrinsics.height ||
        img.shape[1] != cache.intrinsics.width)
      throw ArtifactError("image size disagrees with intrinsics: " + f->image);
    cache.images.push_back(std::move(img));
    cache.poses.push_back(f->pose);
    cache.frame_ids.push_back(f->id);
  }
  return cache;
}

template <class T>
TrainBatch<T> make_train_batch(const DatasetCache& data,
                               const Models<T>& models, const TrainConfig& cfg,
                               Rng& rng) {
  int64_t n = static_cast<int64_t>(data.images.size());
  int64_t w = data.intrinsics.width, h = data.intrinsics.height;
  int64_t r = cfg.ray_batch;
  bool use_app = uses_appearance(cfg.mode);
  bool use_vis = uses_visibility(cfg.mode);

  TrainBatch<T> batch;
  batch.observed = Tensor<T>({r, 3});
  batch.image_ids.resize(static_cast<size_t>(r));
  std::vector<Ray> rays;
  rays.reserve(static_cast<size_t>(r));
  std::vector<std::array<double, 2>> uv(static_cast<size_t>(r));

  // Draw order (fixed; training determinism depends on it):
  //   1. per-ray (image, x, y) picks
  //   2. hallucination image/pose picks and grid jitter seed (app modes)
  //   3. per-ray quadrature jitter
  //   4. grid-ray quadrature jitter (app modes)
  std::vector<int64_t> slot_of(static_cast<size_t>(n), -1);
  auto slot_for = [&](int64_t img) {
    if (!use_app) return int64_t{-1};
    if (slot_of[static_cast<size_t>(img)] < 0) {
      slot_of[static_cast<size_t>(img)] =
          static_cast<int64_t>(batch.distinct_ids.size());
      batch.distinct_ids.push_back(img);
    }
    return slot_of[static_cast<size_t>(img)];
  };

  for (int64_t i = 0; i < r; ++i) {
    int64_t img = rng.uniform_int(n);
    int64_t x = rng.uniform_int(w);
    int64_t y = rng.uniform_int(h);
    batch.image_ids[static_cast<size_t>(i)] = img;
    double u = x + 0.5, v = y + 0.5;
    uv[static_cast<size_t>(i)] = {u, v};
    rays.push_back(generate_ray(data.intrinsics, data.poses[img], u, v,
                                cfg.tnear, cfg.tfar));
    const float* px = data.images[img].ptr() + (y * w + x) * 3;
    for (int c = 0; c < 3; ++c)
      batch.observed.at2(i, c) = static_cast<T>(px[c]);
    batch.ray_slot.push_back(slot_for(img));
  }

  GridRays grid;
  if (use_app) {
    int64_t hall_img = rng.uniform_int(n);
    batch.hall_slot = slot_for(hall_img);
    CameraPose hall_pose;
    if (n >= 2) {
      int64_t a = rng.uniform_int(n);
      int64_t b = rng.uniform_int(n - 1);
      if (b >= a) ++b;
      double t = rng.uniform();
      CameraPose mid = interpolate_pose(data.poses[a], data.poses[b], t);
      // Slerp shrinks the chord; push the eye back onto the camera shell and
      // re-aim at the scene centroid.
      double want = 0.5 * (data.poses[a].translation.norm() +
                           data.poses[b].translation.norm());
      Vec3 eye = mid.translation;
      double have = eye.norm();
      if (have < 0.25) eye = data.poses[a].translation;
      else eye = eye * (want / have);
      hall_pose = look_at(eye, {0, 0, 0});
    } else {
      hall_pose = data.poses[0];
    }
    uint64_t jit = (static_cast<uint64_t>(rng.next_u32()) << 32) |
                   rng.next_u32();
    grid = generate_grid_rays(data.intrinsics, hall_pose, cfg.grid_s, jit, 1.0,
                              cfg.tnear, cfg.tfar);
    batch.has_hallucination = true;
    batch.grid_s = cfg.grid_s;
  }

  batch.render = prepare_render_batch<T>(rays, cfg.k, rng, models.field.config());
  if (use_app)
    batch.grid_render =
        prepare_render_batch<T>(grid.rays, cfg.k, rng, models.field.config());

  if (use_vis)
    batch.enc_pixels = models.visibility.encode_pixels(
        uv, static_cast<double>(w), static_cast<double>(h));

  if (use_app) {
    for (int64_t img : batch.distinct_ids)
      batch.distinct_images.push_back(
          to_nchw(data.images[img].template cast<T>()));
  }
  return batch;
}

template TrainBatch<float> make_train_batch(const DatasetCache&,
                                            const Models<float>&,
                                            const TrainConfig&, Rng&);
template TrainBatch<double> make_train_batch(const DatasetCache&,
                                             const Models<double>&,
                                             const TrainConfig&, Rng&);

template <class T>
LossParts build_total_loss(Tape<T>& tape, const Models<T>& models,
                           const TrainBatch<T>& batch, const TrainConfig& cfg,
                           int64_t iteration) {
  bool use_app = uses_appearance(cfg.mode);
  bool use_vis = uses_visibility(cfg.mode);
  int64_t r = batch.render.rays;
  int64_t app_dim = models.field.config().appearance_dim;

  Var latent_table;  // [D, app_dim], valid only in appearance modes
  Var app_rows;
  if (use_app) {
    std::vector<Var> latents;
    for (const Tensor<T>& img : batch.distinct_images)
      latents.push_back(models.encoder.encode(tape, tape.constant(img)));
    latent_table = tape.concat_rows(latents);
    app_rows = tape.gather_rows(latent_table, batch.ray_slot);
  } else {
    app_rows = tape.constant(Tensor<T>::zeros({r, app_dim}));
  }

  TapeRender<T> main = render_on_tape(tape, models.field, batch.render,
                                      app_rows);
  Var observed = tape.constant(batch.observed);

  LossParts parts;
  Var per_ray;
  if (use_vis) {
    Var m = models.visibility.evaluate(tape, batch.enc_pixels,
                                       batch.image_ids);
    per_ray = occlusion_loss(tape, m, observed, main.rgb,
                             cfg.lambda_o_at(iteration));
  } else {
    per_ray = tape.sum_axis1(tape.square(tape.sub(observed, main.rgb)));
  }
  Var data = tape.mean(per_ray);
  parts.data = static_cast<double>(tape.value(data)[0]);
  parts.total = data;

  if (use_app && batch.has_hallucination) {
    Var la = tape.gather_rows(latent_table, {batch.hall_slot});
    std::vector<int64_t> bcast(
        static_cast<size_t>(batch.grid_render.rays), batch.hall_slot);
    Var grid_app = tape.gather_rows(latent_table, bcast);
    TapeRender<T> grid = render_on_tape(tape, models.field, batch.grid_render,
                                        grid_app);
    Var lv = view_consistent_loss(tape, models.encoder, grid.rgb,
                                  batch.grid_s, la);
    parts.lv = static_cast<double>(tape.value(lv)[0]);
    parts.total = tape.add(
        parts.total, tape.axpb(lv, static_cast<T>(cfg.lambda), T(0)));
  }

  // Batch PSNR probe straight from the rendered colors.
  const Tensor<T>& pred = tape.value(main.rgb);
  double mse = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    double d = static_cast<double>(pred[i]) - batch.observed[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.numel());
  parts.psnr_probe = mse <= 0 ? 99.0 : std::min(-10.0 * std::log10(mse), 99.0);
  return parts;
}

template LossParts build_total_loss(Tape<float>&, const Models<float>&,
                                    const TrainBatch<float>&,
                                    const TrainConfig&, int64_t);
template LossParts build_total_loss(Tape<double>&, const Models<double>&,
                                    const TrainBatch<double>&,
                                    const TrainConfig&, int64_t);

TrainResult train(const std::string& manifest_path, const TrainConfig& cfg,
                  const std::string& out_dir, const std::string& resume_from) {
  cfg.validate();
  DatasetCache data = load_train_cache(manifest_path);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  Rng master(cfg.seed);
  Rng init_rng = master.fork(7);
  ParameterSet<float> ps;
  Models<float> models =
      make_models(cfg, static_cast<int64_t>(data.images.size()),
                  data.intrinsics.width, data.intrinsics.height, ps, init_rng);
  Rng rng = master.fork(13);

  int64_t start_iter = 0;
  bool resumed = false;
  if (!resume_from.empty()) {
    CheckpointHeader h = load_checkpoint(resume_from, ps);
    if (h.config.mode != cfg.mode)
      throw ArtifactError("checkpoint was trained in mode " +
                          mode_name(h.config.mode) + ", requested " +
                          mode_name(cfg.mode));
    if (!config_matches_ignoring_iterations(h.config, cfg))
      throw ArtifactError(
          "checkpoint configuration is incompatible with the request");
    if (h.n_train_images != static_cast<int64_t>(data.images.size()) ||
        h.intrinsics.width != data.intrinsics.width ||
        h.intrinsics.height != data.intrinsics.height)
      throw ArtifactError(
          "checkpoint dataset geometry disagrees with the manifest");
    start_iter = h.iteration;
    rng = Rng::from_state(h.rng_state, h.rng_inc);
    resumed = true;
    if (start_iter > cfg.iterations)
      throw ArtifactError("checkpoint is already past the requested "
                          "iteration count");
  }

  TrainResult result;
  result.metrics_csv = out_dir + "/metrics.csv";
  result.latest_checkpoint = out_dir + "/ckpt_latest.bin";
  result.final_checkpoint = out_dir + "/ckpt_final.bin";
  std::ofstream log(result.metrics_csv,
                    resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + result.metrics_csv);
  if (!resumed) log << "iteration,total,L_o,L_v,psnr_probe\n";

  std::string last_good = resume_from;
  double last_total = 0;
  for (int64_t it = start_iter; it < cfg.iterations; ++it) {
    TrainBatch<float> batch = make_train_batch(data, models, cfg, rng);
    Tape<float> tape;
    LossParts parts = build_total_loss(tape, models, batch, cfg, it);
    double total = static_cast<double>(tape.value(parts.total)[0]);
    if (!std::isfinite(total))
      throw DivergenceError(
          "non-finite loss at iteration " + std::to_string(it + 1) +
          (last_good.empty() ? std::string("; no checkpoint written yet")
                             : "; last good checkpoint: " + last_good));
    tape.backward(parts.total);
    auto grads = tape.param_grads();
    std::vector<Tensor<float>> clipped;
    if (cfg.max_grad_norm > 0) {
      double sq = 0;
      for (const auto& g : grads)
        if (g.grad)
          for (int64_t i = 0; i < g.grad->numel(); ++i) {
            double gi = static_cast<double>((*g.grad)[i]);
            sq += gi * gi;
          }
      double norm = std::sqrt(sq);
      if (norm > cfg.max_grad_norm) {
        float s = static_cast<float>(cfg.max_grad_norm / norm);
        clipped.reserve(grads.size());
        for (auto& g : grads) {
          if (!g.grad) continue;
          Tensor<float> t = *g.grad;
          for (int64_t i = 0; i < t.numel(); ++i) t[i] *= s;
          clipped.push_back(std::move(t));
          g.grad = &clipped.back();
        }
      }
    }
    ps.adam_step(grads, cfg.learning_rate(it));
    if (!ps.all_finite())
      throw DivergenceError(
          "non-finite parameters after iteration " + std::to_string(it + 1) +
          (last_good.empty() ? std::string("; no checkpoint written yet")
                             : "; last good checkpoint: " + last_good));
    last_total = total;
    int64_t done = it + 1;
    if (done == 1 || done % cfg.log_every == 0 || done == cfg.iterations) {
      log << done << ',' << total << ',' << parts.data << ',' << parts.lv
          << ',' << parts.psnr_probe << '\n';
      log.flush();
    }
    if (done % cfg.checkpoint_every == 0) {
      save_checkpoint(result.latest_checkpoint, ps, cfg, data.intrinsics,
                      static_cast<int64_t>(data.images.size()), done, rng);
      last_good = result.latest_checkpoint;
    }
  }
  save_checkpoint(result.final_checkpoint, ps, cfg, data.intrinsics,
                  static_cast<int64_t>(data.images.size()), cfg.iterations,
                  rng);
  result.iterations_run = cfg.iterations - start_iter;
  result.final_total = last_total;
  return result;
}

}  // namespace hanerf
