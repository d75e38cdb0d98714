#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hanerf/appearance.hpp"
#include "hanerf/camera.hpp"
#include "hanerf/field.hpp"
#include "hanerf/occlusion.hpp"
#include "hanerf/optim.hpp"
#include "hanerf/renderer.hpp"
#include "hanerf/rng.hpp"
#include "hanerf/scene.hpp"

namespace hanerf {

// nerf:    static field only, zero appearance, plain MSE.
// nerf-a:  + appearance encoder and view-consistency loss; no visibility.
// nerf-t:  + visibility field and occlusion loss; zero appearance.
// ha-nerf: everything.
enum class Mode { kNerf, kNerfA, kNerfT, kHaNerf };

Mode parse_mode(const std::string& name);
std::string mode_name(Mode m);
inline bool uses_appearance(Mode m) {
  return m == Mode::kNerfA || m == Mode::kHaNerf;
}
inline bool uses_visibility(Mode m) {
  return m == Mode::kNerfT || m == Mode::kHaNerf;
}

struct TrainConfig {
  Mode mode = Mode::kHaNerf;
  double lambda = 1e-3;     // weight of the view-consistency loss
  double lambda_o = 6e-3;   // visibility regularizer weight (final value)
  // The visibility threshold 2*lambda_o must track the reconstruction error:
  // early on every pixel's error exceeds it, M collapses to zero, and the
  // masked data gradient stalls the field. lambda_o therefore decays
  // geometrically from lambda_o_warm to lambda_o over the first
  // lambda_o_anneal fraction of training, then holds at lambda_o.
  // lambda_o_warm == lambda_o disables the schedule.
  double lambda_o_warm = 0.15;
  double lambda_o_anneal = 0.9;
  int k = 64;               // quadrature samples per ray
  int ray_batch = 1024;
  int grid_s = 32;          // hallucination grid side
  int64_t iterations = 20000;
  double lr_start = 5e-4;   // exponential decay from start to end
  double lr_end = 5e-5;
  double max_grad_norm = 0;  // optional global-norm clip; 0 disables
  uint64_t seed = 1;
  double tnear = kNear;
  double tfar = kFar;
  int64_t log_every = 100;
  int64_t checkpoint_every = 1000;
  FieldConfig field;
  EncoderConfig encoder;
  VisibilityConfig visibility;

  void validate() const;
  double learning_rate(int64_t iteration) const;
  double lambda_o_at(int64_t iteration) const;
};

std::string to_json_string(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// All models share one parameter set so a single Adam step covers
// (theta, phi, psi, embeddings). Every mode registers every parameter;
// unused ones simply receive no gradients.
template <class T>
struct Models {
  FieldModel<T> field;
  EncoderModel<T> encoder;
  VisibilityModel<T> visibility;
};

template <class T>
Models<T> make_models(const TrainConfig& cfg, int64_t n_train_images,
                      int64_t image_w, int64_t image_h, ParameterSet<T>& ps,
                      Rng& rng);

// Training split pinned in memory. Images indexed 0..n-1 in manifest id
// order; transient embeddings use the same indexing.
struct DatasetCache {
  std::string dir;
  CameraIntrinsics intrinsics;
  std::vector<Tensor<float>> images;  // observed (perturbed) training images
  std::vector<CameraPose> poses;
  std::vector<int64_t> frame_ids;
};

DatasetCache load_train_cache(const std::string& manifest_path);

template <class T>
struct TrainBatch {
  RenderBatch<T> render;            // main ray batch
  Tensor<T> observed;               // [R,3]
  std::vector<int64_t> image_ids;   // per ray, train-split index
  Tensor<T> enc_pixels;             // [R, enc] for the visibility field

  // Distinct batch images to push through the appearance encoder, and the
  // per-ray index into that list.
  std::vector<int64_t> distinct_ids;
  std::vector<Tensor<T>> distinct_images;  // [1,3,H,W]
  std::vector<int64_t> ray_slot;

  bool has_hallucination = false;
  int64_t hall_slot = -1;           // latent source for the hallucinated view
  RenderBatch<T> grid_render;
  int grid_s = 0;
};

// Draws ray picks, hallucination pose, and sample jitters from rng in a
// fixed documented order so training is reproducible and resumable.
template <class T>
TrainBatch<T> make_train_batch(const DatasetCache& data,
                               const Models<T>& models, const TrainConfig& cfg,
                               Rng& rng);

struct LossParts {
  Var total;
  double data = 0;        // mean per-ray data term
  double lv = 0;          // raw sum-L1 view-consistency value
  double psnr_probe = 0;  // batch PSNR of rendered vs observed colors
};

// iteration selects the annealed lambda_o; pass cfg.iterations for the
// final-schedule loss.
template <class T>
LossParts build_total_loss(Tape<T>& tape, const Models<T>& models,
                           const TrainBatch<T>& batch, const TrainConfig& cfg,
                           int64_t iteration);

struct TrainResult {
  std::string final_checkpoint;
  std::string latest_checkpoint;
  std::string metrics_csv;
  int64_t iterations_run = 0;
  double final_total = 0;
};

// Full training loop: loads the dataset, builds (or restores) parameters,
// steps Adam, logs CSV, writes periodic and final checkpoints. On
// divergence the last good checkpoint is left on disk and DivergenceError
// names it.
TrainResult train(const std::string& manifest_path, const TrainConfig& cfg,
                  const std::string& out_dir,
                  const std::string& resume_from = "");

}  // namespace hanerf
