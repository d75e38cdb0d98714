#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hanerf/camera.hpp"
#include "hanerf/rng.hpp"
#include "hanerf/tensor.hpp"

namespace hanerf {

// Shared scene geometry: cameras sit on a radius-2 sphere looking at the
// origin; all scene content fits in a radius-0.7 ball, so every quadrature
// point between kNear and kFar stays inside [-1,1]^3 and positions feed the
// frequency encoding without further normalization.
inline constexpr double kCameraRadius = 2.0;
inline constexpr double kNear = 1.25;
inline constexpr double kFar = 2.75;
inline constexpr double kFocalFactor = 1.25;  // focal = factor * width

struct Sphere {
  Vec3 center;
  double radius = 0;
  std::array<float, 3> albedo{};
};

struct SyntheticScene {
  std::vector<Sphere> spheres;
  std::array<float, 3> background{};
};

void validate(const SyntheticScene& scene);

// Random flat-albedo sphere arrangement inside the content ball.
SyntheticScene random_scene(Rng& rng, int min_spheres = 4, int max_spheres = 7);

CameraIntrinsics default_intrinsics(int64_t width, int64_t height);

// Closed-form ray/sphere renderer: nearest hit's albedo, else background.
// Completely separate from the neural rendering path.
Tensor<float> render_ground_truth(const SyntheticScene& scene,
                                  const CameraIntrinsics& intr,
                                  const CameraPose& pose, int64_t h,
                                  int64_t w);

// Analytic single-ray shading, exposed for oracle-style checks.
std::array<float, 3> shade_ray(const SyntheticScene& scene, const Ray& ray);

inline constexpr double kGainLo = 0.6, kGainHi = 1.4;
inline constexpr double kBiasLo = -0.15, kBiasHi = 0.15;

// c' = clamp(gain * c + bias, 0, 1), channelwise.
Tensor<float> apply_color_perturbation(const Tensor<float>& image,
                                       const std::array<double, 3>& gain,
                                       const std::array<double, 3>& bias);

struct OccluderSpec {
  int min_shapes = 1;
  int max_shapes = 3;
  double coverage = 0.2;        // target fraction of pixels, in [0.10, 0.30]
  double tolerance = 0.02;      // achieved coverage within +/- this, absolute
  int max_attempts = 100;
};

struct OccluderResult {
  Tensor<float> image;  // [H,W,3]
  Tensor<float> mask;   // [H,W], 1 = occluded
};

// Stamps 1-3 solid rectangles/ellipses until the union covers the target
// fraction within tolerance. coverage == 0 returns the image untouched.
OccluderResult composite_occluder(const Tensor<float>& image,
                                  const OccluderSpec& spec, uint64_t seed);

struct PerturbationSpec {
  bool color = true;
  bool occluders = true;
  double min_coverage = 0.10;
  double max_coverage = 0.30;
};

struct FrameRecord {
  int64_t id = 0;
  std::string split;  // "train" or "test"
  CameraPose pose;
  std::string image;  // perturbed observation (test: color-variant only)
  std::string clean;  // unperturbed render
  std::string mask;   // occluder mask (all-black when none)
  std::array<double, 3> gain{1, 1, 1};
  std::array<double, 3> bias{0, 0, 0};
};

struct DatasetManifest {
  int version = 1;
  CameraIntrinsics intrinsics;
  std::vector<FrameRecord> frames;

  std::vector<const FrameRecord*> split(const std::string& tag) const;
};

// Renders, perturbs and writes a full dataset under out_dir, then writes
// manifest.json. Same seed, byte-identical outputs.
DatasetManifest generate_dataset(const SyntheticScene& scene, int n_train,
                                 int n_test, int64_t h, int64_t w,
                                 const PerturbationSpec& spec, uint64_t seed,
                                 const std::string& out_dir);

void save_manifest(const DatasetManifest& m, const std::string& path);

// Loads and validates a manifest; file references are resolved against the
// manifest's directory and must exist.
DatasetManifest load_manifest(const std::string& path);

// Directory component of a path ("." when none).
std::string parent_dir(const std::string& path);

}  // namespace hanerf
