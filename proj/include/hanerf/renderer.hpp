#pragma once

#include <array>
#include <vector>

#include "hanerf/autodiff.hpp"
#include "hanerf/camera.hpp"
#include "hanerf/field.hpp"
#include "hanerf/rng.hpp"
#include "hanerf/tensor.hpp"

namespace hanerf {

struct RaySamples {
  std::vector<double> ts;      // strictly increasing, inside [tnear, tfar]
  std::vector<double> deltas;  // t_{k+1} - t_k; terminal entry = kTerminalDelta
};

inline constexpr double kTerminalDelta = 1e10;

struct CompositeResult {
  std::array<double, 3> rgb{};
  std::vector<double> weights;
  double final_transmittance = 1.0;
};

// One uniform draw per equal-length bin of [tnear, tfar]. K >= 2.
RaySamples stratified_samples(const Ray& ray, int k, Rng& rng);

// Quadrature compositing: rgb = sum_k T_k (1 - exp(-sigma_k delta_k)) c_k
// with T_k = exp(-sum_{l<k} sigma_l delta_l).
CompositeResult composite(const std::vector<double>& sigmas,
                          const std::vector<std::array<double, 3>>& colors,
                          const std::vector<double>& deltas);

// Everything the differentiable render needs that does not itself require
// gradients: encoded sample positions/directions and quadrature deltas.
// Samples are ray-major: row r*K+k belongs to ray r.
template <class T>
struct RenderBatch {
  Tensor<T> gx;      // [R*K, gx_dim]
  Tensor<T> gd;      // [R*K, gd_dim]
  Tensor<T> deltas;  // [R*K]
  std::vector<double> ts;  // [R*K] quadrature points, for diagnostics
  int64_t rays = 0;
  int64_t samples = 0;
};

template <class T>
RenderBatch<T> prepare_render_batch(const std::vector<Ray>& rays, int k,
                                    Rng& rng, const FieldConfig& cfg);

template <class T>
struct TapeRender {
  Var rgb;                 // [R,3] on the tape
  Tensor<T> weights;       // detached, [R*K]
  Tensor<T> final_trans;   // detached, [R]
};

// Evaluates the field at every sample and composites per ray, all on the
// given tape. appearance_rows is a [R, appearance_dim] tape variable; rows
// are repeated across each ray's samples.
template <class T>
TapeRender<T> render_on_tape(Tape<T>& tape, const FieldModel<T>& field,
                             const RenderBatch<T>& batch, Var appearance_rows);

struct RayRenderDetail {
  std::vector<double> ts;
  std::vector<double> weights;
  double final_transmittance = 1.0;
};

// Forward-only rendering of a ray batch with a single shared appearance
// latent. Throws DivergenceError on non-finite output.
template <class T>
Tensor<T> render_rays(const FieldModel<T>& field, const std::vector<Ray>& rays,
                      const Tensor<T>& appearance, int k, Rng& rng,
                      std::vector<RayRenderDetail>* detail = nullptr);

// Whole-frame render, tiled so peak memory stays bounded. Returns [H,W,3].
template <class T>
Tensor<T> render_image(const FieldModel<T>& field, const CameraIntrinsics& intr,
                       const CameraPose& pose, const Tensor<T>& appearance,
                       int k, Rng& rng, double tnear, double tfar,
                       int64_t tile_rays = 256);

}  // namespace hanerf
