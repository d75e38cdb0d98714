#include "hanerf/renderer.hpp"

#include <cmath>

#include "hanerf/errors.hpp"

namespace hanerf {

RaySamples stratified_samples(const Ray& ray, int k, Rng& rng) {
  if (k < 2) throw InputError("stratified sampling requires K >= 2");
  validate(ray);
  RaySamples out;
  out.ts.resize(static_cast<size_t>(k));
  out.deltas.resize(static_cast<size_t>(k));
  double span = ray.tfar - ray.tnear;
  for (int i = 0; i < k; ++i)
    out.ts[i] = ray.tnear + (i + rng.uniform()) / k * span;
  for (int i = 0; i + 1 < k; ++i) out.deltas[i] = out.ts[i + 1] - out.ts[i];
  out.deltas[k - 1] = kTerminalDelta;
  return out;
}

CompositeResult composite(const std::vector<double>& sigmas,
                          const std::vector<std::array<double, 3>>& colors,
                          const std::vector<double>& deltas) {
  size_t k = sigmas.size();
  if (colors.size() != k || deltas.size() != k)
    throw ConfigError("composite: mismatched sample counts");
  CompositeResult res;
  res.weights.resize(k);
  double trans = 1.0;
  for (size_t i = 0; i < k; ++i) {
    if (sigmas[i] < 0) throw InputError("composite: negative density");
    if (!(deltas[i] > 0)) throw InputError("composite: non-positive delta");
    double e = std::exp(-sigmas[i] * deltas[i]);
    double w = trans * (1.0 - e);
    res.weights[i] = w;
    for (int c = 0; c < 3; ++c) res.rgb[c] += w * colors[i][c];
    trans *= e;
  }
  res.final_transmittance = trans;
  return res;
}

template <class T>
RenderBatch<T> prepare_render_batch(const std::vector<Ray>& rays, int k,
                                    Rng& rng, const FieldConfig& cfg) {
  int64_t r = static_cast<int64_t>(rays.size());
  int64_t b = r * k;
  Tensor<T> pos({b, 3}), dir({b, 3});
  RenderBatch<T> out;
  out.deltas = Tensor<T>({b});
  out.ts.resize(static_cast<size_t>(b));
  for (int64_t i = 0; i < r; ++i) {
    RaySamples s = stratified_samples(rays[static_cast<size_t>(i)], k, rng);
    const Ray& ray = rays[static_cast<size_t>(i)];
    for (int j = 0; j < k; ++j) {
      int64_t row = i * k + j;
      double t = s.ts[static_cast<size_t>(j)];
      out.ts[static_cast<size_t>(row)] = t;
      pos.ptr()[row * 3 + 0] = static_cast<T>(ray.origin.x + t * ray.direction.x);
      pos.ptr()[row * 3 + 1] = static_cast<T>(ray.origin.y + t * ray.direction.y);
      pos.ptr()[row * 3 + 2] = static_cast<T>(ray.origin.z + t * ray.direction.z);
      dir.ptr()[row * 3 + 0] = static_cast<T>(ray.direction.x);
      dir.ptr()[row * 3 + 1] = static_cast<T>(ray.direction.y);
      dir.ptr()[row * 3 + 2] = static_cast<T>(ray.direction.z);
      out.deltas[row] = static_cast<T>(s.deltas[static_cast<size_t>(j)]);
    }
  }
  out.gx = encode(pos, cfg.pos_freqs, cfg.include_raw);
  out.gd = encode(dir, cfg.dir_freqs, cfg.include_raw);
  out.rays = r;
  out.samples = k;
  return out;
}

template RenderBatch<float> prepare_render_batch(const std::vector<Ray>&, int,
                                                 Rng&, const FieldConfig&);
template RenderBatch<double> prepare_render_batch(const std::vector<Ray>&, int,
                                                  Rng&, const FieldConfig&);

template <class T>
TapeRender<T> render_on_tape(Tape<T>& tape, const FieldModel<T>& field,
                             const RenderBatch<T>& batch,
                             Var appearance_rows) {
  Var gx = tape.constant(batch.gx);
  Var gd = tape.constant(batch.gd);
  // Repeat each ray's appearance latent across its K samples.
  std::vector<int64_t> rep(static_cast<size_t>(batch.rays * batch.samples));
  for (int64_t i = 0; i < batch.rays; ++i)
    for (int64_t j = 0; j < batch.samples; ++j)
      rep[static_cast<size_t>(i * batch.samples + j)] = i;
  Var app = tape.gather_rows(appearance_rows, rep);
  auto out = field.evaluate(tape, gx, gd, app);
  TapeRender<T> res;
  res.rgb = tape.composite(out.sigma, out.rgb, batch.deltas, batch.rays,
                           batch.samples, &res.weights, &res.final_trans);
  return res;
}

template TapeRender<float> render_on_tape(Tape<float>&, const FieldModel<float>&,
                                          const RenderBatch<float>&, Var);
template TapeRender<double> render_on_tape(Tape<double>&,
                                           const FieldModel<double>&,
                                           const RenderBatch<double>&, Var);

template <class T>
Tensor<T> render_rays(const FieldModel<T>& field, const std::vector<Ray>& rays,
                      const Tensor<T>& appearance, int k, Rng& rng,
                      std::vector<RayRenderDetail>* detail) {
  if (appearance.numel() != field.config().appearance_dim)
    throw ConfigError("appearance latent has wrong dimension");
  int64_t r = static_cast<int64_t>(rays.size());
  RenderBatch<T> batch = prepare_render_batch<T>(rays, k, rng, field.config());
  Tape<T> tape;
  Tensor<T> app_rows({r, appearance.numel()});
  for (int64_t i = 0; i < r; ++i)
    std::copy(appearance.ptr(), appearance.ptr() + appearance.numel(),
              app_rows.ptr() + i * appearance.numel());
  TapeRender<T> tr =
      render_on_tape(tape, field, batch, tape.constant(std::move(app_rows)));
  Tensor<T> rgb = tape.value(tr.rgb);
  if (!rgb.all_finite())
    throw DivergenceError("non-finite colors produced by renderer");
  if (detail) {
    detail->resize(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
      RayRenderDetail& d = (*detail)[static_cast<size_t>(i)];
      d.ts.assign(batch.ts.begin() + i * k, batch.ts.begin() + (i + 1) * k);
      d.weights.resize(static_cast<size_t>(k));
      for (int j = 0; j < k; ++j)
        d.weights[static_cast<size_t>(j)] =
            static_cast<double>(tr.weights[i * k + j]);
      d.final_transmittance = static_cast<double>(tr.final_trans[i]);
    }
  }
  return rgb;
}

template Tensor<float> render_rays(const FieldModel<float>&,
                                   const std::vector<Ray>&,
                                   const Tensor<float>&, int, Rng&,
                                   std::vector<RayRenderDetail>*);
template Tensor<double> render_rays(const FieldModel<double>&,
                                    const std::vector<Ray>&,
                                    const Tensor<double>&, int, Rng&,
                                    std::vector<RayRenderDetail>*);

template <class T>
Tensor<T> render_image(const FieldModel<T>& field, const CameraIntrinsics& intr,
                       const CameraPose& pose, const Tensor<T>& appearance,
                       int k, Rng& rng, double tnear, double tfar,
                       int64_t tile_rays) {
  validate(intr);
  validate(pose);
  int64_t h = intr.height, w = intr.width;
  Tensor<T> img({h, w, 3});
  std::vector<Ray> tile;
  std::vector<int64_t> tile_pix;
  auto flush = [&] {
    if (tile.empty()) return;
    Tensor<T> rgb = render_rays(field, tile, appearance, k, rng);
    for (size_t i = 0; i < tile.size(); ++i) {
      int64_t p = tile_pix[i];
      for (int c = 0; c < 3; ++c) img.ptr()[p * 3 + c] = rgb.at2(i, c);
    }
    tile.clear();
    tile_pix.clear();
  };
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      // Evaluate at pixel centers.
      tile.push_back(generate_ray(intr, pose, x + 0.5, y + 0.5, tnear, tfar));
      tile_pix.push_back(y * w + x);
      if (static_cast<int64_t>(tile.size()) >= tile_rays) flush();
    }
  flush();
  return img;
}

template Tensor<float> render_image(const FieldModel<float>&,
                                    const CameraIntrinsics&, const CameraPose&,
                                    const Tensor<float>&, int, Rng&, double,
                                    double, int64_t);
template Tensor<double> render_image(const FieldModel<double>&,
                                     const CameraIntrinsics&,
                                     const CameraPose&, const Tensor<double>&,
                                     int, Rng&, double, double, int64_t);

}  // namespace hanerf
