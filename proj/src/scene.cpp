#include "hanerf/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "hanerf/errors.hpp"
#include "hanerf/image.hpp"

namespace hanerf {

using nlohmann::json;

void validate(const SyntheticScene& scene) {
  for (const Sphere& s : scene.spheres) {
    if (!(s.radius > 0)) throw InputError("sphere radius must be positive");
    double reach = std::max({std::abs(s.center.x), std::abs(s.center.y),
                             std::abs(s.center.z)}) +
                   s.radius;
    if (reach > 1.0) throw InputError("sphere escapes the unit cube");
  }
}

SyntheticScene random_scene(Rng& rng, int min_spheres, int max_spheres) {
  if (min_spheres < 1 || max_spheres < min_spheres)
    throw InputError("invalid sphere count range");
  SyntheticScene scene;
  int n = min_spheres + static_cast<int>(rng.uniform_int(
                            max_spheres - min_spheres + 1));
  for (int i = 0; i < n; ++i) {
    Sphere s;
    // Keep centers inside a radius-0.45 ball so the whole sphere stays well
    // within the content region.
    do {
      s.center = {rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45),
                  rng.uniform(-0.45, 0.45)};
    } while (s.center.norm() > 0.45);
    s.radius = rng.uniform(0.12, 0.25);
    for (int c = 0; c < 3; ++c)
      s.albedo[static_cast<size_t>(c)] =
          static_cast<float>(rng.uniform(0.15, 0.95));
    scene.spheres.push_back(s);
  }
  for (int c = 0; c < 3; ++c)
    scene.background[static_cast<size_t>(c)] =
        static_cast<float>(rng.uniform(0.05, 0.25));
  validate(scene);
  return scene;
}

CameraIntrinsics default_intrinsics(int64_t width, int64_t height) {
  CameraIntrinsics intr;
  intr.focal = kFocalFactor * static_cast<double>(width);
  intr.cx = static_cast<double>(width) / 2.0;
  intr.cy = static_cast<double>(height) / 2.0;
  intr.width = width;
  intr.height = height;
  return intr;
}

std::array<float, 3> shade_ray(const SyntheticScene& scene, const Ray& ray) {
  double best_t = -1;
  const Sphere* best = nullptr;
  for (const Sphere& s : scene.spheres) {
    Vec3 oc = ray.origin - s.center;
    double b = oc.dot(ray.direction);
    double disc = b * b - (oc.dot(oc) - s.radius * s.radius);
    if (disc < 0) continue;
    double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t <= 1e-9) t = -b + sq;
    if (t <= 1e-9) continue;
    if (!best || t < best_t) {
      best_t = t;
      best = &s;
    }
  }
  return best ? best->albedo : scene.background;
}

Tensor<float> render_ground_truth(const SyntheticScene& scene,
                                  const CameraIntrinsics& intr,
                                  const CameraPose& pose, int64_t h,
                                  int64_t w) {
  validate(scene);
  validate(intr);
  validate(pose);
  if (h != intr.height || w != intr.width)
    throw ConfigError("requested size disagrees with intrinsics");
  Tensor<float> img({h, w, 3});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      Ray ray = generate_ray(intr, pose, x + 0.5, y + 0.5, kNear, kFar);
      std::array<float, 3> c = shade_ray(scene, ray);
      for (int k = 0; k < 3; ++k)
        img.ptr()[(y * w + x) * 3 + k] = c[static_cast<size_t>(k)];
    }
  return img;
}

Tensor<float> apply_color_perturbation(const Tensor<float>& image,
                                       const std::array<double, 3>& gain,
                                       const std::array<double, 3>& bias) {
  if (image.rank() != 3 || image.shape[2] != 3)
    throw ConfigError("color perturbation expects [H,W,3]");
  for (int c = 0; c < 3; ++c) {
    if (gain[static_cast<size_t>(c)] < kGainLo ||
        gain[static_cast<size_t>(c)] > kGainHi)
      throw InputError("gain outside [0.6, 1.4]");
    if (bias[static_cast<size_t>(c)] < kBiasLo ||
        bias[static_cast<size_t>(c)] > kBiasHi)
      throw InputError("bias outside [-0.15, 0.15]");
  }
  Tensor<float> out(image.shape);
  int64_t pixels = image.shape[0] * image.shape[1];
  for (int64_t p = 0; p < pixels; ++p)
    for (int c = 0; c < 3; ++c) {
      double v = gain[static_cast<size_t>(c)] * image.ptr()[p * 3 + c] +
                 bias[static_cast<size_t>(c)];
      out.ptr()[p * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return out;
}

namespace {

struct ShapeStamp {
  bool ellipse = false;
  double cx = 0, cy = 0;   // center, pixels
  double hx = 0, hy = 0;   // half extents / semi-axes, pixels
  std::array<float, 3> color{};
};

bool inside(const ShapeStamp& s, double x, double y) {
  double dx = x - s.cx, dy = y - s.cy;
  if (s.ellipse)
    return (dx * dx) / (s.hx * s.hx) + (dy * dy) / (s.hy * s.hy) <= 1.0;
  return std::abs(dx) <= s.hx && std::abs(dy) <= s.hy;
}

}  // namespace

OccluderResult composite_occluder(const Tensor<float>& image,
                                  const OccluderSpec& spec, uint64_t seed) {
  if (image.rank() != 3 || image.shape[2] != 3)
    throw ConfigError("occluder compositing expects [H,W,3]");
  int64_t h = image.shape[0], w = image.shape[1];
  OccluderResult res;
  res.image = image;
  res.mask = Tensor<float>::zeros({h, w});
  if (spec.coverage == 0 || spec.max_shapes == 0) return res;
  if (spec.coverage < 0.10 || spec.coverage > 0.30)
    throw InputError("coverage target outside [0.10, 0.30]");
  if (spec.min_shapes < 1 || spec.max_shapes < spec.min_shapes)
    throw InputError("invalid occluder shape count range");

  Rng rng(seed);
  double total = static_cast<double>(h * w);
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    int n = spec.min_shapes + static_cast<int>(rng.uniform_int(
                                  spec.max_shapes - spec.min_shapes + 1));
    std::vector<ShapeStamp> stamps;
    for (int i = 0; i < n; ++i) {
      ShapeStamp s;
      s.ellipse = rng.uniform() < 0.5;
      double area = spec.coverage * total / n * rng.uniform(0.9, 1.1);
      double aspect = rng.uniform(0.5, 2.0);
      if (s.ellipse) {
        s.hx = std::sqrt(area * aspect / 3.14159265358979323846);
        s.hy = std::sqrt(area / (aspect * 3.14159265358979323846));
      } else {
        s.hx = std::sqrt(area * aspect) / 2.0;
        s.hy = std::sqrt(area / aspect) / 2.0;
      }
      // Margin keeps most of the shape on-frame, so achieved coverage lands
      // near the target and we rarely need another attempt.
      s.cx = rng.uniform(0.2, 0.8) * static_cast<double>(w);
      s.cy = rng.uniform(0.2, 0.8) * static_cast<double>(h);
      for (int c = 0; c < 3; ++c)
        s.color[static_cast<size_t>(c)] = static_cast<float>(rng.uniform());
      stamps.push_back(s);
    }
    Tensor<float> mask = Tensor<float>::zeros({h, w});
    int64_t covered = 0;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (const ShapeStamp& s : stamps)
          if (inside(s, x + 0.5, y + 0.5)) {
            if (mask[y * w + x] == 0.0f) ++covered;
            mask[y * w + x] = 1.0f;
            break;
          }
    double achieved = static_cast<double>(covered) / total;
    if (std::abs(achieved - spec.coverage) <= spec.tolerance) {
      res.mask = mask;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          // Last stamp wins where shapes overlap.
          for (auto it = stamps.rbegin(); it != stamps.rend(); ++it)
            if (inside(*it, x + 0.5, y + 0.5)) {
              for (int c = 0; c < 3; ++c)
                res.image.ptr()[(y * w + x) * 3 + c] =
                    it->color[static_cast<size_t>(c)];
              break;
            }
        }
      return res;
    }
  }
  throw GenerationError("could not place occluders at requested coverage");
}

std::vector<const FrameRecord*> DatasetManifest::split(
    const std::string& tag) const {
  std::vector<const FrameRecord*> out;
  for (const FrameRecord& f : frames)
    if (f.split == tag) out.push_back(&f);
  return out;
}

namespace {

std::string frame_name(const std::string& split, int64_t index,
                       const std::string& suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03lld%s.png", split.c_str(),
                static_cast<long long>(index), suffix.c_str());
  return buf;
}

json pose_to_json(const CameraPose& pose) {
  json out = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.push_back(pose.rotation.at(r, c));
    double t = r == 0 ? pose.translation.x
                      : (r == 1 ? pose.translation.y : pose.translation.z);
    out.push_back(t);
  }
  for (double v : {0.0, 0.0, 0.0, 1.0}) out.push_back(v);
  return out;
}

CameraPose pose_from_json(const json& j) {
  if (!j.is_array() || j.size() != 16)
    throw FormatError("pose must be 16 row-major values");
  CameraPose pose;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c)
      pose.rotation.at(r, c) = j[static_cast<size_t>(r * 4 + c)];
    double t = j[static_cast<size_t>(r * 4 + 3)];
    if (r == 0)
      pose.translation.x = t;
    else if (r == 1)
      pose.translation.y = t;
    else
      pose.translation.z = t;
  }
  return pose;
}

}  // namespace

DatasetManifest generate_dataset(const SyntheticScene& scene, int n_train,
                                 int n_test, int64_t h, int64_t w,
                                 const PerturbationSpec& spec, uint64_t seed,
                                 const std::string& out_dir) {
  if (n_train < 1 || n_test < 1)
    throw InputError("need at least one train and one test frame");
  validate(scene);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  DatasetManifest manifest;
  manifest.intrinsics = default_intrinsics(w, h);
  Rng root(seed);
  Rng pose_rng = root.fork(1);

  auto sample_pose = [&] {
    double z = pose_rng.uniform(-0.8, 0.8);
    double az = pose_rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    Vec3 eye{kCameraRadius * r * std::cos(az), kCameraRadius * r * std::sin(az),
             kCameraRadius * z};
    return look_at(eye, {0, 0, 0});
  };

  int64_t id = 0;
  for (int split_pass = 0; split_pass < 2; ++split_pass) {
    bool train = split_pass == 0;
    std::string tag = train ? "train" : "test";
    int count = train ? n_train : n_test;
    for (int i = 0; i < count; ++i, ++id) {
      FrameRecord rec;
      rec.id = id;
      rec.split = tag;
      rec.pose = sample_pose();
      Rng frame_rng = root.fork(1000 + static_cast<uint64_t>(id));

      Tensor<float> clean =
          render_ground_truth(scene, manifest.intrinsics, rec.pose, h, w);
      Tensor<float> observed = clean;
      if (spec.color) {
        for (int c = 0; c < 3; ++c)
          rec.gain[static_cast<size_t>(c)] =
              frame_rng.uniform(kGainLo, kGainHi);
        for (int c = 0; c < 3; ++c)
          rec.bias[static_cast<size_t>(c)] =
              frame_rng.uniform(kBiasLo, kBiasHi);
        observed = apply_color_perturbation(observed, rec.gain, rec.bias);
      }
      Tensor<float> mask = Tensor<float>::zeros({h, w});
      // Occluders land on training observations only; test frames keep at
      // most the color variation so they can ground appearance transfer.
      if (train && spec.occluders) {
        OccluderSpec ospec;
        ospec.coverage =
            frame_rng.uniform(spec.min_coverage, spec.max_coverage);
        uint64_t oseed = (static_cast<uint64_t>(frame_rng.next_u32()) << 32) |
                         frame_rng.next_u32();
        OccluderResult occ = composite_occluder(observed, ospec, oseed);
        observed = occ.image;
        mask = occ.mask;
      }

      rec.image = frame_name(tag, id, "");
      rec.clean = frame_name(tag, id, "_clean");
      rec.mask = frame_name(tag, id, "_mask");
      write_png_rgb(out_dir + "/" + rec.image, observed);
      write_png_rgb(out_dir + "/" + rec.clean, clean);
      write_png_gray(out_dir + "/" + rec.mask, mask);
      manifest.frames.push_back(rec);
    }
  }
  save_manifest(manifest, out_dir + "/manifest.json");
  return manifest;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  json j;
  j["version"] = m.version;
  j["intrinsics"] = {{"fx", m.intrinsics.focal},
                     {"cx", m.intrinsics.cx},
                     {"cy", m.intrinsics.cy},
                     {"w", m.intrinsics.width},
                     {"h", m.intrinsics.height}};
  j["frames"] = json::array();
  for (const FrameRecord& f : m.frames) {
    json fr;
    fr["id"] = f.id;
    fr["split"] = f.split;
    fr["pose"] = pose_to_json(f.pose);
    fr["image"] = f.image;
    fr["clean"] = f.clean;
    fr["mask"] = f.mask;
    fr["gain"] = f.gain;
    fr["bias"] = f.bias;
    j["frames"].push_back(fr);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path);
}

std::string parent_dir(const std::string& path) {
  std::filesystem::path p(path);
  std::string parent = p.parent_path().string();
  return parent.empty() ? "." : parent;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("manifest not found: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("manifest parse failure: " + std::string(e.what()));
  }
  DatasetManifest m;
  try {
    m.version = j.at("version");
    if (m.version != 1)
      throw FormatError("unsupported manifest version " +
                        std::to_string(m.version));
    const json& intr = j.at("intrinsics");
    m.intrinsics.focal = intr.at("fx");
    m.intrinsics.cx = intr.at("cx");
    m.intrinsics.cy = intr.at("cy");
    m.intrinsics.width = intr.at("w");
    m.intrinsics.height = intr.at("h");
    for (const json& fr : j.at("frames")) {
      FrameRecord rec;
      rec.id = fr.at("id");
      rec.split = fr.at("split");
      rec.pose = pose_from_json(fr.at("pose"));
      rec.image = fr.at("image");
      rec.clean = fr.at("clean");
      rec.mask = fr.at("mask");
      for (int c = 0; c < 3; ++c) {
        rec.gain[static_cast<size_t>(c)] = fr.at("gain").at(c);
        rec.bias[static_cast<size_t>(c)] = fr.at("bias").at(c);
      }
      m.frames.push_back(rec);
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest field error: " + std::string(e.what()));
  }
  validate(m.intrinsics);
  std::string dir = parent_dir(path);
  std::vector<int64_t> ids;
  for (const FrameRecord& f : m.frames) {
    if (f.split != "train" && f.split != "test")
      throw FormatError("unknown split tag: " + f.split);
    validate(f.pose);
    ids.push_back(f.id);
    for (const std::string& rel : {f.image, f.clean, f.mask})
      if (!std::filesystem::exists(dir + "/" + rel))
        throw ArtifactError("missing dataset file: " + dir + "/" + rel);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw FormatError("duplicate frame ids in manifest");
  return m;
}

}  // namespace hanerf
