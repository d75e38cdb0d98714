#include "hanerf/camera.hpp"

#include <algorithm>
#include <sstream>

#include "hanerf/errors.hpp"

namespace hanerf {

Quat Quat::from_matrix(const Mat3& r) {
  // Shepperd's method: pick the largest diagonal combination for stability.
  Quat q;
  double trace = r.at(0, 0) + r.at(1, 1) + r.at(2, 2);
  if (trace > 0) {
    double s = std::sqrt(trace + 1.0) * 2;
    q.w = 0.25 * s;
    q.x = (r.at(2, 1) - r.at(1, 2)) / s;
    q.y = (r.at(0, 2) - r.at(2, 0)) / s;
    q.z = (r.at(1, 0) - r.at(0, 1)) / s;
  } else if (r.at(0, 0) > r.at(1, 1) && r.at(0, 0) > r.at(2, 2)) {
    double s = std::sqrt(1.0 + r.at(0, 0) - r.at(1, 1) - r.at(2, 2)) * 2;
    q.w = (r.at(2, 1) - r.at(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (r.at(0, 1) + r.at(1, 0)) / s;
    q.z = (r.at(0, 2) + r.at(2, 0)) / s;
  } else if (r.at(1, 1) > r.at(2, 2)) {
    double s = std::sqrt(1.0 + r.at(1, 1) - r.at(0, 0) - r.at(2, 2)) * 2;
    q.w = (r.at(0, 2) - r.at(2, 0)) / s;
    q.x = (r.at(0, 1) + r.at(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (r.at(1, 2) + r.at(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + r.at(2, 2) - r.at(0, 0) - r.at(1, 1)) * 2;
    q.w = (r.at(1, 0) - r.at(0, 1)) / s;
    q.x = (r.at(0, 2) + r.at(2, 0)) / s;
    q.y = (r.at(1, 2) + r.at(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return q.normalized();
}

Mat3 Quat::to_matrix() const {
  Mat3 r;
  double ww = w * w, xx = x * x, yy = y * y, zz = z * z;
  r.at(0, 0) = ww + xx - yy - zz;
  r.at(0, 1) = 2 * (x * y - w * z);
  r.at(0, 2) = 2 * (x * z + w * y);
  r.at(1, 0) = 2 * (x * y + w * z);
  r.at(1, 1) = ww - xx + yy - zz;
  r.at(1, 2) = 2 * (y * z - w * x);
  r.at(2, 0) = 2 * (x * z - w * y);
  r.at(2, 1) = 2 * (y * z + w * x);
  r.at(2, 2) = ww - xx - yy + zz;
  return r;
}

Quat Quat::normalized() const {
  double n = std::sqrt(w * w + x * x + y * y + z * z);
  return {w / n, x / n, y / n, z / n};
}

Quat slerp(const Quat& a, const Quat& b, double t) {
  Quat q2 = b;
  double d = a.dot(b);
  if (d < 0) {  // shorter arc
    d = -d;
    q2 = {-b.w, -b.x, -b.y, -b.z};
  }
  if (d > 0.9995) {
    // Nearly parallel: linear blend avoids dividing by a tiny sine.
    Quat out{a.w + t * (q2.w - a.w), a.x + t * (q2.x - a.x),
             a.y + t * (q2.y - a.y), a.z + t * (q2.z - a.z)};
    return out.normalized();
  }
  double theta = std::acos(std::clamp(d, -1.0, 1.0));
  double s = std::sin(theta);
  double wa = std::sin((1 - t) * theta) / s;
  double wb = std::sin(t * theta) / s;
  Quat out{wa * a.w + wb * q2.w, wa * a.x + wb * q2.x, wa * a.y + wb * q2.y,
           wa * a.z + wb * q2.z};
  return out.normalized();
}

void validate(const CameraIntrinsics& intr) {
  if (!(intr.focal > 0)) throw InputError("camera focal length must be > 0");
  if (intr.width <= 0 || intr.height <= 0)
    throw InputError("camera image size must be positive");
  if (intr.cx < 0 || intr.cx > static_cast<double>(intr.width) ||
      intr.cy < 0 || intr.cy > static_cast<double>(intr.height))
    throw InputError("principal point outside image bounds");
}

void validate(const CameraPose& pose, double tol) {
  Mat3 rtr = pose.rotation.transposed().mul(pose.rotation);
  Mat3 id = Mat3::identity();
  for (int i = 0; i < 9; ++i)
    if (std::abs(rtr.m[i] - id.m[i]) > tol)
      throw InputError("camera rotation is not orthonormal");
  if (std::abs(pose.rotation.det() - 1.0) > tol)
    throw InputError("camera rotation determinant is not +1");
}

void validate(const Ray& ray) {
  if (std::abs(ray.direction.norm() - 1.0) > 1e-6)
    throw InputError("ray direction is not unit length");
  if (!(ray.tnear > 0 && ray.tnear < ray.tfar))
    throw InputError("ray requires 0 < tnear < tfar");
}

Ray generate_ray(const CameraIntrinsics& intr, const CameraPose& pose,
                 double u, double v, double tnear, double tfar) {
  if (u < 0 || u >= static_cast<double>(intr.width) || v < 0 ||
      v >= static_cast<double>(intr.height)) {
    std::ostringstream os;
    os << "pixel (" << u << "," << v << ") outside [0," << intr.width
       << ")x[0," << intr.height << ")";
    throw InputError(os.str());
  }
  Vec3 dir_cam{(u - intr.cx) / intr.focal, -(v - intr.cy) / intr.focal, -1.0};
  Ray ray;
  ray.origin = pose.translation;
  ray.direction = pose.rotation.mul(dir_cam).normalized();
  ray.tnear = tnear;
  ray.tfar = tfar;
  return ray;
}

void project(const CameraIntrinsics& intr, const CameraPose& pose,
             const Vec3& world, double& u, double& v) {
  Vec3 cam = pose.rotation.transposed().mul(world - pose.translation);
  if (!(cam.z < 0)) throw InputError("point is behind the camera");
  u = intr.cx + intr.focal * (cam.x / -cam.z);
  v = intr.cy - intr.focal * (cam.y / -cam.z);
}

GridRays generate_grid_rays(const CameraIntrinsics& intr,
                            const CameraPose& pose, int s,
                            uint64_t jitter_seed, double jitter_scale,
                            double tnear, double tfar) {
  if (s < 2) throw InputError("grid size must be >= 2");
  if (jitter_scale < 0 || jitter_scale > 1)
    throw InputError("jitter scale must lie in [0,1]");
  Rng rng(jitter_seed);
  GridRays out;
  out.rays.reserve(static_cast<size_t>(s) * s);
  out.pixels.reserve(static_cast<size_t>(s) * s);
  double cw = static_cast<double>(intr.width) / s;
  double ch = static_cast<double>(intr.height) / s;
  for (int row = 0; row < s; ++row) {
    for (int col = 0; col < s; ++col) {
      // Cell center plus at most jitter_scale cell widths of displacement;
      // clamp keeps jittered samples inside the image.
      double ju = 0.5 + jitter_scale * (rng.uniform() - 0.5);
      double jv = 0.5 + jitter_scale * (rng.uniform() - 0.5);
      double u = std::min((col + ju) * cw,
                          static_cast<double>(intr.width) - 1e-6);
      double v = std::min((row + jv) * ch,
                          static_cast<double>(intr.height) - 1e-6);
      out.rays.push_back(generate_ray(intr, pose, u, v, tnear, tfar));
      out.pixels.push_back({u, v});
    }
  }
  return out;
}

CameraPose interpolate_pose(const CameraPose& a, const CameraPose& b,
                            double t) {
  if (t < 0 || t > 1) throw InputError("interpolation parameter outside [0,1]");
  CameraPose out;
  out.rotation = slerp(Quat::from_matrix(a.rotation),
                       Quat::from_matrix(b.rotation), t)
                     .to_matrix();
  out.translation = a.translation + (b.translation - a.translation) * t;
  return out;
}

CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  Vec3 fwd = (target - eye);
  if (fwd.norm() < 1e-12) throw InputError("look_at: eye equals target");
  fwd = fwd.normalized();
  Vec3 upv = up;
  if (std::abs(fwd.dot(upv.normalized())) > 0.999) upv = {0, 1, 0};
  Vec3 right = fwd.cross(upv).normalized();
  Vec3 zc = -fwd;                  // camera +z points backward
  Vec3 yc = zc.cross(right);       // camera +y points image-up
  CameraPose pose;
  // Columns are the world-frame camera basis vectors.
  pose.rotation.at(0, 0) = right.x;
  pose.rotation.at(1, 0) = right.y;
  pose.rotation.at(2, 0) = right.z;
  pose.rotation.at(0, 1) = yc.x;
  pose.rotation.at(1, 1) = yc.y;
  pose.rotation.at(2, 1) = yc.z;
  pose.rotation.at(0, 2) = zc.x;
  pose.rotation.at(1, 2) = zc.y;
  pose.rotation.at(2, 2) = zc.z;
  pose.translation = eye;
  return pose;
}

}  // namespace hanerf
