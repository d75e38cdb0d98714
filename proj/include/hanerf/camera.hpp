#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hanerf/rng.hpp"

namespace hanerf {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    return {x / n, y / n, z / n};
  }
};

// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{};

  static Mat3 identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
  }
  double& at(int r, int c) { return m[r * 3 + c]; }
  double at(int r, int c) const { return m[r * 3 + c]; }

  Vec3 mul(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 mul(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += at(i, k) * o.at(k, j);
        r.at(i, j) = s;
      }
    return r;
  }
  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.at(i, j) = at(j, i);
    return r;
  }
  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) -
           m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

// Unit quaternion for rotation interpolation.
struct Quat {
  double w = 1, x = 0, y = 0, z = 0;

  static Quat from_matrix(const Mat3& r);
  Mat3 to_matrix() const;
  Quat normalized() const;
  double dot(const Quat& o) const {
    return w * o.w + x * o.x + y * o.y + z * o.z;
  }
};

Quat slerp(const Quat& a, const Quat& b, double t);

struct CameraIntrinsics {
  double focal = 1;  // pixels
  double cx = 0, cy = 0;
  int64_t width = 0, height = 0;
};

// Camera-to-world transform: world = R * cam + t.
struct CameraPose {
  Mat3 rotation = Mat3::identity();
  Vec3 translation;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit
  double tnear = 0, tfar = 0;
};

// Throws InputError when an invariant fails.
void validate(const CameraIntrinsics& intr);
void validate(const CameraPose& pose, double tol = 1e-6);
void validate(const Ray& ray);

// Pixel (u,v): u right, v down, origin at the top-left corner; the camera
// looks down -z in its own frame. Pixel must lie in [0,W)x[0,H).
Ray generate_ray(const CameraIntrinsics& intr, const CameraPose& pose,
                 double u, double v, double tnear, double tfar);

// Projects a world point into the image. Requires the point in front of the
// camera (negative z in camera frame).
void project(const CameraIntrinsics& intr, const CameraPose& pose,
             const Vec3& world, double& u, double& v);

struct GridRays {
  std::vector<Ray> rays;                        // row-major, S*S entries
  std::vector<std::array<double, 2>> pixels;    // matching (u,v)
};

// S x S lattice covering the full image plane. Each sample sits at its cell
// center displaced by at most jitter_scale cell widths (jitter_scale in
// [0,1]; 0 = exact centers). Same seed, same rays.
GridRays generate_grid_rays(const CameraIntrinsics& intr,
                            const CameraPose& pose, int s,
                            uint64_t jitter_seed, double jitter_scale,
                            double tnear, double tfar);

// Quaternion slerp on rotation, linear on translation. t in [0,1].
CameraPose interpolate_pose(const CameraPose& a, const CameraPose& b,
                            double t);

// Camera at `eye` looking toward `target`, image up along `up`.
CameraPose look_at(const Vec3& eye, const Vec3& target,
                   const Vec3& up = {0, 0, 1});

}  // namespace hanerf
