#pragma once

#include <Eigen/Dense>

#include "fieldgen/common.hpp"
#include "fieldgen/scene/transform.hpp"

namespace fieldgen::vol {

// Orbit camera looking at the origin; world up is +z.
struct CameraPose {
  double azimuth = 0.0;    // radians
  double elevation = 0.0;  // radians
  double radius = 2.4;     // scene units
  double fov_deg = 50.0;

  Eigen::Vector3d position() const {
    return radius * Eigen::Vector3d(std::cos(elevation) * std::cos(azimuth),
                                    std::cos(elevation) * std::sin(azimuth),
                                    std::sin(elevation));
  }

  void basis(Eigen::Vector3d& forward, Eigen::Vector3d& right,
             Eigen::Vector3d& up) const {
    if (radius <= 0.0)
      throw std::invalid_argument("CameraPose: radius must be positive");
    forward = (-position()).normalized();
    const Eigen::Vector3d world_up(0, 0, 1);
    right = forward.cross(world_up);
    const double n = right.norm();
    if (n < 1e-9)
      throw std::invalid_argument("CameraPose: degenerate look-at (camera on the up axis)");
    right /= n;
    up = right.cross(forward);
  }

  double focal_px(long resolution) const {
    return 0.5 * static_cast<double>(resolution) /
           std::tan(0.5 * fov_deg * kPi / 180.0);
  }
};

struct RayBundle {
  scene::Points origins;     // [P,3]
  scene::Points directions;  // [P,3], unit norm
  double near = 0.0;
  double far = 0.0;
  long resolution = 0;
};

// One ray per pixel through the pinhole model, row-major pixel order.
inline RayBundle generate_rays(const CameraPose& pose, long resolution,
                               double near, double far) {
  if (!(near < far) || near <= 0.0)
    throw std::invalid_argument("generate_rays: require 0 < near < far");
  Eigen::Vector3d f, r, u;
  pose.basis(f, r, u);
  const Eigen::Vector3d o = pose.position();
  const double fl = pose.focal_px(resolution);
  const double half = 0.5 * static_cast<double>(resolution);

  RayBundle rays;
  rays.resolution = resolution;
  rays.near = near;
  rays.far = far;
  rays.origins.resize(resolution * resolution, 3);
  rays.directions.resize(resolution * resolution, 3);
  for (long i = 0; i < resolution; ++i) {
    for (long j = 0; j < resolution; ++j) {
      const double x = (static_cast<double>(j) + 0.5 - half) / fl;
      const double y = (half - (static_cast<double>(i) + 0.5)) / fl;
      const Eigen::Vector3d d = (f + x * r + y * u).normalized();
      const long p = i * resolution + j;
      rays.origins.row(p) = o.transpose();
      rays.directions.row(p) = d.transpose();
    }
  }
  return rays;
}

// Pinhole projection of a world point to fractional pixel coordinates
// (row, col); the inverse of the ray construction above.
inline Eigen::Vector2d project_point(const CameraPose& pose, long resolution,
                                     const Eigen::Vector3d& world) {
  Eigen::Vector3d f, r, u;
  pose.basis(f, r, u);
  const Eigen::Vector3d v = world - pose.position();
  const double depth = v.dot(f);
  if (depth <= 1e-9)
    throw std::invalid_argument("project_point: point behind camera");
  const double fl = pose.focal_px(resolution);
  const double half = 0.5 * static_cast<double>(resolution);
  const double col = v.dot(r) / depth * fl + half - 0.5;
  const double row = half - v.dot(u) / depth * fl - 0.5;
  return {row, col};
}

}  // namespace fieldgen::vol
