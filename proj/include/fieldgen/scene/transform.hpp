#pragma once

#include <Eigen/Dense>

#include "fieldgen/common.hpp"

namespace fieldgen::scene {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Per-object pose T = {s, t, R}; forward map tau(x) = R*(s .* x) + t.
struct AffineTransform {
  Eigen::Vector3d scale = Eigen::Vector3d::Ones();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();

  static AffineTransform identity() { return {}; }

  static AffineTransform make(const Eigen::Vector3d& s,
                              const Eigen::Vector3d& t,
                              const Eigen::Matrix3d& r) {
    AffineTransform a{s, t, r};
    a.validate();
    return a;
  }

  static Eigen::Matrix3d rotation_z(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Eigen::Matrix3d r;
    r << c, -s, 0, s, c, 0, 0, 0, 1;
    return r;
  }

  void validate() const {
    if ((scale.array() <= 0.0).any())
      throw std::invalid_argument("AffineTransform: scale must be positive");
    const Eigen::Matrix3d gram = rotation.transpose() * rotation;
    if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
      throw std::invalid_argument("AffineTransform: R not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-6)
      throw std::invalid_argument("AffineTransform: det(R) != 1");
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return rotation * scale.cwiseProduct(x) + translation;
  }

  Eigen::Vector3d apply_inverse(const Eigen::Vector3d& x) const {
    return (rotation.transpose() * (x - translation)).cwiseQuotient(scale);
  }

  // Directions transform by rotation only, then renormalize.
  Eigen::Vector3d rotate_inverse_dir(const Eigen::Vector3d& d) const {
    return (rotation.transpose() * d).normalized();
  }
};

// Batch inverse map tau^{-1}(x) = (R^T (x - t)) ./ s.
inline Points apply_inverse_transform(const AffineTransform& t,
                                      const Points& pts) {
  t.validate();
  Points out(pts.rows(), 3);
  const Eigen::Matrix3d rt = t.rotation.transpose();
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Eigen::Vector3d q =
        rt * (pts.row(i).transpose() - t.translation);
    out.row(i) = q.cwiseQuotient(t.scale).transpose();
  }
  return out;
}

inline Points apply_forward_transform(const AffineTransform& t,
                                      const Points& pts) {
  t.validate();
  Points out(pts.rows(), 3);
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    out.row(i) = t.apply(pts.row(i).transpose()).transpose();
  return out;
}

inline Points apply_inverse_directions(const AffineTransform& t,
                                       const Points& dirs) {
  Points out(dirs.rows(), 3);
  const Eigen::Matrix3d rt = t.rotation.transpose();
  for (Eigen::Index i = 0; i < dirs.rows(); ++i) {
    Eigen::Vector3d d = rt * dirs.row(i).transpose();
    const double n = d.norm();
    out.row(i) = (n > 0 ? (d / n).eval() : d).transpose();
  }
  return out;
}

}  // namespace fieldgen::scene
