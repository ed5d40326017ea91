#pragma once

#include <string>
#include <vector>

#include "fieldgen/harness/image_io.hpp"
#include "fieldgen/scene/transform.hpp"
#include "fieldgen/vol/camera.hpp"

namespace fieldgen::synth {

enum class PrimitiveKind { kEllipsoid, kBox };

inline const char* primitive_name(PrimitiveKind k) {
  return k == PrimitiveKind::kEllipsoid ? "ellipsoid" : "box";
}

// Analytic scene description: one shaded primitive over a vertical gradient
// background, with full pose/transform provenance. Rendering is
// deterministic in these parameters alone.
struct SyntheticSceneParams {
  PrimitiveKind kind = PrimitiveKind::kEllipsoid;
  Eigen::Vector3d axes{0.4, 0.4, 0.4};        // semi-axes, object units
  Eigen::Vector3d base_color{0.6, 0.4, 0.3};  // rgb in [0,1]
  double shading = 0.7;
  double object_rotation = 0.0;  // about +z; defines transform.rotation
  scene::AffineTransform transform;
  vol::CameraPose pose;
  Eigen::Vector3d bg_top{0.75, 0.8, 0.9};
  Eigen::Vector3d bg_bottom{0.25, 0.3, 0.4};
};

struct SyntheticRender {
  ad::Tensor<double> image;  // [1,3,R,R] in [-1,1]
  ad::Tensor<double> mask;   // [1,1,R,R] in {0,1}
};

// Ray-traced Lambertian render of the primitive; also emits the exact
// foreground mask.
SyntheticRender render_synthetic(const SyntheticSceneParams& params,
                                 long resolution);

// Scene-class parameter ranges. The out-of-domain ranges are disjoint from
// the train/test ranges by construction.
struct SceneClassConfig {
  std::string name = "face_like";
  PrimitiveKind kind = PrimitiveKind::kEllipsoid;
  double axis_min = 0.30, axis_max = 0.50;
  double ood_axis_min = 0.55, ood_axis_max = 0.65;
  double color_min = 0.20, color_max = 0.75;
  double ood_color_min = 0.80, ood_color_max = 0.98;
  double azimuth_min = -0.25 * kPi, azimuth_max = 0.25 * kPi;
  double elevation = 0.25;
  double radius = 2.4;
  double fov_deg = 50.0;
  double translate_max = 0.25;
  double rotation_max = 0.0;  // object spin; full turn for car_like
  double shading_min = 0.5, shading_max = 0.9;

  static SceneClassConfig face_like();
  static SceneClassConfig car_like();
  static SceneClassConfig by_name(const std::string& name);
};

struct SynthDataConfig {
  std::string root;
  SceneClassConfig scene_class;
  long resolution = 32;
  long train_count = 512;
  long test_count = 64;
  long ood_count = 64;
  std::uint64_t seed = 1;
  int threads = 1;
};

struct ManifestRecord {
  std::string split;  // train | test | ood
  long index = 0;
  std::string path;  // relative to the dataset root
  SyntheticSceneParams params;
};

struct DatasetManifest {
  std::string root;
  long resolution = 0;
  std::string class_name;
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> split(const std::string& name) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
      if (r.split == name) out.push_back(&r);
    return out;
  }
};

// Renders and writes `<root>/<split>/<index>.png` plus `<root>/manifest.tsv`.
// Parameter sampling is sequential in a fixed order, so a seed pins the
// dataset bytes regardless of thread count.
DatasetManifest build_dataset(const SynthDataConfig& cfg);

DatasetManifest load_manifest(const std::string& root);

// Reproduces the PNG bytes for one manifest record (provenance check).
img::ImageU8 render_record(const DatasetManifest& manifest,
                           const ManifestRecord& record);

}  // namespace fieldgen::synth
