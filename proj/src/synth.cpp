#include "fieldgen/synth/synth.hpp"

#include <filesystem>
#include <fstream>
#include <thread>

namespace fieldgen::synth {

namespace fs = std::filesystem;

namespace {

const Eigen::Vector3d kLightDir = Eigen::Vector3d(0.45, 0.2, 0.87).normalized();
constexpr double kAmbient = 0.35;

struct Hit {
  bool valid = false;
  double t = 0.0;
  Eigen::Vector3d normal_world;  // unit
};

// Intersections run in object coordinates; the ray parameter t matches the
// world ray so depth ordering is consistent.
Hit intersect_ellipsoid(const SyntheticSceneParams& p,
                        const Eigen::Vector3d& o_obj,
                        const Eigen::Vector3d& d_obj) {
  const Eigen::Vector3d u0 = o_obj.cwiseQuotient(p.axes);
  const Eigen::Vector3d du = d_obj.cwiseQuotient(p.axes);
  const double a = du.squaredNorm();
  const double b = 2.0 * u0.dot(du);
  const double c = u0.squaredNorm() - 1.0;
  const double disc = b * b - 4.0 * a * c;
  Hit h;
  if (disc < 0.0 || a <= 0.0) return h;
  const double sq = std::sqrt(disc);
  double t = (-b - sq) / (2.0 * a);
  if (t < 1e-6) t = (-b + sq) / (2.0 * a);
  if (t < 1e-6) return h;
  h.valid = true;
  h.t = t;
  const Eigen::Vector3d q = o_obj + t * d_obj;
  const Eigen::Vector3d n_obj = q.cwiseQuotient(p.axes.cwiseProduct(p.axes));
  const Eigen::Vector3d n_world =
      p.transform.rotation *
      n_obj.cwiseQuotient(p.transform.scale);
  h.normal_world = n_world.normalized();
  return h;
}

Hit intersect_box(const SyntheticSceneParams& p, const Eigen::Vector3d& o_obj,
                  const Eigen::Vector3d& d_obj) {
  double t_enter = -1e30, t_exit = 1e30;
  int enter_axis = -1;
  double enter_sign = 1.0;
  for (int axis = 0; axis < 3; ++axis) {
    const double half = p.axes[axis];
    if (std::abs(d_obj[axis]) < 1e-12) {
      if (std::abs(o_obj[axis]) > half) return {};
      continue;
    }
    double t0 = (-half - o_obj[axis]) / d_obj[axis];
    double t1 = (half - o_obj[axis]) / d_obj[axis];
    double sign = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1.0;
    }
    if (t0 > t_enter) {
      t_enter = t0;
      enter_axis = axis;
      enter_sign = sign;
    }
    t_exit = std::min(t_exit, t1);
    if (t_enter > t_exit) return {};
  }
  if (enter_axis < 0 || t_enter < 1e-6) return {};
  Hit h;
  h.valid = true;
  h.t = t_enter;
  Eigen::Vector3d n_obj = Eigen::Vector3d::Zero();
  n_obj[enter_axis] = enter_sign;
  const Eigen::Vector3d n_world =
      p.transform.rotation * n_obj.cwiseQuotient(p.transform.scale);
  h.normal_world = n_world.normalized();
  return h;
}

}  // namespace

SyntheticRender render_synthetic(const SyntheticSceneParams& params,
                                 long resolution) {
  params.transform.validate();
  auto rays = vol::generate_rays(params.pose, resolution, 0.1,
                                 params.pose.radius * 4.0);
  const long px = resolution * resolution;
  ad::Buf<double> img(3 * px);
  ad::Buf<double> mask(px);

  const Eigen::Matrix3d rt = params.transform.rotation.transpose();
  for (long p = 0; p < px; ++p) {
    const Eigen::Vector3d o = rays.origins.row(p).transpose();
    const Eigen::Vector3d d = rays.directions.row(p).transpose();
    const Eigen::Vector3d o_obj =
        (rt * (o - params.transform.translation))
            .cwiseQuotient(params.transform.scale);
    const Eigen::Vector3d d_obj =
        (rt * d).cwiseQuotient(params.transform.scale);

    const Hit hit = params.kind == PrimitiveKind::kEllipsoid
                        ? intersect_ellipsoid(params, o_obj, d_obj)
                        : intersect_box(params, o_obj, d_obj);
    Eigen::Vector3d color;
    if (hit.valid) {
      const double lambert = std::max(0.0, hit.normal_world.dot(kLightDir));
      const double intensity =
          std::min(1.0, kAmbient + params.shading * lambert);
      color = params.base_color * intensity;
      mask[p] = 1.0;
    } else {
      const double f =
          static_cast<double>(p / resolution) / (resolution - 1);
      color = params.bg_top * (1.0 - f) + params.bg_bottom * f;
      mask[p] = 0.0;
    }
    for (int ch = 0; ch < 3; ++ch)
      img[ch * px + p] = std::clamp(color[ch] * 2.0 - 1.0, -1.0, 1.0);
  }
  SyntheticRender out;
  out.image = ad::Tensor<double>::from_buf({1, 3, resolution, resolution},
                                           std::move(img));
  out.mask = ad::Tensor<double>::from_buf({1, 1, resolution, resolution},
                                          std::move(mask));
  return out;
}

SceneClassConfig SceneClassConfig::face_like() { return {}; }

SceneClassConfig SceneClassConfig::car_like() {
  SceneClassConfig c;
  c.name = "car_like";
  c.kind = PrimitiveKind::kBox;
  c.axis_min = 0.25;
  c.axis_max = 0.45;
  c.ood_axis_min = 0.50;
  c.ood_axis_max = 0.60;
  c.azimuth_min = 0.0;
  c.azimuth_max = 2.0 * kPi;
  c.rotation_max = 2.0 * kPi;
  return c;
}

SceneClassConfig SceneClassConfig::by_name(const std::string& name) {
  if (name == "face_like") return face_like();
  if (name == "car_like") return car_like();
  throw config_error("unknown scene class: " + name);
}

namespace {

SyntheticSceneParams sample_params(Rng& rng, const SceneClassConfig& cls,
                                   bool out_of_domain) {
  const double axis_lo = out_of_domain ? cls.ood_axis_min : cls.axis_min;
  const double axis_hi = out_of_domain ? cls.ood_axis_max : cls.axis_max;
  const double color_lo = out_of_domain ? cls.ood_color_min : cls.color_min;
  const double color_hi = out_of_domain ? cls.ood_color_max : cls.color_max;

  SyntheticSceneParams p;
  p.kind = cls.kind;
  for (int i = 0; i < 3; ++i) p.axes[i] = rng.uniform(axis_lo, axis_hi);
  if (cls.kind == PrimitiveKind::kBox) p.axes[0] *= 1.6;  // elongated body
  for (int i = 0; i < 3; ++i)
    p.base_color[i] = rng.uniform(color_lo, color_hi);
  p.shading = rng.uniform(cls.shading_min, cls.shading_max);
  p.object_rotation =
      cls.rotation_max > 0 ? rng.uniform(0.0, cls.rotation_max) : 0.0;
  Eigen::Vector3d t;
  for (int i = 0; i < 3; ++i)
    t[i] = rng.uniform(-cls.translate_max, cls.translate_max);
  t[2] *= 0.4;  // keep objects near the ground plane
  p.transform = scene::AffineTransform::make(
      Eigen::Vector3d::Ones(), t,
      scene::AffineTransform::rotation_z(p.object_rotation));
  p.pose.azimuth = rng.uniform(cls.azimuth_min, cls.azimuth_max);
  p.pose.elevation = cls.elevation;
  p.pose.radius = cls.radius;
  p.pose.fov_deg = cls.fov_deg;
  // mild background variation
  const double tone = rng.uniform(-0.1, 0.1);
  p.bg_top = Eigen::Vector3d(0.75, 0.8, 0.9).array() + tone;
  p.bg_bottom = Eigen::Vector3d(0.25, 0.3, 0.4).array() + tone;
  return p;
}

void write_manifest(const DatasetManifest& m) {
  std::ofstream os(fs::path(m.root) / "manifest.tsv");
  if (!os) throw io_error("cannot write manifest under " + m.root);
  os << "# fieldgen synthetic dataset manifest v1\n";
  os << "# class " << m.class_name << " resolution " << m.resolution << "\n";
  os << "split\tindex\tpath\tkind\tax\tay\taz\tcr\tcg\tcb\tshading\trot\t"
        "tx\tty\ttz\tcam_azimuth\tcam_elevation\tcam_radius\tcam_fov\t"
        "bg_top_r\tbg_top_g\tbg_top_b\tbg_bot_r\tbg_bot_g\tbg_bot_b\n";
  os.precision(17);
  for (const auto& r : m.records) {
    const auto& p = r.params;
    os << r.split << '\t' << r.index << '\t' << r.path << '\t'
       << primitive_name(p.kind) << '\t' << p.axes[0] << '\t' << p.axes[1]
       << '\t' << p.axes[2] << '\t' << p.base_color[0] << '\t'
       << p.base_color[1] << '\t' << p.base_color[2] << '\t' << p.shading
       << '\t' << p.object_rotation << '\t' << p.transform.translation[0]
       << '\t' << p.transform.translation[1] << '\t'
       << p.transform.translation[2] << '\t' << p.pose.azimuth << '\t'
       << p.pose.elevation << '\t' << p.pose.radius << '\t' << p.pose.fov_deg
       << '\t' << p.bg_top[0] << '\t' << p.bg_top[1] << '\t' << p.bg_top[2]
       << '\t' << p.bg_bottom[0] << '\t' << p.bg_bottom[1] << '\t'
       << p.bg_bottom[2] << '\n';
  }
  if (!os) throw io_error("manifest write failed under " + m.root);
}

}  // namespace

DatasetManifest build_dataset(const SynthDataConfig& cfg) {
  if (cfg.root.empty()) throw io_error("build_dataset: empty root path");
  std::error_code ec;
  fs::create_directories(fs::path(cfg.root), ec);
  for (const char* split : {"train", "test", "ood"})
    fs::create_directories(fs::path(cfg.root) / split, ec);
  if (ec) throw io_error("build_dataset: cannot create " + cfg.root);

  DatasetManifest manifest;
  manifest.root = cfg.root;
  manifest.resolution = cfg.resolution;
  manifest.class_name = cfg.scene_class.name;

  Rng rng(cfg.seed);
  auto add_split = [&](const char* split, long count, bool ood) {
    for (long i = 0; i < count; ++i) {
      ManifestRecord rec;
      rec.split = split;
      rec.index = i;
      rec.path = std::string(split) + "/" + std::to_string(i) + ".png";
      rec.params = sample_params(rng, cfg.scene_class, ood);
      manifest.records.push_back(std::move(rec));
    }
  };
  add_split("train", cfg.train_count, false);
  add_split("test", cfg.test_count, false);
  add_split("ood", cfg.ood_count, true);

  // rendering is per-record independent; sampling already fixed the bytes
  const int threads = std::max(1, cfg.threads);
  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& rec = manifest.records[i];
      auto rendered = render_synthetic(rec.params, cfg.resolution);
      img::write_png((fs::path(cfg.root) / rec.path).string(),
                     img::tensor_to_u8(rendered.image));
      img::ImageU8 mask_img;
      mask_img.width = cfg.resolution;
      mask_img.height = cfg.resolution;
      mask_img.channels = 1;
      mask_img.data.resize(static_cast<std::size_t>(cfg.resolution * cfg.resolution));
      for (long k = 0; k < cfg.resolution * cfg.resolution; ++k)
        mask_img.data[static_cast<std::size_t>(k)] =
            rendered.mask.at(k) > 0.5 ? 255 : 0;
      fs::path mask_path = fs::path(cfg.root) / rec.path;
      mask_path.replace_extension(".mask.png");
      img::write_png(mask_path.string(), mask_img);
    }
  };
  if (threads == 1) {
    worker(0, manifest.records.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t n = manifest.records.size();
    const std::size_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::size_t b = std::min(n, t * chunk);
      const std::size_t e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(worker, b, e);
    }
    for (auto& th : pool) th.join();
  }
  write_manifest(manifest);
  return manifest;
}

DatasetManifest load_manifest(const std::string& root) {
  std::ifstream is(fs::path(root) / "manifest.tsv");
  if (!is) throw io_error("cannot read manifest under " + root);
  DatasetManifest m;
  m.root = root;
  std::string line;
  if (!std::getline(is, line) ||
      line.find("synthetic dataset manifest v1") == std::string::npos)
    throw io_error("manifest version line missing in " + root);
  if (!std::getline(is, line))
    throw io_error("manifest class line missing in " + root);
  {
    std::istringstream ls(line);
    std::string hash, cls_kw, res_kw;
    ls >> hash >> cls_kw >> m.class_name >> res_kw >> m.resolution;
  }
  std::getline(is, line);  // column header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRecord r;
    std::string kind;
    double rot = 0;
    Eigen::Vector3d t;
    ls >> r.split >> r.index >> r.path >> kind >> r.params.axes[0] >>
        r.params.axes[1] >> r.params.axes[2] >> r.params.base_color[0] >>
        r.params.base_color[1] >> r.params.base_color[2] >>
        r.params.shading >> rot >> t[0] >> t[1] >> t[2] >>
        r.params.pose.azimuth >> r.params.pose.elevation >>
        r.params.pose.radius >> r.params.pose.fov_deg >> r.params.bg_top[0] >>
        r.params.bg_top[1] >> r.params.bg_top[2] >> r.params.bg_bottom[0] >>
        r.params.bg_bottom[1] >> r.params.bg_bottom[2];
    if (!ls) throw io_error("malformed manifest row in " + root);
    r.params.kind =
        kind == "ellipsoid" ? PrimitiveKind::kEllipsoid : PrimitiveKind::kBox;
    r.params.object_rotation = rot;
    r.params.transform = scene::AffineTransform::make(
        Eigen::Vector3d::Ones(), t, scene::AffineTransform::rotation_z(rot));
    m.records.push_back(std::move(r));
  }
  return m;
}

img::ImageU8 render_record(const DatasetManifest& manifest,
                           const ManifestRecord& record) {
  return img::tensor_to_u8(
      render_synthetic(record.params, manifest.resolution).image);
}

}  // namespace fieldgen::synth
