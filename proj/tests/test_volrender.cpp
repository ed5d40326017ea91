#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fieldgen/ad/graph.hpp"
#include "fieldgen/vol/camera.hpp"
#include "fieldgen/vol/render.hpp"
#include "oracle_utils.hpp"

using namespace fieldgen;
using ad::Tensor;

TEST_CASE("generate_rays: pinhole geometry basics") {
  vol::CameraPose pose;
  pose.azimuth = 0.7;
  pose.elevation = 0.3;
  pose.radius = 2.0;
  auto rays = vol::generate_rays(pose, 17, 0.5, 3.5);

  Eigen::Vector3d f, r, u;
  pose.basis(f, r, u);
  const Eigen::Vector3d cam = pose.position();
  // all origins equal the camera position
  for (long p = 0; p < rays.origins.rows(); ++p)
    CHECK((rays.origins.row(p).transpose() - cam).norm() == doctest::Approx(0));
  // center pixel of an odd grid looks along the forward axis
  const long c = 8 * 17 + 8;
  CHECK((rays.directions.row(c).transpose() - f).norm() < 1e-6);
  // directions are unit norm
  for (long p = 0; p < rays.directions.rows(); ++p)
    CHECK(rays.directions.row(p).norm() == doctest::Approx(1.0).epsilon(1e-9));

  // azimuth + pi flips the forward axis
  vol::CameraPose flipped = pose;
  flipped.azimuth += kPi;
  flipped.elevation = -pose.elevation;
  Eigen::Vector3d f2, r2, u2;
  flipped.basis(f2, r2, u2);
  CHECK((f2 + f).norm() < 1e-9);
}

TEST_CASE("generate_rays rejects bad near/far") {
  vol::CameraPose pose;
  CHECK_THROWS_AS(vol::generate_rays(pose, 8, 2.0, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(vol::generate_rays(pose, 8, -1.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("project_point inverts ray generation") {
  vol::CameraPose pose;
  pose.azimuth = 1.2;
  pose.elevation = 0.25;
  pose.radius = 2.4;
  auto rays = vol::generate_rays(pose, 16, 0.6, 4.2);
  for (long p : {0L, 37L, 128L, 255L}) {
    const Eigen::Vector3d world =
        rays.origins.row(p).transpose() + 1.7 * rays.directions.row(p).transpose();
    const Eigen::Vector2d rc = vol::project_point(pose, 16, world);
    CHECK(rc[0] == doctest::Approx(static_cast<double>(p / 16)).epsilon(1e-6));
    CHECK(rc[1] == doctest::Approx(static_cast<double>(p % 16)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(
      vol::project_point(pose, 16, pose.position() * 1.5),
      std::invalid_argument);
}

TEST_CASE("composite_rays: zero density yields zero feature and alpha") {
  auto sigma = Tensor<double>::zeros({4, 8});
  auto feats = Tensor<double>::ones({32, 3});
  auto [f, a] = vol::composite_rays(sigma, feats, 0.1);
  for (long i = 0; i < f.numel(); ++i) CHECK(f.at(i) == 0.0);
  for (long i = 0; i < a.numel(); ++i) CHECK(a.at(i) == 0.0);
}

TEST_CASE("composite_rays: one opaque sample dominates the pixel") {
  ad::Buf<double> s = ad::Buf<double>::Zero(8);
  s[3] = 500.0;  // sigma*delta >> 1 at sample 3
  auto sigma = Tensor<double>::from_buf({1, 8}, std::move(s));
  ad::Buf<double> fv = ad::Buf<double>::Zero(8 * 2);
  fv[3 * 2] = 0.25;
  fv[3 * 2 + 1] = -0.75;
  auto feats = Tensor<double>::from_buf({8, 2}, std::move(fv));
  auto [f, a] = vol::composite_rays(sigma, feats, 0.5);
  CHECK(f.at(0) == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(f.at(1) == doctest::Approx(-0.75).epsilon(1e-9));
  CHECK(a.at(0) == doctest::Approx(1.0).epsilon(1e-9));
}

namespace {

struct AnalyticField {
  double amp, freq, phase, f0, f1;
  double sigma(double t) const {
    return amp * (1.0 + std::sin(freq * t + phase));
  }
  std::vector<double> feat(double t) const {
    return {f0 * std::cos(0.6 * t), f1 * (0.3 + 0.1 * t)};
  }
};

// Quadrature through the library path for one ray over [near, far).
std::pair<std::vector<double>, double> render_analytic(const AnalyticField& fld,
                                                       double near, double far,
                                                       int n) {
  const double dt = (far - near) / n;
  ad::Buf<double> sig(n), fv(2 * n);
  for (int j = 0; j < n; ++j) {
    const double t = near + (j + 0.5) * dt;
    sig[j] = fld.sigma(t);
    const auto f = fld.feat(t);
    fv[2 * j] = f[0];
    fv[2 * j + 1] = f[1];
  }
  auto [f, a] = vol::composite_rays(
      Tensor<double>::from_buf({1, n}, std::move(sig)),
      Tensor<double>::from_buf({n, 2}, std::move(fv)), dt);
  return {{f.at(0), f.at(1)}, a.at(0)};
}

}  // namespace

TEST_CASE("32-sample quadrature stays within 1e-2 of a dense reference") {
  const AnalyticField fields[5] = {{0.8, 1.0, 0.0, 1.0, 0.5},
                                   {1.2, 1.7, 0.9, -0.7, 1.0},
                                   {0.5, 0.6, 2.0, 0.4, -0.4},
                                   {1.0, 2.0, 4.0, 0.9, 0.2},
                                   {1.5, 1.2, 1.1, -0.2, 0.8}};
  const double near = 0.6, far = 4.2;
  for (const auto& fld : fields) {
    auto sigma_fn = [&](double t) { return fld.sigma(t); };
    auto feat_fn = [&](double t) { return fld.feat(t); };
    const auto ref =
        oracle::reference_composite(sigma_fn, feat_fn, near, far, 1024, 2);
    const auto got = render_analytic(fld, near, far, 32);
    const double gap = std::max({std::abs(got.first[0] - ref.feature[0]),
                                 std::abs(got.first[1] - ref.feature[1]),
                                 std::abs(got.second - ref.alpha)});
    INFO("L_inf gap at 32 samples: " << gap);
    CHECK(gap < 1e-2);

    // refinement is monotone over three doublings
    double prev = gap;
    for (int n : {64, 128, 256}) {
      const auto g2 = render_analytic(fld, near, far, n);
      const double gap2 = std::max({std::abs(g2.first[0] - ref.feature[0]),
                                    std::abs(g2.first[1] - ref.feature[1]),
                                    std::abs(g2.second - ref.alpha)});
      CHECK(gap2 <= prev + 1e-12);
      prev = gap2;
    }
  }
}

namespace {

scene::FieldParams<double> tiny_field(Rng& rng, long mf = 4) {
  return scene::FieldParams<double>::init(/*d_z=*/6, mf, /*hidden=*/12,
                                          /*depth=*/2, /*n_freq_x=*/2,
                                          /*n_freq_d=*/1, rng);
}

scene::FieldParams<double> empty_background(Rng& rng, long mf = 4) {
  auto f = tiny_field(rng, mf);
  f.sigma_b.mutable_value()[0] = -60.0;  // softplus(-60) ~ 1e-26
  return f;
}

scene::SceneSpec<double> one_object_scene(Rng& rng, double azimuth,
                                          const scene::AffineTransform& t) {
  scene::SceneSamplingConfig cfg;
  cfg.d_z = 6;
  cfg.azimuth_min = cfg.azimuth_max = azimuth;
  auto s = scene::sample_scene_spec<double>(rng, cfg);
  s.entities[0].transform = t;
  return s;
}

}  // namespace

TEST_CASE("alpha map lies in [0,1] and renders deterministically") {
  Rng rng(404);
  auto obj = tiny_field(rng);
  auto bg = tiny_field(rng);
  vol::RenderConfig rc;
  rc.feature_res = 8;
  rc.n_samples = 12;
  Rng srng(5);
  auto scn = scene::sample_scene_spec<double>(
      srng, [] {
        scene::SceneSamplingConfig c;
        c.d_z = 6;
        return c;
      }());
  auto out1 = vol::render_feature_map(scn, obj, bg, rc, nullptr, true);
  auto out2 = vol::render_feature_map(scn, obj, bg, rc, nullptr, true);
  for (long i = 0; i < out1.alpha.numel(); ++i) {
    CHECK(out1.alpha.at(i) >= 0.0);
    CHECK(out1.alpha.at(i) <= 1.0);
    CHECK(out1.alpha.at(i) == out2.alpha.at(i));  // bit-identical
  }
  for (long i = 0; i < out1.features.numel(); ++i)
    CHECK(out1.features.at(i) == out2.features.at(i));
  CHECK(out1.features.shape() == ad::Shape{1, 4, 8, 8});
  CHECK(out1.object_alpha.defined());
}

TEST_CASE("relative pose equivalence: rotating camera equals rotating object") {
  Rng rng(505);
  auto obj = tiny_field(rng);
  auto bg = empty_background(rng);  // background disabled
  vol::RenderConfig rc;
  rc.feature_res = 8;
  rc.n_samples = 16;

  const double a0 = 0.4, delta = 1.1;
  Rng srng(6);
  auto base = one_object_scene(
      srng, a0 + delta,
      scene::AffineTransform::make(Eigen::Vector3d::Constant(0.5),
                                   Eigen::Vector3d::Zero(),
                                   Eigen::Matrix3d::Identity()));
  auto rotated = base;
  rotated.pose.azimuth = a0;
  rotated.entities[0].transform = scene::AffineTransform::make(
      Eigen::Vector3d::Constant(0.5), Eigen::Vector3d::Zero(),
      scene::AffineTransform::rotation_z(-delta));

  auto r1 = vol::render_feature_map(base, obj, bg, rc, nullptr, true);
  auto r2 = vol::render_feature_map(rotated, obj, bg, rc, nullptr, true);
  double mass1 = 0, mass2 = 0;
  for (long i = 0; i < r1.object_alpha.numel(); ++i) {
    mass1 += r1.object_alpha.at(i);
    mass2 += r2.object_alpha.at(i);
  }
  CHECK(mass1 > 0.1);  // the object is actually visible
  CHECK(std::abs(mass1 - mass2) / mass1 < 0.02);
}

TEST_CASE("end-to-end gradient of a feature-map functional vs FD") {
  Rng rng(606);
  auto obj = tiny_field(rng);
  auto bg = tiny_field(rng);
  vol::RenderConfig rc;
  rc.feature_res = 4;
  rc.n_samples = 4;
  Rng srng(7);
  scene::SceneSamplingConfig scfg;
  scfg.d_z = 6;
  auto scn = scene::sample_scene_spec<double>(srng, scfg);

  Tensor<double> probe;
  {
    ad::NoGradGuard ng;
    probe = Tensor<double>::randn({1, 4, 4, 4}, rng);
  }
  auto fn = [&] {
    auto out = vol::render_feature_map(scn, obj, bg, rc);
    return ad::sum(ad::mul(out.features, probe));
  };
  CHECK(oracle::max_rel_grad_err(obj.trunk_w[0], fn, 1e-5) < 1e-3);
  CHECK(oracle::max_rel_grad_err(obj.sigma_w, fn, 1e-5) < 1e-3);
  CHECK(oracle::max_rel_grad_err(bg.feat_out_w, fn, 1e-5) < 1e-3);
}

TEST_CASE("gradients flow to the latent codes through the renderer") {
  Rng rng(707);
  auto obj = tiny_field(rng);
  auto bg = tiny_field(rng);
  vol::RenderConfig rc;
  rc.feature_res = 4;
  rc.n_samples = 4;
  Rng srng(8);
  scene::SceneSamplingConfig scfg;
  scfg.d_z = 6;
  auto scn = scene::sample_scene_spec<double>(srng, scfg);
  auto z = Tensor<double>::randn({1, 6}, rng, 1.0, true);
  scn.entities[0].z_s = z;

  auto fn = [&] {
    auto out = vol::render_feature_map(scn, obj, bg, rc);
    return ad::mean(ad::square(out.features));
  };
  CHECK(oracle::max_rel_grad_err(z, fn, 1e-5) < 1e-3);
}

TEST_CASE("render probe records the pose and transforms actually used") {
  Rng rng(808);
  auto obj = tiny_field(rng);
  auto bg = tiny_field(rng);
  vol::RenderConfig rc;
  rc.feature_res = 4;
  rc.n_samples = 4;
  Rng srng(9);
  scene::SceneSamplingConfig scfg;
  scfg.d_z = 6;
  auto scn = scene::sample_scene_spec<double>(srng, scfg);
  scn.pose.azimuth = 12.3456;  // sentinel
  vol::RenderProbe probe;
  vol::render_feature_map(scn, obj, bg, rc, nullptr, false, &probe);
  REQUIRE(probe.poses.size() == 1);
  CHECK(probe.poses[0].azimuth == 12.3456);
  CHECK(probe.transforms[0].size() == 2);
}

TEST_CASE("stratified sampling draws are seed-reproducible") {
  Rng rng(909);
  auto obj = tiny_field(rng);
  auto bg = tiny_field(rng);
  vol::RenderConfig rc;
  rc.feature_res = 4;
  rc.n_samples = 6;
  Rng srng(10);
  scene::SceneSamplingConfig scfg;
  scfg.d_z = 6;
  auto scn = scene::sample_scene_spec<double>(srng, scfg);
  Rng j1(77), j2(77);
  auto r1 = vol::render_feature_map(scn, obj, bg, rc, &j1);
  auto r2 = vol::render_feature_map(scn, obj, bg, rc, &j2);
  for (long i = 0; i < r1.features.numel(); ++i)
    CHECK(r1.features.at(i) == r2.features.at(i));
}
