// fieldgen command-line interface: dataset generation, adversarial and
// inverter training, evaluation, and the zero-shot rendering commands.
// Exit codes: 0 success, 2 config error, 3 numeric abort, 4 I/O error.

#include <CLI11.hpp>

#include <iostream>

#include "fieldgen/harness/loops.hpp"

using namespace fieldgen;
using Scalar = float;  // training-mode precision; tests run the 64-bit mode

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out = "out";
  std::string checkpoint;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_checkpoint) {
  cmd->add_option("--config", args.config_path, "experiment config file");
  cmd->add_option("--out", args.out, "output directory or file");
  if (needs_checkpoint)
    cmd->add_option("--checkpoint", args.checkpoint, "checkpoint bundle")
        ->required();
  cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&args](const std::uint64_t& v) {
        args.seed = v;
        args.seed_set = true;
      },
      "seed override");
  cmd->add_option("--threads", args.threads, "worker threads where supported");
}

harness::ExperimentConfig load_config(const CommonArgs& args) {
  harness::ExperimentConfig cfg =
      args.config_path.empty()
          ? harness::ExperimentConfig{}
          : harness::ExperimentConfig::from_file(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  cfg.validate();
  return cfg;
}

harness::CheckpointBundle<Scalar> load_bundle(const CommonArgs& args) {
  auto bundle = harness::CheckpointBundle<Scalar>::load(args.checkpoint);
  if (!args.config_path.empty()) {
    auto cfg = harness::ExperimentConfig::from_file(args.config_path);
    if (cfg.dims_hash() != bundle.cfg.dims_hash())
      throw config_error(
          "checkpoint was built with different model/render dimensions "
          "than --config; refusing to mix artifacts");
  }
  return bundle;
}

scene::AffineTransform transform_from_args(const std::vector<double>& trans,
                                           double scale, double rot_deg) {
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  if (!trans.empty()) {
    if (trans.size() != 3)
      throw config_error("--t-translate needs exactly 3 values");
    t = Eigen::Vector3d(trans[0], trans[1], trans[2]);
  }
  return scene::AffineTransform::make(
      Eigen::Vector3d::Constant(scale), t,
      scene::AffineTransform::rotation_z(rot_deg * kPi / 180.0));
}

std::vector<vol::CameraPose> sweep_poses(const harness::ExperimentConfig& cfg,
                                         long count, double az_min,
                                         double az_max) {
  std::vector<vol::CameraPose> poses;
  for (long i = 0; i < count; ++i) {
    vol::CameraPose p;
    p.azimuth = count == 1
                    ? az_min
                    : az_min + (az_max - az_min) * static_cast<double>(i) /
                                   static_cast<double>(count);
    p.elevation = cfg.elevation;
    p.radius = cfg.radius;
    p.fov_deg = cfg.fov_deg;
    poses.push_back(p);
  }
  return poses;
}

std::uint64_t code_digest(const scene::LatentCode<Scalar>& code) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [zs, za] : code.entities) {
    h = fnv1a64(zs.value().data(), sizeof(Scalar) * zs.numel(), h);
    h = fnv1a64(za.value().data(), sizeof(Scalar) * za.numel(), h);
  }
  return h;
}

void write_view_outputs(const std::string& out_dir,
                        const std::vector<ad::Tensor<Scalar>>& views,
                        const std::vector<vol::CameraPose>& poses,
                        nlohmann::json manifest) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < views.size(); ++i) {
    const std::string name = "view_" + std::to_string(i) + ".png";
    img::write_png((std::filesystem::path(out_dir) / name).string(),
                   img::tensor_to_u8(views[i]));
    files.push_back({{"file", name},
                     {"azimuth", poses[i].azimuth},
                     {"elevation", poses[i].elevation},
                     {"radius", poses[i].radius}});
  }
  manifest["views"] = files;
  std::ofstream os(std::filesystem::path(out_dir) / "manifest.json");
  os << manifest.dump(2) << "\n";
}

int cmd_gen_data(const CommonArgs& args) {
  auto cfg = load_config(args);
  auto data_cfg = cfg.synth_config(args.threads);
  if (args.out != "out") data_cfg.root = args.out;
  auto manifest = synth::build_dataset(data_cfg);
  std::cout << "wrote " << manifest.records.size() << " images under "
            << data_cfg.root << "\n";
  return 0;
}

int cmd_train_gan(const CommonArgs& args, const std::string& resume) {
  auto bundle = resume.empty()
                    ? harness::CheckpointBundle<Scalar>::fresh(load_config(args))
                    : harness::CheckpointBundle<Scalar>::load(resume);
  auto manifest = synth::load_manifest(bundle.cfg.data_root);
  auto result = harness::train_gan(bundle, args.out, manifest);
  std::cout << "gan steps run: " << result.steps_run
            << ", checkpoint: " << result.checkpoint_path << "\n";
  if (result.aborted) {
    std::cerr << "numeric abort; last good checkpoint retained\n";
    return 3;
  }
  return 0;
}

int cmd_train_inverter(const CommonArgs& args) {
  auto bundle = load_bundle(args);
  if (!args.config_path.empty()) {
    // adopt training-phase settings (ablation flags, iters) from --config
    auto cfg = harness::ExperimentConfig::from_file(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    cfg.validate();
    bundle.cfg = cfg;
  }
  auto result = harness::train_inverter(bundle, args.out);
  std::cout << "inverter steps run: " << result.steps_run
            << ", checkpoint: " << result.checkpoint_path << "\n";
  return result.aborted ? 3 : 0;
}

int cmd_eval(const CommonArgs& args, const std::string& data_root) {
  auto bundle = load_bundle(args);
  const std::string root = data_root.empty() ? bundle.cfg.data_root : data_root;
  auto manifest = synth::load_manifest(root);
  auto report = harness::run_eval(
      bundle, manifest, args.seed_set ? args.seed : bundle.cfg.seed);
  if (args.out == "out" || args.out == "-") {
    std::cout << report.dump(2) << "\n";
  } else {
    std::ofstream os(args.out);
    if (!os) throw io_error("eval: cannot write " + args.out);
    os << report.dump(2) << "\n";
    std::cout << "report written to " << args.out << "\n";
  }
  return 0;
}

int cmd_render_views(const CommonArgs& args, long count, double az_min_deg,
                     double az_max_deg) {
  auto bundle = load_bundle(args);
  Rng rng(args.seed_set ? args.seed : bundle.cfg.seed);
  auto scn = scene::sample_scene_spec<Scalar>(rng, bundle.gen.sampling);
  scene::LatentCode<Scalar> code;
  for (const auto& e : scn.entities) code.entities.emplace_back(e.z_s, e.z_a);
  auto poses = sweep_poses(bundle.cfg, count, az_min_deg * kPi / 180.0,
                           az_max_deg * kPi / 180.0);
  ad::NoGradGuard ng;
  std::vector<ad::Tensor<Scalar>> views;
  for (const auto& pose : poses)
    views.push_back(
        inv::reconstruct(bundle.gen, code, {scn.entities[0].transform}, pose)
            .images);
  nlohmann::json manifest;
  manifest["command"] = "render-views";
  manifest["config_hash"] = harness::to_hex(bundle.cfg.hash());
  manifest["code_digest"] = harness::to_hex(code_digest(code));
  write_view_outputs(args.out, views, poses, std::move(manifest));
  std::cout << "wrote " << views.size() << " views under " << args.out << "\n";
  return 0;
}

int cmd_invert(const CommonArgs& args, const std::string& image_path,
               long count, double az_min_deg, double az_max_deg,
               const std::vector<double>& t_translate, double t_scale,
               double t_rot_deg) {
  auto bundle = load_bundle(args);
  auto image = img::u8_to_tensor<Scalar>(img::read_png(image_path));
  auto poses = sweep_poses(bundle.cfg, count, az_min_deg * kPi / 180.0,
                           az_max_deg * kPi / 180.0);
  auto t_default = transform_from_args(t_translate, t_scale, t_rot_deg);
  auto result = inv::zero_shot_invert(bundle.inverter, bundle.gen, image,
                                      poses, t_default);
  nlohmann::json manifest;
  manifest["command"] = "invert";
  manifest["input"] = image_path;
  manifest["config_hash"] = harness::to_hex(bundle.cfg.hash());
  manifest["code_digest"] = harness::to_hex(code_digest(result.code));
  manifest["encoder_forwards"] = result.encoder_forwards;
  write_view_outputs(args.out, result.views, poses, std::move(manifest));
  // alpha maps for mask/centroid diagnostics
  for (std::size_t i = 0; i < result.object_alphas.size(); ++i) {
    const auto& alpha = result.object_alphas[i];
    img::ImageU8 mask;
    mask.width = alpha.dim(3);
    mask.height = alpha.dim(2);
    mask.channels = 1;
    mask.data.resize(static_cast<std::size_t>(mask.width * mask.height));
    for (long k = 0; k < alpha.numel(); ++k)
      mask.data[static_cast<std::size_t>(k)] = static_cast<unsigned char>(
          std::clamp(static_cast<double>(alpha.at(k)), 0.0, 1.0) * 255.0 +
          0.5);
    img::write_png((std::filesystem::path(args.out) /
                    ("alpha_" + std::to_string(i) + ".png"))
                       .string(),
                   mask);
  }
  std::cout << "wrote " << result.views.size() << " views under " << args.out
            << "\n";
  return 0;
}

int cmd_style_mix(const CommonArgs& args, const std::string& image_a,
                  const std::string& image_b, double azimuth_deg) {
  auto bundle = load_bundle(args);
  auto a = img::u8_to_tensor<Scalar>(img::read_png(image_a));
  auto b = img::u8_to_tensor<Scalar>(img::read_png(image_b));
  vol::CameraPose pose = harness::canonical_pose<Scalar>(bundle.cfg);
  pose.azimuth = azimuth_deg * kPi / 180.0;
  auto mixed = inv::style_mix(bundle.inverter, bundle.gen, a, b, pose,
                              scene::AffineTransform::identity());
  img::write_png(args.out, img::tensor_to_u8(mixed.image));
  std::cout << "style-mixed image written to " << args.out << "\n";
  return 0;
}

int cmd_compose(const CommonArgs& args, const std::string& image_a,
                const std::string& image_b, const std::vector<double>& ta,
                const std::vector<double>& tb, double scale,
                double azimuth_deg) {
  auto bundle = load_bundle(args);
  auto a = img::u8_to_tensor<Scalar>(img::read_png(image_a));
  auto b = img::u8_to_tensor<Scalar>(img::read_png(image_b));
  vol::CameraPose pose = harness::canonical_pose<Scalar>(bundle.cfg);
  pose.azimuth = azimuth_deg * kPi / 180.0;
  auto out = inv::compose_two_objects(
      bundle.inverter, bundle.gen, a, b, transform_from_args(ta, scale, 0.0),
      transform_from_args(tb, scale, 0.0), pose);
  img::write_png(args.out, img::tensor_to_u8(out.image));
  std::cout << "composed image written to " << args.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compositional feature-field GAN with zero-shot inversion"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string resume, data_root, image_path, image_a, image_b;
  long view_count = 8;
  double az_min_deg = 0.0, az_max_deg = 360.0, azimuth_deg = 0.0;
  std::vector<double> t_translate, ta_translate, tb_translate;
  double t_scale = 1.0, t_rot_deg = 0.0;

  auto* gen_data = app.add_subcommand("gen-data", "build a synthetic dataset");
  add_common(gen_data, args, false);

  auto* train_gan = app.add_subcommand("train-gan", "adversarial training");
  add_common(train_gan, args, false);
  train_gan->add_option("--resume", resume, "resume from a checkpoint");

  auto* train_inv =
      app.add_subcommand("train-inverter", "train the zero-shot inverter");
  add_common(train_inv, args, true);

  auto* eval_cmd = app.add_subcommand("eval", "evaluation report (JSON)");
  add_common(eval_cmd, args, true);
  eval_cmd->add_option("--data", data_root, "dataset root override");

  auto* render_views =
      app.add_subcommand("render-views", "multi-view sweep of a sampled code");
  add_common(render_views, args, true);
  render_views->add_option("--views", view_count, "number of views");
  render_views->add_option("--azimuth-min", az_min_deg, "sweep start, deg");
  render_views->add_option("--azimuth-max", az_max_deg, "sweep end, deg");

  auto* invert = app.add_subcommand("invert", "zero-shot inversion of a PNG");
  add_common(invert, args, true);
  invert->add_option("--image", image_path, "input image")->required();
  invert->add_option("--views", view_count, "number of views");
  invert->add_option("--azimuth-min", az_min_deg, "sweep start, deg");
  invert->add_option("--azimuth-max", az_max_deg, "sweep end, deg");
  invert->add_option("--t-translate", t_translate, "object translation x y z")
      ->expected(3);
  invert->add_option("--t-scale", t_scale, "object scale");
  invert->add_option("--t-rotate", t_rot_deg, "object rotation, deg");

  auto* style = app.add_subcommand(
      "style-mix", "shape from one image, appearance from another");
  add_common(style, args, true);
  style->add_option("--image-a", image_a, "shape source")->required();
  style->add_option("--image-b", image_b, "appearance source")->required();
  style->add_option("--azimuth", azimuth_deg, "render azimuth, deg");

  auto* compose =
      app.add_subcommand("compose", "two inverted objects, one scene");
  add_common(compose, args, true);
  compose->add_option("--image-a", image_a, "first object source")->required();
  compose->add_option("--image-b", image_b, "second object source")
      ->required();
  compose->add_option("--ta-translate", ta_translate,
                      "first object translation")
      ->expected(3);
  compose->add_option("--tb-translate", tb_translate,
                      "second object translation")
      ->expected(3);
  compose->add_option("--t-scale", t_scale, "object scale");
  compose->add_option("--azimuth", azimuth_deg, "render azimuth, deg");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_data->parsed()) return cmd_gen_data(args);
    if (train_gan->parsed()) return cmd_train_gan(args, resume);
    if (train_inv->parsed()) return cmd_train_inverter(args);
    if (eval_cmd->parsed()) return cmd_eval(args, data_root);
    if (render_views->parsed())
      return cmd_render_views(args, view_count, az_min_deg, az_max_deg);
    if (invert->parsed())
      return cmd_invert(args, image_path, view_count, az_min_deg, az_max_deg,
                        t_translate, t_scale, t_rot_deg);
    if (style->parsed())
      return cmd_style_mix(args, image_a, image_b, azimuth_deg);
    if (compose->parsed())
      return cmd_compose(args, image_a, image_b, ta_translate, tb_translate,
                         t_scale, azimuth_deg);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const numeric_error& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 3;
  } catch (const io_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
