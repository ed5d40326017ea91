#include "fieldgen/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fieldgen::harness {

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

long parse_long(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw config_error("config: bad integer for " + key + ": '" + s + "'");
  }
}

double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw config_error("config: bad number for " + key + ": '" + s + "'");
  }
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "1" || s == "true" || s == "on") return true;
  if (s == "0" || s == "false" || s == "off") return false;
  throw config_error("config: bad flag for " + key + ": '" + s + "'");
}

#define FG_LONG(section, name)                                           \
  {#section, #name,                                                      \
   [](const ExperimentConfig& c) { return std::to_string(c.name); },     \
   [](ExperimentConfig& c, const std::string& v) {                       \
     c.name = parse_long(v, #name);                                      \
   }}
#define FG_DOUBLE(section, name)                                        \
  {#section, #name,                                                     \
   [](const ExperimentConfig& c) { return fmt_double(c.name); },        \
   [](ExperimentConfig& c, const std::string& v) {                      \
     c.name = parse_double(v, #name);                                   \
   }}
#define FG_BOOL(section, name)                                            \
  {#section, #name,                                                       \
   [](const ExperimentConfig& c) { return c.name ? "1" : "0"; },          \
   [](ExperimentConfig& c, const std::string& v) {                        \
     c.name = parse_bool(v, #name);                                       \
   }}
#define FG_STRING(section, name)                              \
  {#section, #name,                                           \
   [](const ExperimentConfig& c) { return c.name; },          \
   [](ExperimentConfig& c, const std::string& v) { c.name = v; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      FG_LONG(model, d_z),
      FG_LONG(model, m_f),
      FG_LONG(model, field_hidden),
      FG_LONG(model, field_depth),
      FG_LONG(model, n_freq_x),
      FG_LONG(model, n_freq_d),
      FG_LONG(model, renderer_min_channels),
      FG_LONG(model, renderer_extra_blocks),
      FG_LONG(model, disc_base_channels),
      FG_LONG(model, inverter_base_channels),
      FG_LONG(model, max_entities),
      FG_LONG(render, image_res),
      FG_LONG(render, feature_res),
      FG_LONG(render, n_samples),
      FG_DOUBLE(render, radius),
      FG_DOUBLE(render, elevation),
      FG_DOUBLE(render, fov_deg),
      FG_DOUBLE(render, half_extent),
      FG_DOUBLE(render, window_sharpness),
      FG_DOUBLE(render, background_scale),
      FG_DOUBLE(pose, azimuth_min),
      FG_DOUBLE(pose, azimuth_max),
      FG_DOUBLE(transform, scale_min),
      FG_DOUBLE(transform, scale_max),
      FG_DOUBLE(transform, translate_max),
      FG_DOUBLE(transform, rotation_max),
      FG_LONG(train, batch_size),
      FG_LONG(train, gan_iters),
      FG_LONG(train, inverter_iters),
      FG_LONG(train, inverter_batch),
      FG_DOUBLE(train, lr_g),
      FG_DOUBLE(train, lr_d),
      FG_DOUBLE(train, lr_inverter),
      FG_DOUBLE(train, rms_decay),
      FG_DOUBLE(train, rms_eps),
      FG_DOUBLE(train, r1_lambda),
      FG_STRING(train, r1_mode),
      FG_STRING(train, gan_form),
      FG_LONG(train, sn_iters),
      FG_BOOL(train, stratified),
      FG_DOUBLE(train, lambda_latent),
      FG_DOUBLE(train, lambda_reconst),
      FG_DOUBLE(train, lambda_percept),
      FG_BOOL(train, use_reconst),
      FG_BOOL(train, use_gan),
      FG_BOOL(train, use_percept),
      {"train", "seed",
       [](const ExperimentConfig& c) { return std::to_string(c.seed); },
       [](ExperimentConfig& c, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_long(v, "seed"));
       }},
      FG_LONG(train, log_every),
      FG_LONG(train, checkpoint_every),
      FG_LONG(train, sample_every),
      FG_STRING(data, data_root),
      FG_STRING(data, scene_class),
      FG_LONG(data, train_count),
      FG_LONG(data, test_count),
      FG_LONG(data, ood_count),
      FG_LONG(eval, eval_samples),
      {"eval", "embedder_seed",
       [](const ExperimentConfig& c) {
         return std::to_string(c.embedder_seed);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.embedder_seed = static_cast<std::uint64_t>(
             parse_long(v, "embedder_seed"));
       }},
      FG_LONG(eval, embed_dim),
  };
  return kFields;
}

#undef FG_LONG
#undef FG_DOUBLE
#undef FG_BOOL
#undef FG_STRING

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void ExperimentConfig::validate() const {
  auto positive = [](long v, const char* name) {
    if (v <= 0) throw config_error(std::string("config: ") + name +
                                   " must be positive");
  };
  positive(d_z, "d_z");
  positive(m_f, "m_f");
  positive(field_hidden, "field_hidden");
  positive(field_depth, "field_depth");
  positive(n_freq_x, "n_freq_x");
  positive(n_freq_d, "n_freq_d");
  positive(image_res, "image_res");
  positive(feature_res, "feature_res");
  positive(batch_size, "batch_size");
  positive(inverter_batch, "inverter_batch");
  if (n_samples < 2) throw config_error("config: n_samples must be >= 2");
  long r = feature_res;
  while (r < image_res) r *= 2;
  if (r != image_res)
    throw config_error("config: image_res must be feature_res * 2^k");
  if (image_res < 8 || (image_res & (image_res - 1)) != 0)
    throw config_error("config: image_res must be a power of two >= 8");
  if (!(radius > half_extent) || half_extent <= 0)
    throw config_error("config: require 0 < half_extent < radius");
  if (lr_g <= 0 || lr_d <= 0 || lr_inverter <= 0)
    throw config_error("config: learning rates must be positive");
  if (!(rms_decay > 0 && rms_decay < 1))
    throw config_error("config: rms_decay must lie in (0,1)");
  if (rms_eps <= 0) throw config_error("config: rms_eps must be positive");
  if (r1_lambda < 0) throw config_error("config: r1_lambda must be >= 0");
  if (r1_mode != "autodiff" && r1_mode != "fd")
    throw config_error("config: r1_mode must be autodiff or fd");
  if (gan_form != "nonsat" && gan_form != "sat")
    throw config_error("config: gan_form must be nonsat or sat");
  if (scale_min <= 0 || scale_max < scale_min)
    throw config_error("config: bad scale bounds");
  if (azimuth_max < azimuth_min)
    throw config_error("config: azimuth_max < azimuth_min");
  if (max_entities < 2)
    throw config_error("config: max_entities must be >= 2");
  if (scene_class != "face_like" && scene_class != "car_like")
    throw config_error("config: scene_class must be face_like or car_like");
  if (eval_samples < 2)
    throw config_error("config: eval_samples must be >= 2");
  positive(embed_dim, "embed_dim");
  if (gan_iters < 0 || inverter_iters < 0)
    throw config_error("config: iteration counts must be >= 0");
  positive(log_every, "log_every");
  positive(checkpoint_every, "checkpoint_every");
  positive(sample_every, "sample_every");
}

std::string ExperimentConfig::canonical_text() const {
  std::ostringstream os;
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) os << "\n";
      os << "[" << f.section << "]\n";
      current = f.section;
    }
    os << f.key << " = " << f.get(*this) << "\n";
  }
  return os.str();
}

std::uint64_t ExperimentConfig::dims_hash() const {
  std::ostringstream os;
  for (const auto& f : fields()) {
    if (f.section == "model" || f.section == "render" ||
        f.section == "pose" || f.section == "transform")
      os << f.section << '.' << f.key << '=' << f.get(*this) << '\n';
  }
  return fnv1a64(os.str());
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw config_error("config: malformed section at line " +
                           std::to_string(line_no));
      section = line.substr(1, line.size() - 2);
      bool known = false;
      for (const auto& f : fields())
        if (f.section == section) known = true;
      if (!known)
        throw config_error("config: unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config: expected key = value at line " +
                         std::to_string(line_no));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool matched = false;
    for (const auto& f : fields()) {
      if (f.section == section && f.key == key) {
        f.set(cfg, value);
        matched = true;
        break;
      }
    }
    if (!matched)
      throw config_error("config: unknown key '" + key + "' in section [" +
                         section + "]");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("config: cannot open " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return from_text(buf.str());
}

void ExperimentConfig::write_file(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw io_error("config: cannot write " + path);
  os << canonical_text();
  if (!os) throw io_error("config: write failed for " + path);
}

}  // namespace fieldgen::harness
