#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

// End-to-end checks of the installed command surface; each case shells out
// to the real binary.

namespace fs = std::filesystem;

namespace {

const std::string kBin = FIELDGEN_BIN;
const std::string kRoot = "/tmp/fieldgen_cli";

int run(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

std::vector<unsigned char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_tiny_config(const std::string& path) {
  std::ofstream os(path);
  os << "[model]\nd_z = 8\nm_f = 8\nfield_hidden = 16\nfield_depth = 2\n"
        "n_freq_x = 2\nn_freq_d = 1\ndisc_base_channels = 8\n"
        "inverter_base_channels = 8\n"
        "[render]\nimage_res = 16\nfeature_res = 8\nn_samples = 8\n"
        "[train]\nbatch_size = 2\ngan_iters = 2\ninverter_iters = 2\n"
        "inverter_batch = 2\nseed = 3\n"
        "[data]\ndata_root = " << kRoot << "/data\n"
        "train_count = 6\ntest_count = 4\nood_count = 2\n"
        "[eval]\neval_samples = 6\nembed_dim = 8\n";
}

struct CliFixture {
  CliFixture() {
    static bool prepared = false;
    if (prepared) return;
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    write_tiny_config(kRoot + "/tiny.cfg");
    REQUIRE(run(kBin + " gen-data --config " + kRoot + "/tiny.cfg") == 0);
    REQUIRE(run(kBin + " train-gan --config " + kRoot + "/tiny.cfg --out " +
                kRoot + "/gan") == 0);
    REQUIRE(run(kBin + " train-inverter --checkpoint " + kRoot +
                "/gan/gan_checkpoint.fgb --out " + kRoot + "/inv") == 0);
    prepared = true;
  }
};

}  // namespace

TEST_CASE_FIXTURE(CliFixture, "invalid config exits with code 2") {
  std::ofstream os(kRoot + "/bad.cfg");
  os << "[model]\nnot_a_key = 1\n";
  os.close();
  CHECK(run(kBin + " gen-data --config " + kRoot + "/bad.cfg") == 2);
}

TEST_CASE_FIXTURE(CliFixture, "missing checkpoint exits with code 4") {
  CHECK(run(kBin + " eval --checkpoint " + kRoot + "/nonexistent.fgb") == 4);
}

TEST_CASE_FIXTURE(CliFixture, "an 8-view sweep writes exactly 8 PNGs with "
                              "the requested poses in the manifest") {
  const std::string out = kRoot + "/sweep";
  fs::remove_all(out);
  CHECK(run(kBin + " invert --checkpoint " + kRoot +
            "/inv/inverter_checkpoint.fgb --image " + kRoot +
            "/data/test/0.png --views 8 --out " + out) == 0);
  long pngs = 0;
  for (const auto& e : fs::directory_iterator(out))
    if (e.path().filename().string().rfind("view_", 0) == 0) ++pngs;
  CHECK(pngs == 8);

  std::ifstream mf(out + "/manifest.json");
  REQUIRE(mf);
  nlohmann::json manifest = nlohmann::json::parse(mf);
  REQUIRE(manifest["views"].size() == 8);
  CHECK(manifest["encoder_forwards"] == 1);
  for (std::size_t i = 0; i < 8; ++i) {
    const double expected = 2.0 * 3.14159265358979323846 * i / 8.0;
    CHECK(manifest["views"][i]["azimuth"].get<double>() ==
          doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE_FIXTURE(CliFixture, "repeating a render request is byte-identical") {
  const std::string out1 = kRoot + "/rv1", out2 = kRoot + "/rv2";
  fs::remove_all(out1);
  fs::remove_all(out2);
  const std::string cmd = kBin + " render-views --checkpoint " + kRoot +
                          "/gan/gan_checkpoint.fgb --views 3 --seed 9 --out ";
  CHECK(run(cmd + out1) == 0);
  CHECK(run(cmd + out2) == 0);
  for (int i = 0; i < 3; ++i) {
    const std::string name = "view_" + std::to_string(i) + ".png";
    CHECK(slurp(fs::path(out1) / name) == slurp(fs::path(out2) / name));
  }
}

TEST_CASE_FIXTURE(CliFixture, "style-mix and compose write images") {
  CHECK(run(kBin + " style-mix --checkpoint " + kRoot +
            "/inv/inverter_checkpoint.fgb --image-a " + kRoot +
            "/data/test/0.png --image-b " + kRoot + "/data/test/1.png --out " +
            kRoot + "/mix.png") == 0);
  CHECK(fs::exists(kRoot + "/mix.png"));
  CHECK(run(kBin + " compose --checkpoint " + kRoot +
            "/inv/inverter_checkpoint.fgb --image-a " + kRoot +
            "/data/test/0.png --image-b " + kRoot + "/data/test/1.png "
            "--ta-translate -0.5 0 0 --tb-translate 0.5 0 0 --t-scale 0.4 "
            "--out " + kRoot + "/comp.png") == 0);
  CHECK(fs::exists(kRoot + "/comp.png"));
}

TEST_CASE_FIXTURE(CliFixture, "eval writes a JSON report") {
  CHECK(run(kBin + " eval --checkpoint " + kRoot +
            "/inv/inverter_checkpoint.fgb --out " + kRoot +
            "/report.json") == 0);
  std::ifstream is(kRoot + "/report.json");
  REQUIRE(is);
  auto report = nlohmann::json::parse(is);
  CHECK(report.contains("metrics"));
}

TEST_CASE_FIXTURE(CliFixture,
                  "mismatched config dimensions are rejected at load") {
  std::ofstream os(kRoot + "/other.cfg");
  os << "[model]\nd_z = 16\nm_f = 8\nfield_hidden = 16\nfield_depth = 2\n"
        "n_freq_x = 2\nn_freq_d = 1\n[render]\nimage_res = 16\n"
        "feature_res = 8\nn_samples = 8\n";
  os.close();
  CHECK(run(kBin + " eval --checkpoint " + kRoot +
            "/inv/inverter_checkpoint.fgb --config " + kRoot +
            "/other.cfg") == 2);
}
