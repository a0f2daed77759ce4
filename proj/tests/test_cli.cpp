#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "deformwarp/checkpoint.hpp"
#include "deformwarp/cli.hpp"
#include "deformwarp/error.hpp"
#include "deformwarp/io.hpp"
#include "deformwarp/metrics.hpp"
#include "deformwarp/warp.hpp"
#include "support.hpp"

using namespace deformwarp;
using deformwarp::test::Rng;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("dw_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

// Small model and dataset so that CLI training runs take well under a second
// per iteration.
const char* kTinyConfig = R"(
[model]
variant = "full"
channel_divisor = 16
[train]
batch_size = 1
seed = 5
[data]
synthetic_pairs = 3
)";

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"heatmap", "--pose"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("config parsing") {
  const RunConfig rc = parse_run_config(kTinyConfig);
  CHECK(rc.variant == Variant::Full);
  CHECK(rc.generator.channel_divisor == 16);
  CHECK(rc.train.recon == ReconKind::NN);
  CHECK(rc.synthetic_pairs == 3);
  CHECK(parse_run_config(kTinyConfig, Variant::Baseline).train.recon == ReconKind::L1);
  CHECK(parse_run_config("[train]\nrecon = \"perceptual\"\n").train.recon == ReconKind::Perceptual);

  auto message = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("[train]\nlamda = 0.1\n").find("train.lamda") != std::string::npos);
  CHECK(message("[bogus]\nx = 1\n").find("bogus") != std::string::npos);
  CHECK(message("[train]\nneighborhood = 4\n") != "no error");
  CHECK(message("[train]\niterations = \"ten\"\n") != "no error");
  CHECK(message("[model\n") != "no error");

  TempDir d;
  write_text(d.path / "c.toml", "[train]\nbogus_key = 1\n");
  CHECK(run({"train", "--config", d / "c.toml", "--out-dir", d / "r"}).code == kExitUsage);
}

TEST_CASE("heatmap command matches the library") {
  TempDir d;
  Rng rng(1);
  const PoseFile pf{32, 64, test::random_pose(rng, 32, 64)};
  write_pose(d.path / "p.json", pf);
  for (const std::string kernel : {"printed", "squared"}) {
    REQUIRE(run({"heatmap", "--pose", d / "p.json", "--out", d / "h.dwt", "--kernel", kernel}).code == kExitOk);
    const TensorContainer c = TensorContainer::read(d.path / "h.dwt");
    const ContainerEntry& e = c.get(heatmap_entry_name(6.0));
    CHECK(e.dims == std::vector<std::uint32_t>{18, 64, 32});
    const Tensor lib = heatmap_from_pose(pf.pose, 32, 64, 6.0,
                                         kernel == "printed" ? HeatmapKernel::AsPrinted : HeatmapKernel::SquaredNorm);
    const auto v = e.as_doubles();
    int mismatches = 0;
    for (int j = 0; j < 18; ++j) {
      for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 32; ++x) mismatches += v[(j * 64 + y) * 32 + x] != lib(y, x, j);
      }
    }
    CHECK(mismatches == 0);
  }
  CHECK(heatmap_entry_name(6.0) == "heatmap/sigma6");
  CHECK(run({"heatmap", "--pose", d / "missing.json", "--out", d / "h.dwt"}).code == kExitData);
  CHECK(run({"heatmap", "--pose", d / "p.json", "--out", d / "h.dwt", "--kernel", "cubic"}).code == kExitUsage);
}

TEST_CASE("warp command matches the library") {
  TempDir d;
  Rng rng(2);
  const PoseFile a{32, 64, test::random_pose(rng, 32, 64)};
  const PoseFile b{32, 64, test::random_pose(rng, 32, 64)};
  write_pose(d.path / "a.json", a);
  write_pose(d.path / "b.json", b);
  const Tensor F = test::random_tensor(rng, 1, 16, 8, 5, 0.0, 1.0);
  TensorContainer c;
  c.add(ContainerEntry::from_tensor("feat", F));
  c.write(d.path / "f.dwt");
  REQUIRE(run({"warp", "--features", d / "f.dwt", "--pose-a", d / "a.json", "--pose-b", d / "b.json",
               "--out", d / "o.dwt"})
              .code == kExitOk);
  const Tensor got = TensorContainer::read(d.path / "o.dwt").get("deformed").to_tensor();
  const Tensor lib = deform(F, build_warp_plan(region_pair(a.pose, b.pose, 32, 64), 32, 64, 8, 16)).merged;
  CHECK(got == lib);

  SUBCASE("empty parts are reported") {
    PoseFile partial = b;
    partial.pose[Joint::LKnee].visible = false;
    partial.pose[Joint::RKnee].visible = false;
    write_pose(d.path / "partial.json", partial);
    const Result r = run({"warp", "--features", d / "f.dwt", "--pose-a", d / "a.json", "--pose-b",
                          d / "partial.json", "--out", d / "o2.dwt"});
    CHECK(r.code == kExitOk);
    CHECK(r.err.find("warning") != std::string::npos);
  }
  SUBCASE("unknown entry") {
    CHECK(run({"warp", "--features", d / "f.dwt", "--entry", "nope", "--pose-a", d / "a.json", "--pose-b",
               d / "b.json", "--out", d / "o3.dwt"})
              .code == kExitData);
  }
}

TEST_CASE("synth, eval without a checkpoint") {
  TempDir d;
  REQUIRE(run({"synth", "--out-dir", d / "data", "--pairs", "3", "--seed", "4"}).code == kExitOk);
  const auto rows = read_manifest(d.path / "data" / "manifest.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].mask_b.has_value());

  REQUIRE(run({"eval", "--manifest", d / "data/manifest.csv", "--out", d / "e.csv"}).code == kExitOk);
  std::istringstream csv(slurp(d.path / "e.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "pair,ssim,mask_ssim");
  std::getline(csv, line);
  const Tensor xa = read_png(rows[0].image_a), xb = read_png(rows[0].image_b);
  const double s = ssim(xa, xb), m = mask_ssim(xa, xb, read_mask_png(*rows[0].mask_b));
  char buf[128];
  std::snprintf(buf, sizeof buf, "0,%.17g,%.17g", s, m);
  CHECK(line == buf);
}

TEST_CASE("train, resume, generate") {
  TempDir d;
  write_text(d.path / "tiny.toml", kTinyConfig);

  REQUIRE(run({"train", "--config", d / "tiny.toml", "--iters", "4", "--out-dir", d / "full"}).code == kExitOk);
  REQUIRE(run({"train", "--config", d / "tiny.toml", "--iters", "4", "--out-dir", d / "again"}).code == kExitOk);
  CHECK(slurp(d.path / "full/losses.csv") == slurp(d.path / "again/losses.csv"));
  CHECK(read_bytes(d.path / "full/checkpoint.dwt") == read_bytes(d.path / "again/checkpoint.dwt"));

  REQUIRE(run({"train", "--config", d / "tiny.toml", "--iters", "2", "--out-dir", d / "half"}).code == kExitOk);
  REQUIRE(run({"train", "--config", d / "tiny.toml", "--iters", "4", "--out-dir", d / "half", "--resume",
               d / "half/checkpoint.dwt"})
              .code == kExitOk);
  CHECK(slurp(d.path / "half/losses.csv") == slurp(d.path / "full/losses.csv"));
  CHECK(read_bytes(d.path / "half/checkpoint.dwt") == read_bytes(d.path / "full/checkpoint.dwt"));
  CHECK(load_checkpoint(d.path / "half/checkpoint.dwt").iteration == 4);

  REQUIRE(run({"synth", "--out-dir", d / "data", "--pairs", "2"}).code == kExitOk);
  const auto rows = read_manifest(d.path / "data/manifest.csv");
  REQUIRE(run({"generate", "--checkpoint", d / "full/checkpoint.dwt", "--image-a", rows[0].image_a.string(),
               "--pose-a", rows[0].pose_a.string(), "--pose-b", rows[0].pose_b.string(), "--out", d / "g.png"})
              .code == kExitOk);
  CHECK(read_png(d.path / "g.png").height() == 64);
  REQUIRE(run({"eval", "--manifest", d / "data/manifest.csv", "--checkpoint", d / "full/checkpoint.dwt", "--out",
               d / "e.csv"})
              .code == kExitOk);

  write_text(d.path / "junk.dwt", "junk");
  CHECK(run({"generate", "--checkpoint", d / "junk.dwt", "--image-a", rows[0].image_a.string(), "--pose-a",
             rows[0].pose_a.string(), "--pose-b", rows[0].pose_b.string(), "--out", d / "g2.png"})
            .code == kExitData);
}

TEST_CASE("pose foreground mask covers the limbs but not the whole image") {
  Rng rng(3);
  const Pose p = test::random_pose(rng, 32, 64);
  const RegionMask m = pose_foreground_mask(p, 32, 64);
  CHECK(m.area() > 0);
  CHECK(m.area() < 32 * 64);
}
