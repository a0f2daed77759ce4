#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "deformwarp/checkpoint.hpp"
#include "deformwarp/error.hpp"
#include "deformwarp/io.hpp"
#include "deformwarp/synth.hpp"
#include "support.hpp"

using namespace deformwarp;
using deformwarp::test::Rng;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("dw_io_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

// COCO-18 order; the right wrist is marked invisible.
const char* kPoseJson = R"({"width": 32, "height": 64, "joints": [
  [16,5,1],[16,10,1],[12,11,1],[10,20,1],[9,28,0],[20,11,1],[22,20,1],[23,28,1],[13,30,1],
  [13,44,1],[13,58,1],[19,30,1],[19,44,1],[19,58,1],[15,4,1],[17,4,1],[14,5,1],[18,5,1]]})";

}  // namespace

TEST_CASE("container round trip") {
  Rng rng(1);
  TensorContainer c;
  c.add(ContainerEntry::from_tensor("a/b", test::random_tensor(rng, 2, 3, 4, 5)));
  c.add(ContainerEntry::scalar("s", 3.25));
  ContainerEntry f;
  f.name = "floats";
  f.dtype = DType::F32;
  f.dims = {2, 2};
  f.f32 = {1.5f, -2.0f, 3.0e-8f, 7.0f};
  c.add(f);
  c.add(ContainerEntry::from_doubles("empty", {0}, {}));

  const auto bytes = c.serialize();
  const TensorContainer back = TensorContainer::deserialize(bytes);
  CHECK(back == c);
  CHECK(back.get("a/b").to_tensor() == c.get("a/b").to_tensor());
  CHECK(back.get("floats").as_doubles()[2] == double(3.0e-8f));
  CHECK(back.get("s").as_doubles()[0] == 3.25);
  CHECK(back.entries()[1].name == "s");

  SUBCASE("bad input is rejected") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(TensorContainer::deserialize(bad), ParseError);
    for (std::size_t n : {std::size_t{0}, std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
      CHECK_THROWS_AS(TensorContainer::deserialize({bytes.begin(), bytes.begin() + n}), ParseError);
    }
    auto longer = bytes;
    longer.push_back(0);
    CHECK_THROWS_AS(TensorContainer::deserialize(longer), ParseError);
  }
  SUBCASE("entry validation") {
    CHECK_THROWS_AS(c.add(ContainerEntry::scalar("s", 1)), InvalidArgument);
    CHECK_THROWS_AS(ContainerEntry::from_doubles("x", {3}, {1, 2}), InvalidArgument);
    CHECK_THROWS_AS(c.get("missing"), InvalidArgument);
  }
  SUBCASE("files") {
    TempDir d;
    c.write(d.path / "c.dwt");
    CHECK(TensorContainer::read(d.path / "c.dwt") == c);
    CHECK_THROWS_AS(TensorContainer::read(d.path / "none.dwt"), IoError);
  }
}

TEST_CASE("pose json") {
  const PoseFile pf = parse_pose_json(kPoseJson);
  CHECK(pf.width == 32);
  CHECK(pf.height == 64);
  CHECK(pf.pose[Joint::Neck].x == 16);
  CHECK(!pf.pose[Joint::RWrist].visible);
  const PoseFile back = parse_pose_json(pose_to_json(pf));
  for (int j = 0; j < kNumJoints; ++j) {
    CHECK(back.pose.joints[j].x == pf.pose.joints[j].x);
    CHECK(back.pose.joints[j].y == pf.pose.joints[j].y);
    CHECK(back.pose.joints[j].visible == pf.pose.joints[j].visible);
  }

  Rng rng(2);
  PoseFile random{32, 64, test::random_pose(rng, 32, 64)};
  random.pose.joints[3].x = 0.1 + 1e-15;
  const PoseFile rt = parse_pose_json(pose_to_json(random));
  for (int j = 0; j < kNumJoints; ++j) CHECK(rt.pose.joints[j].x == random.pose.joints[j].x);

  SUBCASE("errors name the problem") {
    auto message = [](const std::string& text) {
      try {
        parse_pose_json(text);
      } catch (const ParseError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK_THROWS_AS(parse_pose_json("{"), ParseError);
    CHECK(message(R"({"width": 32, "height": 64, "joints": [[1,2,1]]})").find("18") != std::string::npos);
    CHECK(message(R"({"height": 64, "joints": []})").find("width") != std::string::npos);
    std::string vis = kPoseJson;
    vis.replace(vis.find("[9,28,0]"), 8, "[9,28,2]");
    CHECK(message(vis).find("visib") != std::string::npos);
  }
}

TEST_CASE("png round trip") {
  TempDir d;
  Rng rng(3);
  const Tensor img = test::random_tensor(rng, 1, 9, 7, 3);
  write_png(d.path / "x.png", img);
  const Tensor back = read_png(d.path / "x.png");
  REQUIRE(back.same_shape(img));
  CHECK(max_abs_diff(back, img) <= 1.0 / 255.0);
  write_png(d.path / "y.png", back);
  CHECK(read_png(d.path / "y.png") == back);

  for (int b = 0; b < 256; ++b) CHECK(to_byte(from_byte(static_cast<std::uint8_t>(b))) == b);
  CHECK(to_byte(5.0) == 255);
  CHECK(to_byte(-5.0) == 0);

  RegionMask m(PartId::Torso, 5, 4);
  for (auto& v : m.values) v = rng.coin();
  write_mask_png(d.path / "m.png", m);
  CHECK(read_mask_png(d.path / "m.png").values == m.values);

  write_text(d.path / "junk.png", "not a png");
  CHECK_THROWS_AS(read_png(d.path / "junk.png"), ParseError);
  CHECK_THROWS_AS(read_png(d.path / "missing.png"), IoError);
}

TEST_CASE("manifest") {
  TempDir d;
  fs::create_directories(d.path / "sub");
  write_text(d.path / "sub" / "m.csv", "image_a,pose_a,image_b,pose_b,mask_b\na.png,a.json,b.png,b.json,mb.png\n"
                                      "/abs/a.png,a.json,b.png,b.json,\n");
  const auto rows = read_manifest(d.path / "sub" / "m.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].image_a == d.path / "sub" / "a.png");
  CHECK(rows[0].mask_b.has_value());
  CHECK(rows[1].image_a == fs::path("/abs/a.png"));
  CHECK(!rows[1].mask_b.has_value());

  write_manifest(d.path / "w.csv", rows);
  const auto again = read_manifest(d.path / "w.csv");
  REQUIRE(again.size() == 2);
  CHECK(again[0].pose_b == rows[0].pose_b);

  write_text(d.path / "bad.csv", "a,b,c\n1,2,3\n");
  CHECK_THROWS_AS(read_manifest(d.path / "bad.csv"), ParseError);
  write_text(d.path / "short.csv", "image_a,pose_a,image_b,pose_b\nx,y,z\n");
  CHECK_THROWS_AS(read_manifest(d.path / "short.csv"), ParseError);
}

TEST_CASE("synthetic figures") {
  SyntheticFigureSpec spec;
  spec.seed = 9;
  const SyntheticPair a = synthetic_pair_at(spec, 3);
  const SyntheticPair b = synthetic_pair_at(spec, 3);
  CHECK(a.x_a == b.x_a);
  CHECK(a.x_b == b.x_b);
  CHECK(!(synthetic_pair_at(spec, 4).x_a == a.x_a));
  CHECK(a.x_a.height() == 64);
  CHECK(a.x_a.width() == 32);
  for (double v : a.x_a.values()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  for (const Keypoint& k : a.pose_b.joints) {
    CHECK(k.visible);
    CHECK(k.x >= 0);
    CHECK(k.x <= 31);
    CHECK(k.y >= 0);
    CHECK(k.y <= 63);
  }
  CHECK(a.mask_b.area() > 50);
  CHECK(a.mask_b.area() < 32 * 64 / 2);

  spec.occlusion_probability = 1.0;
  const SyntheticPair occ = synthetic_pair_at(spec, 0);
  CHECK(!occ.pose_a[Joint::LWrist].visible);
  CHECK(occ.pose_a[Joint::Neck].visible);

  SyntheticFigureSpec bad;
  bad.width = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("checkpoint round trip") {
  GeneratorConfig g;
  g.image_height = 16;
  g.image_width = 8;
  g.encoder_filters = {8, 8, 8};
  g.decoder_filters = {8, 8};
  g.decoder_dropout_blocks = 1;
  TrainConfig t;
  t.seed = 0xfedcba9876543210ULL;
  t.recon = ReconKind::Perceptual;
  t.lambda = 0.25;
  DiscriminatorConfig dc;
  dc.filters = {8, 8, 1};
  TrainState st = init_train_state(g, t, dc);
  st.iteration = 17;
  nn::adam_step(st.g_params, st.g_params.zero_grads(), t.adam);

  TempDir d;
  save_checkpoint(d.path / "c.dwt", st);
  const TrainState back = load_checkpoint(d.path / "c.dwt");
  CHECK(back.iteration == 17);
  CHECK(back.train.seed == t.seed);
  CHECK(back.train.recon == ReconKind::Perceptual);
  CHECK(back.train.lambda == 0.25);
  CHECK(back.generator.encoder_filters == g.encoder_filters);
  CHECK(back.g_params == st.g_params);
  CHECK(back.d_params == st.d_params);

  SUBCASE("corrupt or foreign files") {
    CHECK_THROWS_AS(load_checkpoint(d.path / "missing.dwt"), IncompatibleCheckpoint);
    auto bytes = read_bytes(d.path / "c.dwt");
    bytes.resize(bytes.size() / 2);
    write_bytes(d.path / "half.dwt", bytes);
    CHECK_THROWS_AS(load_checkpoint(d.path / "half.dwt"), IncompatibleCheckpoint);

    TensorContainer c = checkpoint_container(st);
    TensorContainer edited;
    for (const auto& e : c.entries()) {
      if (e.name.rfind("G/param/", 0) == 0 && !edited.contains("dropped")) {
        edited.add(ContainerEntry::scalar("dropped", 0));
        continue;
      }
      edited.add(e);
    }
    CHECK_THROWS_AS(state_from_container(edited), IncompatibleCheckpoint);
  }
}
