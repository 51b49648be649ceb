#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "crowd/datagen.hpp"
#include "crowd/errors.hpp"
#include "crowd/io.hpp"
#include "crowd/model.hpp"
#include "crowd/tensor.hpp"

using namespace crowd;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.stage_channels = {2, 2, 2, 2, 2};
  cfg.decoder_c1 = 3;
  cfg.decoder_c2 = 2;
  cfg.encoder_layers = 1;
  cfg.hidden = 4;
  cfg.heads = 2;
  cfg.ffn = 4;
  cfg.proj_dim = 2;
  return cfg;
}

std::string fresh_dir(const std::string& name) {
  fs::path p = fs::path("io_test_tmp") / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("pgm: frozen byte layout") {
  std::string dir = fresh_dir("pgm_frozen");
  Tensor img = Tensor::from_data(
      {1, 2, 3}, {0.0, 1.0, 0.5, 1.0 / 255.0, 254.0 / 255.0, 100.0 / 255.0});
  write_pgm(dir + "/a.pgm", img);
  std::string bytes = slurp(dir + "/a.pgm");
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(bytes.compare(0, header.size(), header) == 0);
  const unsigned char want[6] = {0, 255, 128, 1, 254, 100};
  for (int i = 0; i < 6; ++i)
    CHECK(static_cast<unsigned char>(bytes[header.size() +
                                           static_cast<std::size_t>(i)]) ==
          want[i]);
}

TEST_CASE("pgm: round trip is bit exact on lattice values") {
  std::string dir = fresh_dir("pgm_rt");
  SceneConfig cfg;
  cfg.band = DensityBand::medium;
  cfg.seed = 17;
  Sample s = gen_scene(cfg);
  write_pgm(dir + "/s.pgm", s.image);
  Tensor back = read_pgm(dir + "/s.pgm");
  CHECK(bit_equal(s.image, back));
}

TEST_CASE("pgm: reader accepts comments, rejects malformed files") {
  std::string dir = fresh_dir("pgm_bad");
  spit(dir + "/ok.pgm", std::string("P5\n# a comment\n2 1\n255\n") +
                            std::string("\x10\x20", 2));
  Tensor t = read_pgm(dir + "/ok.pgm");
  REQUIRE(t.shape() == Shape{1, 1, 2});
  CHECK(t.value()[0] == 16.0 / 255.0);
  CHECK(t.value()[1] == 32.0 / 255.0);

  spit(dir + "/magic.pgm", "P6\n2 1\n255\nab");
  CHECK_THROWS_AS(read_pgm(dir + "/magic.pgm"), FormatError);
  spit(dir + "/maxval.pgm", "P5\n2 1\n65535\nab");
  CHECK_THROWS_AS(read_pgm(dir + "/maxval.pgm"), FormatError);
  spit(dir + "/short.pgm", "P5\n2 2\n255\nab");
  CHECK_THROWS_WITH_AS(read_pgm(dir + "/short.pgm"),
                       doctest::Contains("byte"), FormatError);
  spit(dir + "/nohdr.pgm", "P5\n2\n");
  CHECK_THROWS_AS(read_pgm(dir + "/nohdr.pgm"), FormatError);
  CHECK_THROWS_AS(read_pgm(dir + "/missing.pgm"), IoError);

  CHECK_THROWS_AS(write_pgm(dir + "/bad.pgm", Tensor::zeros({2, 2})),
                  ShapeMismatch);
  CHECK_THROWS_AS(write_pgm(dir + "/no/such/dir/x.pgm", Tensor::zeros({1, 2, 2})),
                  IoError);
}

TEST_CASE("points csv: lossless round trip and exact header") {
  std::string dir = fresh_dir("csv");
  PointList pts{{0.1, 1.0 / 3.0},
                {17.0 + 1e-13, 62.999999999999986},
                {5.0, 8.0}};
  write_points_csv(dir + "/p.csv", pts);
  PointList back = read_points_csv(dir + "/p.csv");
  REQUIRE(back.size() == pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(back[i].x == pts[i].x);
    CHECK(back[i].y == pts[i].y);
  }

  std::string bytes = slurp(dir + "/p.csv");
  CHECK(bytes.rfind("x,y\n", 0) == 0);

  write_points_csv(dir + "/empty.csv", {});
  CHECK(slurp(dir + "/empty.csv") == "x,y\n");
  CHECK(read_points_csv(dir + "/empty.csv").empty());
}

TEST_CASE("points csv: malformed inputs carry a byte offset") {
  std::string dir = fresh_dir("csv_bad");
  spit(dir + "/h.csv", "a,b\n1,2\n");
  CHECK_THROWS_AS(read_points_csv(dir + "/h.csv"), FormatError);
  spit(dir + "/field.csv", "x,y\n1.5,zebra\n");
  CHECK_THROWS_WITH_AS(read_points_csv(dir + "/field.csv"),
                       doctest::Contains("byte 8"), FormatError);
  spit(dir + "/junk.csv", "x,y\n1,2,3\n");
  CHECK_THROWS_AS(read_points_csv(dir + "/junk.csv"), FormatError);
  spit(dir + "/nocomma.csv", "x,y\n1.5\n");
  CHECK_THROWS_AS(read_points_csv(dir + "/nocomma.csv"), FormatError);
  CHECK_THROWS_AS(read_points_csv(dir + "/missing.csv"), IoError);
}

TEST_CASE("sample stem and dataset layout round trips") {
  std::string dir = fresh_dir("dataset");
  SceneConfig cfg;
  cfg.count_min = 4;
  cfg.count_max = 4;
  cfg.seed = 23;
  Sample s = gen_scene(cfg);

  write_sample(dir + "/one", s);
  Sample back = read_sample(dir + "/one");
  CHECK(bit_equal(s.image, back.image));
  REQUIRE(back.points.size() == s.points.size());
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    CHECK(back.points[i].x == s.points[i].x);
    CHECK(back.points[i].y == s.points[i].y);
  }

  CHECK(index_name(7) == "0007");
  CHECK(index_name(1234) == "1234");
  write_dataset_sample(dir, 7, s);
  CHECK(fs::exists(dir + "/images/0007.pgm"));
  CHECK(fs::exists(dir + "/points/0007.csv"));
  Sample ds = read_dataset_sample(dir, 7);
  CHECK(bit_equal(s.image, ds.image));
  CHECK(ds.points.size() == s.points.size());

  DatasetIndex idx;
  idx.train = {0, 1, 2};
  idx.val = {3, 4};
  write_split(dir, idx);
  CHECK(slurp(dir + "/split.txt") ==
        "0000 train\n0001 train\n0002 train\n0003 val\n0004 val\n");
  DatasetIndex ridx = read_split(dir);
  CHECK(ridx.train == idx.train);
  CHECK(ridx.val == idx.val);

  spit(dir + "/split.txt", "0000 test\n");
  CHECK_THROWS_AS(read_split(dir), FormatError);
}

TEST_CASE("checkpoint: save/load/save is byte stable and bit exact") {
  std::string dir = fresh_dir("ckpt");
  Model m(tiny_config(), 42);
  save_checkpoint(m, dir + "/model");
  REQUIRE(fs::exists(dir + "/model.bin"));
  REQUIRE(fs::exists(dir + "/model.manifest"));

  Model other(tiny_config(), 7);
  bool all_equal = true;
  for (const auto& [name, t] : other.params())
    all_equal = all_equal && bit_equal(t, m.param(name));
  CHECK_FALSE(all_equal);  // different init before loading

  load_checkpoint(other, dir + "/model");
  for (const auto& [name, t] : other.params()) CHECK(bit_equal(t, m.param(name)));

  save_checkpoint(other, dir + "/model2");
  CHECK(slurp(dir + "/model.bin") == slurp(dir + "/model2.bin"));
  CHECK(slurp(dir + "/model.manifest") == slurp(dir + "/model2.manifest"));
}

TEST_CASE("checkpoint: loaded model reproduces the saver's density map") {
  std::string dir = fresh_dir("ckpt_probe");
  Model m(tiny_config(), 42);
  save_checkpoint(m, dir + "/model");
  Model clone(tiny_config(), 7);
  load_checkpoint(clone, dir + "/model");

  SceneConfig cfg;
  cfg.count_min = 3;
  cfg.count_max = 3;
  cfg.seed = 2;
  Tensor probe = gen_scene(cfg).image;

  auto density = [&](const Model& model) {
    FeaturePyramid fp = model.encode(probe);
    int C = model.config().cdeep();
    int gh = fp.p5.dim(1), gw = fp.p5.dim(2);
    Tensor fd = model.encode_sequence(
        reshape(fp.p5, {C, gh * gw}),
        positional_table(gh, gw, model.config().hidden));
    Tensor fd_spatial = reshape(transpose2d(model.readout(fd)), {C, gh, gw});
    return model.decode(model.fuse_to_f8(fd_spatial, fp.f8));
  };
  CHECK(bit_equal(density(m), density(clone)));
}

TEST_CASE("checkpoint: mismatched shapes and corrupt files are rejected") {
  std::string dir = fresh_dir("ckpt_bad");
  Model m(tiny_config(), 42);
  save_checkpoint(m, dir + "/model");

  ModelConfig wide = tiny_config();
  wide.stage_channels = {3, 2, 2, 2, 2};
  Model other(wide, 1);
  CHECK_THROWS_AS(load_checkpoint(other, dir + "/model"), ManifestMismatch);

  // Truncated weight file.
  std::string bin = slurp(dir + "/model.bin");
  spit(dir + "/model.bin", bin.substr(0, bin.size() - 8));
  Model same(tiny_config(), 1);
  CHECK_THROWS_AS(load_checkpoint(same, dir + "/model"), FormatError);
  spit(dir + "/model.bin", bin);
  load_checkpoint(same, dir + "/model");  // restored file loads again

  // Tampered manifest shape.
  std::string man = slurp(dir + "/model.manifest");
  auto pos = man.find("2 1 3 3");
  REQUIRE(pos != std::string::npos);
  spit(dir + "/model.manifest",
       man.substr(0, pos) + "2 1 3 4" + man.substr(pos + 7));
  CHECK_THROWS_AS(load_checkpoint(same, dir + "/model"), ManifestMismatch);

  CHECK_THROWS_AS(load_checkpoint(same, dir + "/nothere"), IoError);
}
