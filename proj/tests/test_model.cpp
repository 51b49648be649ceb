#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "crowd/errors.hpp"
#include "crowd/model.hpp"
#include "crowd/ops.hpp"
#include "crowd/rng.hpp"
#include "crowd/tensor.hpp"

using namespace crowd;

namespace {

// Tiny architecture used wherever finite differences or exhaustive checks
// would be too slow on the full-width network.
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

Tensor test_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  for (double& x : v) x = rng.uniform(0.05, 0.95);
  return Tensor::from_data({1, h, w}, std::move(v));
}

const Model& default_model() {
  static Model m(ModelConfig{}, 42);
  return m;
}

// Counting-path forward shared by the end-to-end gradient checks: image to
// density plus projection, each dotted with a fixed random plane so every
// output cell contributes to the scalar.
Tensor tiny_forward(const Model& m, const Tensor& img, const Tensor& wd,
                    const Tensor& wp) {
  FeaturePyramid pyr = m.encode(img);
  int C = m.config().cdeep();
  int gh = pyr.p5.dim(1), gw = pyr.p5.dim(2);
  Tensor p5_flat = reshape(pyr.p5, {C, gh * gw});
  Tensor pos = positional_table(gh, gw, m.config().hidden);
  Tensor fd = m.encode_sequence(p5_flat, pos);
  Tensor ro = m.readout(fd);
  Tensor fd_spatial = reshape(transpose2d(ro), {C, gh, gw});
  Tensor fused = m.fuse_to_f8(fd_spatial, pyr.f8);
  Tensor density = m.decode(fused);
  Tensor proj = m.project(fused);
  return add(sum(mul(density, wd)), sum(mul(proj, wp)));
}

double max_abs_row_diff(const Tensor& a, int ra, const Tensor& b, int rb) {
  const int n = a.dim(1);
  double worst = 0.0;
  for (int j = 0; j < n; ++j)
    worst = std::max(worst,
                     std::fabs(a.data()[ra * n + j] - b.data()[rb * n + j]));
  return worst;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.heads = 3;  // 512 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ModelConfig{};
  cfg.hidden = 510;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ModelConfig{};
  cfg.stage_channels = {8, 8, 8};
  CHECK_THROWS_AS(Model(cfg, 1), ConfigError);
  cfg = ModelConfig{};
  cfg.encoder_layers = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("positional table: frozen values and shape") {
  Tensor pos = positional_table(2, 3, 4);
  REQUIRE(pos.shape() == Shape{6, 4});
  // Row layout: [sin c, cos c, sin r, cos r] at frequency 1 when dim = 4.
  auto at = [&](int token, int d) { return pos.data()[token * 4 + d]; };
  // token 0 = (r0,c0)
  CHECK(at(0, 0) == doctest::Approx(0.0));
  CHECK(at(0, 1) == doctest::Approx(1.0));
  CHECK(at(0, 2) == doctest::Approx(0.0));
  CHECK(at(0, 3) == doctest::Approx(1.0));
  // token 2 = (r0,c2): column code varies, row code does not
  CHECK(at(2, 0) == doctest::Approx(std::sin(2.0)));
  CHECK(at(2, 1) == doctest::Approx(std::cos(2.0)));
  CHECK(at(2, 2) == doctest::Approx(0.0));
  CHECK(at(2, 3) == doctest::Approx(1.0));
  // token 3 = (r1,c0): row code varies, column code does not
  CHECK(at(3, 0) == doctest::Approx(0.0));
  CHECK(at(3, 1) == doctest::Approx(1.0));
  CHECK(at(3, 2) == doctest::Approx(std::sin(1.0)));
  CHECK(at(3, 3) == doctest::Approx(std::cos(1.0)));

  // Two frequencies when dim = 8: pairs at 1 and 10000^(-1/2) = 0.01.
  Tensor p8 = positional_table(2, 2, 8);
  auto at8 = [&](int token, int d) { return p8.data()[token * 8 + d]; };
  CHECK(at8(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(at8(1, 2) == doctest::Approx(std::sin(0.01)));
  CHECK(at8(1, 3) == doctest::Approx(std::cos(0.01)));

  CHECK_THROWS_AS(positional_table(0, 2, 4), BadSize);
  CHECK_THROWS_AS(positional_table(2, 2, 6), BadSize);

  // Distinct grid positions always get distinct codes on a small grid.
  Tensor p = positional_table(4, 4, 8);
  for (int i = 0; i < 16; ++i)
    for (int j = i + 1; j < 16; ++j)
      CHECK(max_abs_row_diff(p, i, p, j) > 1e-6);
}

TEST_CASE("parameter registry: names, count, set_param") {
  const Model& m = default_model();
  CHECK(m.param_count() == 13564465);
  CHECK(m.param("backbone.s1.c1.w").shape() == Shape{16, 1, 3, 3});
  CHECK(m.param("backbone.s5.c2.w").shape() == Shape{64, 64, 3, 3});
  CHECK(m.param("mpm.proj.w").shape() == Shape{64, 512});
  CHECK(m.param("mpm.layer3.ffn.w2").shape() == Shape{2048, 512});
  CHECK(m.param("mpm.readout.b").shape() == Shape{64});
  CHECK(m.param("decoder.c3.w").shape() == Shape{1, 128, 1, 1});
  CHECK(m.param("clm.c2.w").shape() == Shape{64, 64, 1, 1});
  CHECK_THROWS_AS(m.param("nonsense"), ConfigError);

  Model small(tiny_config(), 7);
  CHECK_THROWS_AS(small.set_param("backbone.s1.c1.w", Tensor::zeros({2, 1, 2, 2})),
                  ShapeMismatch);
  Tensor repl = Tensor::full({2, 1, 3, 3}, 0.5, true);
  small.set_param("backbone.s1.c1.w", repl);
  CHECK(small.param("backbone.s1.c1.w").data()[0] == 0.5);

  // Layer-norm gains start at one, biases and conv biases at zero.
  CHECK(m.param("mpm.layer0.ln1.g").data()[0] == 1.0);
  CHECK(m.param("mpm.layer0.ln1.b").data()[0] == 0.0);
  CHECK(m.param("backbone.s1.c1.b").data()[0] == 0.0);
}

TEST_CASE("encode: output shapes at 1/8 and 1/32 scale") {
  const Model& m = default_model();
  FeaturePyramid pyr = m.encode(test_image(64, 64, 3));
  CHECK(pyr.f8.shape() == Shape{64, 8, 8});
  CHECK(pyr.p5.shape() == Shape{64, 2, 2});

  FeaturePyramid wide = m.encode(test_image(64, 128, 4));
  CHECK(wide.f8.shape() == Shape{64, 8, 16});
  CHECK(wide.p5.shape() == Shape{64, 2, 4});
}

TEST_CASE("encode: input validation") {
  const Model& m = default_model();
  CHECK_THROWS_AS(m.encode(Tensor::zeros({1, 32, 64})), BadSize);
  CHECK_THROWS_AS(m.encode(Tensor::zeros({1, 96, 100})), BadSize);
  CHECK_THROWS_AS(m.encode(Tensor::zeros({3, 64, 64})), ShapeMismatch);
  CHECK_THROWS_AS(m.encode(Tensor::zeros({64, 64})), ShapeMismatch);
}

TEST_CASE("encode: zero image with zero biases gives zero features") {
  const Model& m = default_model();  // biases initialize to zero
  FeaturePyramid pyr = m.encode(Tensor::zeros({1, 64, 64}));
  for (int i = 0; i < pyr.f8.size(); ++i) CHECK(pyr.f8.data()[i] == 0.0);
  for (int i = 0; i < pyr.p5.size(); ++i) CHECK(pyr.p5.data()[i] == 0.0);
}

TEST_CASE("determinism: same seed reproduces parameters and features") {
  Model a(tiny_config(), 11), b(tiny_config(), 11), c(tiny_config(), 12);
  REQUIRE(a.params().size() == b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const Tensor& ta = a.params()[i].second;
    const Tensor& tb = b.params()[i].second;
    REQUIRE(ta.shape() == tb.shape());
    CHECK(std::memcmp(ta.data(), tb.data(), sizeof(double) * ta.size()) == 0);
  }
  CHECK(std::memcmp(a.param("backbone.s1.c1.w").data(),
                    c.param("backbone.s1.c1.w").data(),
                    sizeof(double) * 18) != 0);

  Tensor img = test_image(64, 64, 5);
  FeaturePyramid pa = a.encode(img), pb = b.encode(img);
  CHECK(std::memcmp(pa.p5.data(), pb.p5.data(),
                    sizeof(double) * pa.p5.size()) == 0);
}

TEST_CASE("encoder with zero layers is projection plus positions") {
  ModelConfig cfg = tiny_config();
  cfg.encoder_layers = 0;
  Model m(cfg, 9);
  int C = cfg.cdeep();
  Tensor pos = positional_table(2, 2, cfg.hidden);

  // Zero tokens: projection contributes nothing, output is exactly the table.
  Tensor out = m.encode_sequence(Tensor::zeros({C, 4}), pos);
  REQUIRE(out.shape() == pos.shape());
  CHECK(std::memcmp(out.data(), pos.data(), sizeof(double) * out.size()) == 0);

  // Non-zero tokens: output minus positions equals the linear projection.
  Rng rng(31);
  std::vector<double> tv(static_cast<std::size_t>(C) * 4);
  for (double& x : tv) x = rng.normal();
  Tensor p5_flat = Tensor::from_data({C, 4}, tv);
  Tensor out2 = m.encode_sequence(p5_flat, pos);
  Tensor proj = add_rowvec(matmul(transpose2d(p5_flat), m.param("mpm.proj.w")),
                           m.param("mpm.proj.b"));
  for (int i = 0; i < out2.size(); ++i)
    CHECK(out2.data()[i] - pos.data()[i] ==
          doctest::Approx(proj.data()[i]).epsilon(1e-12));
}

TEST_CASE("encoder: identical tokens at different positions diverge") {
  Model m(tiny_config(), 13);
  int C = m.config().cdeep();
  Tensor pos = positional_table(2, 2, m.config().hidden);
  // All four tokens identical; only the positional code distinguishes them.
  std::vector<double> tv(static_cast<std::size_t>(C) * 4, 0.7);
  Tensor fd = m.encode_sequence(Tensor::from_data({C, 4}, tv), pos);
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      CHECK(max_abs_row_diff(fd, i, fd, j) > 1e-9);
}

TEST_CASE("encode_tokens: blocks are independent sequences") {
  Model m(tiny_config(), 17);
  int C = m.config().cdeep();
  Tensor pos = positional_table(2, 2, m.config().hidden);
  Rng rng(77);
  std::vector<double> av(static_cast<std::size_t>(4) * C),
      bv(static_cast<std::size_t>(4) * C);
  for (double& x : av) x = rng.normal();
  for (double& x : bv) x = rng.normal();
  Tensor ta = Tensor::from_data({4, C}, av);
  Tensor tb = Tensor::from_data({4, C}, bv);
  Tensor both = concat({ta, tb}, 0);

  Tensor batched = m.encode_tokens(both, pos, {4, 4});
  Tensor solo_a = m.encode_tokens(ta, pos, {4});
  Tensor solo_b = m.encode_tokens(tb, pos, {4});
  REQUIRE(batched.shape() == Shape{8, m.config().hidden});
  for (int r = 0; r < 4; ++r) {
    CHECK(max_abs_row_diff(batched, r, solo_a, r) < 1e-10);
    CHECK(max_abs_row_diff(batched, 4 + r, solo_b, r) < 1e-10);
  }

  // Identical blocks produce identical rows.
  Tensor twice = m.encode_tokens(concat({ta, ta}, 0), pos, {4, 4});
  for (int r = 0; r < 4; ++r)
    CHECK(max_abs_row_diff(twice, r, twice, 4 + r) < 1e-12);
}

TEST_CASE("encode_tokens: validation") {
  Model m(tiny_config(), 17);
  int C = m.config().cdeep();
  Tensor pos = positional_table(2, 2, m.config().hidden);
  Tensor toks = Tensor::zeros({4, C});
  CHECK_THROWS_AS(m.encode_tokens(toks, pos, {}), EmptyInput);
  CHECK_THROWS_AS(m.encode_tokens(toks, pos, {3}), ShapeMismatch);
  CHECK_THROWS_AS(m.encode_tokens(toks, pos, {4, 4}), ShapeMismatch);
  CHECK_THROWS_AS(m.encode_tokens(Tensor::zeros({4, C + 1}), pos, {4}),
                  ShapeMismatch);
  CHECK_THROWS_AS(m.readout(Tensor::zeros({4, m.config().hidden + 1})),
                  ShapeMismatch);
}

TEST_CASE("fuse_to_f8: layout and gradient flow to both branches") {
  Model m(tiny_config(), 19);
  int C = m.config().cdeep();
  Tensor fd_spatial = Tensor::full({C, 2, 2}, 0.25, true);
  Rng rng(5);
  std::vector<double> fv(static_cast<std::size_t>(C) * 64);
  for (double& x : fv) x = rng.normal();
  Tensor f8 = Tensor::from_data({C, 8, 8}, fv, true);

  Tensor fused = m.fuse_to_f8(fd_spatial, f8);
  REQUIRE(fused.shape() == Shape{2 * C, 8, 8});
  // Bilinear upsampling preserves constants, so the first C channels are the
  // constant and the rest are f8 verbatim.
  for (int i = 0; i < C * 64; ++i) {
    CHECK(fused.data()[i] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(fused.data()[C * 64 + i] == fv[static_cast<std::size_t>(i)]);
  }

  backward(sum(fused));
  double g_fd = 0.0, g_f8 = 0.0;
  for (double g : fd_spatial.grad()) g_fd += g;
  for (double g : f8.grad()) g_f8 += g;
  CHECK(g_fd == doctest::Approx(64.0 * C));  // weights sum to the cell count
  CHECK(g_f8 == doctest::Approx(64.0 * C));  // identity pass-through
  CHECK_THROWS_AS(m.fuse_to_f8(Tensor::zeros({C, 2, 2}),
                               Tensor::zeros({C, 8, 9})),
                  ShapeMismatch);
}

TEST_CASE("decode: shape, non-negativity, count equals map sum") {
  Model m(tiny_config(), 23);
  int cf = m.config().cf();
  Rng rng(6);
  std::vector<double> fv(static_cast<std::size_t>(cf) * 64);
  for (double& x : fv) x = rng.normal();
  Tensor fused = Tensor::from_data({cf, 8, 8}, fv);
  Tensor d = m.decode(fused);
  REQUIRE(d.shape() == Shape{1, 8, 8});
  double manual = 0.0;
  for (int i = 0; i < 64; ++i) {
    CHECK(d.data()[i] >= 0.0);
    manual += d.data()[i];
  }
  CHECK(sum(d).item() == doctest::Approx(manual).epsilon(1e-14));
  CHECK(m.decode(Tensor::zeros({cf, 8, 8})).data()[0] == 0.0);
  CHECK_THROWS_AS(m.decode(Tensor::zeros({cf + 1, 8, 8})), ShapeMismatch);

  Tensor p = m.project(fused);
  CHECK(p.shape() == Shape{m.config().proj_dim, 8, 8});
  CHECK_THROWS_AS(m.project(Tensor::zeros({1, 8, 8})), ShapeMismatch);
}

TEST_CASE("end-to-end gradients match finite differences") {
  Model m(tiny_config(), 29);
  Tensor img = test_image(64, 64, 8);
  Rng rng(9);
  std::vector<double> wdv(64), wpv(static_cast<std::size_t>(2) * 64);
  for (double& x : wdv) x = rng.normal();
  for (double& x : wpv) x = rng.normal();
  Tensor wd = Tensor::from_data({1, 8, 8}, wdv);
  Tensor wp = Tensor::from_data({2, 8, 8}, wpv);

  auto check_param = [&](const char* name) {
    Tensor orig = m.param(name);
    std::vector<double> vals(orig.data(), orig.data() + orig.size());
    Tensor probe = Tensor::from_data(orig.shape(), vals, true);
    double err = grad_check(
        [&](const Tensor& t) {
          m.set_param(name, t);
          return tiny_forward(m, img, wd, wp);
        },
        probe);
    m.set_param(name, orig);
    INFO(name);
    CHECK(err < 1e-4);
  };

  check_param("backbone.s1.c1.w");   // reaches every downstream module
  check_param("backbone.s4.c2.b");
  check_param("mpm.proj.w");
  check_param("mpm.layer0.attn.wq");
  check_param("mpm.layer0.ln2.g");
  check_param("mpm.readout.w");
  check_param("decoder.c2.w");
  check_param("clm.c1.b");
}
