#include "crowd/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "crowd/clm.hpp"
#include "crowd/datagen.hpp"
#include "crowd/eval.hpp"
#include "crowd/io.hpp"
#include "crowd/losses.hpp"
#include "crowd/model.hpp"
#include "crowd/mpm.hpp"
#include "crowd/ops.hpp"
#include "crowd/rng.hpp"
#include "crowd/tensor.hpp"
#include "crowd/verify.hpp"

namespace crowd {
namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

Tensor rnd(Rng& rng, const Shape& s, double lo, double hi, bool rg) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(s, std::move(v), rg);
}

Tensor var(Rng& rng, const Shape& s) { return rnd(rng, s, -1.0, 1.0, true); }
Tensor cst(Rng& rng, const Shape& s) { return rnd(rng, s, -1.0, 1.0, false); }

// |value| in [0.2, 1.2] with a random sign: probes for kinked ops (relu, abs,
// L1) stay far from the kink relative to the finite-difference step.
Tensor var_off_zero(Rng& rng, const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  std::vector<double> v(n);
  for (double& x : v) {
    double mag = rng.uniform(0.2, 1.2);
    x = rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag;
  }
  return Tensor::from_data(s, std::move(v), true);
}

double total_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.value()) s += v;
  return s;
}

// Entries separated by >= 0.03 so no 2x2 pooling window changes its argmax
// under the finite-difference step.
Tensor pool_probe(Rng& rng) {
  const int n = 2 * 4 * 4;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(j)]);
  }
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    v[static_cast<std::size_t>(i)] =
        0.05 * order[static_cast<std::size_t>(i)] + rng.uniform(0.0, 0.02) - 1.0;
  return Tensor::from_data({2, 4, 4}, std::move(v), true);
}

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

const Model& tiny_model() {
  static Model m(tiny_config(), 99);
  return m;
}

// 3x3 grid with two occupied cells; shared by the counting-loss probes.
GroundTruth grid3_truth() { return make_ground_truth({{4, 4}, {20, 12}}, 24, 24); }

LabelGrid grid_labels(int h, int w, std::vector<int> labels) {
  LabelGrid g;
  g.h = h;
  g.w = w;
  g.labels = std::move(labels);
  for (int v : g.labels) (v == 1 ? g.target_count : g.background_count)++;
  return g;
}

struct GradCase {
  std::string name;
  std::function<double(Rng&)> probe;  // one seeded instance -> max error
};

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  auto weighted = [](const Tensor& y, const Tensor& m) { return sum(mul(y, m)); };

  cases.push_back({"add", [weighted](Rng& rng) {
    Tensor b = cst(rng, {3, 4}), m = cst(rng, {3, 4}), x0 = var(rng, {3, 4});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(add(x, b), m); }, x0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(add(b, x), m); }, x0);
    return std::max(e1, e2);
  }});
  cases.push_back({"sub", [weighted](Rng& rng) {
    Tensor b = cst(rng, {3, 4}), m = cst(rng, {3, 4}), x0 = var(rng, {3, 4});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(sub(x, b), m); }, x0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(sub(b, x), m); }, x0);
    return std::max(e1, e2);
  }});
  cases.push_back({"mul", [weighted](Rng& rng) {
    Tensor b = cst(rng, {3, 4}), m = cst(rng, {3, 4}), x0 = var(rng, {3, 4});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(mul(x, b), m); }, x0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(mul(mul(x, x), b), m); }, x0);
    return std::max(e1, e2);
  }});
  cases.push_back({"divide", [weighted](Rng& rng) {
    Tensor m = cst(rng, {3, 4});
    Tensor num = cst(rng, {3, 4});
    Tensor den0 = rnd(rng, {3, 4}, 0.5, 1.5, true);
    Tensor x0 = var(rng, {3, 4});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(divide(x, den0), m); }, x0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(divide(num, x), m); }, den0);
    return std::max(e1, e2);
  }});
  cases.push_back({"scale / add_scalar", [weighted](Rng& rng) {
    Tensor m = cst(rng, {2, 5});
    double c = rng.uniform(-2.0, 2.0);
    Tensor x0 = var(rng, {2, 5});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(scale(x, c), m); }, x0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(add_scalar(x, c), m); }, x0);
    return std::max(e1, e2);
  }});
  cases.push_back({"relu", [weighted](Rng& rng) {
    Tensor m = cst(rng, {3, 4});
    return grad_check([&](const Tensor& x) { return weighted(relu(x), m); },
                      var_off_zero(rng, {3, 4}));
  }});
  cases.push_back({"abs_val", [weighted](Rng& rng) {
    Tensor m = cst(rng, {3, 4});
    return grad_check([&](const Tensor& x) { return weighted(abs_val(x), m); },
                      var_off_zero(rng, {3, 4}));
  }});
  cases.push_back({"exp_elem", [weighted](Rng& rng) {
    Tensor m = cst(rng, {3, 4});
    return grad_check(
        [&](const Tensor& x) { return weighted(exp_elem(x), m); },
        var(rng, {3, 4}));
  }});
  cases.push_back({"log_elem", [weighted](Rng& rng) {
    Tensor m = cst(rng, {3, 4});
    return grad_check(
        [&](const Tensor& x) { return weighted(log_elem(x), m); },
        rnd(rng, {3, 4}, 0.3, 2.0, true));
  }});
  cases.push_back({"reshape / transpose2d", [weighted](Rng& rng) {
    Tensor m1 = cst(rng, {2, 6}), m2 = cst(rng, {4, 3});
    Tensor x0 = var(rng, {3, 4});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(reshape(x, {2, 6}), m1); }, x0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(transpose2d(x), m2); }, x0);
    return std::max(e1, e2);
  }});
  cases.push_back({"concat", [weighted](Rng& rng) {
    Tensor a = cst(rng, {2, 4}), b = cst(rng, {3, 4});
    Tensor m0 = cst(rng, {7, 4}), m1 = cst(rng, {2, 12});
    Tensor x0 = var(rng, {2, 4});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(concat({a, x, b}, 0), m0); }, x0);
    Tensor c = cst(rng, {2, 8});
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(concat({x, c}, 1), m1); }, x0);
    return std::max(e1, e2);
  }});
  cases.push_back({"slice_cols", [weighted](Rng& rng) {
    Tensor m = cst(rng, {3, 3});
    return grad_check(
        [&](const Tensor& x) { return weighted(slice_cols(x, 1, 3), m); },
        var(rng, {3, 5}));
  }});
  cases.push_back({"gather_rows / scatter_rows", [weighted](Rng& rng) {
    std::vector<int> pick{2, 0, 2};  // duplicate row accumulates
    Tensor mg = cst(rng, {3, 3}), ms = cst(rng, {5, 3});
    Tensor x0 = var(rng, {4, 3});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(gather_rows(x, pick), mg); }, x0);
    std::vector<int> place{4, 1};
    Tensor s0 = var(rng, {2, 3});
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(scatter_rows(x, place, 5), ms); },
        s0);
    return std::max(e1, e2);
  }});
  cases.push_back({"matmul", [weighted](Rng& rng) {
    Tensor a = cst(rng, {3, 4}), b = cst(rng, {4, 2}), m = cst(rng, {3, 2});
    Tensor a0 = var(rng, {3, 4}), b0 = var(rng, {4, 2});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(matmul(x, b), m); }, a0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(matmul(a, x), m); }, b0);
    return std::max(e1, e2);
  }});
  cases.push_back({"add_rowvec", [weighted](Rng& rng) {
    Tensor a = cst(rng, {3, 4}), v = cst(rng, {4}), m = cst(rng, {3, 4});
    Tensor a0 = var(rng, {3, 4}), v0 = var(rng, {4});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(add_rowvec(x, v), m); }, a0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(add_rowvec(a, x), m); }, v0);
    return std::max(e1, e2);
  }});
  cases.push_back({"sum / mean", [](Rng& rng) {
    Tensor x0 = var(rng, {3, 4});
    double e1 = grad_check([](const Tensor& x) { return sum(x); }, x0);
    double e2 = grad_check(
        [](const Tensor& x) { return mean(mul(x, x)); }, x0);
    return std::max(e1, e2);
  }});
  cases.push_back({"sum_axis / mean_axis", [weighted](Rng& rng) {
    Tensor m0 = cst(rng, {4}), m1 = cst(rng, {3});
    Tensor x0 = var(rng, {3, 4});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(sum_axis(x, 0), m0); }, x0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(mean_axis(x, 1), m1); }, x0);
    return std::max(e1, e2);
  }});
  cases.push_back({"l1_norm / l2_norm", [](Rng& rng) {
    Tensor x0 = var_off_zero(rng, {3, 4});
    double e1 = grad_check([](const Tensor& x) { return l1_norm(x); }, x0);
    double e2 = grad_check([](const Tensor& x) { return l2_norm(x); }, x0);
    return std::max(e1, e2);
  }});
  cases.push_back({"cosine", [](Rng& rng) {
    Tensor u = var_off_zero(rng, {5}), v = var_off_zero(rng, {5});
    double e1 = grad_check(
        [&](const Tensor& x) { return cosine(x, v); }, u);
    double e2 = grad_check(
        [&](const Tensor& x) { return cosine(u, x); }, v);
    return std::max(e1, e2);
  }});
  cases.push_back({"div_by_scalar", [weighted](Rng& rng) {
    Tensor m = cst(rng, {3, 4});
    Tensor s = rnd(rng, {1}, 0.5, 1.5, true);
    Tensor a = cst(rng, {3, 4});
    Tensor x0 = var(rng, {3, 4});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(div_by_scalar(x, s), m); }, x0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(div_by_scalar(a, x), m); }, s);
    return std::max(e1, e2);
  }});
  cases.push_back({"softmax", [weighted](Rng& rng) {
    Tensor m = cst(rng, {3, 4});
    Tensor x0 = var(rng, {3, 4});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(softmax(x, 1), m); }, x0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(softmax(x, 0), m); }, x0);
    return std::max(e1, e2);
  }});
  cases.push_back({"layer_norm_rows", [weighted](Rng& rng) {
    Tensor m = cst(rng, {4, 6});
    Tensor a = cst(rng, {4, 6}), g = cst(rng, {6}), b = cst(rng, {6});
    Tensor a0 = var(rng, {4, 6}), g0 = var(rng, {6}), b0 = var(rng, {6});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(layer_norm_rows(x, g, b), m); },
        a0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(layer_norm_rows(a, x, b), m); },
        g0);
    double e3 = grad_check(
        [&](const Tensor& x) { return weighted(layer_norm_rows(a, g, x), m); },
        b0);
    return std::max({e1, e2, e3});
  }});
  cases.push_back({"conv2d", [weighted](Rng& rng) {
    Tensor x = cst(rng, {2, 5, 5}), w = cst(rng, {3, 2, 3, 3}), b = cst(rng, {3});
    Tensor m1 = cst(rng, {3, 5, 5});
    Tensor x0 = var(rng, {2, 5, 5}), w0 = var(rng, {3, 2, 3, 3}),
           b0 = var(rng, {3});
    double e1 = grad_check(
        [&](const Tensor& t) { return weighted(conv2d(t, w, b, 1, 1), m1); }, x0);
    double e2 = grad_check(
        [&](const Tensor& t) { return weighted(conv2d(x, t, b, 1, 1), m1); }, w0);
    double e3 = grad_check(
        [&](const Tensor& t) { return weighted(conv2d(x, w, t, 1, 1), m1); }, b0);
    Tensor m2 = cst(rng, {3, 2, 2});
    double e4 = grad_check(
        [&](const Tensor& t) { return weighted(conv2d(t, w, b, 2, 0), m2); }, x0);
    return std::max({e1, e2, e3, e4});
  }});
  cases.push_back({"maxpool2x2", [weighted](Rng& rng) {
    Tensor m = cst(rng, {2, 2, 2});
    return grad_check(
        [&](const Tensor& x) { return weighted(maxpool2x2(x), m); },
        pool_probe(rng));
  }});
  cases.push_back({"upsample_bilinear", [weighted](Rng& rng) {
    Tensor m2 = cst(rng, {2, 6, 6}), m3 = cst(rng, {2, 9, 9});
    Tensor x0 = var(rng, {2, 3, 3});
    double e1 = grad_check(
        [&](const Tensor& x) { return weighted(upsample_bilinear(x, 2), m2); },
        x0);
    double e2 = grad_check(
        [&](const Tensor& x) { return weighted(upsample_bilinear(x, 3), m3); },
        x0);
    return std::max(e1, e2);
  }});

  // --- losses --------------------------------------------------------------

  cases.push_back({"count loss", [](Rng& rng) {
    GroundTruth gt = grid3_truth();
    Tensor probe;
    do {  // keep the absolute-difference kink out of finite-difference reach
      probe = rnd(rng, {1, 3, 3}, 0.1, 1.0, true);
    } while (std::fabs(total_of(probe) - 2.0) <= 0.3);
    return grad_check(
        [&](const Tensor& x) { return count_loss(x, gt); }, probe);
  }});
  cases.push_back({"distribution-distance loss", [](Rng& rng) {
    GroundTruth gt = grid3_truth();
    Tensor probe = rnd(rng, {1, 3, 3}, 0.2, 1.0, true);
    double sigma = rng.uniform(0.0, 1.0) < 0.5 ? 0.0 : 1.0;
    return grad_check(
        [&](const Tensor& x) { return tv_loss(x, gt, sigma); }, probe);
  }});
  cases.push_back({"consistency loss (3 variants)", [](Rng& rng) {
    const Model& m = tiny_model();
    const int N = 4, H = m.config().hidden, C = m.config().cdeep();
    Tensor fd = cst(rng, {N, H});
    Tensor p5 = cst(rng, {C, N});
    MaskSpec mask = make_mask(N, 0.5, MaskStrategy::random, 2, 2,
                              rng.next_u64());
    double worst = 0.0;
    for (ConsistentVariant variant :
         {ConsistentVariant::masked_vectors, ConsistentVariant::all_vectors,
          ConsistentVariant::reconstruct_p5}) {
      Tensor probe = var(rng, {N, H});
      worst = std::max(
          worst, grad_check(
                     [&](const Tensor& t) {
                       return consistent_loss(m, t, fd, mask, variant, &p5);
                     },
                     probe));
    }
    return worst;
  }});
  cases.push_back({"contrastive loss (5 variants)", [](Rng& rng) {
    LabelGrid own = grid_labels(2, 3, {1, 0, 1, 0, 0, 1});
    LabelGrid other_labels = grid_labels(2, 3, {1, 1, 0, 0, 1, 0});
    // Positive embeddings keep every pooled mean far from the zero-norm
    // regime where the cosine gradient is floored.
    Tensor other = rnd(rng, {2, 2, 3}, 0.2, 1.2, false);
    double worst = 0.0;
    for (ClmVariant variant :
         {ClmVariant::single_global, ClmVariant::single_local,
          ClmVariant::cross_global, ClmVariant::cross_local,
          ClmVariant::cross_global_collection}) {
      Tensor probe = rnd(rng, {2, 2, 3}, 0.2, 1.2, true);
      bool cross = variant != ClmVariant::single_global &&
                   variant != ClmVariant::single_local;
      worst = std::max(
          worst,
          grad_check(
              [&](const Tensor& x) {
                if (!cross) return contrastive_loss(x, own, variant);
                BatchContext ctx =
                    make_batch_context({x, other}, {own, other_labels});
                return contrastive_loss(x, own, variant, &ctx, 0);
              },
              probe));
    }
    return worst;
  }});
  // The transport term carries its own finite-difference check at its own
  // tolerance (transport_gradient_check), so the composites run it at
  // weight zero here.
  cases.push_back({"composite losses", [](Rng& rng) {
    GroundTruth gt = grid3_truth();
    LossWeights w;
    w.lambda1 = 0.0;
    w.lambda2 = 0.02;
    w.alpha = 0.3;
    w.beta = 0.2;
    SinkhornConfig cfg;
    Tensor probe = rnd(rng, {1, 3, 3}, 0.2, 1.0, true);
    double e1 = grad_check(
        [&](const Tensor& x) { return density_loss(x, gt, w, cfg, 1.0); },
        probe);
    Tensor aux = var(rng, {2, 2});
    double e2 = grad_check(
        [&](const Tensor& x) {
          Tensor l_aux = sum(mul(x, x));
          return combined_loss(probe, gt, l_aux, l_aux, w, cfg, 1.0);
        },
        aux);
    return std::max(e1, e2);
  }});
  return cases;
}

}  // namespace

std::vector<CheckResult> gradient_checks(int instances) {
  std::vector<GradCase> cases = gradient_cases();
  std::vector<CheckResult> out;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
      Rng rng(mix_seed(0x6EAD5EED + ci, static_cast<std::uint64_t>(i)));
      worst = std::max(worst, cases[ci].probe(rng));
    }
    CheckResult r;
    r.name = "grad: " + cases[ci].name;
    r.pass = worst < 1e-4;
    r.detail = "max err " + sci(worst) + " over " + std::to_string(instances) +
               " probes (tol 1e-4)";
    out.push_back(std::move(r));
  }
  return out;
}

CheckResult transport_cost_check(int instances) {
  Rng rng(2024);
  double worst = 0.0;
  int failures = 0, unconverged = 0;
  for (int trial = 0; trial < instances; ++trial) {
    // Supports on the top and bottom rows of a small grid; route-cost gaps
    // dwarf the default epsilon, so the entropic plan is effectively sharp.
    int gw = rng.uniform_int(2, 4);
    int gh = 4;
    int n = gw, m = gw;
    std::vector<double> a(static_cast<std::size_t>(n)),
        b(static_cast<std::size_t>(m));
    double sa = 0.0, sb = 0.0;
    for (double& v : a) sa += (v = rng.uniform(0.05, 1.0));
    for (double& v : b) sb += (v = rng.uniform(0.05, 1.0));
    if (trial % 7 == 0 && n > 2) {  // zero rows are legal on the prediction side
      sa -= a[0];
      a[0] = 0.0;
    }
    for (double& v : a) v /= sa;
    for (double& v : b) v /= sb;
    std::vector<double> cost(static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        double dr = gh - 1, dc = i - j;
        cost[static_cast<std::size_t>(i) * m + j] = dr * dr + dc * dc;
      }
    SinkhornConfig cfg;  // epsilon = 0.01 * max cost
    cfg.max_iters = 10000;
    SinkhornResult res = sinkhorn(a, b, cost, n, m, cfg);
    double lp = exact_transport_cost(a, b, cost, n, m);
    double rel = std::fabs(res.cost - lp) / lp;
    worst = std::max(worst, rel);
    if (!res.converged) ++unconverged;
    if (!res.converged || rel >= 0.01) ++failures;
  }
  CheckResult r;
  r.name = "transport cost vs exact solver";
  r.pass = failures == 0;
  r.detail = std::to_string(instances) + " instances, worst rel err " +
             sci(worst) + " (tol 1e-2), " + std::to_string(unconverged) +
             " unconverged";
  return r;
}

CheckResult transport_gradient_check(int instances) {
  // The duals give the exact gradient only in the sharp limit; the residual
  // shrinks linearly with epsilon, so a small epsilon keeps the agreement
  // inside the 1e-3 tolerance with margin.
  SinkhornConfig cfg;
  cfg.epsilon = 0.0005;
  cfg.tol = 1e-11;
  cfg.max_iters = 20000;
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    Rng rng(mix_seed(0x07D0A15, static_cast<std::uint64_t>(i)));
    bool small = i % 3 == 2;
    GroundTruth gt =
        small ? make_ground_truth({{3, 3}, {12, 12}}, 16, 16)
              : make_ground_truth({{3, 3}, {19, 19}, {10, 21}}, 24, 24);
    Tensor probe = rnd(rng, {1, gt.grid_h, gt.grid_w}, 0.2, 1.0, true);
    worst = std::max(
        worst,
        grad_check([&](const Tensor& t) { return ot_loss(t, gt, cfg); }, probe));
  }
  CheckResult r;
  r.name = "transport gradient vs central differences";
  r.pass = worst < 1e-3;
  r.detail = "max err " + sci(worst) + " over " + std::to_string(instances) +
             " probes (tol 1e-3)";
  return r;
}

std::vector<CheckResult> loss_identity_checks() {
  std::vector<CheckResult> out;
  auto push = [&out](const std::string& name, bool pass,
                     const std::string& detail) {
    out.push_back({name, pass, detail});
  };

  {  // identical encodings carry zero consistency penalty, exactly
    const Model& m = tiny_model();
    Rng rng(17);
    Tensor fd = rnd(rng, {4, m.config().hidden}, -1.0, 1.0, false);
    MaskSpec mask = make_mask(4, 0.5, MaskStrategy::random, 2, 2, 7);
    double v1 =
        consistent_loss(m, fd, fd, mask, ConsistentVariant::masked_vectors)
            .item();
    double v2 =
        consistent_loss(m, fd, fd, mask, ConsistentVariant::all_vectors).item();
    push("identity: consistency zero on identical encodings",
         v1 == 0.0 && v2 == 0.0,
         "masked_vectors " + sci(v1) + ", all_vectors " + sci(v2));
  }
  {  // symmetric logits land exactly on ln 2
    Tensor proj = Tensor::from_data({2, 1, 2}, {1.0, 1.0, 0.5, 0.5});
    LabelGrid labels = grid_labels(1, 2, {1, 0});
    double v =
        contrastive_loss(proj, labels, ClmVariant::single_global).item();
    double gap = std::fabs(v - std::log(2.0));
    push("identity: contrastive ln 2 on symmetric logits", gap <= 1e-12,
         "|loss - ln 2| = " + sci(gap) + " (tol 1e-12)");
  }
  {  // proportional maps: zero distribution distance
    GroundTruth gt = grid3_truth();
    std::vector<double> target = smoothed_dot_grid(gt, 1.0);
    for (double& v : target) v *= 2.5;
    Tensor pred = Tensor::from_data({1, 3, 3}, target);
    double v = tv_loss(pred, gt, 1.0).item();
    push("identity: distribution distance zero on proportional maps",
         std::fabs(v) <= 1e-12, "loss " + sci(v) + " (tol 1e-12)");
  }
  {  // disjoint single-cell supports: exactly one
    GroundTruth gt = make_ground_truth({{20, 20}}, 24, 24);  // cell (2,2)
    std::vector<double> v(9, 0.0);
    v[0] = 0.7;  // all predicted mass in cell (0,0)
    Tensor pred = Tensor::from_data({1, 3, 3}, v);
    double val = tv_loss(pred, gt, 0.0).item();
    push("identity: distribution distance one on disjoint supports",
         val == 1.0, "loss " + std::to_string(val));
  }
  {  // counting error is the exact absolute difference
    GroundTruth gt = grid3_truth();  // 2 points
    Tensor pred =
        Tensor::from_data({1, 3, 3}, {1.5, 2.25, 0.5, 0.25, 0, 0, 0, 0, 0});
    double v = count_loss(pred, gt).item();  // |4.5 - 2|
    push("identity: count error exact", v == 2.5,
         "loss " + std::to_string(v) + " (want 2.5 exactly)");
  }
  return out;
}

CheckResult matching_check(int instances_per_sigma) {
  int mismatches = 0, total = 0;
  Rng rng(777);
  for (double sigma : {4.0, 8.0, 16.0}) {
    for (int i = 0; i < instances_per_sigma; ++i) {
      int n = rng.uniform_int(0, 6), m = rng.uniform_int(0, 6);
      PointList preds, gts;
      for (int k = 0; k < n; ++k)
        preds.push_back({rng.uniform(0.0, 64.0), rng.uniform(0.0, 64.0)});
      for (int k = 0; k < m; ++k)
        gts.push_back({rng.uniform(0.0, 64.0), rng.uniform(0.0, 64.0)});
      MatchResult fast = match_points(preds, gts, sigma);
      MatchResult brute = brute_force_match(preds, gts, sigma);
      double dfast = 0.0, dbrute = 0.0;
      for (const auto& p : fast.pairs) dfast += p.dist;
      for (const auto& p : brute.pairs) dbrute += p.dist;
      bool same = fast.tp == brute.tp && fast.fp == brute.fp &&
                  fast.fn == brute.fn && std::fabs(dfast - dbrute) <= 1e-9;
      if (!same) ++mismatches;
      ++total;
    }
  }
  CheckResult r;
  r.name = "matching vs exhaustive search";
  r.pass = mismatches == 0;
  r.detail = std::to_string(total) + " instances (radii 4/8/16), " +
             std::to_string(mismatches) + " mismatches";
  return r;
}

std::vector<CheckResult> io_checks(const std::string& scratch_dir) {
  namespace fs = std::filesystem;
  std::vector<CheckResult> out;
  fs::create_directories(scratch_dir);
  auto path = [&scratch_dir](const std::string& leaf) {
    return (fs::path(scratch_dir) / leaf).string();
  };

  {  // image round trip is bit-exact (values live on the 8-bit lattice)
    SceneConfig sc;
    sc.image_size = 32;
    sc.count_min = 2;
    sc.count_max = 2;
    sc.seed = 11;
    Sample s = gen_scene(sc);
    write_pgm(path("probe.pgm"), s.image);
    Tensor back = read_pgm(path("probe.pgm"));
    bool same = back.shape() == s.image.shape() &&
                back.value() == s.image.value();
    out.push_back({"io: image round trip", same,
                   same ? "32x32 scene bit-identical" : "pixels differ"});
  }
  {  // annotation round trip is lossless for doubles
    PointList pts{{0.1, 1.0 / 3.0}, {17.0 + 1e-13, 62.999999999999986}};
    write_points_csv(path("probe.csv"), pts);
    PointList back = read_points_csv(path("probe.csv"));
    bool same = back.size() == pts.size();
    for (std::size_t i = 0; same && i < pts.size(); ++i)
      same = back[i].x == pts[i].x && back[i].y == pts[i].y;
    out.push_back({"io: annotation round trip", same,
                   same ? "coordinates bit-identical" : "coordinates differ"});
  }
  {  // checkpoint round trip restores every parameter bit-exactly
    Model a(tiny_config(), 1);
    save_checkpoint(a, path("ckpt"));
    Model b(tiny_config(), 2);
    load_checkpoint(b, path("ckpt"));
    bool same = true;
    for (std::size_t i = 0; i < a.params().size(); ++i)
      if (a.params()[i].second.value() != b.params()[i].second.value())
        same = false;
    out.push_back({"io: checkpoint round trip", same,
                   same ? std::to_string(a.param_count()) +
                              " parameters restored bit-identically"
                        : "parameters differ"});
  }
  return out;
}

}  // namespace crowd
