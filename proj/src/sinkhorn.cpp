#include <algorithm>
#include <cmath>
#include <limits>

#include "crowd/losses.hpp"

namespace crowd {
namespace {

// log sum_j exp(v_j), stable; -inf on an effectively empty sum.
double lse(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

struct Instance {
  const std::vector<double>* a;
  const std::vector<double>* b;
  const std::vector<double>* cost;
  int n, m;
  std::vector<int> rows;  // indices with a_i > 0
  std::vector<double> loga, logb;
  double max_cost = 0.0;
};

// One full Sinkhorn stage at a fixed epsilon. Returns the L1 violation of
// the column marginal at exit; `iters` accumulates iteration count.
double run_stage(const Instance& in, double eps, int max_iters, double tol,
                 std::vector<double>& f, std::vector<double>& g, int& iters,
                 bool& converged) {
  const auto& C = *in.cost;
  const auto& b = *in.b;
  int m = in.m;
  // Precomputed exp(-C/eps) only when every term stays in double range.
  bool fast = in.max_cost / eps < 300.0;
  std::vector<double> K;
  if (fast) {
    K.resize(C.size());
    for (std::size_t i = 0; i < C.size(); ++i) K[i] = std::exp(-C[i] / eps);
  }
  std::vector<double> scratch(static_cast<std::size_t>(std::max(in.n, m)));
  std::vector<double> eg(static_cast<std::size_t>(m));
  std::vector<double> colsum(static_cast<std::size_t>(m));
  double violation = std::numeric_limits<double>::infinity();
  converged = false;

  for (int it = 0; it < max_iters; ++it) {
    ++iters;
    // f-update: makes row marginals exact.
    if (fast) {
      bool ok = true;
      for (int j = 0; j < m; ++j) {
        eg[static_cast<std::size_t>(j)] = std::exp(g[static_cast<std::size_t>(j)] / eps);
        if (!std::isfinite(eg[static_cast<std::size_t>(j)])) ok = false;
      }
      if (ok) {
        for (int i : in.rows) {
          const double* krow = K.data() + static_cast<std::size_t>(i) * m;
          double s = 0.0;
          for (int j = 0; j < m; ++j) s += krow[j] * eg[static_cast<std::size_t>(j)];
          if (s > 0.0 && std::isfinite(s)) {
            f[static_cast<std::size_t>(i)] =
                eps * in.loga[static_cast<std::size_t>(i)] - eps * std::log(s);
            continue;
          }
          // fell out of range: exact log-sum-exp for this row
          const double* crow = C.data() + static_cast<std::size_t>(i) * m;
          scratch.resize(static_cast<std::size_t>(m));
          for (int j = 0; j < m; ++j)
            scratch[static_cast<std::size_t>(j)] =
                (g[static_cast<std::size_t>(j)] - crow[j]) / eps;
          f[static_cast<std::size_t>(i)] =
              eps * in.loga[static_cast<std::size_t>(i)] - eps * lse(scratch);
        }
      } else {
        fast = false;
      }
    }
    if (!fast) {
      scratch.resize(static_cast<std::size_t>(m));
      for (int i : in.rows) {
        const double* crow = C.data() + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j)
          scratch[static_cast<std::size_t>(j)] =
              (g[static_cast<std::size_t>(j)] - crow[j]) / eps;
        f[static_cast<std::size_t>(i)] =
            eps * in.loga[static_cast<std::size_t>(i)] - eps * lse(scratch);
      }
    }

    // Column violation of the current plan (rows are exact).
    std::fill(colsum.begin(), colsum.end(), 0.0);
    for (int i : in.rows) {
      const double* crow = C.data() + static_cast<std::size_t>(i) * m;
      double fi = f[static_cast<std::size_t>(i)];
      for (int j = 0; j < m; ++j)
        colsum[static_cast<std::size_t>(j)] +=
            std::exp((fi + g[static_cast<std::size_t>(j)] - crow[j]) / eps);
    }
    violation = 0.0;
    for (int j = 0; j < m; ++j)
      violation += std::abs(colsum[static_cast<std::size_t>(j)] -
                            b[static_cast<std::size_t>(j)]);
    if (violation < tol) {
      converged = true;
      return violation;
    }

    // g-update: makes column marginals exact.
    scratch.resize(in.rows.size());
    for (int j = 0; j < m; ++j) {
      std::size_t k = 0;
      for (int i : in.rows)
        scratch[k++] = (f[static_cast<std::size_t>(i)] -
                        C[static_cast<std::size_t>(i) * m + j]) / eps;
      g[static_cast<std::size_t>(j)] =
          eps * in.logb[static_cast<std::size_t>(j)] - eps * lse(scratch);
    }
  }
  return violation;
}

}  // namespace

SinkhornResult sinkhorn(const std::vector<double>& a,
                        const std::vector<double>& b,
                        const std::vector<double>& cost, int n, int m,
                        const SinkhornConfig& cfg,
                        const std::vector<double>* warm_f,
                        const std::vector<double>* warm_g) {
  if (n < 1 || m < 1 || a.size() != static_cast<std::size_t>(n) ||
      b.size() != static_cast<std::size_t>(m) ||
      cost.size() != static_cast<std::size_t>(n) * m)
    throw ShapeMismatch("sinkhorn: marginals " + std::to_string(a.size()) + "/" +
                        std::to_string(b.size()) + " vs cost " +
                        std::to_string(n) + "x" + std::to_string(m));
  if (cfg.max_iters < 1 || !(cfg.tol > 0.0))
    throw ConfigError("sinkhorn: max_iters >= 1 and tol > 0 required");

  Instance in;
  in.a = &a;
  in.b = &b;
  in.cost = &cost;
  in.n = n;
  in.m = m;
  in.loga.resize(a.size());
  in.logb.resize(b.size());
  for (int i = 0; i < n; ++i) {
    if (a[static_cast<std::size_t>(i)] < 0.0)
      throw BadSize("sinkhorn: negative row mass");
    if (a[static_cast<std::size_t>(i)] > 0.0) {
      in.rows.push_back(i);
      in.loga[static_cast<std::size_t>(i)] = std::log(a[static_cast<std::size_t>(i)]);
    }
  }
  for (int j = 0; j < m; ++j) {
    if (!(b[static_cast<std::size_t>(j)] > 0.0))
      throw BadSize("sinkhorn: column masses must be positive");
    in.logb[static_cast<std::size_t>(j)] = std::log(b[static_cast<std::size_t>(j)]);
  }
  if (in.rows.empty()) throw EmptyInput("sinkhorn: row marginal has no mass");
  for (double c : cost) in.max_cost = std::max(in.max_cost, c);

  double eps = cfg.epsilon > 0.0 ? cfg.epsilon
                                 : std::max(0.01 * in.max_cost, 1e-12);

  SinkhornResult res;
  res.epsilon = eps;
  res.f.assign(static_cast<std::size_t>(n), 0.0);
  res.g.assign(static_cast<std::size_t>(m), 0.0);

  bool warm = warm_f && warm_g && warm_f->size() == res.f.size() &&
              warm_g->size() == res.g.size();
  if (warm) {
    res.f = *warm_f;
    res.g = *warm_g;
  } else if (in.max_cost > 0.0) {
    // Cold start: anneal epsilon downward so tiny targets stay stable.
    double stage_eps = std::max(in.max_cost / 4.0, eps);
    int stage_iters = std::max(cfg.max_iters / 5, 20);
    while (stage_eps > eps * 1.0000001) {
      bool conv = false;
      run_stage(in, stage_eps, stage_iters, cfg.tol, res.f, res.g,
                res.iterations, conv);
      stage_eps = std::max(stage_eps / 2.0, eps);
    }
  }

  res.violation = run_stage(in, eps, cfg.max_iters, cfg.tol, res.f, res.g,
                            res.iterations, res.converged);

  // Boundary duals for zero-mass rows: the marginal cost of introducing
  // mass there under the converged column potentials.
  std::vector<double> scratch(static_cast<std::size_t>(m));
  std::vector<bool> has_mass(static_cast<std::size_t>(n), false);
  for (int i : in.rows) has_mass[static_cast<std::size_t>(i)] = true;
  for (int i = 0; i < n; ++i) {
    if (has_mass[static_cast<std::size_t>(i)]) continue;
    const double* crow = cost.data() + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j)
      scratch[static_cast<std::size_t>(j)] =
          (res.g[static_cast<std::size_t>(j)] - crow[j]) / eps;
    res.f[static_cast<std::size_t>(i)] = -eps * lse(scratch);
  }

  // Sharp transport cost of the entropic plan.
  double total = 0.0;
  for (int i : in.rows) {
    const double* crow = cost.data() + static_cast<std::size_t>(i) * m;
    double fi = res.f[static_cast<std::size_t>(i)];
    for (int j = 0; j < m; ++j)
      total += std::exp((fi + res.g[static_cast<std::size_t>(j)] - crow[j]) / eps) *
               crow[j];
  }
  res.cost = total;
  return res;
}

}  // namespace crowd
