#include "crowd/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "crowd/errors.hpp"
#include "crowd/ops.hpp"
#include "crowd/tensor.hpp"

namespace crowd {

namespace {

struct FlowEdge {
  int to;
  double cap;
  double cost;
  int rev;
};

class MinCostFlow {
 public:
  explicit MinCostFlow(int nodes) : g_(nodes) {}

  void add_edge(int u, int v, double cap, double cost) {
    g_[u].push_back({v, cap, cost, static_cast<int>(g_[v].size())});
    g_[v].push_back({u, 0.0, -cost, static_cast<int>(g_[u].size()) - 1});
  }

  // Sends as much flow as possible from s to t, returning the total cost.
  double run(int s, int t) {
    const double kInf = std::numeric_limits<double>::infinity();
    const int n = static_cast<int>(g_.size());
    double total = 0.0;
    while (true) {
      // Bellman-Ford; residual arcs can have negative cost.
      std::vector<double> dist(n, kInf);
      std::vector<int> prev_node(n, -1), prev_edge(n, -1);
      dist[s] = 0.0;
      for (int round = 0; round < n; ++round) {
        bool changed = false;
        for (int u = 0; u < n; ++u) {
          if (dist[u] == kInf) continue;
          for (int e = 0; e < static_cast<int>(g_[u].size()); ++e) {
            const FlowEdge& ed = g_[u][e];
            if (ed.cap <= 1e-15) continue;
            if (dist[u] + ed.cost < dist[ed.to] - 1e-15) {
              dist[ed.to] = dist[u] + ed.cost;
              prev_node[ed.to] = u;
              prev_edge[ed.to] = e;
              changed = true;
            }
          }
        }
        if (!changed) break;
      }
      if (dist[t] == kInf) break;
      double push = kInf;
      for (int v = t; v != s; v = prev_node[v])
        push = std::min(push, g_[prev_node[v]][prev_edge[v]].cap);
      if (push <= 1e-15) break;
      for (int v = t; v != s; v = prev_node[v]) {
        FlowEdge& ed = g_[prev_node[v]][prev_edge[v]];
        ed.cap -= push;
        g_[v][ed.rev].cap += push;
      }
      total += push * dist[t];
    }
    return total;
  }

 private:
  std::vector<std::vector<FlowEdge>> g_;
};

}  // namespace

double exact_transport_cost(const std::vector<double>& a,
                            const std::vector<double>& b,
                            const std::vector<double>& cost, int n, int m) {
  if (n <= 0 || m <= 0) throw EmptyInput("exact_transport_cost: empty side");
  if (static_cast<int>(a.size()) != n || static_cast<int>(b.size()) != m ||
      static_cast<int>(cost.size()) != n * m)
    throw LengthMismatch("exact_transport_cost: size mismatch");
  double sa = 0.0, sb = 0.0;
  for (double v : a) {
    if (v < 0.0) throw BadSize("exact_transport_cost: negative mass");
    sa += v;
  }
  for (double v : b) {
    if (v < 0.0) throw BadSize("exact_transport_cost: negative mass");
    sb += v;
  }
  if (std::fabs(sa - sb) > 1e-9 * std::max(1.0, sa))
    throw BadSize("exact_transport_cost: totals differ (" +
                  std::to_string(sa) + " vs " + std::to_string(sb) + ")");
  const int source = 0, sink = n + m + 1;
  MinCostFlow mcf(n + m + 2);
  for (int i = 0; i < n; ++i)
    if (a[i] > 0.0) mcf.add_edge(source, 1 + i, a[i], 0.0);
  for (int j = 0; j < m; ++j)
    if (b[j] > 0.0) mcf.add_edge(1 + n + j, sink, b[j], 0.0);
  for (int i = 0; i < n; ++i) {
    if (a[i] <= 0.0) continue;
    for (int j = 0; j < m; ++j) {
      if (b[j] <= 0.0) continue;
      mcf.add_edge(1 + i, 1 + n + j, sa, cost[i * m + j]);
    }
  }
  return mcf.run(source, sink);
}

namespace {

struct BruteState {
  const PointList* preds;
  const PointList* gts;
  double sigma;
  std::vector<char> used;
  std::vector<MatchResult::Pair> current;
  double current_dist = 0.0;
  std::vector<MatchResult::Pair> best;
  double best_dist = 0.0;
  bool have_best = false;
};

void brute_rec(BruteState& st, int i) {
  const int n = static_cast<int>(st.preds->size());
  if (i == n) {
    const int tp = static_cast<int>(st.current.size());
    const int best_tp = static_cast<int>(st.best.size());
    if (!st.have_best || tp > best_tp ||
        (tp == best_tp && st.current_dist < st.best_dist)) {
      st.best = st.current;
      st.best_dist = st.current_dist;
      st.have_best = true;
    }
    return;
  }
  brute_rec(st, i + 1);  // leave prediction i unmatched
  const Point& p = (*st.preds)[i];
  for (int j = 0; j < static_cast<int>(st.gts->size()); ++j) {
    if (st.used[j]) continue;
    const double d = std::hypot(p.x - (*st.gts)[j].x, p.y - (*st.gts)[j].y);
    if (d > st.sigma) continue;
    st.used[j] = 1;
    st.current.push_back({i, j, d});
    st.current_dist += d;
    brute_rec(st, i + 1);
    st.current_dist -= d;
    st.current.pop_back();
    st.used[j] = 0;
  }
}

}  // namespace

MatchResult brute_force_match(const PointList& preds, const PointList& gts,
                              double sigma) {
  if (sigma <= 0.0)
    throw BadSize("brute_force_match: sigma must be positive");
  BruteState st;
  st.preds = &preds;
  st.gts = &gts;
  st.sigma = sigma;
  st.used.assign(gts.size(), 0);
  brute_rec(st, 0);
  MatchResult res;
  res.pairs = st.best;
  res.tp = static_cast<int>(res.pairs.size());
  res.fp = static_cast<int>(preds.size()) - res.tp;
  res.fn = static_cast<int>(gts.size()) - res.tp;
  return res;
}

std::vector<double> entropic_grad_by_autodiff(const std::vector<double>& a,
                                              const std::vector<double>& b,
                                              const std::vector<double>& cost,
                                              int n, int m, double epsilon,
                                              int iterations) {
  if (n <= 0 || m <= 0)
    throw EmptyInput("entropic_grad_by_autodiff: empty side");
  if (static_cast<int>(a.size()) != n || static_cast<int>(b.size()) != m ||
      static_cast<int>(cost.size()) != n * m)
    throw LengthMismatch("entropic_grad_by_autodiff: size mismatch");
  if (epsilon <= 0.0)
    throw ConfigError("entropic_grad_by_autodiff: epsilon must be positive");
  for (double v : a)
    if (v <= 0.0)
      throw BadSize("entropic_grad_by_autodiff: row masses must be positive");
  for (double v : b)
    if (v <= 0.0)
      throw BadSize(
          "entropic_grad_by_autodiff: column masses must be positive");

  Tensor a_col = Tensor::from_data({n, 1}, a, true);
  Tensor b_col = Tensor::from_data({m, 1}, b, false);
  std::vector<double> kv(cost.size());
  for (std::size_t i = 0; i < cost.size(); ++i)
    kv[i] = std::exp(-cost[i] / epsilon);
  Tensor kmat = Tensor::from_data({n, m}, kv, false);
  Tensor cmat = Tensor::from_data({n, m}, cost, false);

  Tensor u = Tensor::full({n, 1}, 1.0);
  Tensor v;
  for (int it = 0; it < iterations; ++it) {
    v = divide(b_col, matmul(transpose2d(kmat), u));
    u = divide(a_col, matmul(kmat, v));
  }
  Tensor plan = mul(matmul(u, transpose2d(v)), kmat);
  Tensor transport = sum(mul(plan, cmat));
  Tensor entropy = sum(mul(plan, add_scalar(log_elem(plan), -1.0)));
  Tensor objective = add(transport, scale(entropy, epsilon));
  backward(objective);
  return a_col.grad();
}

}  // namespace crowd
