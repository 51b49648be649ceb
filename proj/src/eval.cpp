#include "crowd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crowd/errors.hpp"

namespace crowd {

std::pair<double, double> mae_rmse(const std::vector<double>& pred_counts,
                                   const std::vector<double>& gt_counts) {
  if (pred_counts.size() != gt_counts.size())
    throw LengthMismatch("mae_rmse: " + std::to_string(pred_counts.size()) +
                         " predictions vs " + std::to_string(gt_counts.size()) +
                         " ground truths");
  if (pred_counts.empty()) throw EmptyInput("mae_rmse: no samples");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < pred_counts.size(); ++i) {
    const double d = pred_counts[i] - gt_counts[i];
    abs_sum += std::fabs(d);
    sq_sum += d * d;
  }
  const double n = static_cast<double>(pred_counts.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

PointList find_local_maxima(const Tensor& density, double min_value,
                            int neighborhood, int stride) {
  if (density.ndim() != 3 || density.dim(0) != 1)
    throw ShapeMismatch("find_local_maxima: expected 1 x h x w, got " +
                        shape_str(density.shape()));
  if (neighborhood < 3 || neighborhood % 2 == 0)
    throw BadSize("find_local_maxima: neighborhood must be odd and >= 3, got " +
                  std::to_string(neighborhood));
  if (stride <= 0)
    throw BadSize("find_local_maxima: stride must be positive, got " +
                  std::to_string(stride));
  const int h = density.dim(1), w = density.dim(2);
  const double* v = density.data();
  const int r0 = neighborhood / 2;
  PointList out;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double center = v[r * w + c];
      if (center < min_value) continue;
      bool strict = true;
      for (int dr = -r0; dr <= r0 && strict; ++dr) {
        const int rr = r + dr;
        if (rr < 0 || rr >= h) continue;
        for (int dc = -r0; dc <= r0; ++dc) {
          const int cc = c + dc;
          if (cc < 0 || cc >= w || (dr == 0 && dc == 0)) continue;
          if (v[rr * w + cc] >= center) {
            strict = false;
            break;
          }
        }
      }
      if (strict)
        out.push_back({(c + 0.5) * stride, (r + 0.5) * stride});
    }
  }
  return out;
}

namespace {

// Optimal assignment on an s x s cost matrix (row-major); returns the column
// assigned to each row. Standard O(s^3) potentials method.
std::vector<int> hungarian(const std::vector<double>& cost, int s) {
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(s + 1, 0.0), v(s + 1, 0.0);
  std::vector<int> p(s + 1, 0), way(s + 1, 0);
  for (int i = 1; i <= s; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(s + 1, kInf);
    std::vector<char> used(s + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= s; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * s + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= s; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(s, -1);
  for (int j = 1; j <= s; ++j)
    if (p[j] >= 1) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

double point_dist(const Point& a, const Point& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

MatchResult match_greedy(const PointList& preds, const PointList& gts,
                         double sigma) {
  MatchResult res;
  const int n = static_cast<int>(preds.size());
  const int m = static_cast<int>(gts.size());
  std::vector<char> pu(n, 0), gu(m, 0);
  while (true) {
    double best = sigma;
    int bi = -1, bj = -1;
    for (int i = 0; i < n; ++i) {
      if (pu[i]) continue;
      for (int j = 0; j < m; ++j) {
        if (gu[j]) continue;
        const double d = point_dist(preds[i], gts[j]);
        if (d <= best && (bi < 0 || d < best)) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    if (bi < 0) break;
    pu[bi] = gu[bj] = 1;
    res.pairs.push_back({bi, bj, best});
  }
  res.tp = static_cast<int>(res.pairs.size());
  res.fp = n - res.tp;
  res.fn = m - res.tp;
  return res;
}

}  // namespace

MatchResult match_points(const PointList& preds, const PointList& gts,
                         double sigma, bool greedy) {
  if (sigma <= 0.0)
    throw BadSize("match_points: sigma must be positive, got " +
                  std::to_string(sigma));
  if (greedy) return match_greedy(preds, gts, sigma);
  MatchResult res;
  const int n = static_cast<int>(preds.size());
  const int m = static_cast<int>(gts.size());
  if (n == 0 || m == 0) {
    res.fp = n;
    res.fn = m;
    return res;
  }
  const int s = std::max(n, m);
  // Cost above sigma (and all padding) is a constant larger than any total
  // feasible distance, so minimization first maximizes matched pairs and then
  // minimizes their summed distance.
  const double forbidden = sigma * (n + m + 1) + 1.0;
  std::vector<double> cost(static_cast<std::size_t>(s) * s, forbidden);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double d = point_dist(preds[i], gts[j]);
      if (d <= sigma) cost[i * s + j] = d;
    }
  }
  const std::vector<int> row_to_col = hungarian(cost, s);
  for (int i = 0; i < n; ++i) {
    const int j = row_to_col[i];
    if (j < 0 || j >= m) continue;
    const double d = point_dist(preds[i], gts[j]);
    if (d <= sigma) res.pairs.push_back({i, j, d});
  }
  res.tp = static_cast<int>(res.pairs.size());
  res.fp = n - res.tp;
  res.fn = m - res.tp;
  return res;
}

Prf prf(const MatchResult& match) {
  Prf out;
  const double tp = match.tp;
  if (match.tp + match.fp > 0) out.precision = tp / (match.tp + match.fp);
  if (match.tp + match.fn > 0) out.recall = tp / (match.tp + match.fn);
  if (out.precision + out.recall > 0.0)
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

}  // namespace crowd
