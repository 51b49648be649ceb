#include "crowd/losses.hpp"

#include <cmath>

#include "crowd/ops.hpp"

namespace crowd {

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || alpha < 0 || beta < 0)
    throw ConfigError("loss weights must be non-negative");
}

GroundTruth make_ground_truth(const PointList& points, int image_h, int image_w,
                              int stride) {
  if (stride < 1 || image_h < stride || image_w < stride ||
      image_h % stride || image_w % stride)
    throw BadSize("ground truth: image " + std::to_string(image_w) + "x" +
                  std::to_string(image_h) + " not divisible by stride " +
                  std::to_string(stride));
  GroundTruth gt;
  gt.points = points;
  gt.grid_h = image_h / stride;
  gt.grid_w = image_w / stride;
  gt.dot_grid.assign(static_cast<std::size_t>(gt.grid_h) * gt.grid_w, 0.0);
  for (const Point& p : points) {
    if (!(p.x >= 0.0 && p.x < image_w && p.y >= 0.0 && p.y < image_h))
      throw PointOutOfBounds("point (" + std::to_string(p.x) + ", " +
                             std::to_string(p.y) + ") outside " +
                             std::to_string(image_w) + "x" +
                             std::to_string(image_h));
    int cx = static_cast<int>(p.x / stride);
    int cy = static_cast<int>(p.y / stride);
    gt.dot_grid[static_cast<std::size_t>(cy) * gt.grid_w + cx] += 1.0;
  }
  return gt;
}

namespace {

void check_pred(const Tensor& d_pred, const GroundTruth& gt) {
  if (d_pred.ndim() != 3 || d_pred.dim(0) != 1 || d_pred.dim(1) != gt.grid_h ||
      d_pred.dim(2) != gt.grid_w)
    throw ShapeMismatch("density map " + shape_str(d_pred.shape()) +
                        " vs ground-truth grid " + std::to_string(gt.grid_h) +
                        "x" + std::to_string(gt.grid_w));
}

double value_sum(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t.data()[i];
  return s;
}

void log_line(std::vector<std::string>* log, const std::string& line) {
  if (log) log->push_back(line);
}

}  // namespace

Tensor count_loss(const Tensor& d_pred, const GroundTruth& gt) {
  check_pred(d_pred, gt);
  return abs_val(add_scalar(sum(d_pred),
                            -static_cast<double>(gt.points.size())));
}

Tensor ot_loss(const Tensor& d_pred, const GroundTruth& gt,
               const SinkhornConfig& cfg, OtWarmStart* warm,
               std::vector<std::string>* log) {
  check_pred(d_pred, gt);
  double s = value_sum(d_pred);
  if (gt.points.empty() || !(s > 0.0)) {
    log_line(log, "ot skip: empty side (mass=" + std::to_string(s) +
                      ", points=" + std::to_string(gt.points.size()) + ")");
    return Tensor::scalar(0.0);
  }

  int h = gt.grid_h, w = gt.grid_w, n = h * w;
  // Column side: cells that actually hold ground-truth mass.
  std::vector<int> support;
  std::vector<double> b;
  double total_pts = static_cast<double>(gt.points.size());
  for (int k = 0; k < n; ++k)
    if (gt.dot_grid[static_cast<std::size_t>(k)] > 0.0) {
      support.push_back(k);
      b.push_back(gt.dot_grid[static_cast<std::size_t>(k)] / total_pts);
    }
  int m = static_cast<int>(support.size());

  std::vector<double> a(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) a[static_cast<std::size_t>(k)] = d_pred.data()[k] / s;

  std::vector<double> cost(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    double ri = i / w, ci = i % w;
    for (int j = 0; j < m; ++j) {
      double rj = support[static_cast<std::size_t>(j)] / w;
      double cj = support[static_cast<std::size_t>(j)] % w;
      cost[static_cast<std::size_t>(i) * m + j] =
          (ri - rj) * (ri - rj) + (ci - cj) * (ci - cj);
    }
  }

  SinkhornResult res =
      warm ? sinkhorn(a, b, cost, n, m, cfg, &warm->f, &warm->g)
           : sinkhorn(a, b, cost, n, m, cfg);
  if (!res.converged)
    log_line(log, "ot not converged: violation=" + std::to_string(res.violation) +
                      " after " + std::to_string(res.iterations) + " iterations");
  if (warm) {
    warm->f = res.f;
    warm->g = res.g;
  }

  // d<T,C>/dD'_k via the dual envelope and the normalization chain rule.
  double fdota = 0.0;
  for (int k = 0; k < n; ++k)
    fdota += res.f[static_cast<std::size_t>(k)] * a[static_cast<std::size_t>(k)];
  std::vector<double> grad(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k)
    grad[static_cast<std::size_t>(k)] = (res.f[static_cast<std::size_t>(k)] - fdota) / s;
  return custom_grad_scalar(res.cost, d_pred, std::move(grad));
}

std::vector<double> smoothed_dot_grid(const GroundTruth& gt, double sigma_g) {
  std::vector<double> grid = gt.dot_grid;
  int h = gt.grid_h, w = gt.grid_w;
  if (sigma_g > 0.0) {
    int radius = static_cast<int>(std::ceil(3.0 * sigma_g));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
      kernel[static_cast<std::size_t>(k + radius)] =
          std::exp(-0.5 * k * k / (sigma_g * sigma_g));
      ksum += kernel[static_cast<std::size_t>(k + radius)];
    }
    for (double& v : kernel) v /= ksum;

    std::vector<double> tmp(grid.size(), 0.0);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          int cc = c + k;
          if (cc >= 0 && cc < w)
            acc += grid[static_cast<std::size_t>(r) * w + cc] *
                   kernel[static_cast<std::size_t>(k + radius)];
        }
        tmp[static_cast<std::size_t>(r) * w + c] = acc;
      }
    std::fill(grid.begin(), grid.end(), 0.0);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          int rr = r + k;
          if (rr >= 0 && rr < h)
            acc += tmp[static_cast<std::size_t>(rr) * w + c] *
                   kernel[static_cast<std::size_t>(k + radius)];
        }
        grid[static_cast<std::size_t>(r) * w + c] = acc;
      }
  }
  double total = 0.0;
  for (double v : grid) total += v;
  if (total > 0.0)
    for (double& v : grid) v /= total;
  return grid;
}

Tensor tv_loss(const Tensor& d_pred, const GroundTruth& gt, double sigma_g,
               std::vector<std::string>* log) {
  check_pred(d_pred, gt);
  double s = value_sum(d_pred);
  if (gt.points.empty() || !(s > 0.0)) {
    log_line(log, "tv skip: empty side (mass=" + std::to_string(s) +
                      ", points=" + std::to_string(gt.points.size()) + ")");
    return Tensor::scalar(0.0);
  }
  int n = gt.grid_h * gt.grid_w;
  Tensor target = Tensor::from_data({n}, smoothed_dot_grid(gt, sigma_g));
  Tensor pred_n = div_by_scalar(reshape(d_pred, {n}), sum(d_pred));
  return scale(sum(abs_val(sub(pred_n, target))), 0.5);
}

Tensor density_loss(const Tensor& d_pred, const GroundTruth& gt,
                    const LossWeights& w, const SinkhornConfig& cfg,
                    double sigma_g, OtWarmStart* warm,
                    std::vector<std::string>* log) {
  w.validate();
  Tensor l = count_loss(d_pred, gt);
  if (w.lambda1 > 0.0)
    l = add(l, scale(ot_loss(d_pred, gt, cfg, warm, log), w.lambda1));
  if (w.lambda2 > 0.0)
    l = add(l, scale(tv_loss(d_pred, gt, sigma_g, log), w.lambda2));
  return l;
}

Tensor combined_loss(const Tensor& d_pred, const GroundTruth& gt,
                     const Tensor& l_mp, const Tensor& l_cl,
                     const LossWeights& w, const SinkhornConfig& cfg,
                     double sigma_g, OtWarmStart* warm,
                     std::vector<std::string>* log) {
  w.validate();
  Tensor l = density_loss(d_pred, gt, w, cfg, sigma_g, warm, log);
  if (l_mp.defined() && w.alpha > 0.0) l = add(l, scale(l_mp, w.alpha));
  if (l_cl.defined() && w.beta > 0.0) l = add(l, scale(l_cl, w.beta));
  return l;
}

}  // namespace crowd
