#pragma once

#include <utility>
#include <vector>

#include "crowd/points.hpp"
#include "crowd/tensor.hpp"

namespace crowd {

std::pair<double, double> mae_rmse(const std::vector<double>& pred_counts,
                                   const std::vector<double>& gt_counts);

// Strict local maxima of a 1 x h x w density map: cells greater than every
// other cell in the k x k window (clipped at borders; plateau ties yield
// nothing) and >= min_value. Returned coordinates are cell centers scaled to
// image pixels: ((c + 0.5) * stride, (r + 0.5) * stride), row-major order.
PointList find_local_maxima(const Tensor& density, double min_value,
                            int neighborhood, int stride = 8);

struct MatchResult {
  int tp = 0, fp = 0, fn = 0;
  struct Pair {
    int pred = 0, gt = 0;
    double dist = 0.0;
  };
  std::vector<Pair> pairs;
};

// One-to-one matching of predictions to ground truth restricted to pairs
// within `sigma`: maximum cardinality, then minimum total distance (optimal
// assignment). `greedy` instead repeatedly takes the closest remaining pair
// (order-dependent tie behavior, for comparison only).
MatchResult match_points(const PointList& preds, const PointList& gts,
                         double sigma, bool greedy = false);

// Precision, recall, F1 with empty denominators mapping to 0.
struct Prf {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};
Prf prf(const MatchResult& match);

}  // namespace crowd
