#pragma once

#include <string>
#include <vector>

#include "crowd/points.hpp"
#include "crowd/tensor.hpp"

namespace crowd {

// --- entropic optimal transport solver (plain numerics, no graph) ---------

struct SinkhornConfig {
  double epsilon = -1.0;  // <= 0 selects 0.01 * max cost of the instance
  int max_iters = 500;
  double tol = 1e-8;  // L1 violation of the untouched marginal
};

struct SinkhornResult {
  double cost = 0.0;      // <T, C>: transport cost of the entropic plan
  std::vector<double> f;  // dual potential, row side (finite on zero-mass rows)
  std::vector<double> g;  // dual potential, column side
  bool converged = false;
  int iterations = 0;
  double violation = 0.0;
  double epsilon = 0.0;  // the epsilon actually used
};

// Balanced entropic OT between row marginal `a` (n entries, may contain
// zeros, sums to 1) and column marginal `b` (m entries, all > 0, sums to 1)
// under row-major cost (n x m). Log-domain scaling with epsilon staging on
// cold starts; pass warm duals to resume from a previous solution.
SinkhornResult sinkhorn(const std::vector<double>& a,
                        const std::vector<double>& b,
                        const std::vector<double>& cost, int n, int m,
                        const SinkhornConfig& cfg,
                        const std::vector<double>* warm_f = nullptr,
                        const std::vector<double>* warm_g = nullptr);

// --- counting losses -------------------------------------------------------

struct GroundTruth {
  PointList points;
  int grid_h = 0, grid_w = 0;    // 1/8-scale grid dims
  std::vector<double> dot_grid;  // one unit of mass per point's cell
};

GroundTruth make_ground_truth(const PointList& points, int image_h, int image_w,
                              int stride = 8);

struct LossWeights {
  double lambda1 = 0.1;  // OT term
  double lambda2 = 0.01; // TV term
  double alpha = 0.1;    // consistency term
  double beta = 0.01;    // contrastive term
  void validate() const; // all >= 0
};

// Per-image dual cache for warm-starting the OT solve across epochs.
struct OtWarmStart {
  std::vector<double> f, g;
};

// | sum(D') - #points |, exact.
Tensor count_loss(const Tensor& d_pred, const GroundTruth& gt);

// Entropic OT between the normalized prediction and the normalized dot grid,
// squared-Euclidean cost over cell centers in grid units. The scalar is the
// transport cost of the converged plan; the gradient w.r.t. the unnormalized
// prediction comes from the dual potentials with the normalization chain
// rule. Degenerate sides give 0 with a logged skip; non-convergence is
// logged, the value still returned.
Tensor ot_loss(const Tensor& d_pred, const GroundTruth& gt,
               const SinkhornConfig& cfg, OtWarmStart* warm = nullptr,
               std::vector<std::string>* log = nullptr);

// Half the L1 distance between the normalized prediction and the normalized
// Gaussian-smoothed dot grid (sigma_g in cells; <= 0 disables smoothing).
Tensor tv_loss(const Tensor& d_pred, const GroundTruth& gt, double sigma_g,
               std::vector<std::string>* log = nullptr);

// count + lambda1 * OT + lambda2 * TV
Tensor density_loss(const Tensor& d_pred, const GroundTruth& gt,
                    const LossWeights& w, const SinkhornConfig& cfg,
                    double sigma_g, OtWarmStart* warm = nullptr,
                    std::vector<std::string>* log = nullptr);

// density_loss + alpha * l_mp + beta * l_cl
Tensor combined_loss(const Tensor& d_pred, const GroundTruth& gt,
                     const Tensor& l_mp, const Tensor& l_cl,
                     const LossWeights& w, const SinkhornConfig& cfg,
                     double sigma_g, OtWarmStart* warm = nullptr,
                     std::vector<std::string>* log = nullptr);

// Gaussian-smoothed, L1-normalized copy of the dot grid (the TV target;
// also used by the oracle density path in evaluation).
std::vector<double> smoothed_dot_grid(const GroundTruth& gt, double sigma_g);

}  // namespace crowd
