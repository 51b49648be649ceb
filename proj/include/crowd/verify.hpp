#pragma once

#include <vector>

#include "crowd/eval.hpp"
#include "crowd/points.hpp"

namespace crowd {

// Exact optimal transport cost between nonnegative mass vectors a (n) and
// b (m) with equal totals, solved as a min-cost flow by successive shortest
// paths. Independent of the entropic solver; used to cross-check it.
double exact_transport_cost(const std::vector<double>& a,
                            const std::vector<double>& b,
                            const std::vector<double>& cost, int n, int m);

// Exhaustive maximum-cardinality, minimum-total-distance matching within
// `sigma`. Exponential; intended for small instances only.
MatchResult brute_force_match(const PointList& preds, const PointList& gts,
                              double sigma);

// Gradient of the entropic transport objective with respect to the row
// masses, obtained by differentiating through the fixed-point iterations
// with the reverse-mode engine instead of using the dual variables. All
// entries of `a` must be positive. Used to cross-check the solver's duals.
std::vector<double> entropic_grad_by_autodiff(const std::vector<double>& a,
                                              const std::vector<double>& b,
                                              const std::vector<double>& cost,
                                              int n, int m, double epsilon,
                                              int iterations);

}  // namespace crowd
