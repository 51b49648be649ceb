#pragma once

#include <string>
#include <vector>

namespace crowd {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Central-difference checks over every differentiable primitive and every
// loss, `instances` seeded probes per group; tolerance 1e-4. The entropic
// transport term carries its own, looser gradient check (see
// transport_gradient_check), so composite-loss probes here run it at weight
// zero.
std::vector<CheckResult> gradient_checks(int instances);

// Entropic transport cost within 1% of an exact min-cost-flow solve at
// epsilon = 0.01 * max cost, on random separated instances (<= 6 cells/side).
CheckResult transport_cost_check(int instances);

// Gradient of the transport loss (dual potentials + normalization chain)
// against central differences on <= 3x3 grids; tolerance 1e-3.
CheckResult transport_gradient_check(int instances);

// Frozen identities of the loss definitions: zero consistency on identical
// encodings, ln 2 on symmetric contrastive logits, 0/1 extremes of the
// distribution-distance term, exact count error.
std::vector<CheckResult> loss_identity_checks();

// Optimal point matching vs exhaustive search over random instances with
// <= 6 points per side, for match radii {4, 8, 16}.
CheckResult matching_check(int instances_per_sigma);

// Image/annotation/checkpoint round trips inside scratch_dir.
std::vector<CheckResult> io_checks(const std::string& scratch_dir);

}  // namespace crowd
