#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crowd/model.hpp"
#include "crowd/tensor.hpp"

namespace crowd {

enum class MaskStrategy { random, block, grid };

MaskStrategy mask_strategy_from_string(const std::string& s);  // ConfigError
std::string to_string(MaskStrategy s);

// A reproducible selection of masked cells over an h x w token grid.
struct MaskSpec {
  int n = 0;                // total cells (= h * w)
  std::vector<int> masked;  // sorted ascending flat indices
  double ratio = 0.0;
  MaskStrategy strategy = MaskStrategy::random;
  std::uint64_t seed = 0;
};

// Picks round-half-up(ratio * n) cells. `random` draws a uniform subset;
// `block` places one contiguous rectangle of exactly that area (uniformly
// positioned) and `grid` masks a stride-k lattice anchored at (0,0) whose
// cell count equals the target; both throw GridTooSmall when no exact
// realization exists. A target of 0 gives an empty mask for every strategy.
MaskSpec make_mask(int n, double ratio, MaskStrategy strategy, int grid_h,
                   int grid_w, std::uint64_t seed);

// Zeroes the masked columns of a C x N feature map (mask token 0). Unmasked
// columns pass through bit-identically; gradients flow through kept columns.
Tensor apply_mask(const Tensor& p5_flat, const MaskSpec& mask);

enum class ConsistentVariant { masked_vectors, all_vectors, reconstruct_p5 };

ConsistentVariant consistent_variant_from_string(const std::string& s);
std::string to_string(ConsistentVariant v);

// Squared-Euclidean consistency penalty between the masked-input encoding
// `fd_masked` and the target. masked_vectors/all_vectors compare against the
// unmasked encoding `fd` (restricted to masked rows or over all rows);
// reconstruct_p5 maps masked rows back through the model read-out and
// compares against the original 1/32 features (requires `p5_flat`).
// With detach_target (default) the target branch receives no gradient.
Tensor consistent_loss(const Model& model, const Tensor& fd_masked,
                       const Tensor& fd, const MaskSpec& mask,
                       ConsistentVariant variant,
                       const Tensor* p5_flat = nullptr,
                       bool detach_target = true);

}  // namespace crowd
