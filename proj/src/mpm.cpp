#include "crowd/mpm.hpp"

#include <algorithm>
#include <cmath>

#include "crowd/rng.hpp"

namespace crowd {

MaskStrategy mask_strategy_from_string(const std::string& s) {
  if (s == "random") return MaskStrategy::random;
  if (s == "block") return MaskStrategy::block;
  if (s == "grid") return MaskStrategy::grid;
  throw ConfigError("unknown mask strategy: " + s);
}

std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::random: return "random";
    case MaskStrategy::block: return "block";
    default: return "grid";
  }
}

ConsistentVariant consistent_variant_from_string(const std::string& s) {
  if (s == "masked_vectors") return ConsistentVariant::masked_vectors;
  if (s == "all_vectors") return ConsistentVariant::all_vectors;
  if (s == "reconstruct_p5") return ConsistentVariant::reconstruct_p5;
  throw ConfigError("unknown consistent-loss variant: " + s);
}

std::string to_string(ConsistentVariant v) {
  switch (v) {
    case ConsistentVariant::masked_vectors: return "masked_vectors";
    case ConsistentVariant::all_vectors: return "all_vectors";
    default: return "reconstruct_p5";
  }
}

MaskSpec make_mask(int n, double ratio, MaskStrategy strategy, int grid_h,
                   int grid_w, std::uint64_t seed) {
  if (grid_h < 1 || grid_w < 1 || n != grid_h * grid_w)
    throw BadSize("make_mask: n=" + std::to_string(n) + " does not match grid " +
                  std::to_string(grid_h) + "x" + std::to_string(grid_w));
  if (n < 2) throw GridTooSmall("make_mask needs at least 2 cells");
  if (!(ratio >= 0.0 && ratio <= 0.95))
    throw BadRatio("mask ratio must be in [0, 0.95], got " + std::to_string(ratio));

  MaskSpec spec;
  spec.n = n;
  spec.ratio = ratio;
  spec.strategy = strategy;
  spec.seed = seed;
  int target = static_cast<int>(std::floor(ratio * n + 0.5));
  if (target == 0) return spec;

  Rng rng(seed);
  switch (strategy) {
    case MaskStrategy::random:
      spec.masked = rng.sample_distinct(n, target);
      break;
    case MaskStrategy::block: {
      // Exact-area rectangle; among realizations prefer the most square,
      // then the wider of the two orientations.
      int best_h = -1, best_w = -1;
      for (int rh = 1; rh <= grid_h; ++rh)
        for (int rw = 1; rw <= grid_w; ++rw) {
          if (rh * rw != target) continue;
          if (best_h < 0 || std::abs(rh - rw) < std::abs(best_h - best_w) ||
              (std::abs(rh - rw) == std::abs(best_h - best_w) && rw > best_w)) {
            best_h = rh;
            best_w = rw;
          }
        }
      if (best_h < 0)
        throw GridTooSmall("no " + std::to_string(grid_h) + "x" +
                           std::to_string(grid_w) + " rectangle has area " +
                           std::to_string(target));
      int r0 = rng.uniform_int(0, grid_h - best_h);
      int c0 = rng.uniform_int(0, grid_w - best_w);
      for (int r = r0; r < r0 + best_h; ++r)
        for (int c = c0; c < c0 + best_w; ++c)
          spec.masked.push_back(r * grid_w + c);
      std::sort(spec.masked.begin(), spec.masked.end());
      break;
    }
    case MaskStrategy::grid: {
      // Stride-k lattice anchored at (0,0); smallest stride whose cell
      // count hits the target exactly.
      int best_k = -1;
      for (int k = 1; k <= std::max(grid_h, grid_w); ++k) {
        int count = ((grid_h + k - 1) / k) * ((grid_w + k - 1) / k);
        if (count == target) {
          best_k = k;
          break;
        }
      }
      if (best_k < 0)
        throw GridTooSmall("no lattice over " + std::to_string(grid_h) + "x" +
                           std::to_string(grid_w) + " has " +
                           std::to_string(target) + " cells");
      for (int r = 0; r < grid_h; r += best_k)
        for (int c = 0; c < grid_w; c += best_k)
          spec.masked.push_back(r * grid_w + c);
      std::sort(spec.masked.begin(), spec.masked.end());
      break;
    }
  }
  return spec;
}

Tensor apply_mask(const Tensor& p5_flat, const MaskSpec& mask) {
  if (p5_flat.ndim() != 2 || p5_flat.dim(1) != mask.n)
    throw ShapeMismatch("apply_mask: features " + shape_str(p5_flat.shape()) +
                        " vs mask over " + std::to_string(mask.n) + " cells");
  int c = p5_flat.dim(0), n = p5_flat.dim(1);
  std::vector<double> keep(static_cast<std::size_t>(n), 1.0);
  for (int i : mask.masked) keep[static_cast<std::size_t>(i)] = 0.0;
  std::vector<double> full(p5_flat.size());
  for (int ch = 0; ch < c; ++ch)
    std::copy(keep.begin(), keep.end(),
              full.begin() + static_cast<std::size_t>(ch) * n);
  return mul(p5_flat, Tensor::from_data({c, n}, std::move(full)));
}

Tensor consistent_loss(const Model& model, const Tensor& fd_masked,
                       const Tensor& fd, const MaskSpec& mask,
                       ConsistentVariant variant, const Tensor* p5_flat,
                       bool detach_target) {
  if (fd_masked.shape() != fd.shape())
    throw ShapeMismatch("consistent_loss: " + shape_str(fd_masked.shape()) +
                        " vs " + shape_str(fd.shape()));
  if (fd_masked.ndim() != 2 || fd_masked.dim(0) != mask.n)
    throw ShapeMismatch("consistent_loss: " + std::to_string(fd_masked.dim(0)) +
                        " encoded rows vs mask over " + std::to_string(mask.n));

  if (variant == ConsistentVariant::all_vectors) {
    Tensor target = detach_target ? fd.detach() : fd;
    Tensor diff = sub(fd_masked, target);
    return sum(mul(diff, diff));
  }

  if (variant == ConsistentVariant::masked_vectors) {
    if (mask.masked.empty()) return Tensor::scalar(0.0);
    Tensor target = detach_target ? fd.detach() : fd;
    Tensor diff = sub(gather_rows(fd_masked, mask.masked),
                      gather_rows(target, mask.masked));
    return sum(mul(diff, diff));
  }

  // reconstruct_p5
  if (p5_flat == nullptr || !p5_flat->defined())
    throw MissingP5("reconstruct_p5 needs the original 1/32 features");
  if (p5_flat->ndim() != 2 || p5_flat->dim(1) != mask.n)
    throw ShapeMismatch("consistent_loss: p5 " + shape_str(p5_flat->shape()) +
                        " vs mask over " + std::to_string(mask.n) + " cells");
  if (mask.masked.empty()) return Tensor::scalar(0.0);
  Tensor rec = model.readout(gather_rows(fd_masked, mask.masked));
  Tensor orig = transpose2d(*p5_flat);
  Tensor target = detach_target ? orig.detach() : orig;
  Tensor diff = sub(rec, gather_rows(target, mask.masked));
  return sum(mul(diff, diff));
}

}  // namespace crowd
