#pragma once

#include <string>
#include <vector>

#include "crowd/points.hpp"
#include "crowd/tensor.hpp"

namespace crowd {

// Binary target/background partition of the 1/8-scale cell grid.
struct LabelGrid {
  int h = 0;
  int w = 0;
  std::vector<int> labels;  // h*w entries in {0,1}
  int target_count = 0;
  int background_count = 0;
};

enum class Dilation { d1, d3, d5, adaptive };

Dilation dilation_from_string(const std::string& s);  // ConfigError
std::string to_string(Dilation d);

// Marks the cell under each head point (dilation d1) or a centered k x k
// block (d3/d5, clipped at borders). `adaptive` derives a per-point block
// from the nearest-neighbor distance: head size = clamp(nn_dist/2, 8, 40)
// pixels (16 for a lone point), block side = the nearest odd cell count to
// head/stride, clamped to [1, 5].
LabelGrid label_grid(const PointList& points, int image_h, int image_w,
                     int stride = 8, Dilation dilation = Dilation::d1);

struct PooledReps {
  Tensor x_pos_global;  // [D] mean over target cells
  Tensor x_neg_global;  // [D] mean over background cells
};

// Exact per-set means of the D x h x w embedding over target/background
// cells. Throws NoPositives / NoNegatives on an empty side.
PooledReps pooled_reps(const Tensor& proj, const LabelGrid& labels);

enum class ClmVariant {
  single_global,
  single_local,
  cross_global,
  cross_local,
  cross_global_collection
};

ClmVariant clm_variant_from_string(const std::string& s);  // ConfigError
std::string to_string(ClmVariant v);

// Batch-level pooled statistics for the cross-image variants. Entries are
// index-aligned with the batch; pools of degenerate images are left
// undefined and skipped by the consumers.
struct BatchContext {
  std::vector<Tensor> pos_pools;  // per-image target-pool means (may be undefined)
  std::vector<Tensor> neg_pools;  // per-image background-pool means
  Tensor union_pos;        // mean over every target cell in the batch
  Tensor union_neg;        // mean over every background cell in the batch
  Tensor collection_pos;   // plain mean of the defined per-image target pools
};

BatchContext make_batch_context(const std::vector<Tensor>& projs,
                                const std::vector<LabelGrid>& labels);

// Mean over target cells of -log( e^{c_p} / (e^{c_p} + e^{c_n}) ), where the
// positive/negative similarities c_p, c_n come from the variant:
//   single_global           own-image pooled target vs pooled background
//   single_local            per-pair pools over own-image cells (self excluded)
//   cross_global            batch-union pools
//   cross_local             per-image pools across the batch (own included)
//   cross_global_collection mean of per-image target pools vs own background
// Degenerate grids contribute 0; when `skips` is given, one line per skip is
// appended. cross_* variants require `ctx` and `self_index`.
Tensor contrastive_loss(const Tensor& proj, const LabelGrid& labels,
                        ClmVariant variant, const BatchContext* ctx = nullptr,
                        int self_index = -1,
                        std::vector<std::string>* skips = nullptr);

}  // namespace crowd
