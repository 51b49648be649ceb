#include "crowd/clm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crowd/ops.hpp"

namespace crowd {

Dilation dilation_from_string(const std::string& s) {
  if (s == "1") return Dilation::d1;
  if (s == "3") return Dilation::d3;
  if (s == "5") return Dilation::d5;
  if (s == "adaptive") return Dilation::adaptive;
  throw ConfigError("unknown dilation: " + s + " (want 1, 3, 5 or adaptive)");
}

std::string to_string(Dilation d) {
  switch (d) {
    case Dilation::d1: return "1";
    case Dilation::d3: return "3";
    case Dilation::d5: return "5";
    default: return "adaptive";
  }
}

ClmVariant clm_variant_from_string(const std::string& s) {
  if (s == "single_global") return ClmVariant::single_global;
  if (s == "single_local") return ClmVariant::single_local;
  if (s == "cross_global") return ClmVariant::cross_global;
  if (s == "cross_local") return ClmVariant::cross_local;
  if (s == "cross_global_collection") return ClmVariant::cross_global_collection;
  throw ConfigError("unknown contrastive variant: " + s);
}

std::string to_string(ClmVariant v) {
  switch (v) {
    case ClmVariant::single_global: return "single_global";
    case ClmVariant::single_local: return "single_local";
    case ClmVariant::cross_global: return "cross_global";
    case ClmVariant::cross_local: return "cross_local";
    default: return "cross_global_collection";
  }
}

LabelGrid label_grid(const PointList& points, int image_h, int image_w,
                     int stride, Dilation dilation) {
  if (stride < 1 || image_h < stride || image_w < stride ||
      image_h % stride || image_w % stride)
    throw BadSize("label_grid: image " + std::to_string(image_w) + "x" +
                  std::to_string(image_h) + " not divisible by stride " +
                  std::to_string(stride));
  LabelGrid g;
  g.h = image_h / stride;
  g.w = image_w / stride;
  g.labels.assign(static_cast<std::size_t>(g.h) * g.w, 0);

  for (const Point& p : points)
    if (!(p.x >= 0.0 && p.x < image_w && p.y >= 0.0 && p.y < image_h))
      throw PointOutOfBounds("point (" + std::to_string(p.x) + ", " +
                             std::to_string(p.y) + ") outside " +
                             std::to_string(image_w) + "x" +
                             std::to_string(image_h));

  auto mark_block = [&](int cy, int cx, int side) {
    int half = side / 2;
    for (int r = std::max(0, cy - half); r <= std::min(g.h - 1, cy + half); ++r)
      for (int c = std::max(0, cx - half); c <= std::min(g.w - 1, cx + half); ++c)
        g.labels[static_cast<std::size_t>(r) * g.w + c] = 1;
  };

  for (std::size_t i = 0; i < points.size(); ++i) {
    int cx = static_cast<int>(points[i].x / stride);
    int cy = static_cast<int>(points[i].y / stride);
    int side = 1;
    switch (dilation) {
      case Dilation::d1: side = 1; break;
      case Dilation::d3: side = 3; break;
      case Dilation::d5: side = 5; break;
      case Dilation::adaptive: {
        double head = 16.0;  // lone-point fallback, pixels
        if (points.size() > 1) {
          double nn2 = std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < points.size(); ++j) {
            if (j == i) continue;
            double dx = points[i].x - points[j].x;
            double dy = points[i].y - points[j].y;
            nn2 = std::min(nn2, dx * dx + dy * dy);
          }
          head = std::clamp(std::sqrt(nn2) / 2.0, 8.0, 40.0);
        }
        side = std::clamp(
            static_cast<int>(std::floor(head / stride + 0.5)), 1, 5);
        if (side % 2 == 0) ++side;  // centered blocks need an odd side
        break;
      }
    }
    mark_block(cy, cx, side);
  }

  for (int v : g.labels) g.target_count += v;
  g.background_count = g.h * g.w - g.target_count;
  return g;
}

namespace {

// (h*w) x D row view of a D x h x w embedding map.
Tensor cell_rows(const Tensor& proj, const LabelGrid& labels) {
  if (proj.ndim() != 3 || proj.dim(1) != labels.h || proj.dim(2) != labels.w)
    throw ShapeMismatch("embedding " + shape_str(proj.shape()) +
                        " vs label grid " + std::to_string(labels.h) + "x" +
                        std::to_string(labels.w));
  int d = proj.dim(0);
  return transpose2d(reshape(proj, {d, labels.h * labels.w}));
}

std::vector<int> cells_with(const LabelGrid& g, int value) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < g.labels.size(); ++i)
    if (g.labels[i] == value) idx.push_back(static_cast<int>(i));
  return idx;
}

Tensor row_vec(const Tensor& rows, int i) {
  return reshape(gather_rows(rows, {i}), {rows.dim(1)});
}

Tensor mean_of_rows(const Tensor& rows, const std::vector<int>& idx) {
  return mean_axis(gather_rows(rows, idx), 0);
}

// -log( e^{cp} / (e^{cp} + e^{cn}) ) = log(1 + e^{cn - cp})
Tensor pair_loss(const Tensor& cp, const Tensor& cn) {
  return log_elem(add_scalar(exp_elem(sub(cn, cp)), 1.0));
}

void log_skip(std::vector<std::string>* skips, int self_index,
              const std::string& why) {
  if (skips)
    skips->push_back("clm skip image " + std::to_string(self_index) + ": " + why);
}

}  // namespace

PooledReps pooled_reps(const Tensor& proj, const LabelGrid& labels) {
  if (labels.target_count < 1) throw NoPositives("label grid has no target cells");
  if (labels.background_count < 1)
    throw NoNegatives("label grid has no background cells");
  Tensor rows = cell_rows(proj, labels);
  return {mean_of_rows(rows, cells_with(labels, 1)),
          mean_of_rows(rows, cells_with(labels, 0))};
}

BatchContext make_batch_context(const std::vector<Tensor>& projs,
                                const std::vector<LabelGrid>& labels) {
  if (projs.size() != labels.size())
    throw LengthMismatch("batch context: " + std::to_string(projs.size()) +
                         " embeddings vs " + std::to_string(labels.size()) +
                         " label grids");
  if (projs.empty()) throw EmptyInput("batch context of zero images");

  BatchContext ctx;
  Tensor pos_cell_sum, neg_cell_sum, pool_sum;
  long pos_cells = 0, neg_cells = 0;
  int pools = 0;
  for (std::size_t i = 0; i < projs.size(); ++i) {
    Tensor rows = cell_rows(projs[i], labels[i]);
    std::vector<int> pos = cells_with(labels[i], 1);
    std::vector<int> neg = cells_with(labels[i], 0);
    Tensor pos_pool, neg_pool;
    if (!pos.empty()) {
      Tensor s = sum_axis(gather_rows(rows, pos), 0);
      pos_pool = scale(s, 1.0 / static_cast<double>(pos.size()));
      pos_cell_sum = pos_cell_sum.defined() ? add(pos_cell_sum, s) : s;
      pos_cells += static_cast<long>(pos.size());
      pool_sum = pool_sum.defined() ? add(pool_sum, pos_pool) : pos_pool;
      ++pools;
    }
    if (!neg.empty()) {
      Tensor s = sum_axis(gather_rows(rows, neg), 0);
      neg_pool = scale(s, 1.0 / static_cast<double>(neg.size()));
      neg_cell_sum = neg_cell_sum.defined() ? add(neg_cell_sum, s) : s;
      neg_cells += static_cast<long>(neg.size());
    }
    ctx.pos_pools.push_back(pos_pool);
    ctx.neg_pools.push_back(neg_pool);
  }
  if (pos_cells > 0)
    ctx.union_pos = scale(pos_cell_sum, 1.0 / static_cast<double>(pos_cells));
  if (neg_cells > 0)
    ctx.union_neg = scale(neg_cell_sum, 1.0 / static_cast<double>(neg_cells));
  if (pools > 0)
    ctx.collection_pos = scale(pool_sum, 1.0 / static_cast<double>(pools));
  return ctx;
}

Tensor contrastive_loss(const Tensor& proj, const LabelGrid& labels,
                        ClmVariant variant, const BatchContext* ctx,
                        int self_index, std::vector<std::string>* skips) {
  bool cross = variant == ClmVariant::cross_global ||
               variant == ClmVariant::cross_local ||
               variant == ClmVariant::cross_global_collection;
  if (cross) {
    if (ctx == nullptr)
      throw ConfigError("cross-image contrastive variants need a batch context");
    if (self_index < 0 ||
        static_cast<std::size_t>(self_index) >= ctx->pos_pools.size())
      throw ConfigError("contrastive_loss: bad batch index " +
                        std::to_string(self_index));
  }

  std::vector<int> pos = cells_with(labels, 1);
  std::vector<int> neg = cells_with(labels, 0);
  if (pos.empty()) {
    log_skip(skips, self_index, "no target cells");
    return Tensor::scalar(0.0);
  }

  Tensor rows = cell_rows(proj, labels);
  Tensor total = Tensor::scalar(0.0);
  int terms = 0;

  switch (variant) {
    case ClmVariant::single_global: {
      if (neg.empty()) {
        log_skip(skips, self_index, "no background cells");
        return Tensor::scalar(0.0);
      }
      Tensor pos_pool = mean_of_rows(rows, pos);
      Tensor neg_pool = mean_of_rows(rows, neg);
      for (int i : pos) {
        Tensor xi = row_vec(rows, i);
        total = add(total, pair_loss(cosine(xi, pos_pool), cosine(xi, neg_pool)));
        ++terms;
      }
      break;
    }
    case ClmVariant::single_local: {
      if (pos.size() < 2) {
        log_skip(skips, self_index, "needs at least two target cells");
        return Tensor::scalar(0.0);
      }
      if (neg.empty()) {
        log_skip(skips, self_index, "no background cells");
        return Tensor::scalar(0.0);
      }
      for (int i : pos) {
        Tensor xi = row_vec(rows, i);
        Tensor spos, sneg;
        for (int j : pos) {
          if (j == i) continue;
          Tensor e = exp_elem(cosine(xi, row_vec(rows, j)));
          spos = spos.defined() ? add(spos, e) : e;
        }
        spos = scale(spos, 1.0 / static_cast<double>(pos.size() - 1));
        for (int k : neg) {
          Tensor e = exp_elem(cosine(xi, row_vec(rows, k)));
          sneg = sneg.defined() ? add(sneg, e) : e;
        }
        sneg = scale(sneg, 1.0 / static_cast<double>(neg.size()));
        total = add(total, sub(log_elem(add(spos, sneg)), log_elem(spos)));
        ++terms;
      }
      break;
    }
    case ClmVariant::cross_global: {
      if (!ctx->union_pos.defined() || !ctx->union_neg.defined()) {
        log_skip(skips, self_index, "batch union pools incomplete");
        return Tensor::scalar(0.0);
      }
      for (int i : pos) {
        Tensor xi = row_vec(rows, i);
        total = add(total, pair_loss(cosine(xi, ctx->union_pos),
                                     cosine(xi, ctx->union_neg)));
        ++terms;
      }
      break;
    }
    case ClmVariant::cross_local: {
      std::vector<Tensor> ppools, npools;
      for (const Tensor& t : ctx->pos_pools)
        if (t.defined()) ppools.push_back(t);
      for (const Tensor& t : ctx->neg_pools)
        if (t.defined()) npools.push_back(t);
      if (ppools.empty() || npools.empty()) {
        log_skip(skips, self_index, "batch has no usable pools");
        return Tensor::scalar(0.0);
      }
      for (int i : pos) {
        Tensor xi = row_vec(rows, i);
        Tensor spos, sneg;
        for (const Tensor& pp : ppools) {
          Tensor e = exp_elem(cosine(xi, pp));
          spos = spos.defined() ? add(spos, e) : e;
        }
        spos = scale(spos, 1.0 / static_cast<double>(ppools.size()));
        for (const Tensor& np : npools) {
          Tensor e = exp_elem(cosine(xi, np));
          sneg = sneg.defined() ? add(sneg, e) : e;
        }
        sneg = scale(sneg, 1.0 / static_cast<double>(npools.size()));
        total = add(total, sub(log_elem(add(spos, sneg)), log_elem(spos)));
        ++terms;
      }
      break;
    }
    case ClmVariant::cross_global_collection: {
      if (!ctx->collection_pos.defined()) {
        log_skip(skips, self_index, "no target pools in the batch");
        return Tensor::scalar(0.0);
      }
      if (!ctx->neg_pools[static_cast<std::size_t>(self_index)].defined()) {
        log_skip(skips, self_index, "no background cells");
        return Tensor::scalar(0.0);
      }
      const Tensor& own_neg = ctx->neg_pools[static_cast<std::size_t>(self_index)];
      for (int i : pos) {
        Tensor xi = row_vec(rows, i);
        total = add(total, pair_loss(cosine(xi, ctx->collection_pos),
                                     cosine(xi, own_neg)));
        ++terms;
      }
      break;
    }
  }
  return scale(total, 1.0 / static_cast<double>(terms));
}

}  // namespace crowd
