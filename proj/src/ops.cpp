#include "crowd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <utility>

#include "crowd/gemm.hpp"

namespace crowd {
namespace {

using NodePtr = std::shared_ptr<TensorNode>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
}

void require_ndim(const Tensor& a, int nd, const char* op) {
  if (a.ndim() != nd)
    throw ShapeMismatch(std::string(op) + ": expected " + std::to_string(nd) +
                        "-d tensor, got " + shape_str(a.shape()));
}

// Elementwise unary helper: out_i = f(x_i), dx_i += g_i * df(x_i, out_i).
template <typename F, typename DF>
Tensor unary_op(const Tensor& a, const char* name, F f, DF df) {
  std::vector<double> out(a.size());
  const double* x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  NodePtr na = a.node();
  return Tensor::make_node(
      a.shape(), std::move(out), {na},
      [na, df](TensorNode& self) {
        if (!na->requires_grad) return;
        const double* x = na->value.data();
        const double* y = self.value.data();
        const double* g = self.grad.data();
        double* gx = na->grad.data();
        for (std::size_t i = 0; i < self.value.size(); ++i)
          gx[i] += g[i] * df(x[i], y[i]);
      },
      name);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  NodePtr na = a.node(), nb = b.node();
  return Tensor::make_node(
      a.shape(), std::move(out), {na, nb},
      [na, nb](TensorNode& self) {
        const double* g = self.grad.data();
        if (na->requires_grad) {
          double* ga = na->grad.data();
          for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i];
        }
        if (nb->requires_grad) {
          double* gb = nb->grad.data();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += g[i];
        }
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
  NodePtr na = a.node(), nb = b.node();
  return Tensor::make_node(
      a.shape(), std::move(out), {na, nb},
      [na, nb](TensorNode& self) {
        const double* g = self.grad.data();
        if (na->requires_grad) {
          double* ga = na->grad.data();
          for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i];
        }
        if (nb->requires_grad) {
          double* gb = nb->grad.data();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= g[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  NodePtr na = a.node(), nb = b.node();
  return Tensor::make_node(
      a.shape(), std::move(out), {na, nb},
      [na, nb](TensorNode& self) {
        const double* g = self.grad.data();
        if (na->requires_grad) {
          double* ga = na->grad.data();
          const double* vb = nb->value.data();
          for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (nb->requires_grad) {
          double* gb = nb->grad.data();
          const double* va = na->value.data();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += g[i] * va[i];
        }
      },
      "mul");
}

Tensor divide(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "divide");
  std::vector<double> out(a.size());
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] / pb[i];
  NodePtr na = a.node(), nb = b.node();
  return Tensor::make_node(
      a.shape(), std::move(out), {na, nb},
      [na, nb](TensorNode& self) {
        const double* g = self.grad.data();
        const double* va = na->value.data();
        const double* vb = nb->value.data();
        if (na->requires_grad) {
          double* ga = na->grad.data();
          for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i] / vb[i];
        }
        if (nb->requires_grad) {
          double* gb = nb->grad.data();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
        }
      },
      "divide");
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(
      a, "scale", [c](double x) { return x * c; },
      [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(
      a, "add_scalar", [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor abs_val(const Tensor& a) {
  return unary_op(
      a, "abs_val", [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor exp_elem(const Tensor& a) {
  return unary_op(
      a, "exp_elem", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log_elem(const Tensor& a) {
  return unary_op(
      a, "log_elem", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeMismatch("reshape: " + shape_str(a.shape()) + " -> " +
                        shape_str(shape) + " changes element count");
  NodePtr na = a.node();
  std::vector<double> out = a.value();
  return Tensor::make_node(
      shape, std::move(out), {na},
      [na](TensorNode& self) {
        if (!na->requires_grad) return;
        double* ga = na->grad.data();
        const double* g = self.grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i];
      },
      "reshape");
}

Tensor transpose2d(const Tensor& a) {
  require_ndim(a, 2, "transpose2d");
  int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.size());
  const double* pa = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j) * m + i] = pa[static_cast<std::size_t>(i) * n + j];
  NodePtr na = a.node();
  return Tensor::make_node(
      {n, m}, std::move(out), {na},
      [na, m, n](TensorNode& self) {
        if (!na->requires_grad) return;
        double* ga = na->grad.data();
        const double* g = self.grad.data();
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < m; ++i)
            ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
      },
      "transpose2d");
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw EmptyInput("concat of zero tensors");
  int nd = parts[0].ndim();
  if (axis < 0 || axis >= nd)
    throw BadSize("concat axis " + std::to_string(axis) + " out of range for " +
                  shape_str(parts[0].shape()));
  Shape out_shape = parts[0].shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (parts[p].ndim() != nd)
      throw ShapeMismatch("concat: rank mismatch " + shape_str(parts[p].shape()));
    for (int d = 0; d < nd; ++d)
      if (d != axis && parts[p].dim(d) != out_shape[static_cast<std::size_t>(d)])
        throw ShapeMismatch("concat: " + shape_str(parts[p].shape()) + " vs " +
                            shape_str(parts[0].shape()));
    out_shape[static_cast<std::size_t>(axis)] += parts[p].dim(axis);
  }

  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(d)]);
  for (int d = axis + 1; d < nd; ++d) inner *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(d)]);
  std::size_t out_block = static_cast<std::size_t>(out_shape[static_cast<std::size_t>(axis)]) * inner;

  std::vector<double> out(shape_numel(out_shape));
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> blocks;  // per-part block length along the axis
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    std::size_t blk = static_cast<std::size_t>(t.dim(axis)) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * out_block + off, t.data() + o * blk,
                  blk * sizeof(double));
    nodes.push_back(t.node());
    blocks.push_back(blk);
    off += blk;
  }

  return Tensor::make_node(
      out_shape, std::move(out), nodes,
      [nodes, blocks, outer, out_block](TensorNode& self) {
        const double* g = self.grad.data();
        std::size_t off = 0;
        for (std::size_t p = 0; p < nodes.size(); ++p) {
          if (nodes[p]->requires_grad) {
            double* gp = nodes[p]->grad.data();
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src = g + o * out_block + off;
              double* dst = gp + o * blocks[p];
              for (std::size_t i = 0; i < blocks[p]; ++i) dst[i] += src[i];
            }
          }
          off += blocks[p];
        }
      },
      "concat");
}

Tensor slice_cols(const Tensor& a, int start, int count) {
  require_ndim(a, 2, "slice_cols");
  int m = a.dim(0), n = a.dim(1);
  if (count < 1 || start < 0 || start + count > n)
    throw BadSize("slice_cols [" + std::to_string(start) + "," +
                  std::to_string(start + count) + ") of " + shape_str(a.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * count);
  const double* pa = a.data();
  for (int i = 0; i < m; ++i)
    std::memcpy(out.data() + static_cast<std::size_t>(i) * count,
                pa + static_cast<std::size_t>(i) * n + start,
                static_cast<std::size_t>(count) * sizeof(double));
  NodePtr na = a.node();
  return Tensor::make_node(
      {m, count}, std::move(out), {na},
      [na, m, n, start, count](TensorNode& self) {
        if (!na->requires_grad) return;
        double* ga = na->grad.data();
        const double* g = self.grad.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < count; ++j)
            ga[static_cast<std::size_t>(i) * n + start + j] +=
                g[static_cast<std::size_t>(i) * count + j];
      },
      "slice_cols");
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
  require_ndim(a, 2, "gather_rows");
  int m = a.dim(0), n = a.dim(1);
  for (int r : rows)
    if (r < 0 || r >= m)
      throw BadSize("gather_rows index " + std::to_string(r) + " outside [0," +
                    std::to_string(m) + ")");
  if (rows.empty()) throw EmptyInput("gather_rows with no indices");
  std::vector<double> out(rows.size() * static_cast<std::size_t>(n));
  const double* pa = a.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::memcpy(out.data() + i * n, pa + static_cast<std::size_t>(rows[i]) * n,
                static_cast<std::size_t>(n) * sizeof(double));
  NodePtr na = a.node();
  return Tensor::make_node(
      {static_cast<int>(rows.size()), n}, std::move(out), {na},
      [na, rows, n](TensorNode& self) {
        if (!na->requires_grad) return;
        double* ga = na->grad.data();
        const double* g = self.grad.data();
        for (std::size_t i = 0; i < rows.size(); ++i) {
          double* dst = ga + static_cast<std::size_t>(rows[i]) * n;
          const double* src = g + i * n;
          for (int j = 0; j < n; ++j) dst[j] += src[j];
        }
      },
      "gather_rows");
}

Tensor scatter_rows(const Tensor& a, const std::vector<int>& rows, int n) {
  require_ndim(a, 2, "scatter_rows");
  if (static_cast<std::size_t>(a.dim(0)) != rows.size())
    throw LengthMismatch("scatter_rows: " + std::to_string(rows.size()) +
                         " indices for " + std::to_string(a.dim(0)) + " rows");
  int c = a.dim(1);
  for (int r : rows)
    if (r < 0 || r >= n)
      throw BadSize("scatter_rows index " + std::to_string(r) + " outside [0," +
                    std::to_string(n) + ")");
  std::vector<double> out(static_cast<std::size_t>(n) * c, 0.0);
  const double* pa = a.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double* dst = out.data() + static_cast<std::size_t>(rows[i]) * c;
    for (int j = 0; j < c; ++j) dst[j] += pa[i * c + j];
  }
  NodePtr na = a.node();
  return Tensor::make_node(
      {n, c}, std::move(out), {na},
      [na, rows, c](TensorNode& self) {
        if (!na->requires_grad) return;
        double* ga = na->grad.data();
        const double* g = self.grad.data();
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const double* src = g + static_cast<std::size_t>(rows[i]) * c;
          for (int j = 0; j < c; ++j) ga[i * c + j] += src[j];
        }
      },
      "scatter_rows");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_ndim(a, 2, "matmul");
  require_ndim(b, 2, "matmul");
  int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  dgemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, out.data(), n);
  NodePtr na = a.node(), nb = b.node();
  return Tensor::make_node(
      {m, n}, std::move(out), {na, nb},
      [na, nb, m, n, k](TensorNode& self) {
        const double* g = self.grad.data();
        if (na->requires_grad)
          dgemm(false, true, m, k, n, 1.0, g, n, nb->value.data(), n, 1.0,
                na->grad.data(), k);
        if (nb->requires_grad)
          dgemm(true, false, k, n, m, 1.0, na->value.data(), k, g, n, 1.0,
                nb->grad.data(), n);
      },
      "matmul");
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  require_ndim(a, 2, "add_rowvec");
  require_ndim(v, 1, "add_rowvec");
  int m = a.dim(0), n = a.dim(1);
  if (v.dim(0) != n)
    throw ShapeMismatch("add_rowvec: " + shape_str(a.shape()) + " + " +
                        shape_str(v.shape()));
  std::vector<double> out(a.size());
  const double* pa = a.data();
  const double* pv = v.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = pa[static_cast<std::size_t>(i) * n + j] + pv[j];
  NodePtr na = a.node(), nv = v.node();
  return Tensor::make_node(
      {m, n}, std::move(out), {na, nv},
      [na, nv, m, n](TensorNode& self) {
        const double* g = self.grad.data();
        if (na->requires_grad) {
          double* ga = na->grad.data();
          for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i];
        }
        if (nv->requires_grad) {
          double* gv = nv->grad.data();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) gv[j] += g[static_cast<std::size_t>(i) * n + j];
        }
      },
      "add_rowvec");
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  const double* pa = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) s += pa[i];
  NodePtr na = a.node();
  return Tensor::make_node(
      {1}, {s}, {na},
      [na](TensorNode& self) {
        if (!na->requires_grad) return;
        double g = self.grad[0];
        double* ga = na->grad.data();
        for (std::size_t i = 0; i < na->value.size(); ++i) ga[i] += g;
      },
      "sum");
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  const double* pa = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) s += pa[i];
  double inv = 1.0 / static_cast<double>(a.size());
  NodePtr na = a.node();
  return Tensor::make_node(
      {1}, {s * inv}, {na},
      [na, inv](TensorNode& self) {
        if (!na->requires_grad) return;
        double g = self.grad[0] * inv;
        double* ga = na->grad.data();
        for (std::size_t i = 0; i < na->value.size(); ++i) ga[i] += g;
      },
      "mean");
}

namespace {
Tensor axis_reduce(const Tensor& a, int axis, bool take_mean, const char* name) {
  require_ndim(a, 2, name);
  if (axis != 0 && axis != 1)
    throw BadSize(std::string(name) + ": axis must be 0 or 1");
  int m = a.dim(0), n = a.dim(1);
  int out_len = axis == 0 ? n : m;
  double inv = take_mean ? 1.0 / static_cast<double>(axis == 0 ? m : n) : 1.0;
  std::vector<double> out(static_cast<std::size_t>(out_len), 0.0);
  const double* pa = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(axis == 0 ? j : i)] += pa[static_cast<std::size_t>(i) * n + j];
  if (take_mean)
    for (double& v : out) v *= inv;
  NodePtr na = a.node();
  return Tensor::make_node(
      {out_len}, std::move(out), {na},
      [na, m, n, axis, inv](TensorNode& self) {
        if (!na->requires_grad) return;
        double* ga = na->grad.data();
        const double* g = self.grad.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            ga[static_cast<std::size_t>(i) * n + j] += g[axis == 0 ? j : i] * inv;
      },
      name);
}
}  // namespace

Tensor sum_axis(const Tensor& a, int axis) { return axis_reduce(a, axis, false, "sum_axis"); }
Tensor mean_axis(const Tensor& a, int axis) { return axis_reduce(a, axis, true, "mean_axis"); }

Tensor l1_norm(const Tensor& a) {
  double s = 0.0;
  const double* pa = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(pa[i]);
  NodePtr na = a.node();
  return Tensor::make_node(
      {1}, {s}, {na},
      [na](TensorNode& self) {
        if (!na->requires_grad) return;
        double g = self.grad[0];
        const double* x = na->value.data();
        double* ga = na->grad.data();
        for (std::size_t i = 0; i < na->value.size(); ++i)
          ga[i] += g * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
      },
      "l1_norm");
}

Tensor l2_norm(const Tensor& a) {
  double s = 0.0;
  const double* pa = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) s += pa[i] * pa[i];
  double norm = std::sqrt(s);
  NodePtr na = a.node();
  return Tensor::make_node(
      {1}, {norm}, {na},
      [na, norm](TensorNode& self) {
        if (!na->requires_grad || norm == 0.0) return;  // subgradient 0 at 0
        double g = self.grad[0] / norm;
        const double* x = na->value.data();
        double* ga = na->grad.data();
        for (std::size_t i = 0; i < na->value.size(); ++i) ga[i] += g * x[i];
      },
      "l2_norm");
}

Tensor cosine(const Tensor& u, const Tensor& v) {
  require_ndim(u, 1, "cosine");
  require_ndim(v, 1, "cosine");
  if (u.dim(0) != v.dim(0))
    throw ShapeMismatch("cosine: " + shape_str(u.shape()) + " vs " +
                        shape_str(v.shape()));
  const double* pu = u.data();
  const double* pv = v.data();
  double dot = 0.0, su = 0.0, sv = 0.0;
  for (int i = 0; i < u.dim(0); ++i) {
    dot += pu[i] * pv[i];
    su += pu[i] * pu[i];
    sv += pv[i] * pv[i];
  }
  double nu = std::sqrt(su), nv = std::sqrt(sv);
  constexpr double kFloor = 1e-12;
  bool floored = nu * nv <= kFloor;
  double denom = std::max(nu * nv, kFloor);
  double c = dot / denom;
  NodePtr un = u.node(), vn = v.node();
  return Tensor::make_node(
      {1}, {c}, {un, vn},
      [un, vn, c, denom, nu, nv, floored](TensorNode& self) {
        if (floored) return;  // degenerate regime: bounded value, zero grad
        double g = self.grad[0];
        const double* pu = un->value.data();
        const double* pv = vn->value.data();
        std::size_t len = un->value.size();
        if (un->requires_grad) {
          double* gu = un->grad.data();
          for (std::size_t i = 0; i < len; ++i)
            gu[i] += g * (pv[i] / denom - c * pu[i] / (nu * nu));
        }
        if (vn->requires_grad) {
          double* gv = vn->grad.data();
          for (std::size_t i = 0; i < len; ++i)
            gv[i] += g * (pu[i] / denom - c * pv[i] / (nv * nv));
        }
      },
      "cosine");
}

Tensor div_by_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1)
    throw ShapeMismatch("div_by_scalar: divisor has shape " + shape_str(s.shape()));
  double sv = s.data()[0];
  std::vector<double> out(a.size());
  const double* pa = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] / sv;
  NodePtr na = a.node(), ns = s.node();
  return Tensor::make_node(
      a.shape(), std::move(out), {na, ns},
      [na, ns, sv](TensorNode& self) {
        const double* g = self.grad.data();
        if (na->requires_grad) {
          double* ga = na->grad.data();
          for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i] / sv;
        }
        if (ns->requires_grad) {
          const double* va = na->value.data();
          double acc = 0.0;
          for (std::size_t i = 0; i < self.grad.size(); ++i) acc += g[i] * va[i];
          ns->grad[0] -= acc / (sv * sv);
        }
      },
      "div_by_scalar");
}

Tensor softmax(const Tensor& a, int axis) {
  if (a.ndim() == 1) {
    Tensor r = softmax(reshape(a, {1, a.dim(0)}), 1);
    return reshape(r, a.shape());
  }
  require_ndim(a, 2, "softmax");
  if (axis != 0 && axis != 1) throw BadSize("softmax: axis must be 0 or 1");
  int m = a.dim(0), n = a.dim(1);
  int lines = axis == 1 ? m : n;
  int len = axis == 1 ? n : m;
  std::size_t lstride = axis == 1 ? static_cast<std::size_t>(n) : 1;
  std::size_t estride = axis == 1 ? 1 : static_cast<std::size_t>(n);

  std::vector<double> out(a.size());
  const double* pa = a.data();
  for (int l = 0; l < lines; ++l) {
    const double* src = pa + l * (axis == 1 ? lstride : 1);
    double* dst = out.data() + l * (axis == 1 ? lstride : 1);
    double mx = src[0];
    for (int i = 1; i < len; ++i) mx = std::max(mx, src[i * estride]);
    double z = 0.0;
    for (int i = 0; i < len; ++i) {
      double e = std::exp(src[i * estride] - mx);
      dst[i * estride] = e;
      z += e;
    }
    for (int i = 0; i < len; ++i) dst[i * estride] /= z;
  }
  NodePtr na = a.node();
  return Tensor::make_node(
      a.shape(), std::move(out), {na},
      [na, lines, len, estride, lstride, axis](TensorNode& self) {
        if (!na->requires_grad) return;
        const double* p = self.value.data();
        const double* g = self.grad.data();
        double* ga = na->grad.data();
        for (int l = 0; l < lines; ++l) {
          std::size_t base = static_cast<std::size_t>(l) * (axis == 1 ? lstride : 1);
          double dot = 0.0;
          for (int i = 0; i < len; ++i)
            dot += g[base + i * estride] * p[base + i * estride];
          for (int i = 0; i < len; ++i)
            ga[base + i * estride] +=
                p[base + i * estride] * (g[base + i * estride] - dot);
        }
      },
      "softmax");
}

Tensor layer_norm_rows(const Tensor& a, const Tensor& gamma,
                       const Tensor& beta, double eps) {
  require_ndim(a, 2, "layer_norm_rows");
  require_ndim(gamma, 1, "layer_norm_rows");
  require_ndim(beta, 1, "layer_norm_rows");
  int m = a.dim(0), n = a.dim(1);
  if (gamma.dim(0) != n || beta.dim(0) != n)
    throw ShapeMismatch("layer_norm_rows: " + shape_str(a.shape()) +
                        " with gamma " + shape_str(gamma.shape()) + ", beta " +
                        shape_str(beta.shape()));
  auto xhat = std::make_shared<std::vector<double>>(a.size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  std::vector<double> out(a.size());
  const double* pa = a.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  for (int i = 0; i < m; ++i) {
    const double* row = pa + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      double xh = (row[j] - mu) * is;
      (*xhat)[static_cast<std::size_t>(i) * n + j] = xh;
      out[static_cast<std::size_t>(i) * n + j] = xh * pg[j] + pb[j];
    }
  }
  NodePtr na = a.node(), ng = gamma.node(), nb = beta.node();
  return Tensor::make_node(
      {m, n}, std::move(out), {na, ng, nb},
      [na, ng, nb, xhat, inv_std, m, n](TensorNode& self) {
        const double* g = self.grad.data();
        const double* xh = xhat->data();
        const double* pg = ng->value.data();
        for (int i = 0; i < m; ++i) {
          std::size_t base = static_cast<std::size_t>(i) * n;
          if (na->requires_grad) {
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < n; ++j) {
              double h = g[base + j] * pg[j];
              m1 += h;
              m2 += h * xh[base + j];
            }
            m1 /= n;
            m2 /= n;
            double is = (*inv_std)[static_cast<std::size_t>(i)];
            double* ga = na->grad.data();
            for (int j = 0; j < n; ++j) {
              double h = g[base + j] * pg[j];
              ga[base + j] += (h - m1 - xh[base + j] * m2) * is;
            }
          }
          if (ng->requires_grad) {
            double* gg = ng->grad.data();
            for (int j = 0; j < n; ++j) gg[j] += g[base + j] * xh[base + j];
          }
          if (nb->requires_grad) {
            double* gb = nb->grad.data();
            for (int j = 0; j < n; ++j) gb[j] += g[base + j];
          }
        }
      },
      "layer_norm_rows");
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
  require_ndim(x, 3, "conv2d");
  require_ndim(w, 4, "conv2d");
  require_ndim(b, 1, "conv2d");
  int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin)
    throw ShapeMismatch("conv2d: input " + shape_str(x.shape()) + " vs kernel " +
                        shape_str(w.shape()));
  if (b.dim(0) != cout)
    throw ShapeMismatch("conv2d: bias " + shape_str(b.shape()) + " for " +
                        std::to_string(cout) + " output channels");
  if (stride < 1 || pad < 0) throw BadSize("conv2d: bad stride/pad");
  if (h + 2 * pad < kh || wd + 2 * pad < kw)
    throw BadSize("conv2d: kernel " + shape_str(w.shape()) +
                  " larger than padded input " + shape_str(x.shape()));
  int ho = (h + 2 * pad - kh) / stride + 1;
  int wo = (wd + 2 * pad - kw) / stride + 1;
  int K = cin * kh * kw;
  std::size_t hw = static_cast<std::size_t>(ho) * wo;

  auto col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(K) * hw);
  {
    const double* px = x.data();
    for (int c = 0; c < cin; ++c)
      for (int ki = 0; ki < kh; ++ki)
        for (int kj = 0; kj < kw; ++kj) {
          double* dst = col->data() + (static_cast<std::size_t>(c) * kh * kw +
                                       static_cast<std::size_t>(ki) * kw + kj) * hw;
          for (int oy = 0; oy < ho; ++oy) {
            int iy = oy * stride + ki - pad;
            if (iy < 0 || iy >= h) {
              std::memset(dst + static_cast<std::size_t>(oy) * wo, 0,
                          sizeof(double) * static_cast<std::size_t>(wo));
              continue;
            }
            const double* src = px + (static_cast<std::size_t>(c) * h + iy) * wd;
            for (int ox = 0; ox < wo; ++ox) {
              int ix = ox * stride + kj - pad;
              dst[static_cast<std::size_t>(oy) * wo + ox] =
                  (ix >= 0 && ix < wd) ? src[ix] : 0.0;
            }
          }
        }
  }

  std::vector<double> out(static_cast<std::size_t>(cout) * hw);
  dgemm(false, false, cout, static_cast<int>(hw), K, 1.0, w.data(), K,
        col->data(), static_cast<int>(hw), 0.0, out.data(), static_cast<int>(hw));
  {
    const double* pb = b.data();
    for (int c = 0; c < cout; ++c) {
      double bias = pb[c];
      double* row = out.data() + static_cast<std::size_t>(c) * hw;
      for (std::size_t i = 0; i < hw; ++i) row[i] += bias;
    }
  }

  NodePtr nx = x.node(), nw = w.node(), nb = b.node();
  return Tensor::make_node(
      {cout, ho, wo}, std::move(out), {nx, nw, nb},
      [nx, nw, nb, col, cin, h, wd, cout, kh, kw, ho, wo, stride, pad,
       K, hw](TensorNode& self) {
        const double* g = self.grad.data();
        if (nb->requires_grad) {
          double* gb = nb->grad.data();
          for (int c = 0; c < cout; ++c) {
            double acc = 0.0;
            const double* row = g + static_cast<std::size_t>(c) * hw;
            for (std::size_t i = 0; i < hw; ++i) acc += row[i];
            gb[c] += acc;
          }
        }
        if (nw->requires_grad)
          dgemm(false, true, cout, K, static_cast<int>(hw), 1.0, g,
                static_cast<int>(hw), col->data(), static_cast<int>(hw), 1.0,
                nw->grad.data(), K);
        if (nx->requires_grad) {
          std::vector<double> dcol(static_cast<std::size_t>(K) * hw);
          dgemm(true, false, K, static_cast<int>(hw), cout, 1.0,
                nw->value.data(), K, g, static_cast<int>(hw), 0.0, dcol.data(),
                static_cast<int>(hw));
          double* gx = nx->grad.data();
          for (int c = 0; c < cin; ++c)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                const double* src =
                    dcol.data() + (static_cast<std::size_t>(c) * kh * kw +
                                   static_cast<std::size_t>(ki) * kw + kj) * hw;
                for (int oy = 0; oy < ho; ++oy) {
                  int iy = oy * stride + ki - pad;
                  if (iy < 0 || iy >= h) continue;
                  double* dst = gx + (static_cast<std::size_t>(c) * h + iy) * wd;
                  for (int ox = 0; ox < wo; ++ox) {
                    int ix = ox * stride + kj - pad;
                    if (ix >= 0 && ix < wd)
                      dst[ix] += src[static_cast<std::size_t>(oy) * wo + ox];
                  }
                }
              }
        }
      },
      "conv2d");
}

Tensor maxpool2x2(const Tensor& x) {
  require_ndim(x, 3, "maxpool2x2");
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2)
    throw BadSize("maxpool2x2 needs even spatial dims, got " + shape_str(x.shape()));
  int ho = h / 2, wo = w / 2;
  std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
  auto arg = std::make_shared<std::vector<int>>(out.size());
  const double* px = x.data();
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        int best = -1;
        double bv = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int idx = (ch * h + oy * 2 + dy) * w + ox * 2 + dx;
            if (best < 0 || px[idx] > bv) {
              best = idx;
              bv = px[idx];
            }
          }
        std::size_t o = (static_cast<std::size_t>(ch) * ho + oy) * wo + ox;
        out[o] = bv;
        (*arg)[o] = best;
      }
  NodePtr nx = x.node();
  return Tensor::make_node(
      {c, ho, wo}, std::move(out), {nx},
      [nx, arg](TensorNode& self) {
        if (!nx->requires_grad) return;
        double* gx = nx->grad.data();
        const double* g = self.grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          gx[static_cast<std::size_t>((*arg)[i])] += g[i];
      },
      "maxpool2x2");
}

Tensor upsample_bilinear(const Tensor& x, int factor) {
  require_ndim(x, 3, "upsample_bilinear");
  if (factor < 1) throw BadSize("upsample_bilinear: factor must be >= 1");
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  int ho = h * factor, wo = w * factor;
  // Precompute source indices/weights per output row and column
  // (half-pixel centers, clamped at borders).
  std::vector<int> y0(static_cast<std::size_t>(ho)), y1(static_cast<std::size_t>(ho));
  std::vector<double> ty(static_cast<std::size_t>(ho));
  for (int oy = 0; oy < ho; ++oy) {
    double sy = (oy + 0.5) / factor - 0.5;
    double fy = std::floor(sy);
    int i0 = static_cast<int>(fy);
    ty[static_cast<std::size_t>(oy)] = sy - fy;
    y0[static_cast<std::size_t>(oy)] = std::clamp(i0, 0, h - 1);
    y1[static_cast<std::size_t>(oy)] = std::clamp(i0 + 1, 0, h - 1);
  }
  std::vector<int> x0(static_cast<std::size_t>(wo)), x1(static_cast<std::size_t>(wo));
  std::vector<double> tx(static_cast<std::size_t>(wo));
  for (int ox = 0; ox < wo; ++ox) {
    double sx = (ox + 0.5) / factor - 0.5;
    double fx = std::floor(sx);
    int i0 = static_cast<int>(fx);
    tx[static_cast<std::size_t>(ox)] = sx - fx;
    x0[static_cast<std::size_t>(ox)] = std::clamp(i0, 0, w - 1);
    x1[static_cast<std::size_t>(ox)] = std::clamp(i0 + 1, 0, w - 1);
  }
  std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
  const double* px = x.data();
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = px + static_cast<std::size_t>(ch) * h * w;
    double* oplane = out.data() + static_cast<std::size_t>(ch) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      const double* r0 = plane + static_cast<std::size_t>(y0[static_cast<std::size_t>(oy)]) * w;
      const double* r1 = plane + static_cast<std::size_t>(y1[static_cast<std::size_t>(oy)]) * w;
      double wy = ty[static_cast<std::size_t>(oy)];
      double* orow = oplane + static_cast<std::size_t>(oy) * wo;
      for (int ox = 0; ox < wo; ++ox) {
        double wx = tx[static_cast<std::size_t>(ox)];
        double top = r0[x0[static_cast<std::size_t>(ox)]] * (1.0 - wx) + r0[x1[static_cast<std::size_t>(ox)]] * wx;
        double bot = r1[x0[static_cast<std::size_t>(ox)]] * (1.0 - wx) + r1[x1[static_cast<std::size_t>(ox)]] * wx;
        orow[ox] = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  NodePtr nx = x.node();
  auto cy0 = std::make_shared<std::vector<int>>(std::move(y0));
  auto cy1 = std::make_shared<std::vector<int>>(std::move(y1));
  auto cty = std::make_shared<std::vector<double>>(std::move(ty));
  auto cx0 = std::make_shared<std::vector<int>>(std::move(x0));
  auto cx1 = std::make_shared<std::vector<int>>(std::move(x1));
  auto ctx = std::make_shared<std::vector<double>>(std::move(tx));
  return Tensor::make_node(
      {c, ho, wo}, std::move(out), {nx},
      [nx, cy0, cy1, cty, cx0, cx1, ctx, c, h, w, ho, wo](TensorNode& self) {
        if (!nx->requires_grad) return;
        double* gx = nx->grad.data();
        const double* g = self.grad.data();
        for (int ch = 0; ch < c; ++ch) {
          double* gplane = gx + static_cast<std::size_t>(ch) * h * w;
          const double* oplane = g + static_cast<std::size_t>(ch) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            double wy = (*cty)[static_cast<std::size_t>(oy)];
            double* r0 = gplane + static_cast<std::size_t>((*cy0)[static_cast<std::size_t>(oy)]) * w;
            double* r1 = gplane + static_cast<std::size_t>((*cy1)[static_cast<std::size_t>(oy)]) * w;
            const double* orow = oplane + static_cast<std::size_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
              double wx = (*ctx)[static_cast<std::size_t>(ox)];
              double go = orow[ox];
              r0[(*cx0)[static_cast<std::size_t>(ox)]] += go * (1.0 - wy) * (1.0 - wx);
              r0[(*cx1)[static_cast<std::size_t>(ox)]] += go * (1.0 - wy) * wx;
              r1[(*cx0)[static_cast<std::size_t>(ox)]] += go * wy * (1.0 - wx);
              r1[(*cx1)[static_cast<std::size_t>(ox)]] += go * wy * wx;
            }
          }
        }
      },
      "upsample_bilinear");
}

Tensor custom_grad_scalar(double value, const Tensor& input,
                          std::vector<double> grad_wrt_input) {
  if (grad_wrt_input.size() != input.size())
    throw LengthMismatch("custom_grad_scalar: gradient length " +
                         std::to_string(grad_wrt_input.size()) + " vs input " +
                         shape_str(input.shape()));
  for (double v : grad_wrt_input)
    if (!std::isfinite(v))
      throw NonFiniteValue("custom_grad_scalar: non-finite gradient entry");
  NodePtr ni = input.node();
  auto gcap = std::make_shared<std::vector<double>>(std::move(grad_wrt_input));
  return Tensor::make_node(
      {1}, {value}, {ni},
      [ni, gcap](TensorNode& self) {
        if (!ni->requires_grad) return;
        double g = self.grad[0];
        double* gi = ni->grad.data();
        const double* gv = gcap->data();
        for (std::size_t i = 0; i < gcap->size(); ++i) gi[i] += g * gv[i];
      },
      "custom_grad_scalar");
}

}  // namespace crowd
