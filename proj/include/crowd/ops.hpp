#pragma once

#include <vector>

#include "crowd/tensor.hpp"

namespace crowd {

// Elementwise arithmetic (matching shapes unless noted).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);          // subgradient 0 at the kink
Tensor abs_val(const Tensor& a);       // subgradient 0 at the kink
Tensor exp_elem(const Tensor& a);
Tensor log_elem(const Tensor& a);

// Shape and indexing.
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor transpose2d(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_cols(const Tensor& a, int start, int count);        // 2-D
Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);  // 2-D
// Adjoint of gather_rows: places a's rows at `rows` in an n-row zero matrix;
// duplicate indices accumulate.
Tensor scatter_rows(const Tensor& a, const std::vector<int>& rows, int n);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);       // [m,k] x [k,n]
Tensor add_rowvec(const Tensor& a, const Tensor& v);   // [m,n] + [n] per row

// Reductions and norms.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis);    // 2-D
Tensor mean_axis(const Tensor& a, int axis);   // 2-D
Tensor l1_norm(const Tensor& a);
Tensor l2_norm(const Tensor& a);
// 1-D cosine similarity; the norm product is floored at 1e-12 and the
// gradient is zeroed in the floored (degenerate) regime.
Tensor cosine(const Tensor& u, const Tensor& v);
Tensor div_by_scalar(const Tensor& a, const Tensor& s);  // s is a [1] tensor

// Row/column softmax of a 2-D matrix (axis 1 = along each row); 1-D inputs
// are treated as a single row.
Tensor softmax(const Tensor& a, int axis = 1);
// Per-row layer norm of [n,c] with learnable gamma/beta of shape [c].
Tensor layer_norm_rows(const Tensor& a, const Tensor& gamma,
                       const Tensor& beta, double eps = 1e-5);

// Spatial ops on [C,H,W] maps.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int stride = 1, int pad = 0);  // w: [Cout,Cin,kh,kw], b: [Cout]
Tensor maxpool2x2(const Tensor& x);          // H, W must be even
Tensor upsample_bilinear(const Tensor& x, int factor);  // align_corners=false

// Injects an externally computed scalar with a fixed gradient w.r.t. `input`
// (used for losses whose gradient comes from a converged solver).
Tensor custom_grad_scalar(double value, const Tensor& input,
                          std::vector<double> grad_wrt_input);

}  // namespace crowd
