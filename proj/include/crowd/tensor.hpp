#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "crowd/errors.hpp"

namespace crowd {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// One node of the computation graph. `value` always holds the forward result;
// `grad` is allocated on demand during the backward sweep. Nodes are created
// strictly after their parents, so ascending `id` is a topological order.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;  // scatter self.grad to parents
};

// Dense double-precision array handle. Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v);

  // Engine hook used by the primitive ops: validates finiteness, assigns the
  // node id, and prunes the backward closure when no parent needs gradients.
  static Tensor make_node(Shape shape, std::vector<double> value,
                          std::vector<std::shared_ptr<TensorNode>> parents,
                          std::function<void(TensorNode&)> backward_fn,
                          const char* op_name);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return node_->value.size(); }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  std::vector<double>& value() { return node_->value; }
  const std::vector<double>& value() const { return node_->value; }
  double item() const;  // throws NonScalarOutput unless size() == 1

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  std::vector<double>& grad();  // zero-allocates on first access
  void zero_grad();

  Tensor detach() const;  // constant copy of the value, no graph linkage

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
};

// Reverse-mode sweep from a scalar output. Visits every reachable node exactly
// once in reverse creation order. Gradients accumulate into leaf tensors
// (callers zero them between measurements); interior buffers are per-call.
void backward(const Tensor& output);

// Central-difference check: max over coordinates of
// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). `f` must be a pure function.
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double fd_eps = 1e-5);

}  // namespace crowd
