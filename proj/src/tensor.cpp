#include "crowd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace crowd {

namespace {
std::atomic<std::uint64_t> g_next_id{1};
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_numel(shape), 0.0),
                   requires_grad);
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_numel(shape), v),
                   requires_grad);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data,
                         bool requires_grad) {
  for (int d : shape)
    if (d <= 0) throw BadSize("tensor dims must be positive, got " + shape_str(shape));
  if (data.size() != shape_numel(shape))
    throw ShapeMismatch("data length " + std::to_string(data.size()) +
                        " does not fill shape " + shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = shape;
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->leaf = true;
  n->id = g_next_id.fetch_add(1);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

Tensor Tensor::make_node(Shape shape, std::vector<double> value,
                         std::vector<std::shared_ptr<TensorNode>> parents,
                         std::function<void(TensorNode&)> backward_fn,
                         const char* op_name) {
  if (value.size() != shape_numel(shape))
    throw ShapeMismatch(std::string(op_name) + " produced " +
                        std::to_string(value.size()) + " values for shape " +
                        shape_str(shape));
  for (double v : value)
    if (!std::isfinite(v))
      throw NonFiniteValue(std::string(op_name) + " produced a non-finite value");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->leaf = false;
  n->id = g_next_id.fetch_add(1);
  for (const auto& p : parents)
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

double Tensor::item() const {
  if (!node_ || node_->value.size() != 1)
    throw NonScalarOutput("item() on shape " +
                          (node_ ? shape_str(node_->shape) : "<undefined>"));
  return node_->value[0];
}

std::vector<double>& Tensor::grad() {
  if (node_->grad.size() != node_->value.size())
    node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::detach() const {
  return from_data(node_->shape, node_->value, false);
}

void backward(const Tensor& output) {
  if (!output.defined()) throw EmptyInput("backward on an undefined tensor");
  const auto& root = output.node();
  if (root->value.size() != 1)
    throw NonScalarOutput("backward needs a scalar, got shape " +
                          shape_str(root->shape));
  if (!root->requires_grad) return;

  // Collect the reachable requires_grad subgraph once.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const TensorNode* a, const TensorNode* b) { return a->id > b->id; });

  for (TensorNode* n : order) {
    if (!n->leaf)
      n->grad.assign(n->value.size(), 0.0);
    else if (n->grad.size() != n->value.size())
      n->grad.assign(n->value.size(), 0.0);
  }
  root->grad[0] += 1.0;

  for (TensorNode* n : order)
    if (n->backward_fn) n->backward_fn(*n);
}

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double fd_eps) {
  if (fd_eps <= 0.0) throw BadSize("grad_check step must be positive");
  Tensor var = Tensor::from_data(x.shape(), x.value(), /*requires_grad=*/true);
  Tensor y = f(var);
  if (y.size() != 1)
    throw NonScalarOutput("grad_check target must produce a scalar, got " +
                          shape_str(y.shape()));
  backward(y);
  std::vector<double> g_ad = var.grad();

  Tensor probe = Tensor::from_data(x.shape(), x.value(), false);
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    double orig = probe.data()[i];
    probe.data()[i] = orig + fd_eps;
    double up = f(probe).item();
    probe.data()[i] = orig - fd_eps;
    double dn = f(probe).item();
    probe.data()[i] = orig;
    double fd = (up - dn) / (2.0 * fd_eps);
    if (!std::isfinite(fd) || !std::isfinite(g_ad[i]))
      throw NonFiniteValue("grad_check saw a non-finite derivative");
    double err = std::abs(g_ad[i] - fd) /
                 std::max({1.0, std::abs(g_ad[i]), std::abs(fd)});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace crowd
