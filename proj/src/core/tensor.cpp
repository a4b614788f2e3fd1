#include "telescopic/core/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "telescopic/core/errors.hpp"

namespace telescopic {

namespace {
std::atomic<bool> g_finite_checks{true};

#if defined(__GLIBC__)
// Activations are large and short-lived. glibc's default returns big blocks to
// the kernel on free, so every step re-faults the same pages; keep them mapped.
const bool g_allocator_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc maximum on 64-bit
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
#endif
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

RealBuffer& detail::Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  return grad;
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, Real fill) : node_(std::make_shared<detail::Node>()) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::span<const Real> data) : node_(std::make_shared<detail::Node>()) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != data.size())
    throw DimensionError("shape " + shape_str(shape) + " does not hold " + std::to_string(data.size()) +
                         " values");
  node_->shape = std::move(shape);
  node_->data.assign(data.begin(), data.end());
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(node_->shape));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const Real> Tensor::data() const { return node_->data; }
std::span<Real> Tensor::mutable_data() { return node_->data; }

Real Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
  return *this;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

std::span<const Real> Tensor::grad() const { return node_->grad; }

std::span<Real> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data); }

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks_enabled() { return g_finite_checks; }

Tensor make_op_result(Shape shape, RealBuffer data, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward) {
  if (g_finite_checks) {
    // v - v is 0 for finite v and NaN otherwise; the vectorized sum catches both.
    using Values = Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>>;
    const Values v(data.data(), static_cast<Eigen::Index>(data.size()));
    if (!((v - v).sum() == Real(0)))
      throw NumericError("non-finite value produced by op with output shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool track = std::any_of(parents.begin(), parents.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward() requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  auto root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; `order` ends up with parents before children.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are scratch space: allocated on first contribution and
  // released once propagated.
  for (auto* n : order)
    if (!n->is_leaf()) n->grad.clear();
  root->ensure_grad()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf()) continue;
    n->ensure_grad();
    n->backward_fn(*n);
    RealBuffer().swap(n->grad);
  }
}

}  // namespace telescopic
