#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace telescopic {

#ifdef TELESCOPIC_USE_FLOAT32
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

// Tensor storage is 64-byte aligned so vectorized kernels split work the same
// way on every run; with malloc's 16-byte alignment the scalar prologue length
// (and hence rounding) depended on where the buffer happened to land.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using RealBuffer = std::vector<Real, AlignedAllocator<Real>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  RealBuffer data;
  RealBuffer grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents that require grad.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  RealBuffer& ensure_grad();
};

}  // namespace detail

// Dense row-major array with optional reverse-mode gradient tracking.
//
// A Tensor is a shared handle: copies alias the same storage. Results of ops
// on tracked inputs remember their inputs until the handle is dropped.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::span<const Real> data);
  Tensor(Shape shape, std::initializer_list<Real> data) : Tensor(std::move(shape), std::span<const Real>(data)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Real(1)); }
  static Tensor scalar(Real value) { return Tensor(Shape{1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const Real> data() const;
  // Writable view. Intended for leaves (parameters, inputs); writing into an
  // interior node invalidates gradients already recorded against it.
  std::span<Real> mutable_data();
  Real item() const;
  Real operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  // Copy of the values without graph history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Builds an op result. When any parent tracks gradients the result records
// `backward` and the parents; otherwise the graph is not extended.
// Throws NumericError if `data` contains non-finite values.
Tensor make_op_result(Shape shape, RealBuffer data, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward);

// Accumulates d(loss)/d(leaf) into every tracked leaf reachable from `loss`.
void backward(const Tensor& loss);

// Global switch for the non-finite check in make_op_result (on by default).
void set_finite_checks(bool on);
bool finite_checks_enabled();

}  // namespace telescopic
