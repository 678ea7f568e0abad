#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "pasttense/errors.hpp"

namespace pasttense {

using Shape = std::vector<std::size_t>;

// Storage is 64-byte aligned so that vectorised kernels see the same
// alignment (and hence the same summation order) on every run, whatever the
// heap layout: results are bit-reproducible across processes.
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

using Buffer = std::vector<double, AlignedAllocator<double>>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
    check_dims();
  }
  Tensor(Shape shape, Buffer values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_dims();
    if (values_.size() != shape_size(shape_))
      throw ShapeError("tensor: " + std::to_string(values_.size()) + " values for shape " + shape_str(shape_));
  }

  Tensor(Shape shape, const std::vector<double>& values) : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}
  Tensor(Shape shape, std::initializer_list<double> values) : Tensor(std::move(shape), Buffer(values)) {}

  static Tensor scalar(double v) { return Tensor({1}, Buffer{v}); }
  static Tensor matrix(std::size_t r, std::size_t c, Buffer v) { return Tensor({r, c}, std::move(v)); }
  static Tensor matrix(std::size_t r, std::size_t c, const std::vector<double>& v) { return Tensor({r, c}, v); }
  static Tensor matrix(std::size_t r, std::size_t c, std::initializer_list<double> v) { return Tensor({r, c}, Buffer(v)); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  // Views as a matrix: all leading dimensions folded into rows.
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const { return cols() ? size() / cols() : 0; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  Buffer& values() { return values_; }
  const Buffer& values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

 private:
  void check_dims() const {
    for (auto d : shape_)
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in shape " + shape_str(shape_));
  }

  Shape shape_;
  Buffer values_;
};

// ---------------------------------------------------------------------------
// Reverse-mode autodiff.  A Var is a handle to a graph node holding a value,
// an optional gradient buffer and a closure that pushes the node's gradient
// into its parents.  Leaves (parameters, inputs) have no closure.

struct Node {
  Tensor value;
  Buffer grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  Buffer& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph construction in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Buffer& grad() const { return node_->grad; }
  Buffer& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
  }
  double item() const {
    if (size() != 1) throw UsageError("item(): tensor is not a scalar " + shape_str(shape()));
    return value()[0];
  }

  const std::shared_ptr<Node>& node() const { return node_; }

  // Builds a result node.  The closure is only recorded when gradients are
  // enabled and some parent requires them.
  static Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    Var out(std::move(value));
    if (!grad_enabled()) return out;
    bool any = false;
    for (auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward_fn = std::move(fn);
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

// Accumulates d(loss)/d(x) into every reachable leaf that requires grad.
// Interior gradients are recomputed from scratch on each call, leaf
// gradients accumulate (call zero_grad between optimizer steps).
inline void backward(const Var& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw UsageError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf()) n->backward_fn(*n);
  }
  // Free interior buffers early; leaves keep theirs.
  for (Node* n : order)
    if (!n->is_leaf()) Buffer().swap(n->grad);
}

}  // namespace pasttense
