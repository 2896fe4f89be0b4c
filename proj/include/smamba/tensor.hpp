#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "smamba/errors.hpp"
#include "smamba/runtime.hpp"

namespace smamba {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
};

// Dense row-major tensor with shared storage.  Copies are shallow; use
// clone() for a deep copy.  Gradients live beside the data and accumulate
// across backward passes until zero_grad().
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<std::size_t>(shape_numel(impl_->shape)),
                       T(0));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = std::move(shape);
    if (static_cast<std::int64_t>(values.size()) !=
        shape_numel(t.impl_->shape)) {
      throw ShapeError("tensor init: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(t.impl_->shape));
    }
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t ndim() const {
    return static_cast<std::int64_t>(impl_->shape.size());
  }
  std::int64_t size(std::int64_t axis) const { return impl_->shape[axis]; }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(impl_->data.size());
  }

  // The handle is a shared reference; element and gradient storage are
  // mutable through const handles, like any shared-pointer target.
  T* data() const { return impl_->data.data(); }
  std::vector<T>& vec() const { return impl_->data; }

  T item() const {
    if (numel() != 1)
      throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) const { impl_->requires_grad = v; }

  // Pointer to the gradient buffer, allocating (zeroed) if needed.
  T* grad_acc() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad.data();
  }
  // Null if no gradient has been accumulated yet (treated as zero).
  const T* grad_data() const {
    return impl_->grad.empty() ? nullptr : impl_->grad.data();
  }
  void zero_grad() const {
    if (!impl_->grad.empty())
      std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  Tensor clone() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
inline void assert_finite(const Tensor<T>& t, const char* where) {
  if (!runtime().check_finite) return;
  const T* p = t.data();
  const std::int64_t n = t.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(static_cast<double>(p[i]))) {
      throw NumericError(std::string(where) + ": non-finite value at index " +
                         std::to_string(i));
    }
  }
}

// Reverse-mode tape.  Ops executed while a tape is active (via Tape::Scope)
// append backward closures in execution order; backward() replays them in
// reverse.  One backward per tape: the closures mutate gradient state, so a
// second call is refused rather than silently double-counting.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  std::size_t num_nodes() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void backward(Tensor<T> loss) {
    if (consumed_) throw DataError("tape: backward called twice");
    if (loss.numel() != 1)
      throw ShapeError("tape: backward root must be a scalar, got " +
                       shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw DataError("tape: backward root does not depend on tracked tensors");
    consumed_ = true;
    loss.grad_acc()[0] += T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
  }

  static Tape* current() {
    auto& s = stack();
    return s.empty() ? nullptr : s.back();
  }

  class Scope {
   public:
    explicit Scope(Tape* t) { stack().push_back(t); }
    ~Scope() { stack().pop_back(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
  };

 private:
  static std::vector<Tape*>& stack() {
    static thread_local std::vector<Tape*> s;
    return s;
  }
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// True when an op executed right now should be recorded.
template <typename T>
inline bool tracing(const Tensor<T>& a) {
  return Tape<T>::current() != nullptr && a.requires_grad();
}
template <typename T>
inline bool tracing(const Tensor<T>& a, const Tensor<T>& b) {
  return Tape<T>::current() != nullptr &&
         (a.requires_grad() || b.requires_grad());
}

template <typename T>
struct GradCheckReport {
  double max_rel_err = 0.0;
  double analytic_at_max = 0.0;
  double numeric_at_max = 0.0;
  std::size_t tensor_at_max = 0;
  std::int64_t elem_at_max = 0;
  std::int64_t num_checked = 0;
};

// Compares tape gradients of a scalar-valued closure against central
// differences.  `f` must be a pure function of `params` (re-run several
// times).  Relative error = |a - n| / max(|a|, |n|, abs_floor).  Raise
// abs_floor for deep compositions where some gradients are legitimately
// tiny: central differences bottom out near |f|*machine_eps/eps, and below
// that the ratio measures rounding noise, not correctness.
template <typename T, typename F>
GradCheckReport<T> grad_check(F&& f, std::vector<Tensor<T>> params,
                              T eps = T(1e-5), double abs_floor = 1e-8) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape<T> tape;
    typename Tape<T>::Scope scope(&tape);
    Tensor<T> loss = f();
    tape.backward(loss);
  }
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    const T* g = p.grad_data();
    if (g)
      analytic.emplace_back(g, g + p.numel());
    else
      analytic.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
  }

  GradCheckReport<T> rep;
  rep.num_checked = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = params[pi];
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      ++rep.num_checked;
      const T v = p.data()[i];
      p.data()[i] = v + eps;
      const double lp = static_cast<double>(f().item());
      p.data()[i] = v - eps;
      const double lm = static_cast<double>(f().item());
      p.data()[i] = v;
      const double num = (lp - lm) / (2.0 * static_cast<double>(eps));
      const double ana = static_cast<double>(analytic[pi][i]);
      const double denom =
          std::max({std::abs(ana), std::abs(num), abs_floor});
      const double rel = std::abs(ana - num) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.analytic_at_max = ana;
        rep.numeric_at_max = num;
        rep.tensor_at_max = pi;
        rep.elem_at_max = i;
      }
    }
  }
  return rep;
}

// Single-tensor convenience form.
template <typename T, typename F>
GradCheckReport<T> grad_check(F&& f, Tensor<T> x, T eps = T(1e-5)) {
  return grad_check(std::forward<F>(f), std::vector<Tensor<T>>{std::move(x)},
                    eps);
}

// Sparse variant shares the floor semantics; see grad_check above.

// Same comparison but probing at most `per_tensor` evenly spaced coordinates
// of each tensor, for models too large to difference exhaustively.
template <typename T, typename F>
GradCheckReport<T> grad_check_sparse(F&& f, std::vector<Tensor<T>> params,
                                     T eps, std::int64_t per_tensor,
                                     double abs_floor = 1e-8) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape<T> tape;
    typename Tape<T>::Scope scope(&tape);
    Tensor<T> loss = f();
    tape.backward(loss);
  }
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    const T* g = p.grad_data();
    if (g)
      analytic.emplace_back(g, g + p.numel());
    else
      analytic.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
  }
  GradCheckReport<T> rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = params[pi];
    const std::int64_t n = p.numel();
    const std::int64_t count = std::min(n, per_tensor);
    for (std::int64_t k = 0; k < count; ++k) {
      const std::int64_t i = (count == 1) ? 0 : k * (n - 1) / (count - 1);
      ++rep.num_checked;
      const T v = p.data()[i];
      p.data()[i] = v + eps;
      const double lp = static_cast<double>(f().item());
      p.data()[i] = v - eps;
      const double lm = static_cast<double>(f().item());
      p.data()[i] = v;
      const double num = (lp - lm) / (2.0 * static_cast<double>(eps));
      const double ana = static_cast<double>(analytic[pi][i]);
      const double denom =
          std::max({std::abs(ana), std::abs(num), abs_floor});
      const double rel = std::abs(ana - num) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.analytic_at_max = ana;
        rep.numeric_at_max = num;
        rep.tensor_at_max = pi;
        rep.elem_at_max = i;
      }
    }
  }
  return rep;
}

}  // namespace smamba
