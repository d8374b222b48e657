#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace urbanflow {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents.
  std::function<void(Node&)> backward;

  T* grad_buffer();  // allocates zeros on first use
};
}  // namespace detail

/// Dense row-major tensor with reverse-mode autodiff.
///
/// Copies share storage: a Tensor is a handle to a graph node. Parameters
/// are leaves created with requires_grad; every op on a tensor that requires
/// grad records a node whose backward closure feeds its parents.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0), bool requires_grad = false);
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor uniform(Shape shape, T lo, T hi, std::mt19937_64& rng,
                             bool requires_grad = false);
  static BasicTensor scalar(T v) { return BasicTensor(Shape{1}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  /// Value of a one-element tensor.
  T item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient; zeros if nothing has flowed here yet.
  std::vector<T> grad() const;
  std::span<T> grad_span();
  void zero_grad() { node_->grad.clear(); }

  /// Backpropagates from this scalar, accumulating into every reachable
  /// leaf that requires grad.
  void backward() const;

  /// Same values, cut from the graph.
  BasicTensor detach() const;
  /// Deep copy of values only.
  BasicTensor clone() const;

  std::shared_ptr<detail::Node<T>> node() const { return node_; }
  static BasicTensor from_node(std::shared_ptr<detail::Node<T>> n) {
    BasicTensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

/// Flushes subnormal floats to zero (FTZ + DAZ) on this thread and the
/// OpenMP workers while alive. Saturated sigmoids and decaying gradients
/// otherwise hit the slow subnormal path; a reverse training epoch ran
/// 3-4x slower without it. No-op off x86.
class FlushDenormalsGuard {
 public:
  FlushDenormalsGuard();
  ~FlushDenormalsGuard();
  FlushDenormalsGuard(const FlushDenormalsGuard&) = delete;
  FlushDenormalsGuard& operator=(const FlushDenormalsGuard&) = delete;

 private:
  unsigned prev_ = 0;
};

/// When on, every op checks its output for NaN/Inf and throws. Off by
/// default; the tests switch it on.
void set_debug_checks(bool on);
bool debug_checks();

/// Per-axis kernel/stride/padding in (d, h, w) order. Padding may differ
/// between the low and high side of an axis.
struct ConvGeometry {
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad_lo{0, 0, 0};
  std::array<int, 3> pad_hi{0, 0, 0};

  static ConvGeometry cube(int k, int s, int p) {
    return {{k, k, k}, {s, s, s}, {p, p, p}, {p, p, p}};
  }
};

/// Output spatial dims of conv3d; throws ShapeError with the arithmetic if
/// any is non-positive.
std::array<std::int64_t, 3> conv_output_dims(const std::array<std::int64_t, 3>& in,
                                             const ConvGeometry& g);
/// Output spatial dims of conv3d_transpose: (D-1)*s - (lo+hi) + k.
std::array<std::int64_t, 3> conv_transpose_output_dims(
    const std::array<std::int64_t, 3>& in, const ConvGeometry& g);

// -- ops ------------------------------------------------------------------

/// x [N,Cin,D,H,W], w [Cout,Cin,kd,kh,kw], b [Cout] or undefined.
template <class T>
BasicTensor<T> conv3d(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const BasicTensor<T>& b, const ConvGeometry& g);

/// x [N,Cin,D,H,W], w [Cin,Cout,kd,kh,kw], b [Cout] or undefined. Exactly
/// the adjoint of conv3d with the same weight.
template <class T>
BasicTensor<T> conv3d_transpose(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                const BasicTensor<T>& b, const ConvGeometry& g);

/// [N,C,...] -> [N,2C,...]: (ELU(x), ELU(-x)) on the channel axis.
template <class T>
BasicTensor<T> celu_concat(const BasicTensor<T>& x);

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Concatenates along axis 1; all other dims must match.
template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Sum of all elements -> [1].
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x);

/// mean((pred - target)^2) -> [1]. The target receives no gradient.
template <class T>
BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

/// Mean binary cross-entropy of probabilities against {0,1} targets, with
/// probabilities clamped to [1e-7, 1-1e-7].
template <class T>
BasicTensor<T> bce_loss(const BasicTensor<T>& prob, const BasicTensor<T>& target);

// -- gradient checking ---------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::int64_t checked = 0;
};

/// Compares the autodiff gradient of sum(f(inputs) * R), for a fixed random
/// R with entries of magnitude 0.5 to 1, against central differences, for
/// every element of every input. Elements whose analytic derivative is
/// within 1e4 of the difference quotient's rounding noise (16 ulps of the
/// objective over 2 eps), or below 1e-8, are compared absolutely.
GradCheckResult check_gradients(
    const std::function<Tensor64(const std::vector<Tensor64>&)>& f,
    std::vector<Tensor64> inputs, std::uint64_t seed, double eps = 1e-5);

}  // namespace urbanflow
