#include "urbanflow/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <type_traits>
#include <unordered_set>

#include <Eigen/Core>

#if defined(__SSE__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

#include "urbanflow/errors.hpp"
#include "urbanflow/scene.hpp"

namespace urbanflow {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<bool> g_debug_checks{false};

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dim");
  for (auto d : shape)
    if (d <= 0) throw ShapeError("tensor shape " + shape_str(shape) + " has a non-positive dim");
}

template <class T>
using Node = detail::Node<T>;
template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// Wraps a freshly computed value into a tensor, recording the op when any
// parent needs a gradient.
template <class T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                           std::vector<NodePtr<T>> parents,
                           std::function<void(Node<T>&)> backward) {
  if (g_debug_checks.load(std::memory_order_relaxed) && !all_finite(value)) {
    bool inputs_ok = true;
    for (auto& p : parents) inputs_ok = inputs_ok && all_finite(p->value);
    if (inputs_ok)
      throw std::domain_error(std::string(op) + ": non-finite output from finite inputs");
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled)
    for (auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return BasicTensor<T>::from_node(std::move(n));
}

template <class T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <class T>
void require_defined(const char* op, const BasicTensor<T>& t) {
  if (!t.defined()) throw ValidationError(std::string(op) + ": undefined tensor");
}

}  // namespace

template <class T>
T* detail::Node<T>::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), T(0));
  return grad.data();
}

// -- BasicTensor ----------------------------------------------------------

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill, bool requires_grad) {
  check_shape(shape);
  node_ = std::make_shared<detail::Node<T>>();
  node_->value.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad) {
  check_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
    throw ShapeError("tensor shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <class T>
BasicTensor<T> BasicTensor<T>::uniform(Shape shape, T lo, T hi, std::mt19937_64& rng,
                                       bool requires_grad) {
  BasicTensor t(std::move(shape), T(0), requires_grad);
  for (auto& v : t.node_->value) v = static_cast<T>(lo + (hi - lo) * uniform01(rng));
  return t;
}

template <class T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <class T>
std::vector<T> BasicTensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(node_->value.size(), T(0));
  return node_->grad;
}

template <class T>
std::span<T> BasicTensor<T>::grad_span() {
  return {node_->grad_buffer(), node_->value.size()};
}

template <class T>
void BasicTensor<T>::backward() const {
  if (numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Reverse topological order via iterative post-order DFS.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward) continue;  // leaf
    if (!n->grad.empty()) n->backward(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = node_->shape;
  n->value = node_->value;
  return from_node(std::move(n));
}

template <class T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return detach();
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

#if defined(__SSE__)
namespace {
constexpr unsigned kFlushBits = _MM_FLUSH_ZERO_MASK | _MM_DENORMALS_ZERO_MASK;

void set_flush_bits(unsigned bits) {
  _mm_setcsr((_mm_getcsr() & ~kFlushBits) | bits);
#pragma omp parallel
  _mm_setcsr((_mm_getcsr() & ~kFlushBits) | bits);
}
}  // namespace

FlushDenormalsGuard::FlushDenormalsGuard() : prev_(_mm_getcsr() & kFlushBits) {
  set_flush_bits(_MM_FLUSH_ZERO_ON | _MM_DENORMALS_ZERO_ON);
}
FlushDenormalsGuard::~FlushDenormalsGuard() { set_flush_bits(prev_); }
#else
FlushDenormalsGuard::FlushDenormalsGuard() = default;
FlushDenormalsGuard::~FlushDenormalsGuard() = default;
#endif
bool grad_enabled() { return g_grad_enabled; }

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

// -- convolution ----------------------------------------------------------

std::array<std::int64_t, 3> conv_output_dims(const std::array<std::int64_t, 3>& in,
                                             const ConvGeometry& g) {
  static const char* axis[] = {"depth", "height", "width"};
  std::array<std::int64_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (g.kernel[a] < 1 || g.stride[a] < 1 || g.pad_lo[a] < 0 || g.pad_hi[a] < 0)
      throw ShapeError("conv3d: kernel and stride must be >= 1 and padding >= 0");
    const std::int64_t span = in[a] + g.pad_lo[a] + g.pad_hi[a] - g.kernel[a];
    out[a] = span < 0 ? 0 : span / g.stride[a] + 1;
    if (out[a] < 1) {
      std::ostringstream os;
      os << "conv3d: output " << axis[a] << " floor((" << in[a] << " + " << g.pad_lo[a]
         << " + " << g.pad_hi[a] << " - " << g.kernel[a] << ")/" << g.stride[a]
         << ") + 1 is not positive";
      throw ShapeError(os.str());
    }
  }
  return out;
}

std::array<std::int64_t, 3> conv_transpose_output_dims(
    const std::array<std::int64_t, 3>& in, const ConvGeometry& g) {
  static const char* axis[] = {"depth", "height", "width"};
  std::array<std::int64_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (g.kernel[a] < 1 || g.stride[a] < 1 || g.pad_lo[a] < 0 || g.pad_hi[a] < 0)
      throw ShapeError("conv3d_transpose: kernel and stride must be >= 1 and padding >= 0");
    out[a] = (in[a] - 1) * g.stride[a] - g.pad_lo[a] - g.pad_hi[a] + g.kernel[a];
    if (out[a] < 1) {
      std::ostringstream os;
      os << "conv3d_transpose: output " << axis[a] << " (" << in[a] << " - 1)*" << g.stride[a]
         << " - " << g.pad_lo[a] << " - " << g.pad_hi[a] << " + " << g.kernel[a]
         << " is not positive";
      throw ShapeError(os.str());
    }
  }
  return out;
}

namespace {

using Dims = std::array<std::int64_t, 3>;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
using StrideMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStrideMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Unfolds output positions [p0, p1) of one sample x [C, in] into
// col [C*K, p1-p0] (K = kd*kh*kw), or with Scatter the adjoint: adds col
// back onto x.
template <bool Scatter, class T>
void unfold(std::conditional_t<Scatter, T*, const T*> x, std::int64_t channels, const Dims& in,
            const Dims& out, const ConvGeometry& g, std::int64_t p0, std::int64_t p1,
            std::conditional_t<Scatter, const T*, T*> col) {
  const auto [kd, kh, kw] = g.kernel;
  const std::int64_t plane = in[1] * in[2], vol = in[0] * plane;
  const std::int64_t oplane = out[1] * out[2];
  const std::int64_t ncols = p1 - p0;
  const int sx = g.stride[2];
  for (std::int64_t c = 0; c < channels; ++c) {
    auto xc = x + c * vol;
    for (int kz = 0; kz < kd; ++kz)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          auto row = col + (((c * kd + kz) * kh + ky) * kw + kx) * ncols;
          const std::int64_t off = kx - g.pad_lo[2];
          // valid ox satisfy 0 <= ox*sx + off < in[2]
          const std::int64_t ox_lo = off >= 0 ? 0 : (-off + sx - 1) / sx;
          const std::int64_t ox_hi =
              in[2] - off <= 0 ? 0 : std::min<std::int64_t>(out[2], (in[2] - off - 1) / sx + 1);
          std::int64_t p = p0;
          while (p < p1) {
            const std::int64_t oz = p / oplane, oy = (p / out[2]) % out[1];
            const std::int64_t ox0 = p % out[2];
            const std::int64_t ox1 = std::min(out[2], ox0 + (p1 - p));
            auto r = row + (p - p0) - ox0;  // r[ox] is this segment's slot
            const std::int64_t iz = oz * g.stride[0] - g.pad_lo[0] + kz;
            const std::int64_t iy = oy * g.stride[1] - g.pad_lo[1] + ky;
            const bool inside = iz >= 0 && iz < in[0] && iy >= 0 && iy < in[1];
            const std::int64_t a = inside ? std::max(ox0, ox_lo) : ox1;
            const std::int64_t b = inside ? std::min(ox1, ox_hi) : ox1;
            if constexpr (Scatter) {
              if (a < b) {
                T* dst = xc + iz * plane + iy * in[2] + off;
                if (sx == 1)
                  for (std::int64_t ox = a; ox < b; ++ox) dst[ox] += r[ox];
                else
                  for (std::int64_t ox = a; ox < b; ++ox) dst[ox * sx] += r[ox];
              }
            } else {
              for (std::int64_t ox = ox0; ox < std::min(a, ox1); ++ox) r[ox] = T(0);
              if (a < b) {
                const T* src = xc + iz * plane + iy * in[2] + off;
                if (sx == 1)
                  std::copy(src + a, src + b, r + a);
                else
                  for (std::int64_t ox = a; ox < b; ++ox) r[ox] = src[ox * sx];
              }
              for (std::int64_t ox = std::max(b, a); ox < ox1; ++ox) r[ox] = T(0);
            }
            p += ox1 - ox0;
          }
        }
  }
}

// Output positions per tile so that one unfolded tile stays cache-sized.
std::int64_t tile_cols(std::int64_t rows, std::int64_t total) {
  const std::int64_t t = std::max<std::int64_t>(64, (std::int64_t{1} << 17) / std::max<std::int64_t>(rows, 1));
  return std::min(total, t);
}

Dims spatial(const Shape& s) { return {s[2], s[3], s[4]}; }

template <class T>
void check_conv_args(const char* op, const BasicTensor<T>& x, const BasicTensor<T>& w,
                     const BasicTensor<T>& b, const ConvGeometry& g, std::int64_t in_axis,
                     std::int64_t out_axis) {
  require_defined(op, x);
  require_defined(op, w);
  if (x.ndim() != 5) throw ShapeError(std::string(op) + ": input must be [N,C,D,H,W], got " +
                                      shape_str(x.shape()));
  if (w.ndim() != 5) throw ShapeError(std::string(op) + ": weight must be 5-d, got " +
                                      shape_str(w.shape()));
  if (w.dim(in_axis) != x.dim(1))
    throw ShapeError(std::string(op) + ": weight " + shape_str(w.shape()) +
                     " does not match input channels " + std::to_string(x.dim(1)));
  for (int a = 0; a < 3; ++a)
    if (w.dim(2 + a) != g.kernel[a])
      throw ShapeError(std::string(op) + ": weight " + shape_str(w.shape()) +
                       " disagrees with the kernel size");
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != w.dim(out_axis)))
    throw ShapeError(std::string(op) + ": bias " + shape_str(b.shape()) +
                     " does not match output channels " + std::to_string(w.dim(out_axis)));
}

template <class T>
void add_bias(T* out, const T* bias, std::int64_t n, std::int64_t c, std::int64_t count) {
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t k = 0; k < c; ++k) {
      T* o = out + (s * c + k) * count;
      const T v = bias[k];
      for (std::int64_t i = 0; i < count; ++i) o[i] += v;
    }
}

template <class T>
void bias_grad(const T* gy, T* gb, std::int64_t n, std::int64_t c, std::int64_t count) {
  for (std::int64_t k = 0; k < c; ++k) {
    double acc = 0.0;
    for (std::int64_t s = 0; s < n; ++s) {
      const T* g = gy + (s * c + k) * count;
      for (std::int64_t i = 0; i < count; ++i) acc += g[i];
    }
    gb[k] += static_cast<T>(acc);
  }
}

}  // namespace

template <class T>
BasicTensor<T> conv3d(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const BasicTensor<T>& b, const ConvGeometry& g) {
  check_conv_args("conv3d", x, w, b, g, 1, 0);
  const std::int64_t n = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  const Dims in = spatial(x.shape());
  const Dims out = conv_output_dims(in, g);
  const std::int64_t K = static_cast<std::int64_t>(g.kernel[0]) * g.kernel[1] * g.kernel[2];
  const std::int64_t ic = in[0] * in[1] * in[2], oc = out[0] * out[1] * out[2];
  const std::int64_t rows = cin * K;
  const std::int64_t tile = tile_cols(rows, oc);

  std::vector<T> y(static_cast<std::size_t>(n * cout * oc));
  std::vector<T> col(static_cast<std::size_t>(rows * tile));
  CMapMat<T> W(w.data(), cout, rows);
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t p0 = 0; p0 < oc; p0 += tile) {
      const std::int64_t m = std::min(tile, oc - p0);
      unfold<false, T>(x.data() + s * cin * ic, cin, in, out, g, p0, p0 + m, col.data());
      StrideMap<T>(y.data() + s * cout * oc + p0, cout, m, Eigen::OuterStride<>(oc)).noalias() =
          W * CMapMat<T>(col.data(), rows, m);
    }
  if (b.defined()) add_bias(y.data(), b.data(), n, cout, oc);

  std::vector<NodePtr<T>> parents{x.node(), w.node()};
  if (b.defined()) parents.push_back(b.node());
  auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  return make_result<T>(
      "conv3d", Shape{n, cout, out[0], out[1], out[2]}, std::move(y), std::move(parents),
      [=](Node<T>& self) {
        const T* gy = self.grad.data();
        std::vector<T> buf(static_cast<std::size_t>(rows * tile));
        CMapMat<T> Wm(wn->value.data(), cout, rows);
        for (std::int64_t s = 0; s < n; ++s)
          for (std::int64_t p0 = 0; p0 < oc; p0 += tile) {
            const std::int64_t m = std::min(tile, oc - p0);
            CStrideMap<T> G(gy + s * cout * oc + p0, cout, m, Eigen::OuterStride<>(oc));
            if (wn->requires_grad) {
              unfold<false, T>(xn->value.data() + s * cin * ic, cin, in, out, g, p0, p0 + m,
                               buf.data());
              MapMat<T>(wn->grad_buffer(), cout, rows).noalias() +=
                  G * CMapMat<T>(buf.data(), rows, m).transpose();
            }
            if (xn->requires_grad) {
              MapMat<T>(buf.data(), rows, m).noalias() = Wm.transpose() * G;
              unfold<true, T>(xn->grad_buffer() + s * cin * ic, cin, in, out, g, p0, p0 + m,
                              buf.data());
            }
          }
        if (bn && bn->requires_grad) bias_grad(gy, bn->grad_buffer(), n, cout, oc);
      });
}

template <class T>
BasicTensor<T> conv3d_transpose(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                const BasicTensor<T>& b, const ConvGeometry& g) {
  check_conv_args("conv3d_transpose", x, w, b, g, 0, 1);
  const std::int64_t n = x.dim(0), cin = x.dim(1), cout = w.dim(1);
  const Dims in = spatial(x.shape());
  const Dims out = conv_transpose_output_dims(in, g);
  const std::int64_t K = static_cast<std::int64_t>(g.kernel[0]) * g.kernel[1] * g.kernel[2];
  const std::int64_t ic = in[0] * in[1] * in[2], oc = out[0] * out[1] * out[2];
  const std::int64_t rows = cout * K;
  const std::int64_t tile = tile_cols(rows, ic);

  // Viewed as conv3d from the output grid (cout channels) to the input
  // grid (cin channels), this op is that conv's input gradient.
  std::vector<T> y(static_cast<std::size_t>(n * cout * oc), T(0));
  std::vector<T> col(static_cast<std::size_t>(rows * tile));
  CMapMat<T> W(w.data(), cin, rows);
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t p0 = 0; p0 < ic; p0 += tile) {
      const std::int64_t m = std::min(tile, ic - p0);
      MapMat<T>(col.data(), rows, m).noalias() =
          W.transpose() *
          CStrideMap<T>(x.data() + s * cin * ic + p0, cin, m, Eigen::OuterStride<>(ic));
      unfold<true, T>(y.data() + s * cout * oc, cout, out, in, g, p0, p0 + m, col.data());
    }
  if (b.defined()) add_bias(y.data(), b.data(), n, cout, oc);

  std::vector<NodePtr<T>> parents{x.node(), w.node()};
  if (b.defined()) parents.push_back(b.node());
  auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  return make_result<T>(
      "conv3d_transpose", Shape{n, cout, out[0], out[1], out[2]}, std::move(y),
      std::move(parents), [=](Node<T>& self) {
        const T* gy = self.grad.data();
        std::vector<T> buf(static_cast<std::size_t>(rows * tile));
        CMapMat<T> Wm(wn->value.data(), cin, rows);
        for (std::int64_t s = 0; s < n; ++s)
          for (std::int64_t p0 = 0; p0 < ic; p0 += tile) {
            const std::int64_t m = std::min(tile, ic - p0);
            unfold<false, T>(gy + s * cout * oc, cout, out, in, g, p0, p0 + m, buf.data());
            CMapMat<T> C(buf.data(), rows, m);
            if (xn->requires_grad)
              StrideMap<T>(xn->grad_buffer() + s * cin * ic + p0, cin, m,
                           Eigen::OuterStride<>(ic))
                  .noalias() += Wm * C;
            if (wn->requires_grad)
              MapMat<T>(wn->grad_buffer(), cin, rows).noalias() +=
                  CStrideMap<T>(xn->value.data() + s * cin * ic + p0, cin, m,
                                Eigen::OuterStride<>(ic)) *
                  C.transpose();
          }
        if (bn && bn->requires_grad) bias_grad(gy, bn->grad_buffer(), n, cout, oc);
      });
}

// -- pointwise ------------------------------------------------------------

template <class T>
BasicTensor<T> celu_concat(const BasicTensor<T>& x) {
  require_defined("celu_concat", x);
  if (x.ndim() < 2) throw ShapeError("celu_concat: needs [N,C,...], got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  Shape shape = x.shape();
  shape[1] = 2 * c;
  std::vector<T> y(static_cast<std::size_t>(2 * x.numel()));
  const T* xv = x.data();
  for (std::int64_t s = 0; s < n; ++s) {
    const T* xs = xv + s * c * inner;
    T* pos = y.data() + s * 2 * c * inner;
    T* neg = pos + c * inner;
    for (std::int64_t i = 0; i < c * inner; ++i) {
      const T t = xs[i];
      const T e = std::expm1(-std::abs(t));  // ELU of the non-positive side
      pos[i] = t > 0 ? t : e;
      neg[i] = t < 0 ? -t : e;
    }
  }
  auto xn = x.node();
  return make_result<T>("celu_concat", std::move(shape), std::move(y), {xn},
                        [=](Node<T>& self) {
                          T* gx = xn->grad_buffer();
                          const T* gy = self.grad.data();
                          const T* xv = xn->value.data();
                          for (std::int64_t s = 0; s < n; ++s) {
                            const T* gp = gy + s * 2 * c * inner;
                            const T* gn = gp + c * inner;
                            const T* xs = xv + s * c * inner;
                            T* g = gx + s * c * inner;
                            for (std::int64_t i = 0; i < c * inner; ++i) {
                              const T t = xs[i];
                              const T e = std::exp(-std::abs(t));
                              const T dp = t > 0 ? T(1) : e;
                              const T dn = t < 0 ? T(1) : e;
                              g[i] += gp[i] * dp - gn[i] * dn;
                            }
                          }
                        });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  require_defined("sigmoid", x);
  std::vector<T> y(static_cast<std::size_t>(x.numel()));
  const T* xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T t = xv[i];
    if (t >= 0) {
      y[i] = T(1) / (T(1) + std::exp(-t));
    } else {
      const T e = std::exp(t);
      y[i] = e / (T(1) + e);
    }
  }
  auto xn = x.node();
  return make_result<T>("sigmoid", x.shape(), std::move(y), {xn}, [=](Node<T>& self) {
    T* gx = xn->grad_buffer();
    const T* gy = self.grad.data();
    const T* yv = self.value.data();
    for (std::size_t i = 0; i < self.value.size(); ++i) gx[i] += gy[i] * yv[i] * (T(1) - yv[i]);
  });
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_defined("add", a);
  require_defined("add", b);
  require_same_shape("add", a, b);
  std::vector<T> y(a.values().begin(), a.values().end());
  const T* bv = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>("add", a.shape(), std::move(y), {an, bn}, [=](Node<T>& self) {
    const T* gy = self.grad.data();
    const std::size_t m = self.grad.size();
    if (an->requires_grad) {
      T* g = an->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) g[i] += gy[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) g[i] += gy[i];
    }
  });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_defined("sub", a);
  require_defined("sub", b);
  require_same_shape("sub", a, b);
  std::vector<T> y(a.values().begin(), a.values().end());
  const T* bv = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>("sub", a.shape(), std::move(y), {an, bn}, [=](Node<T>& self) {
    const T* gy = self.grad.data();
    const std::size_t m = self.grad.size();
    if (an->requires_grad) {
      T* g = an->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) g[i] += gy[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) g[i] -= gy[i];
    }
  });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_defined("mul", a);
  require_defined("mul", b);
  require_same_shape("mul", a, b);
  std::vector<T> y(a.values().begin(), a.values().end());
  const T* bv = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>("mul", a.shape(), std::move(y), {an, bn}, [=](Node<T>& self) {
    const T* gy = self.grad.data();
    const std::size_t m = self.grad.size();
    if (an->requires_grad) {
      T* g = an->grad_buffer();
      const T* o = bn->value.data();
      for (std::size_t i = 0; i < m; ++i) g[i] += gy[i] * o[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_buffer();
      const T* o = an->value.data();
      for (std::size_t i = 0; i < m; ++i) g[i] += gy[i] * o[i];
    }
  });
}

template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_defined("concat_channels", a);
  require_defined("concat_channels", b);
  bool ok = a.ndim() >= 2 && a.ndim() == b.ndim();
  for (std::size_t i = 0; ok && i < a.ndim(); ++i) ok = i == 1 || a.dim(i) == b.dim(i);
  if (!ok)
    throw ShapeError("concat_channels: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ outside the channel axis");
  const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::int64_t inner = a.numel() / (n * ca);
  Shape shape = a.shape();
  shape[1] = ca + cb;
  std::vector<T> y(static_cast<std::size_t>(a.numel() + b.numel()));
  for (std::int64_t s = 0; s < n; ++s) {
    T* dst = y.data() + s * (ca + cb) * inner;
    std::copy_n(a.data() + s * ca * inner, ca * inner, dst);
    std::copy_n(b.data() + s * cb * inner, cb * inner, dst + ca * inner);
  }
  auto an = a.node(), bn = b.node();
  return make_result<T>("concat_channels", std::move(shape), std::move(y), {an, bn},
                        [=](Node<T>& self) {
                          const T* gy = self.grad.data();
                          for (std::int64_t s = 0; s < n; ++s) {
                            const T* src = gy + s * (ca + cb) * inner;
                            if (an->requires_grad) {
                              T* g = an->grad_buffer() + s * ca * inner;
                              for (std::int64_t i = 0; i < ca * inner; ++i) g[i] += src[i];
                            }
                            if (bn->requires_grad) {
                              T* g = bn->grad_buffer() + s * cb * inner;
                              const T* sb = src + ca * inner;
                              for (std::int64_t i = 0; i < cb * inner; ++i) g[i] += sb[i];
                            }
                          }
                        });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  require_defined("sum", x);
  double acc = 0.0;
  for (T v : x.values()) acc += v;
  auto xn = x.node();
  return make_result<T>("sum", Shape{1}, {static_cast<T>(acc)}, {xn}, [=](Node<T>& self) {
    T* g = xn->grad_buffer();
    const T gy = self.grad[0];
    for (std::size_t i = 0; i < xn->value.size(); ++i) g[i] += gy;
  });
}

template <class T>
BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  require_defined("mse_loss", pred);
  require_defined("mse_loss", target);
  require_same_shape("mse_loss", pred, target);
  const T* p = pred.data();
  const T* t = target.data();
  const std::size_t m = static_cast<std::size_t>(pred.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    acc += d * d;
  }
  auto pn = pred.node(), tn = target.node();
  return make_result<T>("mse_loss", Shape{1}, {static_cast<T>(acc / m)}, {pn},
                        [=](Node<T>& self) {
                          T* g = pn->grad_buffer();
                          const T k = self.grad[0] * T(2) / static_cast<T>(m);
                          const T* p = pn->value.data();
                          const T* t = tn->value.data();
                          for (std::size_t i = 0; i < m; ++i) g[i] += k * (p[i] - t[i]);
                        });
}

template <class T>
BasicTensor<T> bce_loss(const BasicTensor<T>& prob, const BasicTensor<T>& target) {
  require_defined("bce_loss", prob);
  require_defined("bce_loss", target);
  require_same_shape("bce_loss", prob, target);
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  const T* p = prob.data();
  const T* t = target.data();
  const std::size_t m = static_cast<std::size_t>(prob.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), lo, hi);
    acc -= t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q);
  }
  auto pn = prob.node(), tn = target.node();
  return make_result<T>("bce_loss", Shape{1}, {static_cast<T>(acc / m)}, {pn},
                        [=](Node<T>& self) {
                          T* g = pn->grad_buffer();
                          const double k = static_cast<double>(self.grad[0]) / m;
                          const T* p = pn->value.data();
                          const T* t = tn->value.data();
                          for (std::size_t i = 0; i < m; ++i) {
                            const double q = p[i];
                            if (q < lo || q > hi) continue;
                            g[i] += static_cast<T>(k * (q - t[i]) / (q * (1.0 - q)));
                          }
                        });
}

// -- gradient check -------------------------------------------------------

GradCheckResult check_gradients(
    const std::function<Tensor64(const std::vector<Tensor64>&)>& f,
    std::vector<Tensor64> inputs, std::uint64_t seed, double eps) {
  for (auto& t : inputs) {
    t = t.clone();
    t.set_requires_grad(true);
  }
  std::mt19937_64 rng(seed);
  Tensor64 probe;
  {
    NoGradGuard ng;
    probe = f(inputs);
  }
  // |r| in [0.5, 1]: a near-zero weight would shrink an analytic entry
  // toward the finite-difference roundoff floor
  Tensor64 r = Tensor64::uniform(probe.shape(), 0.5, 1.0, rng);
  for (auto& v : r.values()) v = uniform01(rng) < 0.5 ? -v : v;
  auto objective = [&](const std::vector<Tensor64>& in) { return sum(mul(f(in), r)); };

  const Tensor64 obj = objective(inputs);
  obj.backward();
  // The difference quotient carries a few ulps of the objective over 2 eps;
  // a derivative must be 1e4 times that before a relative error of 1e-4
  // means anything. Smaller ones are compared absolutely.
  const double noise = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(obj.item())) / (2.0 * eps);
  const double floor = std::max(1e-8, noise / 1e-4);

  GradCheckResult res;
  NoGradGuard ng;
  for (auto& t : inputs) {
    const std::vector<double> analytic = t.grad();
    auto v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double up = objective(inputs).item();
      v[i] = orig - eps;
      const double down = objective(inputs).item();
      v[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double err = std::abs(a) < floor
                             ? std::abs(a - numeric)
                             : std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric));
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.checked;
    }
  }
  return res;
}

// -- instantiations -------------------------------------------------------

#define URBANFLOW_INSTANTIATE(T)                                                              \
  template struct detail::Node<T>;                                                            \
  template class BasicTensor<T>;                                                              \
  template BasicTensor<T> conv3d(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                 const BasicTensor<T>&, const ConvGeometry&);                 \
  template BasicTensor<T> conv3d_transpose(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                           const BasicTensor<T>&, const ConvGeometry&);       \
  template BasicTensor<T> celu_concat(const BasicTensor<T>&);                                 \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                     \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                         \
  template BasicTensor<T> mse_loss(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> bce_loss(const BasicTensor<T>&, const BasicTensor<T>&);

URBANFLOW_INSTANTIATE(float)
URBANFLOW_INSTANTIATE(double)

}  // namespace urbanflow
