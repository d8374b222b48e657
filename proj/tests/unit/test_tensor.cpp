#include <cmath>
#include <map>
#include <random>

#include "../common/gradcheck_cases.hpp"
#include "doctest.h"
#include "urbanflow/errors.hpp"
#include "urbanflow/tensor.hpp"

using namespace urbanflow;

namespace {

// Direct 7-nested-loop cross-correlation.
template <class T>
std::vector<double> conv_reference(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                   const BasicTensor<T>& b, const ConvGeometry& g) {
  const auto n = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  const std::array<std::int64_t, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  const auto out = conv_output_dims(in, g);
  std::vector<double> y;
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t o = 0; o < cout; ++o)
      for (std::int64_t z = 0; z < out[0]; ++z)
        for (std::int64_t yy = 0; yy < out[1]; ++yy)
          for (std::int64_t xx = 0; xx < out[2]; ++xx) {
            double acc = b.values()[o];
            for (std::int64_t c = 0; c < cin; ++c)
              for (int kz = 0; kz < g.kernel[0]; ++kz)
                for (int ky = 0; ky < g.kernel[1]; ++ky)
                  for (int kx = 0; kx < g.kernel[2]; ++kx) {
                    const auto iz = z * g.stride[0] - g.pad_lo[0] + kz;
                    const auto iy = yy * g.stride[1] - g.pad_lo[1] + ky;
                    const auto ix = xx * g.stride[2] - g.pad_lo[2] + kx;
                    if (iz < 0 || iz >= in[0] || iy < 0 || iy >= in[1] || ix < 0 || ix >= in[2])
                      continue;
                    acc += double(x.values()[(((s * cin + c) * in[0] + iz) * in[1] + iy) * in[2] + ix]) *
                           w.values()[(((o * cin + c) * g.kernel[0] + kz) * g.kernel[1] + ky) *
                                          g.kernel[2] + kx];
                  }
            y.push_back(acc);
          }
  return y;
}

}  // namespace

TEST_CASE("conv3d output shapes") {
  std::mt19937_64 rng(1);
  Tensor x = Tensor::uniform({1, 1, 8, 8, 8}, -1, 1, rng);
  Tensor w = Tensor::uniform({5, 1, 4, 4, 4}, -1, 1, rng);
  auto y = conv3d(x, w, Tensor(), ConvGeometry::cube(4, 2, 1));
  CHECK(y.shape() == Shape{1, 5, 4, 4, 4});

  Tensor u = Tensor::uniform({1, 5, 4, 4, 4}, -1, 1, rng);
  Tensor wt = Tensor::uniform({5, 2, 4, 4, 4}, -1, 1, rng);
  CHECK(conv3d_transpose(u, wt, Tensor(), ConvGeometry::cube(4, 2, 1)).shape() ==
        Shape{1, 2, 8, 8, 8});
}

TEST_CASE("conv3d with a unit 1x1x1 kernel is the identity") {
  std::mt19937_64 rng(2);
  Tensor x = Tensor::uniform({2, 1, 3, 4, 5}, -1, 1, rng);
  auto y = conv3d(x, Tensor({1, 1, 1, 1, 1}, 1.0f), Tensor({1}, 0.0f), ConvGeometry::cube(1, 1, 0));
  CHECK(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE_TEMPLATE("conv3d matches the brute-force loop", T, float, double) {
  // f32 carries ~1e-7 relative rounding per tap, so its bound is looser
  const double tol = sizeof(T) == 8 ? 1e-6 : 1e-5;
  std::mt19937_64 rng(3);
  auto x = BasicTensor<T>::uniform({1, 2, 5, 5, 5}, -1, 1, rng);
  for (auto g : {ConvGeometry::cube(3, 1, 1), ConvGeometry::cube(4, 2, 1),
                 ConvGeometry{{3, 1, 2}, {1, 1, 2}, {1, 0, 0}, {1, 0, 0}},
                 ConvGeometry{{4, 2, 1}, {1, 2, 1}, {1, 0, 2}, {2, 1, 0}}}) {
    auto w = BasicTensor<T>::uniform({3, 2, g.kernel[0], g.kernel[1], g.kernel[2]}, -1, 1, rng);
    auto b = BasicTensor<T>::uniform({3}, -1, 1, rng);
    auto y = conv3d(x, w, b, g);
    auto ref = conv_reference(x, w, b, g);
    REQUIRE(static_cast<std::size_t>(y.numel()) == ref.size());
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, std::abs(y.values()[i] - ref[i]));
    CHECK(worst < tol);
  }
}

TEST_CASE("conv3d_transpose with a delta kernel and stride 1 is the identity") {
  std::mt19937_64 rng(4);
  Tensor x = Tensor::uniform({1, 2, 3, 3, 4}, -1, 1, rng);
  Tensor w({2, 2, 3, 3, 3}, 0.0f);
  for (int c = 0; c < 2; ++c) w.values()[((c * 2 + c) * 27) + 13] = 1.0f;  // centre tap
  auto y = conv3d_transpose(x, w, Tensor(), ConvGeometry::cube(3, 1, 1));
  CHECK(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv shape errors spell out the arithmetic") {
  Tensor x({1, 1, 2, 2, 2});
  Tensor w({1, 1, 4, 4, 4});
  try {
    conv3d(x, w, Tensor(), ConvGeometry::cube(4, 1, 0));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("floor((2 + 0 + 0 - 4)/1) + 1") != std::string::npos);
  }
  CHECK_THROWS_AS(conv3d(x, Tensor({1, 2, 1, 1, 1}), Tensor(), ConvGeometry{}), ShapeError);
  CHECK_THROWS_AS(conv3d(x, Tensor({1, 1, 1, 1, 1}), Tensor({2}), ConvGeometry{}), ShapeError);
  CHECK_THROWS_AS(conv_transpose_output_dims({1, 1, 1}, ConvGeometry::cube(1, 1, 1)), ShapeError);
}

TEST_CASE("adjoint identity between conv3d and conv3d_transpose") {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 25; ++k) CHECK(testing::adjoint_gap(rng) < 1e-5);
}

TEST_CASE("celu_concat closed forms") {
  Tensor x({1, 2, 1}, std::vector<float>{0.0f, 1.0f});
  auto y = celu_concat(x);
  CHECK(y.shape() == Shape{1, 4, 1});
  CHECK(y.values()[0] == 0.0f);
  CHECK(y.values()[1] == 1.0f);
  CHECK(y.values()[2] == 0.0f);
  CHECK(y.values()[3] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-6));
  std::mt19937_64 rng(6);
  auto r = celu_concat(Tensor::uniform({2, 3, 4, 4, 4}, -10, 10, rng));
  for (float v : r.values()) CHECK(v > -1.0f);
}

TEST_CASE("sigmoid saturates without NaN") {
  Tensor x({3}, std::vector<float>{0.0f, -1000.0f, 1000.0f});
  auto y = sigmoid(x);
  CHECK(y.values()[0] == 0.5f);
  CHECK(y.values()[1] >= 0.0f);
  CHECK(y.values()[1] < 1e-30f);
  CHECK(y.values()[2] == 1.0f);
}

TEST_CASE("mse_loss values and gradient") {
  Tensor a({2}, std::vector<float>{0, 0}, true);
  Tensor b({2}, std::vector<float>{1, 1});
  auto l = mse_loss(a, b);
  CHECK(l.item() == 1.0f);
  CHECK(mse_loss(b, b).item() == 0.0f);
  l.backward();
  // 2 (pred - target) / numel
  CHECK(a.grad()[0] == -1.0f);
  CHECK(a.grad()[1] == -1.0f);
  CHECK_THROWS_AS(mse_loss(a, Tensor({3})), ShapeError);
}

TEST_CASE("backward basics") {
  Tensor x({2, 3}, 0.5f, true);
  Tensor unused({4}, 1.0f, true);
  sum(x).backward();
  for (float g : x.grad()) CHECK(g == 1.0f);
  for (float g : unused.grad()) CHECK(g == 0.0f);
  CHECK_THROWS_AS(add(x, x).backward(), ShapeError);

  // grads accumulate until cleared
  sum(x).backward();
  CHECK(x.grad()[0] == 2.0f);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0f);
}

TEST_CASE("a node reached along two paths is visited once") {
  Tensor x({3}, 2.0f, true);
  auto y = mul(x, x);           // x^2
  auto z = add(y, y);           // 2x^2
  sum(z).backward();            // d/dx = 4x
  for (float g : x.grad()) CHECK(g == 8.0f);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x({3}, 1.0f, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = add(x, x);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(grad_enabled());
}

TEST_CASE("debug checks flag non-finite outputs from finite inputs") {
  set_debug_checks(true);
  Tensor big({2}, 3.0e38f);
  CHECK_THROWS_AS(add(big, big), std::domain_error);
  Tensor nan({1}, std::nanf(""));
  CHECK_NOTHROW(add(nan, nan));
  set_debug_checks(false);
}

TEST_CASE("central finite differences on random shapes") {
  auto cases = testing::run_gradcheck_suite(20, 7);
  std::map<std::string, int> per_op;
  for (const auto& c : cases) {
    INFO(c.op << " " << c.shape << " err " << c.max_rel_error);
    CHECK(c.max_rel_error < 1e-4);
    CHECK(c.checked > 0);
    ++per_op[c.op];
  }
  CHECK(per_op.size() == 12);
  for (auto& [op, n] : per_op) CHECK(n >= 20);
}
