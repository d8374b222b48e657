#include <cmath>

#include "doctest.h"
#include "urbanflow/errors.hpp"
#include "urbanflow/optim.hpp"

using namespace urbanflow;

TEST_CASE("first Adam step moves each parameter by about lr") {
  std::vector<Tensor> p{Tensor({3}, std::vector<float>{1, 2, 3}, true)};
  sum(mul(p[0], Tensor({3}, std::vector<float>{5, -7, 0.5f}))).backward();
  AdamState st;
  adam_step(p, st, {.lr = 0.01});
  CHECK(p[0].values()[0] == doctest::Approx(0.99).epsilon(1e-5));
  CHECK(p[0].values()[1] == doctest::Approx(2.01).epsilon(1e-5));
  CHECK(p[0].values()[2] == doctest::Approx(2.99).epsilon(1e-5));
  CHECK(st.step == 1);
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  std::vector<Tensor> p{Tensor({4}, 1.5f, true)};
  AdamState st;
  for (int i = 0; i < 50; ++i) adam_step(p, st, {});
  for (float v : p[0].values()) CHECK(v == 1.5f);
}

TEST_CASE("Adam minimises (w-3)^2") {
  std::vector<Tensor> p{Tensor({1}, 0.0f, true)};
  AdamState st;
  const Tensor three({1}, 3.0f);
  for (int i = 0; i < 200; ++i) {
    p[0].zero_grad();
    mse_loss(p[0], three).backward();
    adam_step(p, st, {.lr = 0.1});
  }
  CHECK(std::abs(p[0].item() - 3.0f) < 0.05f);
}

TEST_CASE("Adam rejects mismatched state") {
  std::vector<Tensor> p{Tensor({2}, 0.0f, true)};
  AdamState st;
  adam_step(p, st, {});
  std::vector<Tensor> q{Tensor({3}, 0.0f, true)};
  CHECK_THROWS_AS(adam_step(q, st, {}), ValidationError);
  std::vector<float> a(2), g(3), m(2), v(2);
  CHECK_THROWS_AS(adam_update(a, g, m, v, 1, {}), ValidationError);
  CHECK_THROWS_AS(adam_step(p, st, {.lr = -1}), ValidationError);
}
