#pragma once

// Random-shape finite-difference cases shared by the unit tests and the
// acceptance binary.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "urbanflow/scene.hpp"
#include "urbanflow/tensor.hpp"

namespace urbanflow::testing {

struct GradCase {
  std::string op;
  std::string shape;
  double max_rel_error;
  std::int64_t checked;
};

inline int pick(std::mt19937_64& rng, int lo, int hi) {
  return static_cast<int>(uniform_int(rng, lo, hi));
}

inline Tensor64 rand64(const Shape& s, std::mt19937_64& rng) {
  return Tensor64::uniform(s, -1.0, 1.0, rng);
}

// Input/weight/geometry for a random small convolution whose transposed
// counterpart maps back onto the same input dims.
struct ConvCase {
  Shape x, w;
  std::int64_t cout;
  ConvGeometry g;
};

inline ConvCase random_conv_case(std::mt19937_64& rng) {
  ConvCase c;
  const std::int64_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3);
  c.cout = pick(rng, 1, 3);
  std::array<std::int64_t, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    c.g.kernel[a] = pick(rng, 1, 4);
    c.g.stride[a] = pick(rng, 1, 2);
    c.g.pad_lo[a] = pick(rng, 0, std::min(2, c.g.kernel[a] - 1));
    c.g.pad_hi[a] = pick(rng, 0, std::min(2, c.g.kernel[a] - 1));
    const int pads = c.g.pad_lo[a] + c.g.pad_hi[a];
    // smallest D >= 1 with (D + pads - k) divisible by s and >= 0
    std::int64_t d = std::max<std::int64_t>(1, c.g.kernel[a] - pads) + pick(rng, 0, 2);
    while ((d + pads - c.g.kernel[a]) % c.g.stride[a] != 0) ++d;
    dims[a] = d;
  }
  c.x = {n, cin, dims[0], dims[1], dims[2]};
  c.w = {c.cout, cin, c.g.kernel[0], c.g.kernel[1], c.g.kernel[2]};
  return c;
}

inline Shape random_small_shape(std::mt19937_64& rng) {
  return {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 3), pick(rng, 1, 3)};
}

/// Runs `count` random-shape checks for every differentiable op.
inline std::vector<GradCase> run_gradcheck_suite(int count, std::uint64_t seed) {
  std::vector<GradCase> out;
  std::mt19937_64 rng(seed);
  auto record = [&](const std::string& op, const Shape& s, const GradCheckResult& r) {
    out.push_back({op, shape_str(s), r.max_rel_error, r.checked});
  };
  for (int k = 0; k < count; ++k) {
    const std::uint64_t s = seed * 1000 + static_cast<std::uint64_t>(k);
    {
      auto c = random_conv_case(rng);
      const Shape bshape{c.cout};
      auto r = check_gradients(
          [g = c.g](const std::vector<Tensor64>& in) { return conv3d(in[0], in[1], in[2], g); },
          {rand64(c.x, rng), rand64(c.w, rng), rand64(bshape, rng)}, s);
      record("conv3d", c.x, r);
    }
    {
      auto c = random_conv_case(rng);
      // transposed conv consumes the conv's output grid
      const auto od = conv_output_dims({c.x[2], c.x[3], c.x[4]}, c.g);
      const Shape y{c.x[0], c.cout, od[0], od[1], od[2]};
      const Shape bshape{c.x[1]};
      auto r = check_gradients(
          [g = c.g](const std::vector<Tensor64>& in) {
            return conv3d_transpose(in[0], in[1], in[2], g);
          },
          {rand64(y, rng), rand64(c.w, rng), rand64(bshape, rng)}, s);
      record("conv3d_transpose", y, r);
    }
    const Shape sh = random_small_shape(rng);
    record("celu_concat", sh,
           check_gradients([](const std::vector<Tensor64>& in) { return celu_concat(in[0]); },
                           {rand64(sh, rng)}, s));
    {
      Tensor64 x = Tensor64::uniform(sh, -6.0, 6.0, rng);
      record("sigmoid", sh,
             check_gradients([](const std::vector<Tensor64>& in) { return sigmoid(in[0]); },
                             {x}, s));
    }
    record("add", sh,
           check_gradients(
               [](const std::vector<Tensor64>& in) { return add(in[0], in[1]); },
               {rand64(sh, rng), rand64(sh, rng)}, s));
    record("sub", sh,
           check_gradients(
               [](const std::vector<Tensor64>& in) { return sub(in[0], in[1]); },
               {rand64(sh, rng), rand64(sh, rng)}, s));
    record("mul", sh,
           check_gradients(
               [](const std::vector<Tensor64>& in) { return mul(in[0], in[1]); },
               {rand64(sh, rng), rand64(sh, rng)}, s));
    {
      Shape other = sh;
      other[1] = pick(rng, 1, 3);
      record("concat_channels", sh,
             check_gradients(
                 [](const std::vector<Tensor64>& in) { return concat_channels(in[0], in[1]); },
                 {rand64(sh, rng), rand64(other, rng)}, s));
    }
    record("sum", sh,
           check_gradients([](const std::vector<Tensor64>& in) { return sum(in[0]); },
                           {rand64(sh, rng)}, s));
    {
      const Tensor64 target = rand64(sh, rng);
      record("mse_loss", sh,
             check_gradients(
                 [target](const std::vector<Tensor64>& in) { return mse_loss(in[0], target); },
                 {rand64(sh, rng)}, s));
    }
    {
      Tensor64 target(sh);
      for (auto& v : target.values()) v = uniform01(rng) < 0.5 ? 0.0 : 1.0;
      record("bce_loss", sh,
             check_gradients(
                 [target](const std::vector<Tensor64>& in) { return bce_loss(in[0], target); },
                 {Tensor64::uniform(sh, 0.05, 0.95, rng)}, s));
    }
    {
      // composite: mse(conv3d(x, w), t), the shape the trainer differentiates
      auto c = random_conv_case(rng);
      const auto od = conv_output_dims({c.x[2], c.x[3], c.x[4]}, c.g);
      const Tensor64 target = rand64({c.x[0], c.cout, od[0], od[1], od[2]}, rng);
      auto r = check_gradients(
          [g = c.g, target](const std::vector<Tensor64>& in) {
            return mse_loss(conv3d(in[0], in[1], Tensor64(), g), target);
          },
          {rand64(c.x, rng), rand64(c.w, rng)}, s);
      record("mse(conv3d)", c.x, r);
    }
  }
  return out;
}

/// ⟨conv3d(x, w), y⟩ vs ⟨x, conv3d_transpose(y, w)⟩ relative gap.
inline double adjoint_gap(std::mt19937_64& rng) {
  auto c = random_conv_case(rng);
  const auto od = conv_output_dims({c.x[2], c.x[3], c.x[4]}, c.g);
  const Tensor64 x = rand64(c.x, rng), w = rand64(c.w, rng);
  const Tensor64 y = rand64({c.x[0], c.cout, od[0], od[1], od[2]}, rng);
  const double lhs = sum(mul(conv3d(x, w, Tensor64(), c.g), y)).item();
  const double rhs = sum(mul(x, conv3d_transpose(y, w, Tensor64(), c.g))).item();
  return std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs));
}

}  // namespace urbanflow::testing
