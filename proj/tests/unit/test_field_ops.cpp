#include <cmath>
#include <random>

#include "doctest.h"
#include "urbanflow/errors.hpp"
#include "urbanflow/field_ops.hpp"

using namespace urbanflow;

namespace {

VoxelGrid uniform_field(Dims3 d, float ux, float uy = 0, float uz = 0) {
  VoxelGrid g(d, 3);
  for (auto& v : g.channel(0)) v = ux;
  for (auto& v : g.channel(1)) v = uy;
  for (auto& v : g.channel(2)) v = uz;
  return g;
}

}  // namespace

TEST_CASE("magnitude") {
  auto g = uniform_field({2, 2, 2}, 3, 4, 0);
  const auto mg = magnitude(g);
  for (float v : mg.data()) CHECK(v == 5.0f);
  const auto mz = magnitude(VoxelGrid({3, 2, 1}, 3));
  for (float v : mz.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(magnitude(VoxelGrid({2, 2, 2}, 1)), ChannelError);

  std::mt19937_64 rng(1);
  VoxelGrid r({5, 4, 3}, 3);
  for (auto& v : r.data()) v = static_cast<float>(static_cast<int>(rng() % 2001) - 1000) / 100.0f;
  auto m = magnitude(r);
  for (std::int64_t z = 0; z < 3; ++z)
    for (std::int64_t y = 0; y < 4; ++y)
      for (std::int64_t x = 0; x < 5; ++x) {
        const double a = r.at(x, y, z, 0), b = r.at(x, y, z, 1), c = r.at(x, y, z, 2);
        const double want = std::hypot(a, b, c);
        CHECK(std::abs(m.at(x, y, z) - want) < 1e-6 * std::max(1.0, want));
        CHECK(m.at(x, y, z) >= 0.0f);
        CHECK((m.at(x, y, z) == 0.0f) == (a == 0 && b == 0 && c == 0));
      }
}

TEST_CASE("threshold_low_wind") {
  const Dims3 d{4, 2, 2};
  VoxelGrid empty(d, 1);
  const auto fast = threshold_low_wind(magnitude(uniform_field(d, 5)), 1.0, empty);
  for (float v : fast.data()) CHECK(v == 0.0f);
  const auto slow = threshold_low_wind(magnitude(uniform_field(d, 0.5f)), 1.0, empty);
  for (float v : slow.data()) CHECK(v == 1.0f);

  VoxelGrid mag({2, 1, 1}, 1, std::vector<float>{0.2f, 5.0f});
  auto m = threshold_low_wind(mag, 1.0, VoxelGrid({2, 1, 1}, 1));
  CHECK(m.data()[0] == 1.0f);
  CHECK(m.data()[1] == 0.0f);

  // buildings are never low-wind targets
  VoxelGrid occ({2, 1, 1}, 1, std::vector<float>{1.0f, 0.0f});
  CHECK(threshold_low_wind(mag, 1.0, occ).data()[0] == 0.0f);

  CHECK_THROWS_AS(threshold_low_wind(mag, 0.0, occ), ValidationError);
  CHECK_THROWS_AS(threshold_low_wind(mag, 1.0, VoxelGrid({3, 1, 1}, 1)), ShapeError);
}

TEST_CASE("threshold is monotone in the cutoff") {
  std::mt19937_64 rng(2);
  VoxelGrid mag({6, 5, 4}, 1);
  for (auto& v : mag.data()) v = static_cast<float>(rng() % 1000) / 100.0f;
  VoxelGrid occ(mag.dims(), 1);
  for (auto& v : occ.data()) v = rng() % 7 == 0 ? 1.0f : 0.0f;
  auto prev = threshold_low_wind(mag, 0.5, occ);
  for (double c : {1.0, 2.0, 4.0, 8.0, 20.0}) {
    auto next = threshold_low_wind(mag, c, occ);
    for (std::size_t i = 0; i < next.size(); ++i) CHECK(next.data()[i] >= prev.data()[i]);
    prev = next;
  }
}

TEST_CASE("edit_mask") {
  const Dims3 d{4, 3, 2};
  VoxelGrid m(d, 1);
  auto all = edit_mask(m, MaskOp::Paint, {{0, 0, 0}, d});
  for (float v : all.data()) CHECK(v == 1.0f);

  const VoxelBox box{{1, 0, 0}, {3, 2, 1}};
  auto painted = edit_mask(m, MaskOp::Paint, box);
  CHECK(edit_mask(painted, MaskOp::Erase, box) == m);
  CHECK(edit_mask(painted, MaskOp::Paint, box) == painted);  // idempotent

  const VoxelBox other{{0, 2, 1}, {2, 3, 2}};
  CHECK(edit_mask(edit_mask(m, MaskOp::Paint, box), MaskOp::Paint, other) ==
        edit_mask(edit_mask(m, MaskOp::Paint, other), MaskOp::Paint, box));

  CHECK_THROWS_AS(edit_mask(m, MaskOp::Paint, {{0, 0, 0}, {5, 1, 1}}), ValidationError);
  CHECK_THROWS_AS(edit_mask(m, MaskOp::Paint, {{-1, 0, 0}, {1, 1, 1}}), ValidationError);
  CHECK_THROWS_AS(mask_op_from_string("smudge"), ValidationError);
}

TEST_CASE("mask_to_target_field") {
  const Dims3 d{3, 2, 2};
  auto zero = mask_to_target_field(VoxelGrid(d, 1), 5.0);
  for (float v : zero.channel(0)) CHECK(v == 5.0f);
  for (float v : zero.channel(1)) CHECK(v == 0.0f);
  auto ones = mask_to_target_field(edit_mask(VoxelGrid(d, 1), MaskOp::Paint, {{0, 0, 0}, d}), 5.0);
  for (float v : ones.data()) CHECK(v == 0.0f);

  // round trip through the threshold recovers the mask
  VoxelGrid mask = edit_mask(VoxelGrid(d, 1), MaskOp::Paint, {{1, 0, 0}, {2, 2, 2}});
  auto back = threshold_low_wind(magnitude(mask_to_target_field(mask, 5.0)), 1.0, VoxelGrid(d, 1));
  CHECK(back == mask);

  VoxelGrid bad(d, 1);
  bad.data()[0] = 0.5f;
  CHECK_THROWS_AS(mask_to_target_field(bad, 5.0), ValidationError);
}
