#include <random>

#include "doctest.h"
#include "urbanflow/checkpoint.hpp"
#include "urbanflow/errors.hpp"
#include "urbanflow/unet.hpp"

using namespace urbanflow;

namespace {

ModelConfig small(Direction d, int levels = 2, int base = 4) {
  auto c = ModelConfig::for_direction(d);
  c.levels = levels;
  c.base_channels = base;
  return c;
}

VoxelGrid random_occupancy(Dims3 dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  VoxelGrid g(dims, 1);
  for (auto& v : g.data()) v = (rng() % 5 == 0) ? 1.0f : 0.0f;
  return g;
}

}  // namespace

TEST_CASE("halving counts and padding") {
  CHECK(halving_counts({64, 32, 16}, 4) == std::array<int, 3>{4, 4, 4});
  // paper scale: z stops after 6 halvings (64 -> 1), x after 8 (256 -> 1)
  CHECK(halving_counts({256, 128, 64}, 8) == std::array<int, 3>{8, 7, 6});
  CHECK(dims_supported({256, 128, 64}, 8));
  CHECK(dims_supported({64, 32, 16}, 4));
  CHECK(dims_supported({128, 64, 32}, 4));
  CHECK_FALSE(dims_supported({60, 32, 16}, 4));
  CHECK(padded_dims({60, 32, 12}, 4) == Dims3{64, 32, 16});
  CHECK(padded_dims({3, 1, 24}, 4) == Dims3{4, 1, 32});
}

TEST_CASE("level channel plan") {
  auto c = ModelConfig::for_direction(Direction::Forward);
  c.base_channels = 16;
  c.channel_cap = 64;
  CHECK(c.level_channels(0) == 16);
  CHECK(c.level_channels(1) == 32);
  CHECK(c.level_channels(2) == 64);
  CHECK(c.level_channels(3) == 64);
}

TEST_CASE("config validation") {
  auto c = ModelConfig::for_direction(Direction::Forward);
  c.out_channels = 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ModelConfig::for_direction(Direction::Reverse);
  c.base_channels = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK_THROWS_AS(direction_from_string("sideways"), ValidationError);
  auto r = ModelConfig::for_direction(Direction::Reverse);
  CHECK(model_config_from_json(to_json(r)).in_channels == 3);
}

TEST_CASE("desk-scale output shapes") {
  const VoxelGrid occ = random_occupancy({64, 32, 16}, 1);
  UNet fwd(ModelConfig::for_direction(Direction::Forward), 7);
  NoGradGuard ng;
  auto y = fwd.forward(grid_to_tensor(occ));
  CHECK(y.shape() == Shape{1, 3, 16, 32, 64});

  UNet rev(ModelConfig::for_direction(Direction::Reverse), 7);
  VoxelGrid field({64, 32, 16}, 3);
  std::mt19937_64 rng(2);
  for (auto& v : field.data()) v = static_cast<float>(rng() % 1000) / 100.0f - 2.0f;
  auto p = rev.predict(field);
  CHECK(p.channels() == 1);
  CHECK(p.dims() == field.dims());
  for (float v : p.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
}

TEST_CASE("clamped axes keep their size") {
  // 16x8x2 with 4 levels: z halves once, y three times, x four times
  UNet m(small(Direction::Forward, 4, 4), 3);
  const VoxelGrid occ = random_occupancy({16, 8, 2}, 4);
  auto out = m.predict(occ);
  CHECK(out.dims() == occ.dims());
  CHECK(out.all_finite());
}

TEST_CASE("predict masks buildings and keeps metadata") {
  UNet m(small(Direction::Forward), 5);
  VoxelGrid occ = random_occupancy({16, 8, 8}, 6);
  occ = VoxelGrid(occ.dims(), 1, std::vector<float>(occ.data().begin(), occ.data().end()), 2.0,
                  {1.0, -3.0, 0.0});
  auto out = m.predict(occ);
  CHECK(out.channels() == 3);
  CHECK(out.resolution() == 2.0);
  CHECK(out.origin() == occ.origin());
  for (std::int64_t z = 0; z < 8; ++z)
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 16; ++x)
        if (occ.at(x, y, z) == 1.0f)
          for (int c = 0; c < 3; ++c) CHECK(out.at(x, y, z, c) == 0.0f);
}

TEST_CASE("double-size input runs through the same weights") {
  UNet m(small(Direction::Forward, 3, 4), 8);
  auto out = m.predict(random_occupancy({32, 16, 8}, 9));
  CHECK(out.dims() == Dims3{32, 16, 8});
  auto big = m.predict(random_occupancy({64, 32, 16}, 9));
  CHECK(big.dims() == Dims3{64, 32, 16});
  CHECK(big.all_finite());
}

TEST_CASE("unsupported dims name the required padding") {
  UNet m(small(Direction::Forward), 1);
  try {
    m.predict(VoxelGrid({6, 4, 4}, 1));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("pad to 8x4x4") != std::string::npos);
  }
  CHECK_THROWS_AS(m.predict(VoxelGrid({8, 4, 4}, 3)), ChannelError);
}

TEST_CASE("parameter count matches the layer table arithmetic") {
  UNet m(small(Direction::Forward), 0);
  // levels 2, base 4: c0 = 4, c1 = 8
  // enc0: down 2*1*64+2, same 2*4*27+2, skip 2*1+2, gate 2*2+2      = 358
  // enc1: down 4*4*64+4, same 4*8*27+4, skip 4*4+4, gate 4*4+4      = 1936
  // dec1: up 8*2*64+2, refine 2*(4+4)*27+2                          = 1460
  // dec0: up 4*2*64+2, refine 2*(4+1)*27+2                          = 786
  // out:  3*4+3                                                      = 15
  CHECK(m.count_parameters() == 4555);
  std::int64_t table = 0;
  for (const auto& l : m.layer_table()) table += l.count;
  CHECK(table == 4555);
  CHECK(UNet(small(Direction::Forward), 99).count_parameters() == 4555);

  // reverse differs only in the first conv, the skip projection, the
  // full-resolution refine (concatenated input) and the head
  UNet r(small(Direction::Reverse), 0);
  auto ft = m.layer_table(), rt = r.layer_table();
  REQUIRE(ft.size() == rt.size());
  for (std::size_t i = 0; i < ft.size(); ++i) {
    const bool io = ft[i].name.starts_with("enc0.down.weight") ||
                    ft[i].name.starts_with("enc0.skip.weight") ||
                    ft[i].name.starts_with("dec0.refine.weight") || ft[i].name.starts_with("out.");
    if (!io) CHECK(ft[i].count == rt[i].count);
  }
  CHECK(r.count_parameters() - m.count_parameters() == 2 * 64 * 2 + 2 * 2 + 2 * 2 * 27 - 2 * 4 - 2);

  auto plain = small(Direction::Forward);
  plain.gated = false;
  CHECK(UNet(plain, 0).count_parameters() == 4555 - 6 - 20);

  auto wide = small(Direction::Forward, 2, 8);
  const double ratio = double(UNet(wide, 0).count_parameters()) / 4555.0;
  CHECK(ratio > 3.0);
  CHECK(ratio < 4.2);
}

TEST_CASE("determinism and seeding") {
  const VoxelGrid occ = random_occupancy({16, 8, 8}, 11);
  UNet a(small(Direction::Forward), 42), b(small(Direction::Forward), 42);
  UNet c(small(Direction::Forward), 43);
  CHECK(a.predict(occ) == b.predict(occ));
  CHECK_FALSE(a.predict(occ) == c.predict(occ));
}

TEST_CASE("checkpoint round trip") {
  const VoxelGrid occ = random_occupancy({16, 8, 8}, 12);
  UNet m(small(Direction::Forward), 13);
  const auto bytes = encode_checkpoint(m, {{"epoch", 3}});
  CHECK(bytes.substr(0, 4) == "CKP1");
  nlohmann::json extra;
  UNet back = decode_checkpoint(bytes, &extra);
  CHECK(extra["epoch"] == 3);
  CHECK(back.predict(occ) == m.predict(occ));
  CHECK(encode_checkpoint(back, {{"epoch", 3}}) == bytes);

  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), IngestionError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), IngestionError);
  CHECK_THROWS_AS(decode_checkpoint("CKP2" + bytes.substr(4)), IngestionError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 6)), IngestionError);

  // header config that disagrees with the manifest
  std::string tampered = bytes;
  const auto pos = tampered.find("\"base_channels\":4");
  REQUIRE(pos != std::string::npos);
  tampered[pos + 16] = '6';
  CHECK_THROWS_AS(decode_checkpoint(tampered), IngestionError);
}
