#include <algorithm>
#include <set>

#include <boost/math/distributions/lognormal.hpp>
#include <nlohmann/json.hpp>

#include "doctest.h"
#include "urbanflow/errors.hpp"
#include "urbanflow/scene.hpp"

using namespace urbanflow;

namespace {

DomainSpec desk_domain() { return DomainSpec{{64.0, 32.0, 16.0}, 1.0}; }

// Truncated log-normal quantile by bisection on the CDF; independent of the
// inverse-normal route the sampler takes.
double truncated_lognormal_quantile(const HeightDistribution& h, double p) {
  boost::math::lognormal dist(std::log(h.median), h.sigma);
  const double fa = boost::math::cdf(dist, h.min_height);
  const double fb = boost::math::cdf(dist, h.max_height);
  double lo = h.min_height, hi = h.max_height;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = (boost::math::cdf(dist, mid) - fa) / (fb - fa);
    (f < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("a fully constrained scene has exactly the forced building") {
  SceneParams params;
  params.count_min = params.count_max = 0;
  params.fixed_buildings = {Building{{0, 0, 0}, {8, 8, 8}}};
  for (std::uint64_t seed : {0ull, 7ull, 123456789ull}) {
    const Scene s = generate_scene(desk_domain(), params, seed);
    REQUIRE(s.buildings.size() == 1);
    CHECK(s.buildings[0].volume() == doctest::Approx(512.0));
  }
}

TEST_CASE("generation is deterministic in the seed") {
  SceneParams params;
  const auto a = to_json(generate_scene(desk_domain(), params, 42)).dump();
  const auto b = to_json(generate_scene(desk_domain(), params, 42)).dump();
  CHECK(a == b);
  const auto c = to_json(generate_scene(desk_domain(), params, 43)).dump();
  CHECK(a != c);
}

TEST_CASE("building count stays within the configured range over many seeds") {
  SceneParams params;
  params.count_min = 3;
  params.count_max = 6;
  params.width_min = params.depth_min = 4;
  params.width_max = params.depth_max = 8;
  double total = 0;
  std::set<std::size_t> seen;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Scene s = generate_scene(desk_domain(), params, seed);
    CHECK(s.buildings.size() >= 3);
    CHECK(s.buildings.size() <= 6);
    seen.insert(s.buildings.size());
    total += static_cast<double>(s.buildings.size());
  }
  const double mean = total / 1000.0;
  CHECK(mean >= 3.0);
  CHECK(mean <= 6.0);
  // Uniform count: mean should sit near 4.5.
  CHECK(mean == doctest::Approx(4.5).epsilon(0.05));
  CHECK(seen.size() == 4);
}

TEST_CASE("generated scenes satisfy every scene invariant") {
  SceneParams params;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const Scene s = generate_scene(desk_domain(), params, seed);
    CHECK_NOTHROW(s.validate());
    for (std::size_t i = 0; i < s.buildings.size(); ++i) {
      const auto& b = s.buildings[i];
      CHECK(b.min_corner[2] == 0.0);
      CHECK(b.extent[0] >= params.width_min);
      CHECK(b.extent[0] <= params.width_max);
      CHECK(b.extent[1] >= params.depth_min);
      CHECK(b.extent[1] <= params.depth_max);
      CHECK(b.extent[2] >= params.height.min_height);
      CHECK(b.extent[2] <= params.height.max_height);
      for (std::size_t j = 0; j < i; ++j) {
        const auto& o = s.buildings[j];
        bool separated = false;
        for (int a = 0; a < 3; ++a) {
          separated = separated || b.max_corner()[a] <= o.min_corner[a] ||
                      o.max_corner()[a] <= b.min_corner[a];
        }
        CHECK(separated);
      }
    }
  }
}

TEST_CASE("height sampler matches the truncated log-normal quantiles") {
  HeightDistribution h;  // median 6, sigma 0.5, [2, 12]
  std::vector<double> samples;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    std::mt19937_64 rng(mix_seed(seed, 99));
    samples.push_back(h.sample(rng));
  }
  std::sort(samples.begin(), samples.end());
  for (double p : {0.1, 0.25, 0.5, 0.75, 0.9}) {
    const double empirical = samples[static_cast<std::size_t>(p * samples.size())];
    const double expected = truncated_lognormal_quantile(h, p);
    CHECK(empirical == doctest::Approx(expected).epsilon(0.10));
    CHECK(h.quantile(p) == doctest::Approx(expected).epsilon(1e-6));
  }
  CHECK(samples.front() >= h.min_height);
  CHECK(samples.back() <= h.max_height);
}

TEST_CASE("invalid params and placement failures are reported") {
  SceneParams params;
  params.width_min = 10;
  params.width_max = 4;
  CHECK_THROWS_AS(generate_scene(desk_domain(), params, 1), ValidationError);

  SceneParams crowded;
  crowded.count_min = crowded.count_max = 40;
  crowded.width_min = crowded.width_max = 12;
  crowded.depth_min = crowded.depth_max = 12;
  try {
    generate_scene(desk_domain(), crowded, 1);
    FAIL("expected PlacementError");
  } catch (const PlacementError& e) {
    CHECK(std::string(e.what()).find("retry budget of 100") != std::string::npos);
  }

  CHECK_THROWS_AS(DomainSpec({{64.5, 32, 16}, 1.0}).validate(), ValidationError);
  CHECK_THROWS_AS(DomainSpec({{64, 32, 2}, 1.0}).validate(), ValidationError);
}

TEST_CASE("scene_to_mesh emits 12 triangles per box") {
  SceneParams params;
  params.count_min = params.count_max = 0;
  params.fixed_buildings = {Building{{4, 4, 0}, {8, 6, 5}}};
  const Scene one = generate_scene(desk_domain(), params, 0);
  const TriangleMesh m1 = scene_to_mesh(one);
  CHECK(m1.triangle_count() == 12);
  std::set<Vec3> distinct(m1.vertices.begin(), m1.vertices.end());
  CHECK(distinct.size() == 8);

  params.fixed_buildings.push_back(Building{{20, 4, 0}, {4, 4, 10}});
  params.fixed_buildings.push_back(Building{{40, 10, 0}, {6, 6, 3}});
  const Scene three = generate_scene(desk_domain(), params, 0);
  const TriangleMesh m3 = scene_to_mesh(three);
  CHECK(m3.triangle_count() == 36);
  const Aabb box = bounding_box(m3);
  CHECK(box.min == Vec3{4, 4, 0});
  CHECK(box.max == Vec3{46, 16, 10});
}

TEST_CASE("meshes of generated scenes have no degenerate triangles") {
  SceneParams params;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const TriangleMesh m = scene_to_mesh(generate_scene(desk_domain(), params, seed));
    for (std::size_t t = 0; t < m.triangle_count(); ++t) CHECK(triangle_area(m, t) > 0.0);
  }
}

TEST_CASE("scene JSON uses the documented layout and round-trips") {
  const Scene s = generate_scene(desk_domain(), SceneParams{}, 5);
  const auto j = to_json(s);
  CHECK(j["domain"]["size"].size() == 3);
  CHECK(j["domain"]["resolution"].get<double>() == 1.0);
  CHECK(j["seed"].get<std::uint64_t>() == 5);
  CHECK(j["buildings"][0].contains("min"));
  CHECK(j["buildings"][0].contains("extent"));
  CHECK(j["domain"]["size"][0].is_number_float());
  CHECK(scene_from_json(nlohmann::json::parse(j.dump())) == s);
}
