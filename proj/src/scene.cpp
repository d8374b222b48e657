#include "urbanflow/scene.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "urbanflow/errors.hpp"

namespace urbanflow {

namespace {

std::int64_t cells_of(double length, double resolution) {
  return static_cast<std::int64_t>(std::llround(length / resolution));
}

bool is_multiple(double length, double resolution) {
  const double q = length / resolution;
  return std::abs(q - std::round(q)) <= 1e-9 * std::max(1.0, std::abs(q));
}

void require_range(double lo, double hi, const char* name) {
  if (!(lo <= hi)) {
    std::ostringstream msg;
    msg << "scene params: " << name << " min (" << lo << ") > max (" << hi << ")";
    throw ValidationError(msg.str());
  }
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return lo + static_cast<std::int64_t>(r % span);
}

Dims3 DomainSpec::grid_dims() const {
  return {cells_of(size[0], resolution), cells_of(size[1], resolution),
          cells_of(size[2], resolution)};
}

void DomainSpec::validate() const {
  if (!(resolution > 0.0)) throw ValidationError("domain: resolution must be positive");
  static constexpr const char* kAxis[] = {"size_x", "size_y", "size_z"};
  for (int a = 0; a < 3; ++a) {
    if (!(size[a] > 0.0)) {
      throw ValidationError(std::string("domain: ") + kAxis[a] + " must be positive");
    }
    if (!is_multiple(size[a], resolution)) {
      std::ostringstream msg;
      msg << "domain: " << kAxis[a] << " = " << size[a]
          << " is not an integer multiple of resolution " << resolution;
      throw ValidationError(msg.str());
    }
    if (cells_of(size[a], resolution) < 4) {
      throw ValidationError(std::string("domain: ") + kAxis[a] + " yields fewer than 4 voxels");
    }
  }
}

bool boxes_overlap(const Building& a, const Building& b) {
  const auto amax = a.max_corner();
  const auto bmax = b.max_corner();
  for (int k = 0; k < 3; ++k) {
    if (!(a.min_corner[k] < bmax[k] && b.min_corner[k] < amax[k])) return false;
  }
  return true;
}

double HeightDistribution::quantile(double p) const {
  if (min_height == max_height) return min_height;
  const double mu = std::log(median);
  if (sigma <= 0.0) return std::clamp(median, min_height, max_height);
  boost::math::normal unit;
  const double fa = boost::math::cdf(unit, (std::log(min_height) - mu) / sigma);
  const double fb = boost::math::cdf(unit, (std::log(max_height) - mu) / sigma);
  double q = fa + std::clamp(p, 0.0, 1.0) * (fb - fa);
  // The normal quantile is infinite at 0 and 1.
  q = std::clamp(q, std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0));
  const double h = std::exp(mu + sigma * boost::math::quantile(unit, q));
  return std::clamp(h, min_height, max_height);
}

double HeightDistribution::sample(std::mt19937_64& rng) const { return quantile(uniform01(rng)); }

void SceneParams::validate() const {
  if (count_min < 0) throw ValidationError("scene params: count_min must be >= 0");
  require_range(count_min, count_max, "count");
  require_range(width_min, width_max, "width");
  require_range(depth_min, depth_max, "depth");
  require_range(height.min_height, height.max_height, "height");
  if (!(width_min > 0 && depth_min > 0 && height.min_height > 0)) {
    throw ValidationError("scene params: building extents must be positive");
  }
  if (!(height.median > 0) || height.sigma < 0) {
    throw ValidationError("scene params: height median must be > 0 and sigma >= 0");
  }
  if (margin_x < 0 || margin_y < 0) throw ValidationError("scene params: negative margin");
  if (retry_budget < 1) throw ValidationError("scene params: retry_budget must be >= 1");
  if (count_max == 0 && fixed_buildings.empty()) {
    throw ValidationError("scene params: a scene needs at least one building");
  }
}

void Scene::validate() const {
  domain.validate();
  if (buildings.empty()) throw ValidationError("scene: needs at least one building");
  for (std::size_t i = 0; i < buildings.size(); ++i) {
    const auto& b = buildings[i];
    if (b.min_corner[2] != 0.0) throw ValidationError("scene: building not on the ground");
    for (int a = 0; a < 3; ++a) {
      if (!(b.extent[a] > 0.0)) throw ValidationError("scene: non-positive building extent");
      if (b.min_corner[a] < 0.0 || b.max_corner()[a] > domain.size[a]) {
        throw ValidationError("scene: building " + std::to_string(i) + " leaves the domain");
      }
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (boxes_overlap(b, buildings[j])) {
        throw ValidationError("scene: buildings " + std::to_string(j) + " and " +
                              std::to_string(i) + " overlap");
      }
    }
  }
}

Scene generate_scene(const DomainSpec& domain, const SceneParams& params, std::uint64_t seed) {
  domain.validate();
  params.validate();
  const double r = domain.resolution;
  const Dims3 n = domain.grid_dims();

  Scene scene;
  scene.domain = domain;
  scene.seed = seed;
  scene.buildings = params.fixed_buildings;

  std::mt19937_64 rng(mix_seed(seed, 0x5CE7E));
  const auto count = uniform_int(rng, params.count_min, params.count_max);

  const auto w_lo = static_cast<std::int64_t>(std::ceil(params.width_min / r - 1e-9));
  const auto w_hi = static_cast<std::int64_t>(std::floor(params.width_max / r + 1e-9));
  const auto d_lo = static_cast<std::int64_t>(std::ceil(params.depth_min / r - 1e-9));
  const auto d_hi = static_cast<std::int64_t>(std::floor(params.depth_max / r + 1e-9));
  const auto h_lo = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::ceil(params.height.min_height / r - 1e-9)));
  const auto h_hi = std::min<std::int64_t>(
      n[2], static_cast<std::int64_t>(std::floor(params.height.max_height / r + 1e-9)));
  if (w_lo > w_hi || d_lo > d_hi || h_lo > h_hi) {
    throw ValidationError("scene params: extent range holds no whole voxel count");
  }
  const auto mx = cells_of(params.margin_x, r);
  const auto my = cells_of(params.margin_y, r);

  for (std::int64_t k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < params.retry_budget && !placed; ++attempt) {
      const auto w = uniform_int(rng, w_lo, w_hi);
      const auto d = uniform_int(rng, d_lo, d_hi);
      const auto h = std::clamp<std::int64_t>(
          std::llround(params.height.sample(rng) / r), h_lo, h_hi);
      const auto x_hi = n[0] - mx - w;
      const auto y_hi = n[1] - my - d;
      if (x_hi < mx || y_hi < my) continue;
      const auto x = uniform_int(rng, mx, x_hi);
      const auto y = uniform_int(rng, my, y_hi);
      Building b{{x * r, y * r, 0.0}, {w * r, d * r, h * r}};
      const bool clash = std::any_of(scene.buildings.begin(), scene.buildings.end(),
                                     [&](const Building& o) { return boxes_overlap(b, o); });
      if (!clash) {
        scene.buildings.push_back(b);
        placed = true;
      }
    }
    if (!placed) {
      std::ostringstream msg;
      msg << "scene generation: could not place building " << k << " within the retry budget of "
          << params.retry_budget << " attempts (seed " << seed << ")";
      throw PlacementError(msg.str());
    }
  }
  scene.validate();
  return scene;
}

TriangleMesh scene_to_mesh(const Scene& scene) {
  TriangleMesh mesh;
  for (const auto& b : scene.buildings) append_box(mesh, b.min_corner, b.max_corner());
  return mesh;
}

nlohmann::json to_json(const DomainSpec& domain) {
  return {{"size", {domain.size[0], domain.size[1], domain.size[2]}},
          {"resolution", domain.resolution}};
}

nlohmann::json to_json(const Scene& scene) {
  nlohmann::json j;
  j["domain"] = to_json(scene.domain);
  j["seed"] = scene.seed;
  j["buildings"] = nlohmann::json::array();
  for (const auto& b : scene.buildings) {
    j["buildings"].push_back(
        {{"min", {b.min_corner[0], b.min_corner[1], b.min_corner[2]}},
         {"extent", {b.extent[0], b.extent[1], b.extent[2]}}});
  }
  return j;
}

namespace {
Vec3 vec3_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError(std::string("expected a 3-element array for ") + what);
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}
}  // namespace

DomainSpec domain_from_json(const nlohmann::json& j) {
  DomainSpec d;
  d.size = vec3_from_json(j.at("size"), "domain.size");
  d.resolution = j.at("resolution").get<double>();
  d.validate();
  return d;
}

Scene scene_from_json(const nlohmann::json& j) {
  try {
    Scene s;
    s.domain = domain_from_json(j.at("domain"));
    s.seed = j.value("seed", std::uint64_t{0});
    for (const auto& b : j.at("buildings")) {
      s.buildings.push_back(
          {vec3_from_json(b.at("min"), "building.min"), vec3_from_json(b.at("extent"), "building.extent")});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scene JSON: ") + e.what());
  }
}

nlohmann::json to_json(const SceneParams& p) {
  return {{"count_min", p.count_min},
          {"count_max", p.count_max},
          {"width_min", p.width_min},
          {"width_max", p.width_max},
          {"depth_min", p.depth_min},
          {"depth_max", p.depth_max},
          {"height_median", p.height.median},
          {"height_sigma", p.height.sigma},
          {"height_min", p.height.min_height},
          {"height_max", p.height.max_height},
          {"margin_x", p.margin_x},
          {"margin_y", p.margin_y},
          {"retry_budget", p.retry_budget}};
}

}  // namespace urbanflow
