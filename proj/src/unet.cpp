#include "urbanflow/unet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "urbanflow/errors.hpp"
#include "urbanflow/scene.hpp"

namespace urbanflow {

std::string to_string(Direction d) { return d == Direction::Forward ? "forward" : "reverse"; }

Direction direction_from_string(const std::string& s) {
  if (s == "forward") return Direction::Forward;
  if (s == "reverse") return Direction::Reverse;
  throw ValidationError("direction must be \"forward\" or \"reverse\", got \"" + s + "\"");
}

ModelConfig ModelConfig::for_direction(Direction d) {
  ModelConfig c;
  c.direction = d;
  c.in_channels = d == Direction::Forward ? 1 : 3;
  c.out_channels = d == Direction::Forward ? 3 : 1;
  return c;
}

void ModelConfig::validate() const {
  if (levels < 1 || levels > 12) throw ValidationError("model.levels must be in [1, 12]");
  if (base_channels < 2 || base_channels % 2)
    throw ValidationError("model.base_channels must be an even integer >= 2");
  if (channel_cap < base_channels || channel_cap % 2)
    throw ValidationError("model.channel_cap must be even and >= base_channels");
  const int want_in = direction == Direction::Forward ? 1 : 3;
  const int want_out = direction == Direction::Forward ? 3 : 1;
  if (in_channels != want_in)
    throw ValidationError("model.in_channels must be " + std::to_string(want_in) + " for the " +
                          to_string(direction) + " direction");
  if (out_channels != want_out)
    throw ValidationError("model.out_channels must be " + std::to_string(want_out) + " for the " +
                          to_string(direction) + " direction");
  if (!(velocity_scale_mps > 0) || !std::isfinite(velocity_scale_mps))
    throw ValidationError("model.velocity_scale_mps must be positive");
}

int ModelConfig::level_channels(int level) const {
  std::int64_t c = base_channels;
  for (int l = 0; l < level && c < channel_cap; ++l) c *= 2;
  return static_cast<int>(std::min<std::int64_t>(c, channel_cap));
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"direction", to_string(c.direction)},
          {"levels", c.levels},
          {"base_channels", c.base_channels},
          {"channel_cap", c.channel_cap},
          {"in_channels", c.in_channels},
          {"out_channels", c.out_channels},
          {"gated", c.gated},
          {"velocity_scale_mps", c.velocity_scale_mps}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c = ModelConfig::for_direction(direction_from_string(j.at("direction")));
    c.levels = j.value("levels", c.levels);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.channel_cap = j.value("channel_cap", c.channel_cap);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.out_channels = j.value("out_channels", c.out_channels);
    c.gated = j.value("gated", c.gated);
    c.velocity_scale_mps = j.value("velocity_scale_mps", c.velocity_scale_mps);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
}

std::array<int, 3> halving_counts(const Dims3& dims, int levels) {
  std::array<int, 3> h{};
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw ShapeError("grid dims must be positive");
    const int lg = std::bit_width(static_cast<std::uint64_t>(dims[a])) - 1;
    h[a] = std::min(levels, lg);
  }
  return h;
}

bool dims_supported(const Dims3& dims, int levels) {
  const auto h = halving_counts(dims, levels);
  for (int a = 0; a < 3; ++a)
    if (dims[a] % (std::int64_t{1} << h[a]) != 0) return false;
  return true;
}

Dims3 padded_dims(const Dims3& dims, int levels) {
  Dims3 out = dims;
  for (int a = 0; a < 3; ++a)
    while (!dims_supported({out[a], 1, 1}, levels)) ++out[a];
  return out;
}

namespace {

std::string dims_str(const Dims3& d) {
  return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

// Geometry of the resolution-changing 4-tap conv at one level; tensor axis
// order (z, y, x).
ConvGeometry down_geometry(const std::array<bool, 3>& halve) {
  ConvGeometry g;
  for (int a = 0; a < 3; ++a) {
    g.kernel[a] = 4;
    g.stride[a] = halve[a] ? 2 : 1;
    g.pad_lo[a] = 1;
    g.pad_hi[a] = halve[a] ? 1 : 2;
  }
  return g;
}

ConvGeometry skip_geometry(const std::array<bool, 3>& halve) {
  ConvGeometry g;
  for (int a = 0; a < 3; ++a) g.stride[a] = halve[a] ? 2 : 1;
  return g;
}

const ConvGeometry kSame = ConvGeometry::cube(3, 1, 1);
const ConvGeometry kPoint = ConvGeometry::cube(1, 1, 0);

}  // namespace

UNet::UNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(mix_seed(seed, 0x0E7));
  const int L = cfg_.levels;
  for (int l = 0; l < L; ++l) {
    const std::int64_t in = l == 0 ? cfg_.in_channels : cfg_.level_channels(l - 1);
    const std::int64_t c = cfg_.level_channels(l), h = c / 2;
    const std::string p = "enc" + std::to_string(l);
    add_param(p + ".down.weight", {h, in, 4, 4, 4}, rng, false);
    add_param(p + ".down.bias", {h}, rng, true);
    add_param(p + ".same.weight", {h, c, 3, 3, 3}, rng, false);
    add_param(p + ".same.bias", {h}, rng, true);
    add_param(p + ".skip.weight", {h, in, 1, 1, 1}, rng, false);
    add_param(p + ".skip.bias", {h}, rng, true);
    if (cfg_.gated) {
      add_param(p + ".gate.weight", {h, h, 1, 1, 1}, rng, false);
      add_param(p + ".gate.bias", {h}, rng, true);
    }
  }
  for (int j = L - 1; j >= 0; --j) {
    const std::int64_t in = cfg_.level_channels(j);
    const std::int64_t target = j > 0 ? cfg_.level_channels(j - 1) : cfg_.level_channels(0);
    const std::int64_t side = j > 0 ? target : cfg_.in_channels;
    const std::string p = "dec" + std::to_string(j);
    add_param(p + ".up.weight", {in, target / 2, 4, 4, 4}, rng, false);
    add_param(p + ".up.bias", {target / 2}, rng, true);
    add_param(p + ".refine.weight", {target / 2, target + side, 3, 3, 3}, rng, false);
    add_param(p + ".refine.bias", {target / 2}, rng, true);
  }
  add_param("out.weight", {cfg_.out_channels, cfg_.level_channels(0), 1, 1, 1}, rng, false);
  add_param("out.bias", {cfg_.out_channels}, rng, true);
}

void UNet::add_param(const std::string& name, Shape shape, std::mt19937_64& rng, bool bias) {
  Tensor t(shape, 0.0f, true);
  if (!bias) {
    const std::int64_t k = shape[2] * shape[3] * shape[4];
    const bool transposed = name.find(".up.") != std::string::npos;
    // He-uniform on fan-in; a stride-2 transposed conv feeds each output
    // voxel from about k/8 taps per input channel.
    const double fan_in = transposed ? std::max<double>(1.0, shape[0] * k / 8.0)
                                     : static_cast<double>(shape[1] * k);
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : t.values()) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  }
  params_.push_back(t);
  names_.push_back(name);
}

const Tensor& UNet::param(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return params_[i];
  throw ValidationError("model has no parameter " + name);
}

Tensor UNet::forward(const Tensor& x) const {
  if (x.ndim() != 5)
    throw ShapeError("model input must be [N, C, nz, ny, nx], got " + shape_str(x.shape()));
  if (x.dim(1) != cfg_.in_channels)
    throw ChannelError("model expects " + std::to_string(cfg_.in_channels) +
                       " input channels, got " + std::to_string(x.dim(1)));
  const Dims3 grid{x.dim(4), x.dim(3), x.dim(2)};
  if (!dims_supported(grid, cfg_.levels))
    throw ShapeError("grid " + dims_str(grid) + " is not divisible for a " +
                     std::to_string(cfg_.levels) + "-level network; pad to " +
                     dims_str(padded_dims(grid, cfg_.levels)));
  const auto hx = halving_counts(grid, cfg_.levels);
  const std::array<int, 3> h{hx[2], hx[1], hx[0]};  // tensor axis order
  auto halves = [&](int level) {
    return std::array<bool, 3>{level < h[0], level < h[1], level < h[2]};
  };

  const int L = cfg_.levels;
  std::vector<Tensor> enc;
  Tensor cur = x;
  for (int l = 0; l < L; ++l) {
    const std::string p = "enc" + std::to_string(l);
    const auto hv = halves(l);
    Tensor a = celu_concat(
        conv3d(cur, param(p + ".down.weight"), param(p + ".down.bias"), down_geometry(hv)));
    Tensor main = conv3d(a, param(p + ".same.weight"), param(p + ".same.bias"), kSame);
    Tensor skip =
        conv3d(cur, param(p + ".skip.weight"), param(p + ".skip.bias"), skip_geometry(hv));
    Tensor merged;
    if (cfg_.gated) {
      Tensor g = sigmoid(conv3d(main, param(p + ".gate.weight"), param(p + ".gate.bias"), kPoint));
      merged = add(skip, mul(g, sub(main, skip)));
    } else {
      merged = add(main, skip);
    }
    cur = celu_concat(merged);
    enc.push_back(cur);
  }
  for (int j = L - 1; j >= 0; --j) {
    const std::string p = "dec" + std::to_string(j);
    Tensor up = celu_concat(conv3d_transpose(cur, param(p + ".up.weight"), param(p + ".up.bias"),
                                             down_geometry(halves(j))));
    const Tensor& side = j > 0 ? enc[static_cast<std::size_t>(j - 1)] : x;
    cur = celu_concat(conv3d(concat_channels(up, side), param(p + ".refine.weight"),
                             param(p + ".refine.bias"), kSame));
  }
  Tensor out = conv3d(cur, param("out.weight"), param("out.bias"), kPoint);
  return cfg_.direction == Direction::Reverse ? sigmoid(out) : out;
}

std::vector<LayerInfo> UNet::layer_table() const {
  std::vector<LayerInfo> t;
  for (std::size_t i = 0; i < params_.size(); ++i)
    t.push_back({names_[i], params_[i].shape(), params_[i].numel()});
  return t;
}

std::int64_t UNet::count_parameters() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

Tensor grid_to_tensor(const VoxelGrid& g, float scale) {
  std::vector<float> v(g.data().begin(), g.data().end());
  if (scale != 1.0f)
    for (auto& x : v) x *= scale;
  return Tensor({1, g.channels(), g.nz(), g.ny(), g.nx()}, std::move(v));
}

VoxelGrid tensor_to_grid(const Tensor& t, std::int64_t sample, double resolution,
                         const Vec3& origin, float scale) {
  if (t.ndim() != 5) throw ShapeError("expected a [N, C, nz, ny, nx] tensor");
  const std::int64_t per = t.numel() / t.dim(0);
  std::vector<float> v(t.data() + sample * per, t.data() + (sample + 1) * per);
  if (scale != 1.0f)
    for (auto& x : v) x *= scale;
  return VoxelGrid({t.dim(4), t.dim(3), t.dim(2)}, static_cast<int>(t.dim(1)), std::move(v),
                   resolution, origin);
}

VoxelGrid UNet::predict(const VoxelGrid& input) const {
  require_channels(input, cfg_.in_channels,
                   cfg_.direction == Direction::Forward ? "forward model input"
                                                        : "reverse model input");
  if (!input.all_finite()) throw ValidationError("model input contains NaN or Inf");
  const float scale = static_cast<float>(cfg_.velocity_scale_mps);
  NoGradGuard no_grad;
  FlushDenormalsGuard ftz;
  if (cfg_.direction == Direction::Forward) {
    Tensor y = forward(grid_to_tensor(input));
    VoxelGrid out = tensor_to_grid(y, 0, input.resolution(), input.origin(), scale);
    const auto occ = input.data();
    for (int c = 0; c < 3; ++c) {
      auto ch = out.channel(c);
      for (std::size_t i = 0; i < occ.size(); ++i)
        if (occ[i] >= 0.5f) ch[i] = 0.0f;
    }
    return out;
  }
  Tensor y = forward(grid_to_tensor(input, 1.0f / scale));
  VoxelGrid out = tensor_to_grid(y, 0, input.resolution(), input.origin());
  // keep probabilities strictly inside (0, 1) where f32 sigmoid saturates
  const float hi = std::nextafter(1.0f, 0.0f);
  for (auto& v : out.data()) v = std::clamp(v, 1e-7f, hi);
  return out;
}

}  // namespace urbanflow
