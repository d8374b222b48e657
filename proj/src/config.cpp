#include "urbanflow/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "urbanflow/checkpoint.hpp"
#include "urbanflow/errors.hpp"

namespace urbanflow {

namespace {

using K = Config::Kind;

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::optional<std::int64_t> parse_int(const std::string& s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<double> parse_float(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<bool> parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  return std::nullopt;
}

const char* kind_name(K k) {
  switch (k) {
    case K::Int: return "an integer";
    case K::Float: return "a number";
    case K::Bool: return "true or false";
    default: return "a string";
  }
}

}  // namespace

const std::vector<Config::Key>& Config::schema() {
  static const std::vector<Key> keys = {
      {"threads", K::Int, "0", "worker threads for every parallel stage; 0 = all cores"},

      {"domain.size_x", K::Float, "64", "domain length along the wind (m)"},
      {"domain.size_y", K::Float, "32", "domain width (m)"},
      {"domain.size_z", K::Float, "16", "domain height (m)"},
      {"domain.resolution", K::Float, "1", "voxel edge (m)"},

      {"scene.count_min", K::Int, "2", "fewest random buildings"},
      {"scene.count_max", K::Int, "5", "most random buildings"},
      {"scene.width_min", K::Float, "4", "building x extent, lower bound (m)"},
      {"scene.width_max", K::Float, "12", "building x extent, upper bound (m)"},
      {"scene.depth_min", K::Float, "4", "building y extent, lower bound (m)"},
      {"scene.depth_max", K::Float, "12", "building y extent, upper bound (m)"},
      {"scene.height_median", K::Float, "6", "log-normal height median (m)"},
      {"scene.height_sigma", K::Float, "0.5", "log-normal height sigma"},
      {"scene.height_min", K::Float, "2", "height truncation, lower (m)"},
      {"scene.height_max", K::Float, "12", "height truncation, upper (m)"},
      {"scene.margin_x", K::Float, "8", "building-free band at inlet and outlet (m)"},
      {"scene.margin_y", K::Float, "2", "building-free band at the sides (m)"},
      {"scene.retry_budget", K::Int, "100", "placement attempts per scene"},
      {"scene.seed", K::Int, "1", "seed for gen-scenes"},
      {"scene.count", K::Int, "1", "scenes written by gen-scenes"},

      {"flow.inlet_speed_lattice", K::Float, "0.05", "inlet speed in lattice units"},
      {"flow.tau", K::Float, "0.8", "BGK relaxation time"},
      {"flow.max_steps", K::Int, "20000", "step budget per solve"},
      {"flow.convergence_tol", K::Float, "1e-6", "max velocity change per step at steady state"},
      {"flow.reference_speed_mps", K::Float, "5", "physical inlet speed (m/s)"},
      {"flow.check_interval", K::Int, "100", "steps between convergence checks"},
      {"flow.ground_no_slip", K::Bool, "true", "bounce-back ground; false = free slip"},

      {"dataset.count", K::Int, "200", "samples to build"},
      {"dataset.seed", K::Int, "1", "dataset seed"},
      {"dataset.retry_budget", K::Int, "50", "re-draws allowed for non-converged samples"},
      {"dataset.split_ratio", K::Float, "0.95", "train fraction"},
      {"dataset.split_seed", K::Int, "1", "split shuffle seed"},

      {"model.levels", K::Int, "4", "U-net depth"},
      {"model.base_channels", K::Int, "16", "channels at the first level"},
      {"model.channel_cap", K::Int, "256", "channel ceiling"},
      {"model.gated", K::Bool, "true", "gated residual merge"},
      {"model.seed", K::Int, "1", "initialisation seed"},

      {"train.epochs", K::Int, "50", "epochs"},
      {"train.batch_size", K::Int, "4", "mini-batch size"},
      {"train.learning_rate", K::Float, "1e-3", "Adam learning rate"},
      {"train.seed", K::Int, "1", "shuffle seed"},
      {"train.checkpoint_every", K::Int, "0", "epoch snapshot interval; 0 = off"},
      {"train.eval_every", K::Int, "1", "test evaluation interval (epochs)"},
      {"train.loss", K::String, "mse", "mse | bce (reverse only)"},
      {"train.mask_input", K::Bool, "false", "reverse: train on thresholded masks"},
      {"train.mask_cutoff", K::Float, "0.3", "mask cutoff in units of the reference speed"},
      {"train.mirror_y", K::Bool, "false", "random y-mirror augmentation"},

      {"service.host", K::String, "127.0.0.1", "bind address"},
      {"service.port", K::Int, "8080", "bind port; 0 picks a free one"},
      {"service.forward_checkpoint", K::String, "", "forward model CKP1"},
      {"service.reverse_checkpoint", K::String, "", "reverse model CKP1"},
      {"service.max_concurrent_predictions", K::Int, "4", "predictions in flight before 503"},
      {"service.max_concurrent_solves", K::Int, "1", "oracle solves in flight before 503"},
      {"service.max_voxels", K::Int, "4194304", "largest prediction grid"},
      {"service.max_oracle_voxels", K::Int, "131072", "largest oracle grid"},
      {"service.max_body_bytes", K::Int, "268435456", "largest request body"},
      {"service.threads", K::Int, "8", "HTTP worker threads"},
  };
  return keys;
}

Config::Config() {
  for (const auto& k : schema()) values_[k.name] = k.default_value;
}

const Config::Key& Config::key(const std::string& name) const {
  for (const auto& k : schema())
    if (k.name == name) return k;
  throw ValidationError("unknown config key '" + name + "'");
}

void Config::set(const std::string& name, const std::string& raw) {
  const Key& k = key(name);
  std::string v = trim(raw);
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
    v = v.substr(1, v.size() - 2);
  bool ok = true;
  switch (k.kind) {
    case K::Int: ok = parse_int(v).has_value(); break;
    case K::Float: ok = parse_float(v).has_value(); break;
    case K::Bool: ok = parse_bool(v).has_value(); break;
    case K::String: break;
  }
  if (!ok)
    throw ValidationError("config key " + name + ": expected " + kind_name(k.kind) + ", got '" + v + "'");
  values_[name] = v;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ValidationError("override '" + assignment + "' is not key=value");
  set(trim(std::string_view(assignment).substr(0, eq)), assignment.substr(eq + 1));
}

void Config::load_text(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // a '#' inside quotes is kept
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    const std::string t = trim(line);
    if (t.empty()) continue;
    try {
      if (t.front() == '[') {
        if (t.back() != ']') throw ValidationError("unterminated section header");
        section = trim(std::string_view(t).substr(1, t.size() - 2));
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ValidationError("expected key = value");
      std::string name = trim(std::string_view(t).substr(0, eq));
      if (!section.empty()) name = section + "." + name;
      set(name, t.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::load_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ValidationError("cannot read config " + path.string());
  }
  load_text(text, path.string());
}

void Config::apply_env(const std::string& prefix,
                       const std::function<std::optional<std::string>(const std::string&)>& getenv) {
  for (const auto& k : schema()) {
    if (k.name.rfind(prefix, 0) != 0) continue;
    std::string var = "URBANFLOW_" + k.name;
    for (auto& c : var) c = c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (auto v = getenv(var)) {
      try {
        set(k.name, *v);
      } catch (const ValidationError& e) {
        throw ValidationError(var + ": " + e.what());
      }
    }
  }
}

std::int64_t Config::get_int(const std::string& name) const {
  if (key(name).kind != K::Int) throw std::logic_error(name + " is not an integer key");
  return *parse_int(values_.at(name));
}

double Config::get_float(const std::string& name) const {
  const auto kind = key(name).kind;
  if (kind != K::Float && kind != K::Int) throw std::logic_error(name + " is not a numeric key");
  return *parse_float(values_.at(name));
}

bool Config::get_bool(const std::string& name) const {
  if (key(name).kind != K::Bool) throw std::logic_error(name + " is not a boolean key");
  return *parse_bool(values_.at(name));
}

std::string Config::get_string(const std::string& name) const {
  key(name);
  return values_.at(name);
}

bool Config::is_default(const std::string& name) const { return values_.at(name) == key(name).default_value; }

nlohmann::json Config::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& k : schema()) {
    switch (k.kind) {
      case K::Int: j[k.name] = get_int(k.name); break;
      case K::Float: j[k.name] = get_float(k.name); break;
      case K::Bool: j[k.name] = get_bool(k.name); break;
      case K::String: j[k.name] = get_string(k.name); break;
    }
  }
  return j;
}

std::string Config::to_text() const {
  std::ostringstream os;
  for (const auto& k : schema()) {
    const std::string& v = values_.at(k.name);
    os << k.name << " = " << (k.kind == K::String ? "\"" + v + "\"" : v) << "\n";
  }
  return os.str();
}

namespace {

int as_int(const Config& c, const std::string& key) {
  const auto v = c.get_int(key);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ValidationError("config key " + key + " is out of range");
  return static_cast<int>(v);
}

std::uint64_t as_seed(const Config& c, const std::string& key) {
  const auto v = c.get_int(key);
  if (v < 0) throw ValidationError("config key " + key + " must be >= 0");
  return static_cast<std::uint64_t>(v);
}

}  // namespace

DomainSpec domain_spec(const Config& c) {
  DomainSpec d;
  d.size = {c.get_float("domain.size_x"), c.get_float("domain.size_y"), c.get_float("domain.size_z")};
  d.resolution = c.get_float("domain.resolution");
  d.validate();
  return d;
}

SceneParams scene_params(const Config& c) {
  SceneParams p;
  p.count_min = as_int(c, "scene.count_min");
  p.count_max = as_int(c, "scene.count_max");
  p.width_min = c.get_float("scene.width_min");
  p.width_max = c.get_float("scene.width_max");
  p.depth_min = c.get_float("scene.depth_min");
  p.depth_max = c.get_float("scene.depth_max");
  p.height.median = c.get_float("scene.height_median");
  p.height.sigma = c.get_float("scene.height_sigma");
  p.height.min_height = c.get_float("scene.height_min");
  p.height.max_height = c.get_float("scene.height_max");
  p.margin_x = c.get_float("scene.margin_x");
  p.margin_y = c.get_float("scene.margin_y");
  p.retry_budget = as_int(c, "scene.retry_budget");
  p.validate();
  return p;
}

FlowConfig flow_config(const Config& c) {
  FlowConfig f;
  f.inlet_speed_lattice = c.get_float("flow.inlet_speed_lattice");
  f.tau = c.get_float("flow.tau");
  f.max_steps = as_int(c, "flow.max_steps");
  f.convergence_tol = c.get_float("flow.convergence_tol");
  f.reference_speed_mps = c.get_float("flow.reference_speed_mps");
  f.check_interval = as_int(c, "flow.check_interval");
  f.ground_no_slip = c.get_bool("flow.ground_no_slip");
  f.validate();
  return f;
}

DatasetSpec dataset_spec(const Config& c) {
  DatasetSpec s;
  s.count = as_int(c, "dataset.count");
  s.domain = domain_spec(c);
  s.scene = scene_params(c);
  s.flow = flow_config(c);
  s.seed = as_seed(c, "dataset.seed");
  s.retry_budget = as_int(c, "dataset.retry_budget");
  s.validate();
  return s;
}

ModelConfig model_config(const Config& c, Direction d) {
  auto m = ModelConfig::for_direction(d);
  m.levels = as_int(c, "model.levels");
  m.base_channels = as_int(c, "model.base_channels");
  m.channel_cap = as_int(c, "model.channel_cap");
  m.gated = c.get_bool("model.gated");
  m.velocity_scale_mps = c.get_float("flow.reference_speed_mps");
  m.validate();
  return m;
}

TrainConfig train_config(const Config& c, Direction d) {
  TrainConfig t;
  t.direction = d;
  t.epochs = as_int(c, "train.epochs");
  t.batch_size = as_int(c, "train.batch_size");
  t.learning_rate = c.get_float("train.learning_rate");
  t.seed = as_seed(c, "train.seed");
  t.checkpoint_every = as_int(c, "train.checkpoint_every");
  t.eval_every = as_int(c, "train.eval_every");
  t.loss = loss_from_string(c.get_string("train.loss"));
  t.mask_input = c.get_bool("train.mask_input");
  t.mask_cutoff = c.get_float("train.mask_cutoff");
  t.mirror_y = c.get_bool("train.mirror_y");
  t.validate();
  return t;
}

}  // namespace urbanflow
