#include "urbanflow/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include <boost/beast/core/detail/base64.hpp>
#include <httplib.h>

#include "urbanflow/checkpoint.hpp"
#include "urbanflow/errors.hpp"
#include "urbanflow/field_ops.hpp"
#include "urbanflow/voxelizer.hpp"

namespace urbanflow {

namespace b64 = boost::beast::detail::base64;
using nlohmann::json;

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw ValidationError("service.port must be in [0, 65535]");
  if (max_concurrent_predictions < 1) throw ValidationError("service.max_concurrent_predictions must be >= 1");
  if (max_concurrent_solves < 1) throw ValidationError("service.max_concurrent_solves must be >= 1");
  if (max_voxels < 1) throw ValidationError("service.max_voxels must be >= 1");
  if (max_oracle_voxels < 1) throw ValidationError("service.max_oracle_voxels must be >= 1");
  if (max_body_bytes < 1024) throw ValidationError("service.max_body_bytes must be >= 1024");
  if (threads < 1) throw ValidationError("service.threads must be >= 1");
  flow.validate();
}

ServiceConfig service_config(const Config& c) {
  ServiceConfig s;
  s.host = c.get_string("service.host");
  s.port = static_cast<int>(c.get_int("service.port"));
  s.forward_checkpoint = c.get_string("service.forward_checkpoint");
  s.reverse_checkpoint = c.get_string("service.reverse_checkpoint");
  s.max_concurrent_predictions = static_cast<int>(c.get_int("service.max_concurrent_predictions"));
  s.max_concurrent_solves = static_cast<int>(c.get_int("service.max_concurrent_solves"));
  s.max_voxels = c.get_int("service.max_voxels");
  s.max_oracle_voxels = c.get_int("service.max_oracle_voxels");
  s.max_body_bytes = c.get_int("service.max_body_bytes");
  s.threads = static_cast<int>(c.get_int("service.threads"));
  s.flow = flow_config(c);
  s.validate();
  return s;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::optional<std::string> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) return std::nullopt;
  std::size_t pad = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool alpha = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
                       c == '+' || c == '/';
    if (c == '=') {
      if (i + 2 < text.size()) return std::nullopt;
      ++pad;
    } else if (!alpha || pad > 0) {
      return std::nullopt;
    }
  }
  std::string out(b64::decoded_size(text.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  if (read != text.size() - pad) return std::nullopt;
  out.resize(written);
  return out;
}

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& s, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(s, v);
}

std::uint32_t get_u32(std::string_view s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

std::int64_t checked_voxels(const Dims3& d, std::int64_t limit) {
  for (auto n : d)
    if (n < 1) throw ApiError(400, "dims must be positive");
  const auto v = static_cast<__int128>(d[0]) * d[1] * d[2];
  if (v > limit)
    throw ApiError(413, "grid of " + std::to_string(static_cast<long long>(v)) + " voxels exceeds the limit of " +
                            std::to_string(limit));
  return static_cast<std::int64_t>(v);
}

}  // namespace

json grid_to_payload(const VoxelGrid& g) {
  return {{"dims", g.dims()},
          {"channels", g.channels()},
          {"resolution", g.resolution()},
          {"origin", g.origin()},
          {"data", base64_encode(encode_vxg_body(g))}};
}

VoxelGrid grid_from_payload(const json& j, std::int64_t max_voxels) {
  if (!j.is_object()) throw ApiError(400, "grid payload must be an object");
  auto number_array = [&](const char* key, std::size_t n) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != n)
      throw ApiError(400, std::string("grid.") + key + " must be an array of " + std::to_string(n) + " numbers");
    for (const auto& v : j[key])
      if (!v.is_number()) throw ApiError(400, std::string("grid.") + key + " must hold numbers");
    return j[key];
  };
  const auto& dj = number_array("dims", 3);
  Dims3 dims{};
  for (int i = 0; i < 3; ++i) {
    if (!dj[i].is_number_integer() || dj[i].get<std::int64_t>() < 1 || dj[i].get<std::int64_t>() > 0xFFFFFFFFll)
      throw ApiError(400, "grid.dims must be positive integers");
    dims[i] = dj[i].get<std::int64_t>();
  }
  if (!j.contains("channels") || !j["channels"].is_number_integer() || j["channels"].get<std::int64_t>() < 1 ||
      j["channels"].get<std::int64_t>() > 16)
    throw ApiError(400, "grid.channels must be an integer in [1, 16]");
  const auto channels = j["channels"].get<int>();
  const double res = j.contains("resolution") && j["resolution"].is_number() ? j["resolution"].get<double>() : -1.0;
  if (!(res > 0) || !std::isfinite(res)) throw ApiError(400, "grid.resolution must be a positive number");
  Vec3 origin{0, 0, 0};
  if (j.contains("origin")) {
    const auto& oj = number_array("origin", 3);
    for (int i = 0; i < 3; ++i) origin[i] = oj[i].get<double>();
  }
  checked_voxels(dims, max_voxels);
  if (!j.contains("data") || !j["data"].is_string()) throw ApiError(400, "grid.data must be a base64 string");
  auto body = base64_decode(j["data"].get_ref<const std::string&>());
  if (!body) throw ApiError(400, "grid.data is not valid base64");
  std::string bytes = "VXG1";
  for (int i = 0; i < 3; ++i) put_u32(bytes, static_cast<std::uint32_t>(dims[i]));
  put_u32(bytes, static_cast<std::uint32_t>(channels));
  for (int i = 0; i < 3; ++i) put_f32(bytes, static_cast<float>(origin[i]));
  put_f32(bytes, static_cast<float>(res));
  bytes += *body;
  try {
    return decode_vxg(bytes);
  } catch (const IngestionError& e) {
    throw ApiError(400, e.what());
  }
}

VoxelGrid predict_padded(const UNet& model, const VoxelGrid& input, Dims3* padding) {
  const auto& cfg = model.config();
  const Dims3 want = padded_dims(input.dims(), cfg.levels);
  const Dims3 pad{want[0] - input.nx(), want[1] - input.ny(), want[2] - input.nz()};
  if (padding) *padding = pad;
  if (pad == Dims3{0, 0, 0}) return model.predict(input);

  VoxelGrid big(want, input.channels(), input.resolution(), input.origin());
  if (cfg.direction == Direction::Reverse && input.channels() == 3)
    for (auto& v : big.channel(0)) v = static_cast<float>(cfg.velocity_scale_mps);
  for (int c = 0; c < input.channels(); ++c)
    for (std::int64_t z = 0; z < input.nz(); ++z)
      for (std::int64_t y = 0; y < input.ny(); ++y)
        for (std::int64_t x = 0; x < input.nx(); ++x) big.at(x, y, z, c) = input.at(x, y, z, c);
  const VoxelGrid out_big = model.predict(big);
  VoxelGrid out(input.dims(), out_big.channels(), input.resolution(), input.origin());
  for (int c = 0; c < out.channels(); ++c)
    for (std::int64_t z = 0; z < out.nz(); ++z)
      for (std::int64_t y = 0; y < out.ny(); ++y)
        for (std::int64_t x = 0; x < out.nx(); ++x) out.at(x, y, z, c) = out_big.at(x, y, z, c);
  return out;
}

bool Admission::try_acquire() {
  int cur = in_flight_.load();
  while (cur < limit_)
    if (in_flight_.compare_exchange_weak(cur, cur + 1)) return true;
  return false;
}

namespace {

struct Slot {
  Admission& gate;
  explicit Slot(Admission& g, const char* what) : gate(g) {
    if (!gate.try_acquire()) throw ApiError(503, std::string("too many concurrent ") + what + "; retry later");
  }
  ~Slot() { gate.release(); }
  Slot(const Slot&) = delete;
  Slot& operator=(const Slot&) = delete;
};

ApiResponse json_response(int status, const json& j) {
  ApiResponse r;
  r.status = status;
  r.body = j.dump();
  return r;
}

ApiResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", {{"status", status}, {"message", message}}}});
}

bool is_raw(const std::string& content_type) {
  return content_type.rfind("application/octet-stream", 0) == 0;
}

bool wants_raw(const ApiRequest& req) { return req.accept.find("application/octet-stream") != std::string::npos; }

std::optional<std::string> param(const ApiRequest& req, const std::string& key) {
  auto it = req.params.find(key);
  if (it == req.params.end()) return std::nullopt;
  return it->second;
}

bool flag(const ApiRequest& req, const json* body, const std::string& key) {
  if (auto v = param(req, key)) {
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0" || v->empty()) return false;
    throw ApiError(400, "query parameter " + key + " must be true or false");
  }
  if (body && body->contains(key)) {
    if (!(*body)[key].is_boolean()) throw ApiError(400, key + " must be a boolean");
    return (*body)[key].get<bool>();
  }
  return false;
}

json parse_json_body(const ApiRequest& req) {
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw ApiError(400, "request body is not valid JSON");
  if (!j.is_object()) throw ApiError(400, "request body must be a JSON object");
  return j;
}

/// The request grid, from a raw VXG1 upload or the "grid" member of the
/// JSON envelope. `body` receives the envelope (null for raw uploads).
VoxelGrid request_grid(const ApiRequest& req, std::int64_t max_voxels, std::optional<json>& body,
                       const char* member = "grid") {
  if (is_raw(req.content_type)) {
    if (req.body.size() >= kVxgHeaderBytes && req.body.compare(0, 4, "VXG1") == 0) {
      Dims3 d{};
      for (int i = 0; i < 3; ++i) d[i] = get_u32(req.body, 4 + 4 * i);
      checked_voxels(d, max_voxels);
    }
    try {
      return decode_vxg(req.body);
    } catch (const IngestionError& e) {
      throw ApiError(400, e.what());
    }
  }
  body = parse_json_body(req);
  if (!body->contains(member)) throw ApiError(400, std::string("missing \"") + member + "\"");
  return grid_from_payload((*body)[member], max_voxels);
}

void require_finite(const VoxelGrid& g, const char* what) {
  if (!g.all_finite()) throw ApiError(422, std::string(what) + " contains NaN or infinite values");
}

void require_occupancy(const VoxelGrid& g) {
  if (g.channels() != 1) throw ApiError(422, "occupancy must have 1 channel, got " + std::to_string(g.channels()));
  require_finite(g, "occupancy");
  if (!g.is_binary()) throw ApiError(422, "occupancy must contain only 0 and 1");
}

ApiResponse grid_response(const ApiRequest& req, const VoxelGrid& g, json meta) {
  if (wants_raw(req)) {
    ApiResponse r;
    r.content_type = "application/octet-stream";
    r.body = encode_vxg(g);
    for (auto& [k, v] : meta.items())
      if (!v.is_object() && !v.is_array()) r.headers["X-" + k] = v.is_string() ? v.get<std::string>() : v.dump();
      else r.headers["X-" + k] = v.dump();
    return r;
  }
  meta["grid"] = grid_to_payload(g);
  return json_response(200, meta);
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

LoadedModel load_model(const std::string& path, Direction want) {
  const std::string bytes = read_file(path);
  UNet m = decode_checkpoint(bytes);
  if (m.config().direction != want)
    throw ValidationError(path + " holds a " + to_string(m.config().direction) + " model, expected " +
                          to_string(want));
  return {to_string(want) + "-" + content_digest(bytes), path, std::move(m)};
}

}  // namespace

InferenceService::InferenceService(ServiceConfig cfg)
    : cfg_(std::move(cfg)),
      predictions_(cfg_.max_concurrent_predictions),
      solves_(cfg_.max_concurrent_solves) {
  cfg_.validate();
  if (!cfg_.forward_checkpoint.empty()) forward_ = load_model(cfg_.forward_checkpoint, Direction::Forward);
  if (!cfg_.reverse_checkpoint.empty()) reverse_ = load_model(cfg_.reverse_checkpoint, Direction::Reverse);
}

InferenceService::InferenceService(ServiceConfig cfg, std::optional<LoadedModel> forward,
                                   std::optional<LoadedModel> reverse)
    : cfg_(std::move(cfg)),
      forward_(std::move(forward)),
      reverse_(std::move(reverse)),
      predictions_(cfg_.max_concurrent_predictions),
      solves_(cfg_.max_concurrent_solves) {
  cfg_.validate();
  if (forward_ && forward_->model.config().direction != Direction::Forward)
    throw ValidationError("forward slot holds a reverse model");
  if (reverse_ && reverse_->model.config().direction != Direction::Reverse)
    throw ValidationError("reverse slot holds a forward model");
}

InferenceService::~InferenceService() { stop(); }

ApiResponse InferenceService::handle(const ApiRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  std::int64_t voxels = 0;
  ApiResponse res;
  try {
    if (static_cast<std::int64_t>(req.body.size()) > cfg_.max_body_bytes)
      throw ApiError(413, "request body exceeds " + std::to_string(cfg_.max_body_bytes) + " bytes");
    res = dispatch(req, voxels);
  } catch (const ApiError& e) {
    res = error_response(e.status, e.what());
  } catch (const ChannelError& e) {
    res = error_response(422, e.what());
  } catch (const ShapeError& e) {
    res = error_response(422, e.what());
  } catch (const ValidationError& e) {
    res = error_response(422, e.what());
  } catch (const json::exception& e) {
    res = error_response(400, std::string("malformed request: ") + e.what());
  } catch (const std::bad_alloc&) {
    res = error_response(507, "out of memory");
  } catch (const std::exception& e) {
    res = error_response(500, e.what());
  }
  if (log_) {
    const json line{{"method", req.method}, {"path", req.path}, {"status", res.status},
                    {"ms", std::round(ms_since(t0) * 1000.0) / 1000.0}, {"voxels", voxels}};
    std::lock_guard lock(log_mu_);
    *log_ << line.dump() << '\n' << std::flush;
  }
  return res;
}

ApiResponse InferenceService::dispatch(const ApiRequest& req, std::int64_t& voxels) {
  struct Route {
    const char* path;
    const char* method;
  };
  static const Route routes[] = {
      {"/v1/predict/forward", "POST"}, {"/v1/predict/reverse", "POST"}, {"/v1/oracle/solve", "POST"},
      {"/v1/field/magnitude", "POST"}, {"/v1/field/threshold", "POST"}, {"/v1/health", "GET"},
      {"/v1/models", "GET"},
  };
  const Route* route = nullptr;
  for (const auto& r : routes)
    if (req.path == r.path) route = &r;
  if (!route) throw ApiError(404, "no such endpoint: " + req.path);
  if (req.method != route->method)
    throw ApiError(405, req.path + " accepts " + route->method + ", not " + req.method);

  const std::string p = req.path;
  if (p == "/v1/health")
    return json_response(200, {{"status", "ok"},
                               {"models", {{"forward", forward_.has_value()}, {"reverse", reverse_.has_value()}}}});
  if (p == "/v1/models") return models();
  if (p == "/v1/predict/forward") return predict_forward(req, voxels);
  if (p == "/v1/predict/reverse") return predict_reverse(req, voxels);
  if (p == "/v1/oracle/solve") return oracle_solve(req, voxels);
  if (p == "/v1/field/magnitude") return field_magnitude(req, voxels);
  return field_threshold(req, voxels);
}

ApiResponse InferenceService::models() const {
  json list = json::array();
  for (const auto* m : {&forward_, &reverse_}) {
    if (!*m) continue;
    const auto& lm = **m;
    list.push_back({{"id", lm.id},
                    {"direction", to_string(lm.model.config().direction)},
                    {"checkpoint", lm.path},
                    {"config", to_json(lm.model.config())},
                    {"parameters", lm.model.count_parameters()}});
  }
  return json_response(200, {{"models", list}});
}

ApiResponse InferenceService::predict_forward(const ApiRequest& req, std::int64_t& voxels) {
  std::optional<json> body;
  const VoxelGrid occ = request_grid(req, cfg_.max_voxels, body);
  voxels = occ.voxel_count();
  require_occupancy(occ);
  if (!forward_) throw ApiError(503, "no forward model is loaded");
  Slot slot(predictions_, "predictions");
  const auto t0 = std::chrono::steady_clock::now();
  Dims3 pad{};
  const VoxelGrid out = predict_padded(forward_->model, occ, &pad);
  return grid_response(req, out, {{"inference_ms", ms_since(t0)}, {"padding", pad}, {"model", forward_->id}});
}

ApiResponse InferenceService::predict_reverse(const ApiRequest& req, std::int64_t& voxels) {
  std::optional<json> body;
  const VoxelGrid in = request_grid(req, cfg_.max_voxels, body);
  voxels = in.voxel_count();
  std::string mode = "field";
  if (auto m = param(req, "mode")) mode = *m;
  else if (body && body->contains("mode")) {
    if (!(*body)["mode"].is_string()) throw ApiError(400, "mode must be a string");
    mode = (*body)["mode"].get<std::string>();
  }
  const bool mesh = flag(req, body ? &*body : nullptr, "mesh");
  if (mesh && wants_raw(req)) throw ApiError(406, "mesh=true needs a JSON response");
  if (!reverse_) throw ApiError(503, "no reverse model is loaded");
  VoxelGrid field;
  if (mode == "field") {
    if (in.channels() != 3)
      throw ApiError(422, "mode=field expects a 3-channel velocity field, got " + std::to_string(in.channels()) +
                              " channels");
    require_finite(in, "velocity field");
    field = in;
  } else if (mode == "mask") {
    if (in.channels() != 1)
      throw ApiError(422, "mode=mask expects a 1-channel mask, got " + std::to_string(in.channels()) + " channels");
    require_finite(in, "mask");
    if (!in.is_binary()) throw ApiError(422, "mask must contain only 0 and 1");
    field = mask_to_target_field(in, reverse_->model.config().velocity_scale_mps);
  } else {
    throw ApiError(422, "mode must be \"field\" or \"mask\", got \"" + mode + "\"");
  }
  Slot slot(predictions_, "predictions");
  const auto t0 = std::chrono::steady_clock::now();
  Dims3 pad{};
  const VoxelGrid out = predict_padded(reverse_->model, field, &pad);
  json meta{{"inference_ms", ms_since(t0)}, {"padding", pad}, {"model", reverse_->id}, {"mode", mode}};
  if (mesh) meta["mesh"] = to_json(grid_to_mesh(out, 0.5));
  return grid_response(req, out, meta);
}

ApiResponse InferenceService::oracle_solve(const ApiRequest& req, std::int64_t& voxels) {
  std::optional<json> body;
  const VoxelGrid occ = request_grid(req, cfg_.max_oracle_voxels, body);
  voxels = occ.voxel_count();
  require_occupancy(occ);
  FlowConfig flow = cfg_.flow;
  if (body && body->contains("flow")) {
    if (!(*body)["flow"].is_object()) throw ApiError(400, "flow must be an object");
    flow = flow_config_from_json((*body)["flow"], flow);
    if (flow.max_steps > cfg_.flow.max_steps)
      throw ApiError(422, "flow.max_steps may not exceed the service limit of " +
                              std::to_string(cfg_.flow.max_steps));
  }
  for (int a = 0; a < 3; ++a)
    if (occ.dims()[a] < 3) throw ApiError(422, "oracle grids need at least 3 voxels per axis");
  Slot slot(solves_, "oracle solves");
  const auto t0 = std::chrono::steady_clock::now();
  FlowSolution sol;
  try {
    sol = solve_steady(occ, flow);
  } catch (const SolverDiverged& e) {
    return json_response(409, {{"error", {{"status", 409}, {"message", e.what()}}}, {"steps", e.step()},
                               {"converged", false}});
  }
  if (!sol.converged) {
    return json_response(409, {{"error",
                                {{"status", 409},
                                 {"message", "oracle did not converge within " + std::to_string(flow.max_steps) +
                                                 " steps"}}},
                               {"steps", sol.steps},
                               {"residual", sol.residual},
                               {"converged", false},
                               {"residual_history", sol.residual_history}});
  }
  return grid_response(req, sol.velocity,
                       {{"solve_ms", ms_since(t0)}, {"steps", sol.steps}, {"residual", sol.residual},
                        {"converged", true}});
}

ApiResponse InferenceService::field_magnitude(const ApiRequest& req, std::int64_t& voxels) {
  std::optional<json> body;
  const VoxelGrid f = request_grid(req, cfg_.max_voxels, body);
  voxels = f.voxel_count();
  if (f.channels() != 3) throw ApiError(422, "magnitude expects 3 channels, got " + std::to_string(f.channels()));
  require_finite(f, "field");
  return grid_response(req, magnitude(f), json::object());
}

ApiResponse InferenceService::field_threshold(const ApiRequest& req, std::int64_t& voxels) {
  if (is_raw(req.content_type)) throw ApiError(415, "threshold takes a JSON envelope with grid and occupancy");
  std::optional<json> body;
  const VoxelGrid mag = request_grid(req, cfg_.max_voxels, body);
  voxels = mag.voxel_count();
  const VoxelGrid occ = request_grid(req, cfg_.max_voxels, body, "occupancy");
  if (!body->contains("cutoff") || !(*body)["cutoff"].is_number()) throw ApiError(400, "cutoff must be a number (m/s)");
  const double cutoff = (*body)["cutoff"].get<double>();
  if (mag.channels() != 1) throw ApiError(422, "threshold expects a 1-channel magnitude grid");
  require_finite(mag, "magnitude");
  require_occupancy(occ);
  if (mag.dims() != occ.dims()) throw ApiError(422, "magnitude and occupancy dims differ");
  return grid_response(req, threshold_low_wind(mag, cutoff, occ), {{"cutoff", cutoff}});
}

void InferenceService::setup_server() {
  server_ = std::make_unique<httplib::Server>();
  auto& svr = *server_;
  const int threads = cfg_.threads;
  svr.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  svr.set_payload_max_length(static_cast<std::size_t>(cfg_.max_body_bytes));
  auto handler = [this](const httplib::Request& hr, httplib::Response& out) {
    ApiRequest req;
    req.method = hr.method;
    req.path = hr.path;
    for (const auto& [k, v] : hr.params) req.params.emplace(k, v);
    req.content_type = hr.get_header_value("Content-Type");
    req.accept = hr.get_header_value("Accept");
    req.body = hr.body;
    ApiResponse r = handle(req);
    out.status = r.status;
    for (const auto& [k, v] : r.headers) out.set_header(k, v);
    out.set_content(std::move(r.body), r.content_type);
  };
  svr.Get(".*", handler);
  svr.Post(".*", handler);
  svr.Put(".*", handler);
  svr.Delete(".*", handler);
  svr.Patch(".*", handler);
  svr.Options(".*", handler);
  // errors raised inside httplib itself (oversized body, bad framing)
  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      const auto r = error_response(res.status, httplib::status_message(res.status));
      res.set_content(r.body, r.content_type);
    }
  });
  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
    const auto r = error_response(500, "internal error");
    res.status = 500;
    res.set_content(r.body, r.content_type);
  });
}

int InferenceService::start() {
  setup_server();
  int port = cfg_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(cfg_.host);
  } else if (!server_->bind_to_port(cfg_.host, port)) {
    port = -1;
  }
  if (port < 0) throw std::runtime_error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void InferenceService::listen() {
  setup_server();
  if (!server_->listen(cfg_.host, cfg_.port))
    throw std::runtime_error("cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port));
}

void InferenceService::wait() {
  if (thread_.joinable()) thread_.join();
}

void InferenceService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace urbanflow
