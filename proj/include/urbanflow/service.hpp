#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "urbanflow/config.hpp"
#include "urbanflow/flow_oracle.hpp"
#include "urbanflow/unet.hpp"
#include "urbanflow/voxel_grid.hpp"

namespace httplib {
class Server;
}

namespace urbanflow {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string forward_checkpoint;
  std::string reverse_checkpoint;
  int max_concurrent_predictions = 4;
  int max_concurrent_solves = 1;
  std::int64_t max_voxels = 4194304;
  std::int64_t max_oracle_voxels = 131072;
  std::int64_t max_body_bytes = 268435456;
  int threads = 8;
  FlowConfig flow;  // oracle defaults; requests may override fields

  void validate() const;
};

/// [service.*] keys plus the flow defaults, then URBANFLOW_SERVICE_*
/// environment overrides (applied by the caller through Config::apply_env).
ServiceConfig service_config(const Config& c);

// Wire format: {"dims": [nx, ny, nz], "channels": C, "resolution": r,
// "origin": [x, y, z], "data": base64 of the VXG1 body}.
nlohmann::json grid_to_payload(const VoxelGrid& g);
/// Throws ApiError (400 malformed, 413 over `max_voxels`).
VoxelGrid grid_from_payload(const nlohmann::json& j, std::int64_t max_voxels);

std::string base64_encode(std::string_view bytes);
/// Strict: rejects characters outside the alphabet and bad padding.
std::optional<std::string> base64_decode(std::string_view text);

struct ApiError : std::runtime_error {
  ApiError(int status, const std::string& what) : std::runtime_error(what), status(status) {}
  int status;
};

/// Runs `model.predict` on a grid the network cannot take directly by
/// padding the high end of each axis up to padded_dims, then cropping the
/// output back. Forward pads with air; reverse pads with undisturbed
/// inflow (velocity_scale_mps, 0, 0).
VoxelGrid predict_padded(const UNet& model, const VoxelGrid& input, Dims3* padding = nullptr);

/// Counting admission gate: try_acquire fails instead of queueing.
class Admission {
 public:
  explicit Admission(int limit) : limit_(limit) {}
  bool try_acquire();
  void release() { --in_flight_; }
  int in_flight() const { return in_flight_.load(); }

 private:
  int limit_;
  std::atomic<int> in_flight_{0};
};

struct ApiRequest {
  std::string method;
  std::string path;
  std::multimap<std::string, std::string> params;
  std::string content_type;
  std::string accept;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

struct LoadedModel {
  std::string id;
  std::string path;
  UNet model;
};

/// The /v1 HTTP API.
///
/// handle() is the whole request logic and never throws; the HTTP layer
/// only translates. Models are immutable after construction.
class InferenceService {
 public:
  /// Loads the checkpoints named in `cfg` (empty path = not served).
  explicit InferenceService(ServiceConfig cfg);
  InferenceService(ServiceConfig cfg, std::optional<LoadedModel> forward,
                   std::optional<LoadedModel> reverse);
  ~InferenceService();

  ApiResponse handle(const ApiRequest& req);

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void listen();
  void stop();
  /// Blocks until a server started with start() stops.
  void wait();

  /// One JSON line per request: path, status, ms, voxels. Null disables.
  void set_log(std::ostream* out) { log_ = out; }
  const ServiceConfig& config() const { return cfg_; }

 private:
  ApiResponse dispatch(const ApiRequest& req, std::int64_t& voxels);
  ApiResponse predict_forward(const ApiRequest& req, std::int64_t& voxels);
  ApiResponse predict_reverse(const ApiRequest& req, std::int64_t& voxels);
  ApiResponse oracle_solve(const ApiRequest& req, std::int64_t& voxels);
  ApiResponse field_magnitude(const ApiRequest& req, std::int64_t& voxels);
  ApiResponse field_threshold(const ApiRequest& req, std::int64_t& voxels);
  ApiResponse models() const;
  void setup_server();

  ServiceConfig cfg_;
  std::optional<LoadedModel> forward_, reverse_;
  Admission predictions_, solves_;
  std::ostream* log_ = nullptr;
  std::mutex log_mu_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace urbanflow
