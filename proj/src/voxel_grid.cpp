#include "urbanflow/voxel_grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "urbanflow/errors.hpp"

namespace urbanflow {

namespace {

// Metadata is stored at f32 precision so that VXG1 round trips are exact.
double f32(double v) { return static_cast<float>(v); }
Vec3 f32(const Vec3& v) { return {f32(v[0]), f32(v[1]), f32(v[2])}; }

void check_dims(const Dims3& dims, int channels) {
  for (auto d : dims) {
    if (d <= 0) throw ShapeError("grid dims must be positive");
  }
  if (channels < 1) throw ChannelError("grid needs at least one channel");
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

float get_f32(std::string_view bytes, std::size_t offset) {
  return std::bit_cast<float>(get_u32(bytes, offset));
}

}  // namespace

VoxelGrid::VoxelGrid(Dims3 dims, int channels, double resolution, Vec3 origin)
    : dims_(dims), channels_(channels), resolution_(f32(resolution)), origin_(f32(origin)) {
  check_dims(dims, channels);
  data_.assign(static_cast<std::size_t>(voxel_count() * channels), 0.0f);
}

VoxelGrid::VoxelGrid(Dims3 dims, int channels, std::vector<float> data,
                     double resolution, Vec3 origin)
    : dims_(dims),
      channels_(channels),
      resolution_(f32(resolution)),
      origin_(f32(origin)),
      data_(std::move(data)) {
  check_dims(dims, channels);
  if (data_.size() != static_cast<std::size_t>(voxel_count() * channels)) {
    std::ostringstream msg;
    msg << "grid data length " << data_.size() << " != nx*ny*nz*C = "
        << voxel_count() * channels;
    throw ShapeError(msg.str());
  }
}

std::span<float> VoxelGrid::channel(int c) {
  const auto n = static_cast<std::size_t>(voxel_count());
  return std::span<float>(data_).subspan(static_cast<std::size_t>(c) * n, n);
}

std::span<const float> VoxelGrid::channel(int c) const {
  const auto n = static_cast<std::size_t>(voxel_count());
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(c) * n, n);
}

bool VoxelGrid::same_geometry(const VoxelGrid& other) const {
  return dims_ == other.dims_ && resolution_ == other.resolution_ &&
         origin_ == other.origin_;
}

bool VoxelGrid::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool VoxelGrid::is_binary() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return v == 0.0f || v == 1.0f; });
}

void require_channels(const VoxelGrid& grid, int channels, std::string_view what) {
  if (grid.channels() != channels) {
    std::ostringstream msg;
    msg << what << ": expected " << channels << " channel(s), got " << grid.channels();
    throw ChannelError(msg.str());
  }
}

std::string encode_vxg_body(const VoxelGrid& grid) {
  std::string out;
  out.reserve(grid.size() * 4);
  for (float v : grid.data()) put_f32(out, v);
  return out;
}

std::string encode_vxg(const VoxelGrid& grid) {
  std::string out;
  out.reserve(kVxgHeaderBytes + grid.size() * 4);
  out.append("VXG1");
  for (auto d : grid.dims()) put_u32(out, static_cast<std::uint32_t>(d));
  put_u32(out, static_cast<std::uint32_t>(grid.channels()));
  for (double o : grid.origin()) put_f32(out, static_cast<float>(o));
  put_f32(out, static_cast<float>(grid.resolution()));
  out.append(encode_vxg_body(grid));
  return out;
}

VoxelGrid decode_vxg(std::string_view bytes) {
  if (bytes.size() < kVxgHeaderBytes) throw IngestionError("VXG1: truncated header");
  if (bytes.substr(0, 4) != "VXG1") throw IngestionError("VXG1: bad magic");
  Dims3 dims{};
  for (int i = 0; i < 3; ++i) dims[i] = get_u32(bytes, 4 + 4 * i);
  const auto channels = get_u32(bytes, 16);
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0 || channels == 0) {
    throw IngestionError("VXG1: zero dimension or channel count");
  }
  Vec3 origin{};
  for (int i = 0; i < 3; ++i) origin[i] = get_f32(bytes, 20 + 4 * i);
  const double resolution = get_f32(bytes, 32);
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw IngestionError("VXG1: resolution must be positive and finite");
  }
  // u32 * u32 * u32 * u32 can overflow 64 bits only in theory; guard anyway.
  const unsigned __int128 count =
      static_cast<unsigned __int128>(dims[0]) * dims[1] * dims[2] * channels;
  const std::size_t body = bytes.size() - kVxgHeaderBytes;
  if (count * 4 != body) {
    std::ostringstream msg;
    msg << "VXG1: body is " << body << " bytes, header implies "
        << static_cast<std::uint64_t>(count) << " floats";
    throw IngestionError(msg.str());
  }
  std::vector<float> data(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = get_f32(bytes, kVxgHeaderBytes + 4 * i);
  }
  return VoxelGrid(dims, static_cast<int>(channels), std::move(data), resolution, origin);
}

void write_vxg(const std::filesystem::path& path, const VoxelGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  const auto bytes = encode_vxg(grid);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

VoxelGrid read_vxg(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_vxg(bytes);
  } catch (const IngestionError& e) {
    throw IngestionError(path.string() + ": " + e.what());
  }
}

}  // namespace urbanflow
