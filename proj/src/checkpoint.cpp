#include "urbanflow/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "urbanflow/errors.hpp"

namespace urbanflow {

namespace {

constexpr std::string_view kMagic = "CKP1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_checkpoint(const UNet& model, const nlohmann::json& extra) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  const auto& params = model.parameters();
  const auto& names = model.parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) {
    manifest.push_back({{"name", names[i]}, {"shape", params[i].shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(params[i].numel()) * 4;
  }
  const nlohmann::json header{{"format", "CKP1"},
                              {"model_config", to_json(model.config())},
                              {"parameters", manifest},
                              {"extra", extra}};
  const std::string h = header.dump();
  std::string out;
  out.reserve(8 + h.size() + offset);
  out.append(kMagic);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out.append(h);
  for (const auto& p : params)
    for (float v : p.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

UNet decode_checkpoint(std::string_view bytes, nlohmann::json* extra) {
  if (bytes.size() < 8) throw IngestionError("CKP1: truncated header");
  if (bytes.substr(0, 4) != kMagic) throw IngestionError("CKP1: bad magic");
  const std::uint32_t hlen = get_u32(bytes, 4);
  if (bytes.size() - 8 < hlen) throw IngestionError("CKP1: header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("CKP1: header is not JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(header.at("model_config"));
  } catch (const std::exception& e) {
    throw IngestionError(std::string("CKP1: invalid model_config: ") + e.what());
  }
  UNet model(cfg, 0);
  const std::string_view blob = bytes.substr(8 + hlen);
  try {
    const auto& manifest = header.at("parameters");
    auto& params = model.parameters();
    const auto& names = model.parameter_names();
    if (manifest.size() != params.size())
      throw IngestionError("CKP1: manifest lists " + std::to_string(manifest.size()) +
                           " parameters, model_config implies " + std::to_string(params.size()));
    std::uint64_t expected = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& e = manifest[i];
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      if (name != names[i] || shape != params[i].shape())
        throw IngestionError("CKP1: entry " + std::to_string(i) + " (" + name + " " +
                             shape_str(shape) + ") does not match " + names[i] + " " +
                             shape_str(params[i].shape()));
      if (offset != expected) throw IngestionError("CKP1: bad offset for " + name);
      const std::uint64_t n = static_cast<std::uint64_t>(params[i].numel());
      if (offset + 4 * n > blob.size()) throw IngestionError("CKP1: truncated blob for " + name);
      auto v = params[i].values();
      for (std::uint64_t k = 0; k < n; ++k)
        v[k] = std::bit_cast<float>(get_u32(blob, offset + 4 * k));
      expected += 4 * n;
    }
    if (expected != blob.size()) throw IngestionError("CKP1: trailing bytes after parameters");
    if (extra) *extra = header.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("CKP1: malformed manifest: ") + e.what());
  }
  return model;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_checkpoint(const std::filesystem::path& path, const UNet& model,
                     const nlohmann::json& extra) {
  write_file_atomic(path, encode_checkpoint(model, extra));
}

UNet load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra) {
  const std::string bytes = read_file(path);
  try {
    return decode_checkpoint(bytes, extra);
  } catch (const IngestionError& e) {
    throw IngestionError(path.string() + ": " + e.what());
  }
}

std::string content_digest(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace urbanflow
