#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "urbanflow/unet.hpp"

namespace urbanflow {

// CKP1: 'C','K','P','1', u32 header length, JSON header
// {"format", "model_config", "parameters": [{name, shape, offset}], "extra"},
// then little-endian f32 parameter blobs; offsets are bytes from the end of
// the header.
std::string encode_checkpoint(const UNet& model, const nlohmann::json& extra = nlohmann::json::object());
/// Rebuilds the model from the echoed config and checks every manifest
/// entry against it. Throws IngestionError on any inconsistency.
UNet decode_checkpoint(std::string_view bytes, nlohmann::json* extra = nullptr);

void save_checkpoint(const std::filesystem::path& path, const UNet& model,
                     const nlohmann::json& extra = nlohmann::json::object());
UNet load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// FNV-1a 64 of the bytes in hex; a stable content tag.
std::string content_digest(std::string_view bytes);

}  // namespace urbanflow
