#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace dyfn::io {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_bytes(const fs::path& path);
std::string read_text(const fs::path& path);

/// Writes through a temporary sibling file and renames it into place.
void write_atomic(const fs::path& path, std::string_view bytes);
void write_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes);

nlohmann::json read_json(const fs::path& path);
/// Pretty-printed, key-sorted, newline-terminated.
void write_json(const fs::path& path, const nlohmann::json& j);

/// FNV-1a 64 over a byte range, hex-encoded; used for config hashes and
/// frozen-constant checksums.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace dyfn::io
