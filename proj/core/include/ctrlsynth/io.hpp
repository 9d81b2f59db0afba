#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ctrlsynth {

/// Whole-file read; throws IoError when the file cannot be opened.
std::string read_text_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames it into place, so readers
/// never observe a half-written file. Creates parent directories.
void write_text_file(const std::filesystem::path& path, std::string_view content);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace ctrlsynth
