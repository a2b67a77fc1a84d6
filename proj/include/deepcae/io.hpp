#pragma once

#include <filesystem>
#include <string>

namespace deepcae {

/// Whole-file read; throws IoError.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames over `path`. Parent
/// directories are created. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// Formats a double with round-trip precision (shortest form that parses back
/// to the same value).
std::string format_double(double v);

}  // namespace deepcae
