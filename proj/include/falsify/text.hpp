#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace falsify::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::string collapse_whitespace(std::string_view s);

/// Lowercase, trim, collapse internal whitespace, strip trailing punctuation.
std::string normalize_label(std::string_view s);

/// Lowercased alphanumeric runs.
std::vector<std::string> tokenize(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);

bool starts_with_ci(std::string_view s, std::string_view prefix);

}  // namespace falsify::text

namespace falsify::fsutil {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace falsify::fsutil
