#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace emutriage {

// Throw Error{IoError} on failure.
std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);
void write_binary_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF tolerated.
/// Blank lines are skipped.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);

}  // namespace emutriage
