#pragma once

#include <charconv>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nestcv::detail {

std::vector<std::string_view> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

// Shortest decimal spelling that parses back to the same double.
std::string format_double(double v);

// Parses an integer field; returns false on junk.
bool parse_int(std::string_view s, long long& out);
bool parse_double(std::string_view s, double& out);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file, fsyncs, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

}  // namespace nestcv::detail
