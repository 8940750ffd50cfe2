#ifndef HARMICL_UTIL_HPP
#define HARMICL_UTIL_HPP

#include <filesystem>
#include <string>
#include <string_view>

namespace harmicl {

// Hex-encoded SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

std::string base64_encode(std::string_view bytes);

// Whole file as bytes; throws std::runtime_error naming the path on failure.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

std::string to_lower(std::string_view s);

// UTC timestamp, ISO-8601 with millisecond precision.
std::string utc_timestamp();

}  // namespace harmicl

#endif  // HARMICL_UTIL_HPP
