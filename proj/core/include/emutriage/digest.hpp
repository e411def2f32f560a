#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace emutriage {

// Lowercase hex digests backed by OpenSSL EVP.
std::string md5_hex(std::span<const std::uint8_t> bytes);
std::string md5_hex(std::string_view text);
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

bool is_lower_hex(std::string_view text, std::size_t length) noexcept;

}  // namespace emutriage
