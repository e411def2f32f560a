#include "emutriage/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>
#include <stdexcept>

namespace emutriage {
namespace {

std::string evp_hex(const EVP_MD* md, const void* data, std::size_t size) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
  unsigned int out_len = 0;
  if (EVP_Digest(data, size, out.data(), &out_len, md, nullptr) != 1) {
    throw std::runtime_error("EVP_Digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(out_len * 2);
  for (unsigned int i = 0; i < out_len; ++i) {
    hex.push_back(kHex[out[i] >> 4]);
    hex.push_back(kHex[out[i] & 0x0f]);
  }
  return hex;
}

}  // namespace

std::string md5_hex(std::span<const std::uint8_t> bytes) {
  return evp_hex(EVP_md5(), bytes.data(), bytes.size());
}
std::string md5_hex(std::string_view text) { return evp_hex(EVP_md5(), text.data(), text.size()); }
std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  return evp_hex(EVP_sha256(), bytes.data(), bytes.size());
}
std::string sha256_hex(std::string_view text) {
  return evp_hex(EVP_sha256(), text.data(), text.size());
}

bool is_lower_hex(std::string_view text, std::size_t length) noexcept {
  if (text.size() != length) return false;
  for (char c : text) {
    const bool digit = c >= '0' && c <= '9';
    const bool lower = c >= 'a' && c <= 'f';
    if (!digit && !lower) return false;
  }
  return true;
}

}  // namespace emutriage
