#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace pscore {

// 64-bit FNV-1a, used for text and vocabulary identity.
class Fnv1a {
 public:
  Fnv1a& bytes(std::span<const unsigned char> data) noexcept;
  Fnv1a& str(std::string_view s) noexcept;
  Fnv1a& u64(std::uint64_t v) noexcept;
  std::uint64_t value() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(std::string_view s);

// SHA-256 hex digest of a file's bytes, for manifests.
std::string sha256_file(const std::string& path);
std::string sha256_hex(std::string_view data);

}  // namespace pscore
