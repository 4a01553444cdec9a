#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace sdb {

// Streaming FNV-1a (64-bit). Used for file integrity trailers, key
// fingerprints, dataset/model checksums, and config hashes.
class Fnv64 {
 public:
  Fnv64& update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ull;
    }
    return *this;
  }

  template <typename T>
  Fnv64& update_pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    return update(&v, sizeof(T));
  }

  Fnv64& update_string(const std::string& s) {
    std::uint64_t n = s.size();
    update_pod(n);
    return update(s.data(), s.size());
  }

  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

inline std::string hex16(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace sdb
