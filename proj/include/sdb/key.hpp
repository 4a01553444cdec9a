#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sdb/tensor.hpp"

namespace sdb::keying {

// Secret key gating access to a wrapped teacher's knowledge: a random
// pattern blended into inputs as  x~ = lambda*x + (1-lambda)*pattern.
// Immutable after creation; embed_key is a pure function.
struct Key {
  std::uint64_t seed = 0;
  double lambda = 0.5;
  std::int64_t height = 0, width = 0, channels = 0;
  Tensor pattern;  // (h,w,c), each element an exact f32 value in [0,1]

  // Degenerate-lambda copy for tests (lambda in {0,1} collapses the blend).
  Key with_lambda(double l) const {
    Key k = *this;
    k.lambda = l;
    return k;
  }
};

// Pattern elements are drawn i.i.d. uniform on [0,1) from a seeded
// deterministic generator, quantized to f32 so the on-disk payload round
// trips bit-exactly. Same (seed, shape) always reproduces the pattern.
Key generate_key(std::uint64_t seed, std::int64_t h, std::int64_t w, std::int64_t c,
                 double lambda);

// x~ = lambda*x + (1-lambda)*pattern, elementwise; x is either a single
// image (h,w,c) or a batch (n,h,w,c) with the pattern broadcast over rows.
Tensor embed_key(const Tensor& x, const Key& key);

void save_key(const Key& key, const std::filesystem::path& path);
Key load_key(const std::filesystem::path& path);

// Deterministic 16-hex-digit digest over (seed, lambda, shape, pattern).
std::string key_fingerprint(const Key& key);

}  // namespace sdb::keying
