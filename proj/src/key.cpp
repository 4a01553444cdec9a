#include "sdb/key.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "sdb/checksum.hpp"
#include "sdb/kernels.hpp"
#include "sdb/rng.hpp"

namespace sdb::keying {
namespace {

constexpr char kMagic[8] = {'S', 'D', 'B', 'K', 'E', 'Y', 0, 0};
constexpr std::uint32_t kVersion = 1;

#pragma pack(push, 1)
struct KeyHeader {
  char magic[8];
  std::uint32_t version;
  std::uint64_t seed;
  double lambda;
  std::uint32_t h, w, c;
};
#pragma pack(pop)

std::vector<float> pattern_f32(const Key& key) {
  std::vector<float> out(static_cast<std::size_t>(key.pattern.size()));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(key.pattern.data[i]);
  return out;
}

}  // namespace

Key generate_key(std::uint64_t seed, std::int64_t h, std::int64_t w, std::int64_t c,
                 double lambda) {
  require(h >= 1 && w >= 1 && c >= 1, ErrorCategory::parameter,
          "key shape dims must be >= 1, got (" + std::to_string(h) + "," +
              std::to_string(w) + "," + std::to_string(c) + ")");
  require(lambda > 0.0 && lambda < 1.0, ErrorCategory::parameter,
          "key lambda must lie strictly in (0,1), got " + std::to_string(lambda));

  Key key;
  key.seed = seed;
  key.lambda = lambda;
  key.height = h;
  key.width = w;
  key.channels = c;
  key.pattern = Tensor({h, w, c});

  rng::Prng prng(rng::derive_seed(seed, "key-pattern"));
  for (auto& v : key.pattern.data) v = static_cast<double>(prng.uniform_f32());
  return key;
}

Tensor embed_key(const Tensor& x, const Key& key) {
  const std::int64_t n = key.pattern.size();
  const bool batched = x.rank() == 4;
  require(batched || x.rank() == 3, ErrorCategory::shape,
          "embed_key expects an image (h,w,c) or batch (n,h,w,c), got " + x.shape_str());
  const std::size_t off = batched ? 1 : 0;
  bool match = x.rank() == static_cast<std::int64_t>(3 + off);
  for (int i = 0; match && i < 3; ++i)
    match = x.shape[off + static_cast<std::size_t>(i)] ==
            key.pattern.shape[static_cast<std::size_t>(i)];
  require(match, ErrorCategory::shape,
          "embed_key: input " + x.shape_str() + " does not match key pattern " +
              key.pattern.shape_str());

  Tensor out(x.shape);
  const std::int64_t rows_n = batched ? x.shape[0] : 1;
  const auto& k = kern::ops();
  for (std::int64_t r = 0; r < rows_n; ++r)
    k.lerp(key.lambda, x.ptr() + r * n, key.pattern.ptr(), out.ptr() + r * n,
           static_cast<std::size_t>(n));
  return out;
}

void save_key(const Key& key, const std::filesystem::path& path) {
  KeyHeader hdr{};
  std::memcpy(hdr.magic, kMagic, sizeof(kMagic));
  hdr.version = kVersion;
  hdr.seed = key.seed;
  hdr.lambda = key.lambda;
  hdr.h = static_cast<std::uint32_t>(key.height);
  hdr.w = static_cast<std::uint32_t>(key.width);
  hdr.c = static_cast<std::uint32_t>(key.channels);

  const std::vector<float> payload = pattern_f32(key);

  Fnv64 sum;
  sum.update(&hdr, sizeof(hdr));
  sum.update(payload.data(), payload.size() * sizeof(float));
  const std::uint64_t digest = sum.digest();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCategory::io, "cannot open key file for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
  require(out.good(), ErrorCategory::io, "failed writing key file: " + path.string());
}

Key load_key(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot open key file: " + path.string());

  KeyHeader hdr{};
  in.read(reinterpret_cast<char*>(&hdr), sizeof(hdr));
  require(in.gcount() == sizeof(hdr), ErrorCategory::integrity,
          "key file truncated (header): " + path.string());
  require(std::memcmp(hdr.magic, kMagic, sizeof(kMagic)) == 0, ErrorCategory::integrity,
          "not a key file: " + path.string());
  require(hdr.version == kVersion, ErrorCategory::version,
          "unsupported key file version " + std::to_string(hdr.version));

  const std::size_t n = static_cast<std::size_t>(hdr.h) * hdr.w * hdr.c;
  std::vector<float> payload(n);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  require(static_cast<std::size_t>(in.gcount()) == n * sizeof(float),
          ErrorCategory::integrity, "key file truncated (payload): " + path.string());

  std::uint64_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  require(in.gcount() == sizeof(stored), ErrorCategory::integrity,
          "key file truncated (checksum): " + path.string());

  Fnv64 sum;
  sum.update(&hdr, sizeof(hdr));
  sum.update(payload.data(), payload.size() * sizeof(float));
  require(sum.digest() == stored, ErrorCategory::integrity,
          "key file checksum mismatch: " + path.string());

  Key key;
  key.seed = hdr.seed;
  key.lambda = hdr.lambda;
  key.height = hdr.h;
  key.width = hdr.w;
  key.channels = hdr.c;
  key.pattern = Tensor({key.height, key.width, key.channels});
  for (std::size_t i = 0; i < n; ++i) key.pattern.data[i] = static_cast<double>(payload[i]);
  return key;
}

std::string key_fingerprint(const Key& key) {
  Fnv64 f;
  f.update_pod(key.seed);
  f.update_pod(key.lambda);
  f.update_pod(key.height);
  f.update_pod(key.width);
  f.update_pod(key.channels);
  const std::vector<float> payload = pattern_f32(key);
  f.update(payload.data(), payload.size() * sizeof(float));
  return hex16(f.digest());
}

}  // namespace sdb::keying
