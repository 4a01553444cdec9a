#include <atomic>
#include <cstdlib>
#include <cstring>
#include <string>

#include "sdb/kernels.hpp"

namespace sdb::kern {
namespace {

std::atomic<const Ops*> g_active{nullptr};
std::atomic<Variant> g_variant{Variant::scalar};

const Ops* resolve_default() {
  const char* env = std::getenv("SDB_KERNELS");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) {
      g_variant.store(Variant::scalar);
      return &scalar_ops();
    }
    if (std::strcmp(env, "avx2") == 0 && avx2_supported()) {
      g_variant.store(Variant::avx2);
      return avx2_ops_or_null();
    }
  }
  if (avx2_supported()) {
    g_variant.store(Variant::avx2);
    return avx2_ops_or_null();
  }
  g_variant.store(Variant::scalar);
  return &scalar_ops();
}

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
  return avx2_ops_or_null() != nullptr && __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const Ops& ops() {
  const Ops* p = g_active.load(std::memory_order_acquire);
  if (p == nullptr) {
    p = resolve_default();
    g_active.store(p, std::memory_order_release);
  }
  return *p;
}

bool set_variant(Variant v) {
  if (v == Variant::avx2) {
    if (!avx2_supported()) return false;
    g_active.store(avx2_ops_or_null(), std::memory_order_release);
    g_variant.store(v);
    return true;
  }
  g_active.store(&scalar_ops(), std::memory_order_release);
  g_variant.store(v);
  return true;
}

Variant active_variant() {
  ops();  // force resolution
  return g_variant.load();
}

std::string variant_name(Variant v) {
  return v == Variant::avx2 ? "avx2" : "scalar";
}

}  // namespace sdb::kern
