#pragma once

#include <cstddef>
#include <string>

namespace sdb::kern {

// Data-parallel inner loops behind everything numeric: elementwise ops,
// reductions, vectorized exp, and the three GEMM forms the layer code needs.
//
// Two variants ship: a scalar reference and an AVX2 implementation selected
// at runtime (cpuid, overridable via SDB_KERNELS=scalar|avx2). Elementwise
// kernels and the GEMMs preserve the reference association order per output
// element, so scalar and AVX2 agree bit-for-bit there; reductions (dot, sum,
// sumsq_diff) and vexp use wider accumulators / a polynomial exp and agree
// to rounding only. Equivalence is pinned by tests/test_kernels.cpp.
struct Ops {
  const char* name;

  // elementwise, out may alias inputs
  void (*add)(const double* x, const double* y, double* out, std::size_t n);
  void (*sub)(const double* x, const double* y, double* out, std::size_t n);
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
  void (*scale)(double a, double* x, std::size_t n);
  void (*axpy)(double a, const double* x, double* y, std::size_t n);  // y += a*x
  // out = t*x + (1-t)*y, evaluated exactly in that form
  void (*lerp)(double t, const double* x, const double* y, double* out, std::size_t n);
  void (*relu)(const double* x, double* out, std::size_t n);
  void (*relu_bwd)(const double* x, const double* dy, double* dx, std::size_t n);
  // v = mom*v + g; w -= lr*v
  void (*sgd_momentum)(double* w, double* v, const double* g, double lr,
                       double mom, std::size_t n);

  // reductions
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*max)(const double* x, std::size_t n);  // n >= 1
  double (*sumsq_diff)(const double* x, const double* y, std::size_t n);

  void (*vexp)(const double* x, double* out, std::size_t n);

  // row-major GEMMs; accumulate=false overwrites C
  // C[MxN] (+)= A[MxK] * B[KxN]
  void (*gemm_nn)(std::size_t M, std::size_t N, std::size_t K, const double* A,
                  const double* B, double* C, bool accumulate);
  // C[MxN] (+)= A^T * B with A stored [KxM]
  void (*gemm_tn)(std::size_t M, std::size_t N, std::size_t K, const double* A,
                  const double* B, double* C, bool accumulate);
  // C[MxN] (+)= A * B^T with B stored [NxK]
  void (*gemm_nt)(std::size_t M, std::size_t N, std::size_t K, const double* A,
                  const double* B, double* C, bool accumulate);
};

enum class Variant { scalar, avx2 };

const Ops& scalar_ops();
bool avx2_supported();          // build- and cpu-level support
const Ops* avx2_ops_or_null();  // null when not compiled in

// Active dispatch. First call resolves from CPU features and the
// SDB_KERNELS env var; set_variant overrides explicitly.
const Ops& ops();
bool set_variant(Variant v);
Variant active_variant();
std::string variant_name(Variant v);

}  // namespace sdb::kern
