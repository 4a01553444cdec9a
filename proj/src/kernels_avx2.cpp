// AVX2 kernel variants. Compiled with -mavx2 -ffp-contract=off; selected at
// runtime only when cpuid reports AVX2.
//
// Elementwise kernels and the GEMMs perform one mul+add per output element in
// the same k-order as the scalar reference, so they match it bit-for-bit.
// Reductions keep four lane accumulators and vexp uses a Cody-Waite +
// rational-polynomial evaluation, so those match to rounding only.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "sdb/kernels.hpp"

namespace sdb::kern {
namespace {

void a_add(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void a_sub(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] - y[i];
}

void a_mul(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void a_scale(double a, double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
  for (; i < n; ++i) x[i] *= a;
}

void a_axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void a_lerp(double t, const double* x, const double* y, double* out, std::size_t n) {
  const double u = 1.0 - t;
  const __m256d vt = _mm256_set1_pd(t);
  const __m256d vu = _mm256_set1_pd(u);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d a = _mm256_mul_pd(vt, _mm256_loadu_pd(x + i));
    __m256d b = _mm256_mul_pd(vu, _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(a, b));
  }
  for (; i < n; ++i) out[i] = t * x[i] + u * y[i];
}

void a_relu(const double* x, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void a_relu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(dx + i, _mm256_and_pd(mask, _mm256_loadu_pd(dy + i)));
  }
  for (; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void a_sgd_momentum(double* w, double* v, const double* g, double lr,
                    double mom, std::size_t n) {
  const __m256d vmom = _mm256_set1_pd(mom);
  const __m256d vlr = _mm256_set1_pd(lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vv = _mm256_add_pd(_mm256_mul_pd(vmom, _mm256_loadu_pd(v + i)),
                               _mm256_loadu_pd(g + i));
    _mm256_storeu_pd(v + i, vv);
    _mm256_storeu_pd(w + i, _mm256_sub_pd(_mm256_loadu_pd(w + i), _mm256_mul_pd(vlr, vv)));
  }
  for (; i < n; ++i) {
    v[i] = mom * v[i] + g[i];
    w[i] -= lr * v[i];
  }
}

double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double a_dot(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  double r = hsum(acc);
  for (; i < n; ++i) r += x[i] * y[i];
  return r;
}

double a_sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double r = hsum(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

double a_max(const double* x, std::size_t n) {
  if (n < 8) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    return m;
  }
  __m256d acc = _mm256_loadu_pd(x);
  std::size_t i = 4;
  for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
  __m128d lo = _mm_max_pd(_mm256_castpd256_pd128(acc), _mm256_extractf128_pd(acc, 1));
  double m = std::max(_mm_cvtsd_f64(lo), _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo)));
  for (; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

double a_sumsq_diff(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  double r = hsum(acc);
  for (; i < n; ++i) {
    double d = x[i] - y[i];
    r += d * d;
  }
  return r;
}

// exp via Cody-Waite range reduction and the classic rational approximation
// exp(r) = 1 + 2*r*P(r^2) / (Q(r^2) - r*P(r^2)) on |r| <= ln2/2.
// Relative error stays below a few ulp across the clamped range.
constexpr double kExpHi = 709.0;
constexpr double kExpLo = -708.0;
constexpr double kLog2E = 1.4426950408889634073599;
constexpr double kC1 = 6.93145751953125e-1;
constexpr double kC2 = 1.42860682030941723212e-6;
constexpr double kP0 = 1.26177193074810590878e-4;
constexpr double kP1 = 3.02994407707441961300e-2;
constexpr double kP2 = 9.99999999999999999910e-1;
constexpr double kQ0 = 3.00198505138664455042e-6;
constexpr double kQ1 = 2.52448340349684104192e-3;
constexpr double kQ2 = 2.27265548208155028766e-1;
constexpr double kQ3 = 2.00000000000000000005e0;

__m256d vexp4(__m256d x) {
  const __m256d underflow = _mm256_cmp_pd(x, _mm256_set1_pd(kExpLo), _CMP_LT_OQ);
  x = _mm256_min_pd(_mm256_max_pd(x, _mm256_set1_pd(kExpLo)), _mm256_set1_pd(kExpHi));

  __m256d nf = _mm256_floor_pd(
      _mm256_add_pd(_mm256_mul_pd(x, _mm256_set1_pd(kLog2E)), _mm256_set1_pd(0.5)));
  __m256d r = _mm256_sub_pd(x, _mm256_mul_pd(nf, _mm256_set1_pd(kC1)));
  r = _mm256_sub_pd(r, _mm256_mul_pd(nf, _mm256_set1_pd(kC2)));

  __m256d r2 = _mm256_mul_pd(r, r);
  __m256d p = _mm256_mul_pd(_mm256_set1_pd(kP0), r2);
  p = _mm256_mul_pd(_mm256_add_pd(p, _mm256_set1_pd(kP1)), r2);
  p = _mm256_add_pd(p, _mm256_set1_pd(kP2));
  p = _mm256_mul_pd(p, r);
  __m256d q = _mm256_mul_pd(_mm256_set1_pd(kQ0), r2);
  q = _mm256_mul_pd(_mm256_add_pd(q, _mm256_set1_pd(kQ1)), r2);
  q = _mm256_mul_pd(_mm256_add_pd(q, _mm256_set1_pd(kQ2)), r2);
  q = _mm256_add_pd(q, _mm256_set1_pd(kQ3));
  __m256d e = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  e = _mm256_add_pd(_mm256_set1_pd(1.0), _mm256_add_pd(e, e));

  // scale by 2^n through the exponent field
  __m128i n32 = _mm256_cvtpd_epi32(nf);
  __m256i n64 = _mm256_cvtepi32_epi64(n32);
  __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
  e = _mm256_mul_pd(e, _mm256_castsi256_pd(bits));

  return _mm256_andnot_pd(underflow, e);
}

void a_vexp(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, vexp4(_mm256_loadu_pd(x + i)));
  if (i < n) {
    alignas(32) double buf[4] = {0, 0, 0, 0};
    for (std::size_t k = i; k < n; ++k) buf[k - i] = x[k];
    alignas(32) double res[4];
    _mm256_store_pd(res, vexp4(_mm256_load_pd(buf)));
    for (std::size_t k = i; k < n; ++k) out[k] = res[k - i];
  }
}

// i-k-j with the j loop vectorized; per output element the accumulation
// order over k matches the scalar reference exactly.
void a_gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A,
               const double* B, double* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, 0.0);
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const __m256d av = _mm256_set1_pd(a[k]);
      const double* b = B + k * N;
      std::size_t j = 0;
      for (; j + 8 <= N; j += 8) {
        __m256d c0 = _mm256_loadu_pd(c + j);
        __m256d c1 = _mm256_loadu_pd(c + j + 4);
        c0 = _mm256_add_pd(c0, _mm256_mul_pd(av, _mm256_loadu_pd(b + j)));
        c1 = _mm256_add_pd(c1, _mm256_mul_pd(av, _mm256_loadu_pd(b + j + 4)));
        _mm256_storeu_pd(c + j, c0);
        _mm256_storeu_pd(c + j + 4, c1);
      }
      for (; j + 4 <= N; j += 4) {
        __m256d c0 = _mm256_loadu_pd(c + j);
        c0 = _mm256_add_pd(c0, _mm256_mul_pd(av, _mm256_loadu_pd(b + j)));
        _mm256_storeu_pd(c + j, c0);
      }
      const double avs = a[k];
      for (; j < N; ++j) c[j] += avs * b[j];
    }
  }
}

void a_gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A,
               const double* B, double* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double* a = A + k * M;
    const double* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const __m256d av = _mm256_set1_pd(a[i]);
      double* c = C + i * N;
      std::size_t j = 0;
      for (; j + 4 <= N; j += 4) {
        __m256d c0 = _mm256_loadu_pd(c + j);
        c0 = _mm256_add_pd(c0, _mm256_mul_pd(av, _mm256_loadu_pd(b + j)));
        _mm256_storeu_pd(c + j, c0);
      }
      const double avs = a[i];
      for (; j < N; ++j) c[j] += avs * b[j];
    }
  }
}

void a_gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A,
               const double* B, double* C, bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (std::size_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double acc = a_dot(a, b, K);
      c[j] = accumulate ? c[j] + acc : acc;
    }
  }
}

}  // namespace

const Ops* avx2_ops_or_null() {
  static const Ops ops = {
      "avx2",
      a_add, a_sub, a_mul, a_scale, a_axpy, a_lerp, a_relu, a_relu_bwd,
      a_sgd_momentum, a_dot, a_sum, a_max, a_sumsq_diff, a_vexp,
      a_gemm_nn, a_gemm_tn, a_gemm_nt,
  };
  return &ops;
}

}  // namespace sdb::kern

#else

#include "sdb/kernels.hpp"

namespace sdb::kern {
const Ops* avx2_ops_or_null() { return nullptr; }
}  // namespace sdb::kern

#endif
