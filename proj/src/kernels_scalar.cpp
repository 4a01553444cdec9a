// Scalar reference kernels. These define the semantics the SIMD variants
// are tested against; keep loops in the plainest possible form.

#include <algorithm>
#include <cmath>

#include "sdb/kernels.hpp"

namespace sdb::kern {
namespace {

void s_add(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void s_sub(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

void s_mul(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void s_scale(double a, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void s_axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void s_lerp(double t, const double* x, const double* y, double* out, std::size_t n) {
  const double u = 1.0 - t;
  for (std::size_t i = 0; i < n; ++i) out[i] = t * x[i] + u * y[i];
}

void s_relu(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_relu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void s_sgd_momentum(double* w, double* v, const double* g, double lr,
                    double mom, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = mom * v[i] + g[i];
    w[i] -= lr * v[i];
  }
}

double s_dot(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double s_sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double s_max(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

double s_sumsq_diff(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = x[i] - y[i];
    acc += d * d;
  }
  return acc;
}

void s_vexp(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

// i-k-j order: the inner update over j is one mul+add per element in a
// fixed k order, which the AVX2 variant reproduces lane-wise.
void s_gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A,
               const double* B, double* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, 0.0);
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[k];
      const double* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

void s_gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A,
               const double* B, double* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double* a = A + k * M;
    const double* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const double av = a[i];
      double* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

void s_gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A,
               const double* B, double* C, bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (std::size_t j = 0; j < N; ++j) {
      double acc = 0.0;
      const double* b = B + j * K;
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] = accumulate ? c[j] + acc : acc;
    }
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops = {
      "scalar",
      s_add, s_sub, s_mul, s_scale, s_axpy, s_lerp, s_relu, s_relu_bwd,
      s_sgd_momentum, s_dot, s_sum, s_max, s_sumsq_diff, s_vexp,
      s_gemm_nn, s_gemm_tn, s_gemm_nt,
  };
  return ops;
}

}  // namespace sdb::kern
