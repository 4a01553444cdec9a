#include "sdb/softops.hpp"

#include <cmath>

#include "sdb/kernels.hpp"

namespace sdb::softops {
namespace {

constexpr double kProbFloor = 1e-12;  // floor inside logarithms

void check_logits(const Tensor& z, const char* where) {
  require(z.rank() == 2, ErrorCategory::shape,
          std::string(where) + ": logits must be a (batch x classes) matrix, got " +
              z.shape_str());
  require(z.cols() >= 2, ErrorCategory::shape,
          std::string(where) + ": need at least 2 classes");
  require(z.all_finite(), ErrorCategory::numeric,
          std::string(where) + ": logits contain NaN/Inf");
}

void check_labels(std::span<const int> y, std::int64_t rows, std::int64_t k,
                  const char* where) {
  require(static_cast<std::int64_t>(y.size()) == rows, ErrorCategory::shape,
          std::string(where) + ": label count does not match batch size");
  for (int v : y)
    require(v >= 0 && v < k, ErrorCategory::parameter,
            std::string(where) + ": label " + std::to_string(v) + " out of range [0," +
                std::to_string(k) + ")");
}

}  // namespace

Tensor tempered_softmax(const Tensor& z, Temperature t) {
  check_logits(z, "tempered_softmax");
  const auto& k = kern::ops();
  const std::int64_t b = z.rows(), c = z.cols();
  Tensor out({b, c});
  const double inv_t = 1.0 / t.value;
  std::vector<double> row(static_cast<std::size_t>(c));
  for (std::int64_t r = 0; r < b; ++r) {
    const double* zr = z.row(r);
    double* o = out.row(r);
    for (std::int64_t j = 0; j < c; ++j) row[static_cast<std::size_t>(j)] = zr[j] * inv_t;
    const double m = k.max(row.data(), row.size());
    for (auto& v : row) v -= m;
    k.vexp(row.data(), o, row.size());
    const double s = k.sum(o, static_cast<std::size_t>(c));
    k.scale(1.0 / s, o, static_cast<std::size_t>(c));
  }
  return out;
}

Tensor log_tempered_softmax(const Tensor& z, Temperature t) {
  check_logits(z, "log_tempered_softmax");
  const auto& k = kern::ops();
  const std::int64_t b = z.rows(), c = z.cols();
  Tensor out({b, c});
  const double inv_t = 1.0 / t.value;
  std::vector<double> ex(static_cast<std::size_t>(c));
  for (std::int64_t r = 0; r < b; ++r) {
    const double* zr = z.row(r);
    double* o = out.row(r);
    for (std::int64_t j = 0; j < c; ++j) o[j] = zr[j] * inv_t;
    const double m = k.max(o, static_cast<std::size_t>(c));
    for (std::int64_t j = 0; j < c; ++j) o[j] -= m;
    k.vexp(o, ex.data(), ex.size());
    const double lse = std::log(k.sum(ex.data(), ex.size()));
    for (std::int64_t j = 0; j < c; ++j) o[j] -= lse;
  }
  return out;
}

double cross_entropy(const Tensor& probs, std::span<const int> y) {
  require(probs.rank() == 2, ErrorCategory::shape, "cross_entropy: probs must be a matrix");
  require(probs.all_finite(), ErrorCategory::numeric, "cross_entropy: probs contain NaN/Inf");
  check_labels(y, probs.rows(), probs.cols(), "cross_entropy");
  double acc = 0.0;
  for (std::int64_t r = 0; r < probs.rows(); ++r) {
    double p = probs.at(r, y[static_cast<std::size_t>(r)]);
    acc -= std::log(p < kProbFloor ? kProbFloor : p);
  }
  return acc / static_cast<double>(probs.rows());
}

ValueGrad cross_entropy_logits(const Tensor& z, std::span<const int> y) {
  check_logits(z, "cross_entropy");
  check_labels(y, z.rows(), z.cols(), "cross_entropy");
  const std::int64_t b = z.rows();
  const Tensor lsm = log_tempered_softmax(z, Temperature(1.0));
  ValueGrad out;
  out.grad = Tensor({b, z.cols()});
  const double invb = 1.0 / static_cast<double>(b);
  double acc = 0.0;
  for (std::int64_t r = 0; r < b; ++r) {
    const int label = y[static_cast<std::size_t>(r)];
    acc -= lsm.at(r, label);
    const double* l = lsm.row(r);
    double* g = out.grad.row(r);
    for (std::int64_t j = 0; j < z.cols(); ++j) g[j] = std::exp(l[j]) * invb;
    g[label] -= invb;
  }
  out.value = acc * invb;
  return out;
}

double kd_divergence(const Tensor& z_a, const Tensor& z_target, Temperature t,
                     bool scale_t2) {
  check_logits(z_a, "kd_divergence");
  check_logits(z_target, "kd_divergence");
  require_same_shape(z_a, z_target, "kd_divergence");
  const Tensor lp = log_tempered_softmax(z_target, t);
  const Tensor lq = log_tempered_softmax(z_a, t);
  const std::int64_t b = z_a.rows(), c = z_a.cols();
  double acc = 0.0;
  for (std::int64_t r = 0; r < b; ++r) {
    const double* p = lp.row(r);
    const double* q = lq.row(r);
    double row = 0.0;
    for (std::int64_t j = 0; j < c; ++j) row += std::exp(p[j]) * (p[j] - q[j]);
    acc += row;
  }
  acc /= static_cast<double>(b);
  if (scale_t2) acc *= t.value * t.value;
  return acc;
}

ValueGrad kd_divergence_vg(const Tensor& z_a, const Tensor& z_target, Temperature t,
                           bool scale_t2) {
  ValueGrad out;
  out.value = kd_divergence(z_a, z_target, t, scale_t2);
  const Tensor q = tempered_softmax(z_a, t);
  const Tensor p = tempered_softmax(z_target, t);
  const std::int64_t b = z_a.rows(), c = z_a.cols();
  out.grad = Tensor({b, c});
  // d/dz_a [T^2 * KL] = T*(q - p)/B; without scaling, (q - p)/(T*B)
  const double coef = (scale_t2 ? t.value : 1.0 / t.value) / static_cast<double>(b);
  kern::ops().sub(q.ptr(), p.ptr(), out.grad.ptr(), static_cast<std::size_t>(b * c));
  kern::ops().scale(coef, out.grad.ptr(), static_cast<std::size_t>(b * c));
  return out;
}

double soft_mse(const Tensor& z_a, const Tensor& z_b, Temperature t) {
  check_logits(z_a, "soft_mse");
  check_logits(z_b, "soft_mse");
  require_same_shape(z_a, z_b, "soft_mse");
  const Tensor qa = tempered_softmax(z_a, t);
  const Tensor qb = tempered_softmax(z_b, t);
  const std::int64_t b = z_a.rows(), c = z_a.cols();
  double acc = 0.0;
  for (std::int64_t r = 0; r < b; ++r)
    acc += kern::ops().sumsq_diff(qa.row(r), qb.row(r), static_cast<std::size_t>(c));
  return acc / static_cast<double>(b);
}

ValueGrad soft_mse_vg(const Tensor& z_a, const Tensor& z_b, Temperature t) {
  ValueGrad out;
  const Tensor qa = tempered_softmax(z_a, t);
  const Tensor qb = tempered_softmax(z_b, t);
  const std::int64_t b = z_a.rows(), c = z_a.cols();
  out.grad = Tensor({b, c});
  double acc = 0.0;
  const double coef = 2.0 / (t.value * static_cast<double>(b));
  std::vector<double> diff(static_cast<std::size_t>(c));
  for (std::int64_t r = 0; r < b; ++r) {
    const double* a = qa.row(r);
    const double* bb = qb.row(r);
    kern::ops().sub(a, bb, diff.data(), diff.size());
    acc += kern::ops().sumsq_diff(a, bb, diff.size());
    const double proj = kern::ops().dot(diff.data(), a, diff.size());
    double* g = out.grad.row(r);
    for (std::int64_t j = 0; j < c; ++j)
      g[j] = coef * a[j] * (diff[static_cast<std::size_t>(j)] - proj);
  }
  out.value = acc / static_cast<double>(b);
  return out;
}

double logit_mse(const Tensor& z_a, const Tensor& z_b) {
  check_logits(z_a, "logit_mse");
  check_logits(z_b, "logit_mse");
  require_same_shape(z_a, z_b, "logit_mse");
  const std::int64_t b = z_a.rows();
  double acc = kern::ops().sumsq_diff(z_a.ptr(), z_b.ptr(),
                                      static_cast<std::size_t>(z_a.size()));
  return 0.5 * acc / static_cast<double>(b);
}

ValueGrad logit_mse_vg(const Tensor& z_a, const Tensor& z_b) {
  ValueGrad out;
  out.value = logit_mse(z_a, z_b);
  const std::int64_t n = z_a.size();
  out.grad = Tensor(z_a.shape);
  kern::ops().sub(z_a.ptr(), z_b.ptr(), out.grad.ptr(), static_cast<std::size_t>(n));
  kern::ops().scale(1.0 / static_cast<double>(z_a.rows()), out.grad.ptr(),
                    static_cast<std::size_t>(n));
  return out;
}

}  // namespace sdb::softops
