#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "sdb/checksum.hpp"
#include "sdb/common.hpp"

namespace sdb {

// Dense row-major tensor of doubles. Rank-2 tensors double as logit /
// probability batches (rows = samples, cols = classes); rank-4 tensors are
// image batches in NHWC order.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(count(shape)), 0.0);
  }

  static std::int64_t count(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      if (d < 0) fail(ErrorCategory::shape, "negative tensor dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }

  static Tensor matrix(std::int64_t rows, std::int64_t cols,
                       std::initializer_list<double> vals = {}) {
    Tensor t({rows, cols});
    if (vals.size() != 0) {
      require(static_cast<std::int64_t>(vals.size()) == rows * cols,
              ErrorCategory::shape, "matrix initializer size mismatch");
      std::copy(vals.begin(), vals.end(), t.data.begin());
    }
    return t;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  bool empty() const { return data.empty(); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t rows() const {
    require(rank() == 2, ErrorCategory::shape, "rows() on non-matrix tensor");
    return shape[0];
  }
  std::int64_t cols() const {
    require(rank() == 2, ErrorCategory::shape, "cols() on non-matrix tensor");
    return shape[1];
  }
  double* row(std::int64_t r) { return data.data() + r * cols(); }
  const double* row(std::int64_t r) const { return data.data() + r * cols(); }

  double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::uint64_t checksum() const {
    Fnv64 f;
    std::uint64_t r = static_cast<std::uint64_t>(rank());
    f.update_pod(r);
    for (auto d : shape) f.update_pod(d);
    f.update(data.data(), data.size() * sizeof(double));
    return f.digest();
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  require(a.same_shape(b), ErrorCategory::shape,
          std::string(where) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace sdb
