#include "sdb/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "sdb/checksum.hpp"
#include "sdb/kernels.hpp"
#include "sdb/rng.hpp"

#include <nlohmann/json.hpp>

namespace sdb::models {
namespace {

using json = nlohmann::json;

void he_normal_init(Tensor& w, std::int64_t fan_in, rng::Prng& prng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w.data) v = stddev * prng.normal();
}

// ---------------------------------------------------------------- layers --

class Dense : public Layer {
 public:
  Dense(std::string name, std::int64_t in, std::int64_t out, rng::Prng& prng)
      : in_(in), out_(out) {
    w_.name = name + ".w";
    w_.value = Tensor({in, out});
    w_.grad = Tensor({in, out});
    he_normal_init(w_.value, in, prng);
    b_.name = name + ".b";
    b_.value = Tensor({out});
    b_.grad = Tensor({out});
  }

  Tensor forward(const Tensor& x, bool) override {
    require(x.rank() == 2 && x.cols() == in_, ErrorCategory::shape,
            "dense: bad input " + x.shape_str());
    x_ = x;
    const std::int64_t b = x.rows();
    Tensor y({b, out_});
    kern::ops().gemm_nn(static_cast<std::size_t>(b), static_cast<std::size_t>(out_),
                        static_cast<std::size_t>(in_), x.ptr(), w_.value.ptr(), y.ptr(),
                        false);
    for (std::int64_t r = 0; r < b; ++r)
      kern::ops().add(y.row(r), b_.value.ptr(), y.row(r), static_cast<std::size_t>(out_));
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    const std::int64_t b = dy.rows();
    kern::ops().gemm_tn(static_cast<std::size_t>(in_), static_cast<std::size_t>(out_),
                        static_cast<std::size_t>(b), x_.ptr(), dy.ptr(), w_.grad.ptr(),
                        true);
    for (std::int64_t r = 0; r < b; ++r)
      kern::ops().add(b_.grad.ptr(), dy.row(r), b_.grad.ptr(),
                      static_cast<std::size_t>(out_));
    Tensor dx({b, in_});
    kern::ops().gemm_nt(static_cast<std::size_t>(b), static_cast<std::size_t>(in_),
                        static_cast<std::size_t>(out_), dy.ptr(), w_.value.ptr(),
                        dx.ptr(), false);
    return dx;
  }

  void collect(std::vector<Param*>& into) override {
    into.push_back(&w_);
    into.push_back(&b_);
  }

 private:
  std::int64_t in_, out_;
  Param w_, b_;
  Tensor x_;
};

class Relu : public Layer {
 public:
  Tensor forward(const Tensor& x, bool) override {
    x_ = x;
    Tensor y(x.shape);
    kern::ops().relu(x.ptr(), y.ptr(), static_cast<std::size_t>(x.size()));
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx(dy.shape);
    kern::ops().relu_bwd(x_.ptr(), dy.ptr(), dx.ptr(), static_cast<std::size_t>(dy.size()));
    return dx;
  }

 private:
  Tensor x_;
};

class Flatten : public Layer {
 public:
  Tensor forward(const Tensor& x, bool) override {
    shape_ = x.shape;
    Tensor y = x;
    std::int64_t n = 1;
    for (std::size_t i = 1; i < x.shape.size(); ++i) n *= x.shape[i];
    y.shape = {x.shape[0], n};
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx = dy;
    dx.shape = shape_;
    return dx;
  }

 private:
  std::vector<std::int64_t> shape_;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool) override {
    require(x.rank() == 4, ErrorCategory::shape, "gap: expects NHWC input");
    in_shape_ = x.shape;
    const std::int64_t b = x.shape[0], hw = x.shape[1] * x.shape[2], c = x.shape[3];
    Tensor y({b, c});
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::int64_t r = 0; r < b; ++r) {
      const double* px = x.ptr() + r * hw * c;
      double* py = y.row(r);
      for (std::int64_t i = 0; i < hw; ++i)
        kern::ops().axpy(inv, px + i * c, py, static_cast<std::size_t>(c));
    }
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    const std::int64_t b = in_shape_[0], hw = in_shape_[1] * in_shape_[2], c = in_shape_[3];
    Tensor dx(in_shape_);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::int64_t r = 0; r < b; ++r) {
      const double* g = dy.row(r);
      double* px = dx.ptr() + r * hw * c;
      for (std::int64_t i = 0; i < hw; ++i)
        kern::ops().axpy(inv, g, px + i * c, static_cast<std::size_t>(c));
    }
    return dx;
  }

 private:
  std::vector<std::int64_t> in_shape_;
};

// 2-D convolution over NHWC via im2col + GEMM. Weights are stored as a
// (kh*kw*cin, cout) matrix so forward is a single gemm_nn.
class Conv2d : public Layer {
 public:
  Conv2d(std::string name, std::int64_t cin, std::int64_t cout, std::int64_t ksize,
         std::int64_t stride, std::int64_t pad, bool bias, rng::Prng& prng)
      : cin_(cin), cout_(cout), k_(ksize), stride_(stride), pad_(pad), has_bias_(bias) {
    w_.name = name + ".w";
    w_.value = Tensor({k_ * k_ * cin_, cout_});
    w_.grad = Tensor({k_ * k_ * cin_, cout_});
    he_normal_init(w_.value, k_ * k_ * cin_, prng);
    if (has_bias_) {
      b_.name = name + ".b";
      b_.value = Tensor({cout_});
      b_.grad = Tensor({cout_});
    }
  }

  Tensor forward(const Tensor& x, bool) override {
    require(x.rank() == 4 && x.shape[3] == cin_, ErrorCategory::shape,
            "conv: bad input " + x.shape_str());
    x_ = x;
    const std::int64_t b = x.shape[0], h = x.shape[1], w = x.shape[2];
    oh_ = (h + 2 * pad_ - k_) / stride_ + 1;
    ow_ = (w + 2 * pad_ - k_) / stride_ + 1;
    const std::int64_t rows = b * oh_ * ow_, cols = k_ * k_ * cin_;
    col_.assign(static_cast<std::size_t>(rows * cols), 0.0);
    im2col(x, col_.data());
    Tensor y({b, oh_, ow_, cout_});
    kern::ops().gemm_nn(static_cast<std::size_t>(rows), static_cast<std::size_t>(cout_),
                        static_cast<std::size_t>(cols), col_.data(), w_.value.ptr(),
                        y.ptr(), false);
    if (has_bias_) {
      for (std::int64_t r = 0; r < rows; ++r)
        kern::ops().add(y.ptr() + r * cout_, b_.value.ptr(), y.ptr() + r * cout_,
                        static_cast<std::size_t>(cout_));
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    const std::int64_t b = x_.shape[0];
    const std::int64_t rows = b * oh_ * ow_, cols = k_ * k_ * cin_;
    // dW = col^T * dY
    kern::ops().gemm_tn(static_cast<std::size_t>(cols), static_cast<std::size_t>(cout_),
                        static_cast<std::size_t>(rows), col_.data(), dy.ptr(),
                        w_.grad.ptr(), true);
    if (has_bias_) {
      for (std::int64_t r = 0; r < rows; ++r)
        kern::ops().add(b_.grad.ptr(), dy.ptr() + r * cout_, b_.grad.ptr(),
                        static_cast<std::size_t>(cout_));
    }
    // dcol = dY * W^T, then scatter back
    dcol_.assign(static_cast<std::size_t>(rows * cols), 0.0);
    kern::ops().gemm_nt(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols),
                        static_cast<std::size_t>(cout_), dy.ptr(), w_.value.ptr(),
                        dcol_.data(), false);
    Tensor dx(x_.shape);
    col2im(dcol_.data(), dx);
    return dx;
  }

  void collect(std::vector<Param*>& into) override {
    into.push_back(&w_);
    if (has_bias_) into.push_back(&b_);
  }

 private:
  // For each output row and kernel row, the (kx, c) block is one contiguous
  // span of the padded input row, so the copy runs spanwise.
  void im2col(const Tensor& x, double* col) const {
    const std::int64_t b = x.shape[0], h = x.shape[1], w = x.shape[2];
    const std::int64_t span = k_ * cin_, cols = k_ * k_ * cin_;
    for (std::int64_t bi = 0; bi < b; ++bi) {
      const double* img = x.ptr() + bi * h * w * cin_;
      for (std::int64_t oy = 0; oy < oh_; ++oy) {
        for (std::int64_t ox = 0; ox < ow_; ++ox) {
          double* dst = col + ((bi * oh_ + oy) * ow_ + ox) * cols;
          const std::int64_t ix0 = ox * stride_ - pad_;
          for (std::int64_t ky = 0; ky < k_; ++ky) {
            const std::int64_t iy = oy * stride_ - pad_ + ky;
            double* drow = dst + ky * span;
            if (iy < 0 || iy >= h) continue;  // col was zero-filled
            std::int64_t x_lo = ix0 < 0 ? -ix0 : 0;                   // kx start
            std::int64_t x_hi = ix0 + k_ > w ? w - ix0 : k_;          // kx end
            if (x_lo >= x_hi) continue;
            std::memcpy(drow + x_lo * cin_, img + (iy * w + ix0 + x_lo) * cin_,
                        static_cast<std::size_t>((x_hi - x_lo) * cin_) * sizeof(double));
          }
        }
      }
    }
  }

  void col2im(const double* col, Tensor& dx) const {
    const std::int64_t b = dx.shape[0], h = dx.shape[1], w = dx.shape[2];
    const std::int64_t span = k_ * cin_, cols = k_ * k_ * cin_;
    for (std::int64_t bi = 0; bi < b; ++bi) {
      double* img = dx.ptr() + bi * h * w * cin_;
      for (std::int64_t oy = 0; oy < oh_; ++oy) {
        for (std::int64_t ox = 0; ox < ow_; ++ox) {
          const double* src = col + ((bi * oh_ + oy) * ow_ + ox) * cols;
          const std::int64_t ix0 = ox * stride_ - pad_;
          for (std::int64_t ky = 0; ky < k_; ++ky) {
            const std::int64_t iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            std::int64_t x_lo = ix0 < 0 ? -ix0 : 0;
            std::int64_t x_hi = ix0 + k_ > w ? w - ix0 : k_;
            if (x_lo >= x_hi) continue;
            kern::ops().axpy(1.0, src + ky * span + x_lo * cin_,
                             img + (iy * w + ix0 + x_lo) * cin_,
                             static_cast<std::size_t>((x_hi - x_lo) * cin_));
          }
        }
      }
    }
  }

  std::int64_t cin_, cout_, k_, stride_, pad_;
  bool has_bias_;
  Param w_, b_;
  Tensor x_;
  std::int64_t oh_ = 0, ow_ = 0;
  std::vector<double> col_, dcol_;
};

// Per-channel batch norm over (B,H,W). Normalization uses the biased batch
// variance; running stats use the same convention.
class BatchNorm : public Layer {
 public:
  BatchNorm(std::string name, std::int64_t c, rng::Prng&) : c_(c) {
    gamma_.name = name + ".gamma";
    gamma_.value = Tensor({c});
    gamma_.grad = Tensor({c});
    for (auto& v : gamma_.value.data) v = 1.0;
    beta_.name = name + ".beta";
    beta_.value = Tensor({c});
    beta_.grad = Tensor({c});
    rmean_.name = name + ".running_mean";
    rmean_.value = Tensor({c});
    rmean_.trainable = false;
    rvar_.name = name + ".running_var";
    rvar_.value = Tensor({c});
    for (auto& v : rvar_.value.data) v = 1.0;
    rvar_.trainable = false;
  }

  Tensor forward(const Tensor& x, bool training) override {
    require(x.rank() == 4 && x.shape[3] == c_, ErrorCategory::shape,
            "batchnorm: bad input " + x.shape_str());
    const std::int64_t n = x.size() / c_;
    Tensor y(x.shape);
    if (training) {
      mean_.assign(static_cast<std::size_t>(c_), 0.0);
      var_.assign(static_cast<std::size_t>(c_), 0.0);
      const double invn = 1.0 / static_cast<double>(n);
      for (std::int64_t i = 0; i < n; ++i)
        kern::ops().axpy(invn, x.ptr() + i * c_, mean_.data(), static_cast<std::size_t>(c_));
      for (std::int64_t i = 0; i < n; ++i) {
        const double* px = x.ptr() + i * c_;
        for (std::int64_t c = 0; c < c_; ++c) {
          const double d = px[c] - mean_[static_cast<std::size_t>(c)];
          var_[static_cast<std::size_t>(c)] += d * d * invn;
        }
      }
      invstd_.resize(static_cast<std::size_t>(c_));
      for (std::int64_t c = 0; c < c_; ++c)
        invstd_[static_cast<std::size_t>(c)] =
            1.0 / std::sqrt(var_[static_cast<std::size_t>(c)] + kEps);
      xhat_ = Tensor(x.shape);
      for (std::int64_t i = 0; i < n; ++i) {
        const double* px = x.ptr() + i * c_;
        double* ph = xhat_.ptr() + i * c_;
        double* py = y.ptr() + i * c_;
        for (std::int64_t c = 0; c < c_; ++c) {
          const auto cc = static_cast<std::size_t>(c);
          ph[c] = (px[c] - mean_[cc]) * invstd_[cc];
          py[c] = gamma_.value.data[cc] * ph[c] + beta_.value.data[cc];
        }
      }
      n_ = n;
      for (std::int64_t c = 0; c < c_; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        rmean_.value.data[cc] = (1.0 - kMomentum) * rmean_.value.data[cc] + kMomentum * mean_[cc];
        rvar_.value.data[cc] = (1.0 - kMomentum) * rvar_.value.data[cc] + kMomentum * var_[cc];
      }
    } else {
      for (std::int64_t i = 0; i < n; ++i) {
        const double* px = x.ptr() + i * c_;
        double* py = y.ptr() + i * c_;
        for (std::int64_t c = 0; c < c_; ++c) {
          const auto cc = static_cast<std::size_t>(c);
          const double inv = 1.0 / std::sqrt(rvar_.value.data[cc] + kEps);
          py[c] = gamma_.value.data[cc] * (px[c] - rmean_.value.data[cc]) * inv +
                  beta_.value.data[cc];
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    const std::int64_t n = n_;
    std::vector<double> dgamma(static_cast<std::size_t>(c_), 0.0);
    std::vector<double> dbeta(static_cast<std::size_t>(c_), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
      const double* g = dy.ptr() + i * c_;
      const double* h = xhat_.ptr() + i * c_;
      for (std::int64_t c = 0; c < c_; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        dgamma[cc] += g[c] * h[c];
        dbeta[cc] += g[c];
      }
    }
    for (std::int64_t c = 0; c < c_; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      gamma_.grad.data[cc] += dgamma[cc];
      beta_.grad.data[cc] += dbeta[cc];
    }
    Tensor dx(dy.shape);
    const double invn = 1.0 / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double* g = dy.ptr() + i * c_;
      const double* h = xhat_.ptr() + i * c_;
      double* d = dx.ptr() + i * c_;
      for (std::int64_t c = 0; c < c_; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        d[c] = gamma_.value.data[cc] * invstd_[cc] * invn *
               (static_cast<double>(n) * g[c] - dbeta[cc] - h[c] * dgamma[cc]);
      }
    }
    return dx;
  }

  void collect(std::vector<Param*>& into) override {
    into.push_back(&gamma_);
    into.push_back(&beta_);
    into.push_back(&rmean_);
    into.push_back(&rvar_);
  }

 private:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;
  std::int64_t c_;
  Param gamma_, beta_, rmean_, rvar_;
  std::vector<double> mean_, var_, invstd_;
  Tensor xhat_;
  std::int64_t n_ = 0;
};

// conv-bn-relu-conv-bn plus identity or 1x1-projected skip, relu after add.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(std::string name, std::int64_t cin, std::int64_t cout,
                std::int64_t stride, rng::Prng& prng)
      : conv1_(name + ".conv1", cin, cout, 3, stride, 1, false, prng),
        bn1_(name + ".bn1", cout, prng),
        conv2_(name + ".conv2", cout, cout, 3, 1, 1, false, prng),
        bn2_(name + ".bn2", cout, prng),
        project_(cin != cout || stride != 1) {
    if (project_) {
      proj_ = std::make_unique<Conv2d>(name + ".proj", cin, cout, 1, stride, 0, false, prng);
      proj_bn_ = std::make_unique<BatchNorm>(name + ".proj_bn", cout, prng);
    }
  }

  Tensor forward(const Tensor& x, bool training) override {
    Tensor main = bn1_.forward(conv1_.forward(x, training), training);
    relu1_in_ = main;
    Tensor act(main.shape);
    kern::ops().relu(main.ptr(), act.ptr(), static_cast<std::size_t>(main.size()));
    main = bn2_.forward(conv2_.forward(act, training), training);
    Tensor skip = project_ ? proj_bn_->forward(proj_->forward(x, training), training) : x;
    sum_ = Tensor(main.shape);
    kern::ops().add(main.ptr(), skip.ptr(), sum_.ptr(), static_cast<std::size_t>(main.size()));
    Tensor out(sum_.shape);
    kern::ops().relu(sum_.ptr(), out.ptr(), static_cast<std::size_t>(sum_.size()));
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dsum(dy.shape);
    kern::ops().relu_bwd(sum_.ptr(), dy.ptr(), dsum.ptr(), static_cast<std::size_t>(dy.size()));
    Tensor dmain = conv2_.backward(bn2_.backward(dsum));
    Tensor dact(dmain.shape);
    kern::ops().relu_bwd(relu1_in_.ptr(), dmain.ptr(), dact.ptr(),
                         static_cast<std::size_t>(dmain.size()));
    Tensor dx = conv1_.backward(bn1_.backward(dact));
    if (project_) {
      Tensor dskip = proj_->backward(proj_bn_->backward(dsum));
      kern::ops().add(dx.ptr(), dskip.ptr(), dx.ptr(), static_cast<std::size_t>(dx.size()));
    } else {
      kern::ops().add(dx.ptr(), dsum.ptr(), dx.ptr(), static_cast<std::size_t>(dx.size()));
    }
    return dx;
  }

  void collect(std::vector<Param*>& into) override {
    conv1_.collect(into);
    bn1_.collect(into);
    conv2_.collect(into);
    bn2_.collect(into);
    if (project_) {
      proj_->collect(into);
      proj_bn_->collect(into);
    }
  }

 private:
  Conv2d conv1_;
  BatchNorm bn1_;
  Conv2d conv2_;
  BatchNorm bn2_;
  bool project_;
  std::unique_ptr<Conv2d> proj_;
  std::unique_ptr<BatchNorm> proj_bn_;
  Tensor relu1_in_, sum_;
};

// ----------------------------------------------------------- assemblies --

std::vector<int> default_widths(const std::string& name) {
  if (name == "mlp_small") return {48};
  if (name == "cnn_small") return {12, 24, 32};
  if (name == "resnet_tiny") return {24, 48};
  fail(ErrorCategory::parameter, "unknown model name: " + name);
}

}  // namespace

Tensor Model::forward(const Tensor& x, bool training) {
  if (input_tap) input_tap(x);
  const bool train_mode = training && !frozen_;
  Tensor cur = x;
  for (auto& l : layers_) cur = l->forward(cur, train_mode);
  return cur;
}

void Model::backward(const Tensor& dlogits) {
  require(!frozen_, ErrorCategory::contract, "backward on a frozen model");
  Tensor cur = dlogits;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
}

void Model::zero_grad() {
  for (Param* p : params())
    if (p->trainable) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

std::vector<Param*>& Model::params() {
  if (param_cache_.empty()) {
    for (auto& l : layers_) l->collect(param_cache_);
  }
  return param_cache_;
}

std::int64_t Model::param_count() const {
  auto& self = const_cast<Model&>(*this);
  std::int64_t n = 0;
  for (Param* p : self.params())
    if (p->trainable) n += p->value.size();
  return n;
}

std::uint64_t Model::param_checksum() const {
  auto& self = const_cast<Model&>(*this);
  Fnv64 f;
  for (Param* p : self.params()) {
    f.update_string(p->name);
    f.update(p->value.data.data(), p->value.data.size() * sizeof(double));
  }
  return f.digest();
}

Model build_model(const ModelSpec& spec) {
  require(spec.height >= 1 && spec.width >= 1 && spec.channels >= 1,
          ErrorCategory::parameter, "model input dims must be positive");
  require(spec.num_classes >= 2, ErrorCategory::parameter,
          "model needs at least 2 classes");

  Model m;
  m.spec_ = spec;
  if (m.spec_.widths.empty()) m.spec_.widths = default_widths(spec.name);
  const auto& w = m.spec_.widths;
  rng::Prng prng(rng::derive_seed(spec.init_seed, "model-init:" + spec.name));

  const std::int64_t flat = spec.height * spec.width * spec.channels;
  if (spec.name == "mlp_small") {
    require(w.size() == 1, ErrorCategory::parameter, "mlp_small takes one width");
    m.layers_.push_back(std::make_unique<Flatten>());
    m.layers_.push_back(std::make_unique<Dense>("fc1", flat, w[0], prng));
    m.layers_.push_back(std::make_unique<Relu>());
    m.layers_.push_back(std::make_unique<Dense>("fc2", w[0], spec.num_classes, prng));
  } else if (spec.name == "cnn_small") {
    require(w.size() == 3, ErrorCategory::parameter, "cnn_small takes three widths");
    m.layers_.push_back(std::make_unique<Conv2d>("conv1", spec.channels, w[0], 3, 1, 1, true, prng));
    m.layers_.push_back(std::make_unique<Relu>());
    m.layers_.push_back(std::make_unique<Conv2d>("conv2", w[0], w[1], 3, 2, 1, true, prng));
    m.layers_.push_back(std::make_unique<Relu>());
    const std::int64_t oh = (spec.height + 1) / 2, ow = (spec.width + 1) / 2;
    m.layers_.push_back(std::make_unique<Flatten>());
    m.layers_.push_back(std::make_unique<Dense>("fc1", oh * ow * w[1], w[2], prng));
    m.layers_.push_back(std::make_unique<Relu>());
    m.layers_.push_back(std::make_unique<Dense>("fc2", w[2], spec.num_classes, prng));
  } else if (spec.name == "resnet_tiny") {
    require(w.size() == 2, ErrorCategory::parameter, "resnet_tiny takes two widths");
    m.layers_.push_back(std::make_unique<Conv2d>("stem", spec.channels, w[0], 3, 1, 1, false, prng));
    m.layers_.push_back(std::make_unique<BatchNorm>("stem_bn", w[0], prng));
    m.layers_.push_back(std::make_unique<Relu>());
    m.layers_.push_back(std::make_unique<ResidualBlock>("block1", w[0], w[0], 1, prng));
    m.layers_.push_back(std::make_unique<ResidualBlock>("block2", w[0], w[1], 2, prng));
    m.layers_.push_back(std::make_unique<ResidualBlock>("block3", w[1], w[1], 1, prng));
    m.layers_.push_back(std::make_unique<GlobalAvgPool>());
    m.layers_.push_back(std::make_unique<Dense>("head", w[1], spec.num_classes, prng));
  } else {
    fail(ErrorCategory::parameter, "unknown model name: " + spec.name);
  }
  return m;
}

Model clone_model(const Model& m) {
  Model out = build_model(m.spec_);
  auto& src = const_cast<Model&>(m).params();
  auto& dst = out.params();
  require(src.size() == dst.size(), ErrorCategory::contract, "clone param mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
  return out;
}

Model snapshot_frozen(const Model& m) {
  Model out = clone_model(m);
  out.set_frozen();
  return out;
}

// ------------------------------------------------------------ checkpoint --

namespace {
constexpr char kCkptMagic[8] = {'S', 'D', 'B', 'C', 'K', 'P', 'T', 0};
constexpr std::uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const Model& m, const std::filesystem::path& path, std::int64_t step) {
  json hdr;
  const auto& s = m.spec();
  hdr["spec"] = {{"name", s.name},     {"height", s.height},
                 {"width", s.width},   {"channels", s.channels},
                 {"num_classes", s.num_classes}, {"init_seed", s.init_seed},
                 {"widths", s.widths}};
  hdr["step"] = step;
  const std::string hs = hdr.dump();

  Fnv64 sum;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCategory::io, "cannot write checkpoint: " + path.string());
  auto put = [&](const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    sum.update(p, n);
  };
  put(kCkptMagic, sizeof(kCkptMagic));
  put(&kCkptVersion, sizeof(kCkptVersion));
  const std::uint64_t hlen = hs.size();
  put(&hlen, sizeof(hlen));
  put(hs.data(), hs.size());

  auto& params = const_cast<Model&>(m).params();
  const std::uint64_t count = params.size();
  put(&count, sizeof(count));
  for (Param* p : params) {
    const std::uint64_t nlen = p->name.size();
    put(&nlen, sizeof(nlen));
    put(p->name.data(), p->name.size());
    const std::uint64_t sz = static_cast<std::uint64_t>(p->value.size());
    put(&sz, sizeof(sz));
    put(p->value.data.data(), p->value.data.size() * sizeof(double));
  }
  const std::uint64_t digest = sum.digest();
  out.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
  require(out.good(), ErrorCategory::io, "failed writing checkpoint: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot open checkpoint: " + path.string());
  Fnv64 sum;
  auto get = [&](void* p, std::size_t n, const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    require(static_cast<std::size_t>(in.gcount()) == n, ErrorCategory::integrity,
            std::string("checkpoint truncated (") + what + "): " + path.string());
    sum.update(p, n);
  };
  char magic[8];
  get(magic, sizeof(magic), "magic");
  require(std::memcmp(magic, kCkptMagic, sizeof(magic)) == 0, ErrorCategory::integrity,
          "not a checkpoint file: " + path.string());
  std::uint32_t version = 0;
  get(&version, sizeof(version), "version");
  require(version == kCkptVersion, ErrorCategory::version,
          "unsupported checkpoint version " + std::to_string(version));
  std::uint64_t hlen = 0;
  get(&hlen, sizeof(hlen), "header length");
  std::string hs(hlen, '\0');
  get(hs.data(), hlen, "header");
  json hdr = json::parse(hs, nullptr, false);
  require(!hdr.is_discarded(), ErrorCategory::integrity,
          "checkpoint header is not valid JSON: " + path.string());

  ModelSpec spec;
  const auto& js = hdr.at("spec");
  spec.name = js.at("name").get<std::string>();
  spec.height = js.at("height").get<std::int64_t>();
  spec.width = js.at("width").get<std::int64_t>();
  spec.channels = js.at("channels").get<std::int64_t>();
  spec.num_classes = js.at("num_classes").get<std::int64_t>();
  spec.init_seed = js.at("init_seed").get<std::uint64_t>();
  spec.widths = js.at("widths").get<std::vector<int>>();

  LoadedCheckpoint lc;
  lc.model = build_model(spec);
  lc.step = hdr.at("step").get<std::int64_t>();

  std::uint64_t count = 0;
  get(&count, sizeof(count), "param count");
  auto& params = lc.model.params();
  require(count == params.size(), ErrorCategory::integrity,
          "checkpoint parameter count mismatch: " + path.string());
  for (Param* p : params) {
    std::uint64_t nlen = 0;
    get(&nlen, sizeof(nlen), "param name length");
    std::string name(nlen, '\0');
    get(name.data(), nlen, "param name");
    require(name == p->name, ErrorCategory::integrity,
            "checkpoint parameter order mismatch at " + name);
    std::uint64_t sz = 0;
    get(&sz, sizeof(sz), "param size");
    require(sz == static_cast<std::uint64_t>(p->value.size()), ErrorCategory::integrity,
            "checkpoint parameter size mismatch at " + name);
    get(p->value.data.data(), p->value.data.size() * sizeof(double), "param data");
  }
  std::uint64_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  require(in.gcount() == sizeof(stored), ErrorCategory::integrity,
          "checkpoint truncated (checksum): " + path.string());
  require(stored == sum.digest(), ErrorCategory::integrity,
          "checkpoint checksum mismatch: " + path.string());
  return lc;
}

std::uint64_t checkpoint_file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot open file: " + path.string());
  Fnv64 f;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    f.update(buf, static_cast<std::size_t>(in.gcount()));
  return f.digest();
}

void SgdMomentum::step(Model& m, double lr) {
  require(!m.frozen(), ErrorCategory::contract,
          "attempted parameter update on a frozen model");
  auto& params = m.params();
  if (velocity_.empty()) {
    for (Param* p : params) velocity_.push_back(Tensor(p->value.shape));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param* p = params[i];
    if (!p->trainable) continue;
    const auto n = static_cast<std::size_t>(p->value.size());
    if (weight_decay_ != 0.0)
      kern::ops().axpy(weight_decay_, p->value.ptr(), p->grad.ptr(), n);
    kern::ops().sgd_momentum(p->value.ptr(), velocity_[i].ptr(), p->grad.ptr(), lr,
                             momentum_, n);
  }
}

}  // namespace sdb::models
