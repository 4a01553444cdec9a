#include "sdb/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sdb/checksum.hpp"

namespace sdb::data {
namespace {

using json = nlohmann::json;

constexpr double kTau = 6.28318530717958647692;

// Distinct low-frequency signatures, one per class (cycled past 12 classes).
constexpr int kFreqTable[][2] = {{1, 0}, {0, 1}, {1, 1},  {2, 0}, {0, 2}, {2, 1},
                                 {1, 2}, {2, 2}, {3, 1}, {1, 3}, {3, 0}, {0, 3}};

double as_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

struct ClassPattern {
  std::vector<double> base;  // (h,w,c)
};

std::vector<ClassPattern> class_patterns(const SyntheticConfig& cfg, rng::Prng& prng) {
  std::vector<ClassPattern> out(static_cast<std::size_t>(cfg.num_classes));
  const std::int64_t h = cfg.height, w = cfg.width, c = cfg.channels;
  for (std::int64_t k = 0; k < cfg.num_classes; ++k) {
    auto& p = out[static_cast<std::size_t>(k)];
    p.base.assign(static_cast<std::size_t>(h * w * c), 0.5);
    const int fx = kFreqTable[k % 12][0], fy = kFreqTable[k % 12][1];
    std::vector<double> phase(static_cast<std::size_t>(c)), amp(static_cast<std::size_t>(c));
    for (std::int64_t ch = 0; ch < c; ++ch) {
      phase[static_cast<std::size_t>(ch)] = prng.uniform(0.0, kTau);
      amp[static_cast<std::size_t>(ch)] = prng.uniform(0.28, 0.42);
    }
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double arg = kTau * (fy * (y + 0.5) / static_cast<double>(h) +
                                     fx * (x + 0.5) / static_cast<double>(w)) +
                             phase[static_cast<std::size_t>(ch)];
          p.base[static_cast<std::size_t>((y * w + x) * c + ch)] =
              0.5 + amp[static_cast<std::size_t>(ch)] * std::sin(arg);
        }
  }
  return out;
}

void fill_split(const SyntheticConfig& cfg, const std::vector<ClassPattern>& pats,
                std::int64_t per_class, rng::Prng& prng, Tensor& images,
                std::vector<int>& labels) {
  const std::int64_t h = cfg.height, w = cfg.width, c = cfg.channels;
  const std::int64_t n = per_class * cfg.num_classes;
  images = Tensor({n, h, w, c});
  labels.resize(static_cast<std::size_t>(n));
  std::int64_t row = 0;
  for (std::int64_t k = 0; k < cfg.num_classes; ++k) {
    const auto& base = pats[static_cast<std::size_t>(k)].base;
    for (std::int64_t i = 0; i < per_class; ++i, ++row) {
      labels[static_cast<std::size_t>(row)] = static_cast<int>(k);
      const int dy = prng.uniform_int(-cfg.max_shift, cfg.max_shift);
      const int dx = prng.uniform_int(-cfg.max_shift, cfg.max_shift);
      const double contrast = prng.uniform(1.0 - cfg.contrast_jitter, 1.0 + cfg.contrast_jitter);
      const double bright = prng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter);
      double* px = images.ptr() + row * h * w * c;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          const std::int64_t sy = ((y + dy) % h + h) % h;
          const std::int64_t sx = ((x + dx) % w + w) % w;
          for (std::int64_t ch = 0; ch < c; ++ch) {
            double v = 0.5 +
                       contrast * (base[static_cast<std::size_t>((sy * w + sx) * c + ch)] - 0.5) +
                       bright + cfg.noise_sigma * prng.normal();
            v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            px[(y * w + x) * c + ch] = as_f32(v);
          }
        }
    }
  }
}

NormStats compute_stats(const Tensor& train_x, std::int64_t channels) {
  NormStats s;
  s.mean.assign(static_cast<std::size_t>(channels), 0.0);
  s.stddev.assign(static_cast<std::size_t>(channels), 0.0);
  const std::int64_t n = train_x.size() / channels;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* p = train_x.ptr() + i * channels;
    for (std::int64_t c = 0; c < channels; ++c) s.mean[static_cast<std::size_t>(c)] += p[c];
  }
  for (auto& m : s.mean) m /= static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double* p = train_x.ptr() + i * channels;
    for (std::int64_t c = 0; c < channels; ++c) {
      const double d = p[c] - s.mean[static_cast<std::size_t>(c)];
      s.stddev[static_cast<std::size_t>(c)] += d * d;
    }
  }
  for (auto& v : s.stddev) v = std::sqrt(v / static_cast<double>(n)) + 1e-8;
  return s;
}

std::uint64_t sample_checksum(const Tensor& images, std::int64_t row, std::int64_t px_per_img,
                              int label) {
  Fnv64 f;
  std::vector<float> buf(static_cast<std::size_t>(px_per_img));
  const double* p = images.ptr() + row * px_per_img;
  for (std::int64_t i = 0; i < px_per_img; ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(p[i]);
  f.update(buf.data(), buf.size() * sizeof(float));
  f.update_pod(label);
  return f.digest();
}

void write_blob(const Tensor& images, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCategory::io, "cannot write blob: " + file.string());
  std::vector<float> buf(images.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(images.data[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  require(out.good(), ErrorCategory::io, "failed writing blob: " + file.string());
}

void read_blob(Tensor& images, const std::filesystem::path& file, const std::string& split) {
  std::ifstream in(file, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot open blob: " + file.string());
  std::vector<float> buf(images.data.size());
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != buf.size() * sizeof(float)) {
    const std::int64_t px = images.size() / images.shape[0];
    const std::int64_t got = in.gcount() / static_cast<std::int64_t>(sizeof(float));
    fail(ErrorCategory::integrity,
         split + " blob truncated at sample " + std::to_string(got / px) + ": " + file.string());
  }
  for (std::size_t i = 0; i < buf.size(); ++i) images.data[i] = static_cast<double>(buf[i]);
}

}  // namespace

std::uint64_t DatasetHandle::checksum() const {
  Fnv64 f;
  f.update_string(name);
  f.update_pod(num_classes);
  f.update_pod(height);
  f.update_pod(width);
  f.update_pod(channels);
  f.update(train_x.data.data(), train_x.data.size() * sizeof(double));
  f.update(test_x.data.data(), test_x.data.size() * sizeof(double));
  f.update(train_y.data(), train_y.size() * sizeof(int));
  f.update(test_y.data(), test_y.size() * sizeof(int));
  for (double v : stats.mean) f.update_pod(v);
  for (double v : stats.stddev) f.update_pod(v);
  return f.digest();
}

DatasetHandle make_synthetic(const SyntheticConfig& cfg) {
  require(cfg.num_classes >= 2, ErrorCategory::parameter, "need at least 2 classes");
  require(cfg.per_class_train >= 1 && cfg.per_class_test >= 1, ErrorCategory::parameter,
          "per-class sample counts must be positive");
  require(cfg.height >= 1 && cfg.width >= 1 && cfg.channels >= 1, ErrorCategory::parameter,
          "image dims must be positive");
  require(cfg.noise_sigma >= 0.0, ErrorCategory::parameter, "noise sigma must be >= 0");

  DatasetHandle ds;
  ds.name = "synthetic-" + std::to_string(cfg.seed);
  ds.num_classes = cfg.num_classes;
  ds.height = cfg.height;
  ds.width = cfg.width;
  ds.channels = cfg.channels;

  rng::Prng pattern_rng(rng::derive_seed(cfg.seed, "patterns"));
  const auto pats = class_patterns(cfg, pattern_rng);
  rng::Prng train_rng(rng::derive_seed(cfg.seed, "train"));
  rng::Prng test_rng(rng::derive_seed(cfg.seed, "test"));
  fill_split(cfg, pats, cfg.per_class_train, train_rng, ds.train_x, ds.train_y);
  fill_split(cfg, pats, cfg.per_class_test, test_rng, ds.test_x, ds.test_y);
  ds.stats = compute_stats(ds.train_x, ds.channels);
  return ds;
}

void export_dataset(const DatasetHandle& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::int64_t px = ds.height * ds.width * ds.channels;

  json idx;
  idx["format_version"] = 1;
  idx["name"] = ds.name;
  idx["num_classes"] = ds.num_classes;
  idx["height"] = ds.height;
  idx["width"] = ds.width;
  idx["channels"] = ds.channels;
  idx["stats"] = {{"mean", ds.stats.mean}, {"stddev", ds.stats.stddev}};
  auto split_json = [&](const Tensor& x, const std::vector<int>& y, const std::string& blob) {
    json s;
    s["count"] = static_cast<std::int64_t>(y.size());
    s["blob"] = blob;
    s["labels"] = y;
    std::vector<std::string> sums;
    sums.reserve(y.size());
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(y.size()); ++i)
      sums.push_back(hex16(sample_checksum(x, i, px, y[static_cast<std::size_t>(i)])));
    s["sample_checksums"] = sums;
    return s;
  };
  idx["splits"]["train"] = split_json(ds.train_x, ds.train_y, "train.bin");
  idx["splits"]["test"] = split_json(ds.test_x, ds.test_y, "test.bin");

  std::ofstream out(dir / "index.json", std::ios::trunc);
  require(out.good(), ErrorCategory::io, "cannot write index: " + (dir / "index.json").string());
  out << idx.dump(2) << "\n";
  write_blob(ds.train_x, dir / "train.bin");
  write_blob(ds.test_x, dir / "test.bin");
}

DatasetHandle load_image_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  require(in.good(), ErrorCategory::io, "cannot open index: " + (dir / "index.json").string());
  json idx = json::parse(in, nullptr, false);
  require(!idx.is_discarded(), ErrorCategory::integrity,
          "index is not valid JSON: " + (dir / "index.json").string());
  require(idx.value("format_version", -1) == 1, ErrorCategory::version,
          "unsupported dataset format version");

  DatasetHandle ds;
  ds.name = idx.at("name").get<std::string>();
  ds.num_classes = idx.at("num_classes").get<std::int64_t>();
  ds.height = idx.at("height").get<std::int64_t>();
  ds.width = idx.at("width").get<std::int64_t>();
  ds.channels = idx.at("channels").get<std::int64_t>();
  ds.stats.mean = idx.at("stats").at("mean").get<std::vector<double>>();
  ds.stats.stddev = idx.at("stats").at("stddev").get<std::vector<double>>();
  const std::int64_t px = ds.height * ds.width * ds.channels;

  auto load_split = [&](const std::string& split, Tensor& x, std::vector<int>& y) {
    const auto& s = idx.at("splits").at(split);
    const std::int64_t count = s.at("count").get<std::int64_t>();
    y = s.at("labels").get<std::vector<int>>();
    require(static_cast<std::int64_t>(y.size()) == count, ErrorCategory::integrity,
            split + ": label count mismatch");
    for (std::int64_t i = 0; i < count; ++i) {
      const int v = y[static_cast<std::size_t>(i)];
      require(v >= 0 && v < ds.num_classes, ErrorCategory::parameter,
              split + ": label out of range at sample " + std::to_string(i) + " (" +
                  std::to_string(v) + ")");
    }
    x = Tensor({count, ds.height, ds.width, ds.channels});
    read_blob(x, dir / s.at("blob").get<std::string>(), split);
    const auto sums = s.at("sample_checksums").get<std::vector<std::string>>();
    require(static_cast<std::int64_t>(sums.size()) == count, ErrorCategory::integrity,
            split + ": checksum count mismatch");
    for (std::int64_t i = 0; i < count; ++i) {
      const auto got = hex16(sample_checksum(x, i, px, y[static_cast<std::size_t>(i)]));
      require(got == sums[static_cast<std::size_t>(i)], ErrorCategory::integrity,
              split + ": sample " + std::to_string(i) + " failed its checksum");
    }
  };
  load_split("train", ds.train_x, ds.train_y);
  load_split("test", ds.test_x, ds.test_y);
  return ds;
}

Tensor normalize(const Tensor& x, const NormStats& stats) {
  const auto c = static_cast<std::int64_t>(stats.mean.size());
  require(x.rank() >= 1 && x.shape.back() == c, ErrorCategory::shape,
          "normalize: trailing dim must equal channel count");
  Tensor out(x.shape);
  const std::int64_t n = x.size() / c;
  std::vector<double> inv(stats.stddev.size());
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / stats.stddev[i];
  for (std::int64_t i = 0; i < n; ++i) {
    const double* p = x.ptr() + i * c;
    double* o = out.ptr() + i * c;
    for (std::int64_t ch = 0; ch < c; ++ch)
      o[ch] = (p[ch] - stats.mean[static_cast<std::size_t>(ch)]) * inv[static_cast<std::size_t>(ch)];
  }
  return out;
}

DualStreamBatcher::DualStreamBatcher(const DatasetHandle& ds, Split split,
                                     const keying::Key* key, std::int64_t batch_size,
                                     std::uint64_t seed, bool deterministic)
    : ds_(ds),
      split_(split),
      key_(key),
      batch_size_(batch_size),
      seed_(seed),
      deterministic_(deterministic),
      stream_rng_(rng::derive_seed(seed, "batch-shuffle")) {
  require(batch_size_ >= 1, ErrorCategory::parameter, "batch size must be >= 1");
  if (key_ != nullptr) {
    require(key_->height == ds.height && key_->width == ds.width &&
                key_->channels == ds.channels,
            ErrorCategory::shape, "key shape does not match dataset images");
  }
  const std::int64_t n = split_ == Split::train ? ds.train_count() : ds.test_count();
  order_.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
}

void DualStreamBatcher::start_epoch(std::int64_t epoch, bool shuffle) {
  const std::int64_t n = static_cast<std::int64_t>(order_.size());
  for (std::int64_t i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
  if (shuffle) {
    if (deterministic_) {
      rng::Prng epoch_rng(rng::derive_seed(seed_, "epoch-" + std::to_string(epoch)));
      epoch_rng.shuffle(order_);
    } else {
      stream_rng_.shuffle(order_);
    }
  }
  cursor_ = 0;
}

std::int64_t DualStreamBatcher::batches_per_epoch() const {
  const auto n = static_cast<std::int64_t>(order_.size());
  return (n + batch_size_ - 1) / batch_size_;
}

bool DualStreamBatcher::next(losses::StreamBatch& out) {
  const auto n = static_cast<std::int64_t>(order_.size());
  if (cursor_ >= n) return false;
  const std::int64_t take = std::min(batch_size_, n - cursor_);
  const Tensor& src = split_ == Split::train ? ds_.train_x : ds_.test_x;
  const std::vector<int>& labels = split_ == Split::train ? ds_.train_y : ds_.test_y;
  const std::int64_t px = ds_.height * ds_.width * ds_.channels;

  out.x = Tensor({take, ds_.height, ds_.width, ds_.channels});
  out.y.resize(static_cast<std::size_t>(take));
  out.indices.resize(static_cast<std::size_t>(take));
  for (std::int64_t i = 0; i < take; ++i) {
    const std::int64_t idx = order_[static_cast<std::size_t>(cursor_ + i)];
    std::memcpy(out.x.ptr() + i * px, src.ptr() + idx * px,
                static_cast<std::size_t>(px) * sizeof(double));
    out.y[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(idx)];
    out.indices[static_cast<std::size_t>(i)] = idx;
  }
  out.x_tilde = key_ != nullptr ? keying::embed_key(out.x, *key_) : Tensor{};
  cursor_ += take;
  return true;
}

}  // namespace sdb::data
