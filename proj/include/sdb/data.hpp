#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sdb/key.hpp"
#include "sdb/losses.hpp"
#include "sdb/rng.hpp"
#include "sdb/tensor.hpp"

namespace sdb::data {

struct NormStats {
  std::vector<double> mean, stddev;  // per channel
};

// Class-conditional low-frequency patterns with per-sample shift, contrast,
// brightness, and pixel noise. Small CNNs separate the classes within a few
// epochs; the shift keeps plain MLPs meaningfully behind.
struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::int64_t num_classes = 10;
  std::int64_t per_class_train = 500;
  std::int64_t per_class_test = 100;
  std::int64_t height = 8, width = 8, channels = 3;
  double noise_sigma = 0.12;
  int max_shift = 2;
  double contrast_jitter = 0.25;
  double brightness_jitter = 0.10;
};

struct DatasetHandle {
  std::string name;
  std::int64_t num_classes = 0, height = 0, width = 0, channels = 0;
  Tensor train_x, test_x;  // raw pixels in [0,1], exact f32 values, NHWC
  std::vector<int> train_y, test_y;
  NormStats stats;  // from the train split's raw pixels

  std::int64_t train_count() const { return static_cast<std::int64_t>(train_y.size()); }
  std::int64_t test_count() const { return static_cast<std::int64_t>(test_y.size()); }
  std::uint64_t checksum() const;
};

DatasetHandle make_synthetic(const SyntheticConfig& cfg);

// On-disk layout: index.json (geometry, labels, stats, per-sample checksums)
// plus one f32 blob per split. Loading validates sizes and checksums and
// names the offending sample on corruption.
void export_dataset(const DatasetHandle& ds, const std::filesystem::path& dir);
DatasetHandle load_image_dataset(const std::filesystem::path& dir);

// (x - mean_c) / std_c; applied after key embedding, identically on every
// model path.
Tensor normalize(const Tensor& x, const NormStats& stats);

enum class Split { train, test };

// Yields (x, x~, y) batches; x~ is present only when a key is supplied.
// Deterministic mode derives each epoch's shuffle from (seed, epoch) so the
// order is a pure function of configuration.
class DualStreamBatcher {
 public:
  DualStreamBatcher(const DatasetHandle& ds, Split split, const keying::Key* key,
                    std::int64_t batch_size, std::uint64_t seed, bool deterministic);

  void start_epoch(std::int64_t epoch, bool shuffle = true);
  bool next(losses::StreamBatch& out);
  std::int64_t batches_per_epoch() const;

 private:
  const DatasetHandle& ds_;
  Split split_;
  const keying::Key* key_;
  std::int64_t batch_size_;
  std::uint64_t seed_;
  bool deterministic_;
  rng::Prng stream_rng_;
  std::vector<std::int64_t> order_;
  std::int64_t cursor_ = 0;
};

}  // namespace sdb::data
