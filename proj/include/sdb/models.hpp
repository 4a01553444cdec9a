#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sdb/tensor.hpp"

namespace sdb::models {

// Registered architecture + input geometry + init seed. Same spec (including
// seed) always builds bit-identical initial parameters.
struct ModelSpec {
  std::string name = "mlp_small";  // mlp_small | cnn_small | resnet_tiny
  std::int64_t height = 8, width = 8, channels = 3;
  std::int64_t num_classes = 10;
  std::uint64_t init_seed = 0;
  std::vector<int> widths{};  // optional per-arch width override

  bool operator==(const ModelSpec&) const = default;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;  // false for batch-norm running stats
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect(std::vector<Param*>& into) {}
};

// A feed-forward classifier: forward to logits, backward from dlogits.
// Frozen models refuse parameter updates and always run in eval mode.
class Model {
 public:
  Model() = default;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  Tensor forward(const Tensor& x, bool training = false);
  void backward(const Tensor& dlogits);
  void zero_grad();

  const ModelSpec& spec() const { return spec_; }
  bool frozen() const { return frozen_; }
  void set_frozen() { frozen_ = true; }

  std::vector<Param*>& params();  // trainable + buffers, stable order
  std::int64_t param_count() const;           // trainable scalars
  std::uint64_t param_checksum() const;        // all values incl. buffers

  // Test hook: observes every forward input (used to assert which stream a
  // frozen teacher consumes).
  std::function<void(const Tensor&)> input_tap;

 private:
  friend Model build_model(const ModelSpec&);
  friend Model snapshot_frozen(const Model&);
  friend Model clone_model(const Model&);

  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Param*> param_cache_;
  bool frozen_ = false;
};

Model build_model(const ModelSpec& spec);
Model clone_model(const Model& m);

// Immutable copy: forward-only (eval mode), update attempts are contract
// violations. Stands in for the pretrained teacher and the frozen
// random-init reference during wrapped-teacher training.
Model snapshot_frozen(const Model& m);

void save_checkpoint(const Model& m, const std::filesystem::path& path,
                     std::int64_t step = 0);
struct LoadedCheckpoint {
  Model model;
  std::int64_t step = 0;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t checkpoint_file_checksum(const std::filesystem::path& path);

// SGD with momentum; weight decay is added to the gradient before the
// momentum update. Throws on frozen models.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(Model& m, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

}  // namespace sdb::models
