#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsparse/config_text.hpp"
#include "vsparse/io_formats.hpp"
#include "vsparse/params.hpp"
#include "vsparse/vae_model.hpp"

namespace vsparse {

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  bool operator==(const AdamWHyper&) const = default;
};

template <typename T>
struct OptimState {
  AdamWHyper hyper;
  std::uint64_t t = 0;
  std::vector<Mat<T>> m;
  std::vector<Mat<T>> v;

  static OptimState zeros_like(const ParamStore<T>& params, AdamWHyper hyper);
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One decoupled-weight-decay Adam update; grads align with params.entries().
/// Throws NonFiniteError naming the parameter before anything is modified.
template <typename T>
void adamw_step(ParamStore<T>& params, std::span<const Mat<T>> grads, OptimState<T>& state);

struct TrainConfig {
  int epochs = 1;
  /// Overrides epochs when non-zero.
  std::uint64_t max_steps = 0;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  std::optional<std::uint64_t> seed;
  int batch_size = 1;
  /// Steps between checkpoints; 0 writes only the final one.
  std::uint64_t checkpoint_every = 0;
  /// Steps between validation Dice evaluations (also run at the last step).
  std::uint64_t eval_every = 50;
  bool cache_geometry = true;

  void validate() const;
  std::uint64_t total_steps(std::size_t dataset_size) const;
};

struct TrainState {
  VaeModel<float> model;
  OptimState<float> optim;
  std::uint64_t step = 0;

  static TrainState fresh(const ModelConfig& model_cfg, const TrainConfig& cfg);
};

struct StepMetrics {
  std::uint64_t step = 0;
  double rec = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double dice_val = 0.0;  // NaN until the first evaluation
};

/// `step, L_rec, KL, total, dice_val`
std::string format_metric_line(const StepMetrics& m);

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const TrainState&)> on_checkpoint;
};

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs steps state.step .. total_steps; resuming from a saved state gives
/// the same trajectory as an uninterrupted run.
std::vector<StepMetrics> train(const TrainConfig& cfg, TrainState& state,
                               std::span<const VoxelGrid> dataset,
                               const VoxelGrid* validation = nullptr,
                               const TrainHooks& hooks = {});

/// Sample order for one epoch (Fisher-Yates on a derived stream).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);
std::uint64_t step_noise_seed(std::uint64_t seed, std::uint64_t step);

/// Dice of the z = mu reconstruction against the input.
double reconstruction_dice(const VaeModel<float>& model, const VoxelGrid& x);

void write_model_config(KeyValueText& kv, const ModelConfig& cfg);
ModelConfig read_model_config(const KeyValueText& kv, ModelConfig defaults = {});
void write_train_config(KeyValueText& kv, const TrainConfig& cfg);
TrainConfig read_train_config(const KeyValueText& kv, TrainConfig defaults = {});

CheckpointFile to_checkpoint(const TrainState& state);
/// `expected` (when given) must agree with the stored tensor shapes.
TrainState from_checkpoint(const CheckpointFile& ck, const ModelConfig* expected = nullptr);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace vsparse
