#pragma once

// Optimization loop: warmup + cosine schedule, Adam, per-epoch validation,
// best-checkpoint selection.

#include <cstdint>
#include <string>
#include <vector>

#include "vgs/data.hpp"
#include "vgs/model.hpp"

namespace vgs {

struct TrainConfig {
  int epochs = 24;
  int warmup_epochs = 4;
  double peak_lr = 2e-4;
  double final_lr = 1e-6;
  std::size_t batch_size = 32;
  std::size_t negatives = 11;
  std::uint64_t seed = 0;
  bool equalize_steps = false;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
      throw std::invalid_argument("train config: warmup must satisfy 0 <= warmup < epochs");
    if (!(0 < final_lr && final_lr < peak_lr))
      throw std::invalid_argument("train config: need 0 < final_lr < peak_lr");
    if (batch_size < 1 || negatives < 1)
      throw std::invalid_argument("train config: batch size and negatives must be positive");
  }
};

// Per-step learning rate: linear from 0 to peak over the warmup steps, then
// cosine annealing from peak to final over the rest.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;      // lr of the epoch's last step
  double scale = 0;   // logit scale after the epoch
  double seconds = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val_loss = 0;

  bool metrics_equal(const TrainHistory& other) const;
};

void write_history_csv(const TrainHistory& history, const std::string& path);

// Adam (b1=0.9, b2=0.999, eps=1e-8, no weight decay) over an explicit
// parameter list. Aborts on non-finite gradients.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<std::pair<std::string, diff::Tensor*>> params);

  void step(double lr);
  std::size_t scalar_count() const { return total_scalars_; }

 private:
  struct Slot {
    std::string name;
    diff::Tensor* tensor;
    std::vector<float> m, v;
  };
  std::vector<Slot> slots_;
  std::size_t total_scalars_ = 0;
  long step_count_ = 0;
};

struct TrainResult {
  Model best_model;
  TrainHistory history;
};

// Runs the full schedule over the pack's train split, computes the val loss
// after each epoch with an epoch-indexed fixed seed, and returns the model
// with the lowest validation loss. Deterministic given cfg.seed.
TrainResult train(const FeaturePack& pack, const ModelConfig& model_cfg, const TrainConfig& cfg);

}  // namespace vgs
