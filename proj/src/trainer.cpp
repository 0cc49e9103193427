#include "vgs/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

namespace vgs {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kEpochSalt = 0xE70C;
constexpr std::uint64_t kValSalt = 0x7A11D;

}  // namespace

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  cfg.validate();
  if (step >= total_steps)
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " out of range [0, " +
                                std::to_string(total_steps) + ")");
  const std::size_t warmup_steps =
      std::size_t(std::llround(double(total_steps) * double(cfg.warmup_epochs) / double(cfg.epochs)));
  if (step < warmup_steps) {
    const std::size_t denom = warmup_steps > 1 ? warmup_steps - 1 : 1;
    return cfg.peak_lr * double(step) / double(denom);
  }
  const std::size_t span = total_steps - warmup_steps;  // > 0 since warmup < epochs
  const double t = double(step - warmup_steps + 1) / double(span);
  return cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * 0.5 * (1.0 + std::cos(M_PI * t));
}

bool TrainHistory::metrics_equal(const TrainHistory& other) const {
  if (epochs.size() != other.epochs.size() || best_epoch != other.best_epoch ||
      best_val_loss != other.best_val_loss)
    return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = other.epochs[i];
    if (a.epoch != b.epoch || a.train_loss != b.train_loss || a.val_loss != b.val_loss ||
        a.lr != b.lr || a.scale != b.scale)
      return false;
  }
  return true;
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("history: cannot open " + path + " for writing");
  out << "epoch,train_loss,val_loss,lr,scale\n";
  out.precision(10);
  for (const auto& e : history.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << ',' << e.scale << '\n';
}

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, diff::Tensor*>> params) {
  for (auto& [name, tensor] : params) {
    Slot slot;
    slot.name = name;
    slot.tensor = tensor;
    slot.m.assign(tensor->numel(), 0.0f);
    slot.v.assign(tensor->numel(), 0.0f);
    total_scalars_ += tensor->numel();
    slots_.push_back(std::move(slot));
  }
}

void AdamOptimizer::step(double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++step_count_;
  const double bc1 = 1.0 - std::pow(b1, double(step_count_));
  const double bc2 = 1.0 - std::pow(b2, double(step_count_));
  for (auto& slot : slots_) {
    const auto& grad = slot.tensor->grad();
    auto& values = slot.tensor->values();
    if (grad.size() != values.size())
      throw std::runtime_error("optimizer: no gradient for " + slot.name);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g))
        throw std::runtime_error("optimizer: non-finite gradient in " + slot.name + " at index " +
                                 std::to_string(i));
      slot.m[i] = float(b1 * slot.m[i] + (1.0 - b1) * g);
      slot.v[i] = float(b2 * slot.v[i] + (1.0 - b2) * g * g);
      const double m_hat = slot.m[i] / bc1;
      const double v_hat = slot.v[i] / bc2;
      values[i] -= float(lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  }
}

namespace {

double mean_loss_over(const FeaturePack& pack, const Model& model,
                      const std::vector<ContrastiveBatch>& batches) {
  // No-grad clones keep validation off the autodiff tape.
  auto audio = model.audio.detached_clone();
  auto image = model.image.detached_clone();
  auto scale = model.scale.detached_clone();
  double total = 0;
  std::size_t n = 0;
  for (const auto& batch : batches) {
    total += contrastive_loss(batch, audio, image, scale).item() * double(batch.items.size());
    n += batch.items.size();
  }
  return n ? total / double(n) : 0.0;
}

}  // namespace

TrainResult train(const FeaturePack& pack, const ModelConfig& model_cfg, const TrainConfig& cfg) {
  cfg.validate();
  model_cfg.validate();

  SamplingConfig sampling{cfg.batch_size, cfg.negatives, cfg.equalize_steps};
  const std::size_t anchors_per_epoch = epoch_anchor_count(pack, sampling);
  if (anchors_per_epoch == 0) throw std::invalid_argument("train: empty train split");
  if (pack.find_records(Modality::audio, Split::val).empty())
    throw std::invalid_argument("train: empty validation split");
  const std::size_t steps_per_epoch = (anchors_per_epoch + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * std::size_t(cfg.epochs);

  Model model = init_model<float>({model_cfg.audio, model_cfg.image, model_cfg.scale_init}, cfg.seed);
  AdamOptimizer optimizer(model.named_parameters());
  // Everything the optimizer touches, and nothing else: both towers + scale.
  if (optimizer.scalar_count() != param_count(model_cfg.audio, model_cfg.image) + 1)
    throw std::runtime_error("train: optimizer parameter count does not match param_count contract");

  TrainResult result;
  result.history.best_val_loss = std::numeric_limits<double>::infinity();

  std::size_t global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto batches = make_epoch_batches(pack, sampling, mix_seed(cfg.seed, kEpochSalt + epoch));

    double epoch_loss = 0;
    std::size_t epoch_anchors = 0;
    double last_lr = 0;
    for (const auto& batch : batches) {
      model.zero_grad();
      auto loss = contrastive_loss(batch, model.audio, model.image, model.scale);
      diff::backward(loss);
      last_lr = lr_at(global_step, total_steps, cfg);
      optimizer.step(last_lr);
      clamp_scale(model.scale);
      epoch_loss += double(loss.item()) * double(batch.items.size());
      epoch_anchors += batch.items.size();
      ++global_step;
    }

    // Epoch-indexed fixed seed: the same validation batches for every
    // training seed, so per-epoch val losses are comparable across runs.
    auto val_batches = make_epoch_batches(pack, sampling, mix_seed(kValSalt, epoch), Split::val);
    const double val_loss = mean_loss_over(pack, model, val_batches);

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / double(epoch_anchors);
    stats.val_loss = val_loss;
    stats.lr = last_lr;
    stats.scale = model.scale.s.item();
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(stats);

    if (val_loss < result.history.best_val_loss) {
      result.history.best_val_loss = val_loss;
      result.history.best_epoch = epoch;
      result.best_model = model.detached_clone();
    }
  }
  return result;
}

}  // namespace vgs
