#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "testutil.hpp"
#include "vgs/trainer.hpp"

using namespace vgs;

namespace {

TrainConfig schedule_config(int epochs, int warmup) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.warmup_epochs = warmup;
  return cfg;
}

ModelConfig tiny_model_config(const FeaturePack& pack) {
  ModelConfig cfg;
  cfg.audio = TowerConfig::for_width(pack.audio_dim, 16);
  cfg.image = TowerConfig::for_width(pack.image_dim, 16);
  cfg.audio.heads = cfg.image.heads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("lr schedule hits the published anchors") {
  // 6 epochs x 20 steps, 2 warmup epochs -> warmup_steps = 40, span = 80.
  const auto cfg = schedule_config(6, 2);
  const std::size_t total = 120;

  CHECK(lr_at(0, total, cfg) == 0.0);
  CHECK(lr_at(39, total, cfg) == cfg.peak_lr);          // end of warmup
  CHECK(lr_at(119, total, cfg) == doctest::Approx(cfg.final_lr).epsilon(1e-12));  // last step
  // Annealing midpoint: t = (79 - 40 + 1) / 80 = 1/2.
  CHECK(lr_at(79, total, cfg) ==
        doctest::Approx((cfg.peak_lr + cfg.final_lr) / 2).epsilon(1e-12));
  CHECK(lr_at(79, total, cfg) == doctest::Approx(1.005e-4).epsilon(1e-12));
}

TEST_CASE("lr schedule is continuous at the boundary and non-increasing after warmup") {
  const auto cfg = schedule_config(24, 4);
  const std::size_t total = 24 * 8;
  const std::size_t warmup_steps = total / 6;  // 4/24 of the run

  const double at_boundary = lr_at(warmup_steps - 1, total, cfg);
  CHECK(at_boundary == cfg.peak_lr);
  const double after = lr_at(warmup_steps, total, cfg);
  CHECK(after <= at_boundary);
  CHECK(after > 0.9 * cfg.peak_lr);  // no jump

  double prev = at_boundary;
  for (std::size_t step = warmup_steps; step < total; ++step) {
    const double lr = lr_at(step, total, cfg);
    CHECK(lr <= prev + 1e-18);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_at(total, total, cfg), std::invalid_argument);
}

TEST_CASE("adam leaves parameters untouched for zero gradients") {
  auto w = diff::Tensor::from({3}, {1, 2, 3}, true);
  AdamOptimizer opt({{"w", &w}});
  opt.step(0.1);
  CHECK(w.values() == std::vector<float>{1, 2, 3});
}

TEST_CASE("adam first step on f(w)=w^2 moves by about lr") {
  auto w = diff::Tensor::scalar(1.0f, true);
  AdamOptimizer opt({{"w", &w}});
  auto loss = diff::mul(w, w);
  diff::backward(loss);
  opt.step(0.1);
  CHECK(w.item() == doctest::Approx(0.9).epsilon(1e-4));
}

TEST_CASE("adam aborts on non-finite gradients") {
  auto w = diff::Tensor::scalar(1.0f, true);
  AdamOptimizer opt({{"w", &w}});
  diff::backward(diff::mul(w, w));
  const_cast<std::vector<float>&>(w.grad())[0] = std::nanf("");
  CHECK_THROWS_WITH_AS(opt.step(0.1), doctest::Contains("w"), std::runtime_error);
}

TEST_CASE("scale stays capped through optimizer steps") {
  auto scale = LogitScale::init(99.999);
  AdamOptimizer opt({{"scale", &scale.s}});
  for (int step = 0; step < 50; ++step) {
    scale.s.zero_grad();
    // Gradient that pushes the scale upward.
    auto loss = diff::scale(scale.s, -1.0f);
    diff::backward(loss);
    opt.step(0.5);
    clamp_scale(scale);
    CHECK(scale.s.item() <= 100.0f);
    CHECK(scale.s.item() > 0.0f);
  }
  CHECK(scale.s.item() == 100.0f);
}

TEST_CASE("training improves the validation loss and is reproducible") {
  auto data_cfg = testutil::tiny_synthetic_config(77);
  const auto pack = generate_synthetic(data_cfg);

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 8;
  cfg.negatives = 3;
  cfg.seed = 5;

  auto run1 = train(pack, tiny_model_config(pack), cfg);
  REQUIRE(run1.history.epochs.size() == 3);
  CHECK(run1.history.best_val_loss < run1.history.epochs.front().val_loss + 1e-12);
  CHECK(run1.history.best_epoch >= 0);
  CHECK(run1.history.best_val_loss ==
        run1.history.epochs[std::size_t(run1.history.best_epoch)].val_loss);
  double min_val = run1.history.epochs.front().val_loss;
  for (const auto& e : run1.history.epochs) min_val = std::min(min_val, e.val_loss);
  CHECK(run1.history.best_val_loss == min_val);

  auto run2 = train(pack, tiny_model_config(pack), cfg);
  CHECK(run1.history.metrics_equal(run2.history));

  // Different seed, different trajectory.
  TrainConfig other = cfg;
  other.seed = 6;
  const auto run3 = train(pack, tiny_model_config(pack), other);
  CHECK_FALSE(run1.history.metrics_equal(run3.history));

  // The two models agree bit-for-bit across the reruns.
  auto p1 = run1.best_model.named_parameters();
  auto p2 = run2.best_model.named_parameters();
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK(p1[i].second->values() == p2[i].second->values());
}

TEST_CASE("bilingual packs take roughly twice the steps of a monolingual subset") {
  auto mono_cfg = testutil::tiny_synthetic_config(78);
  auto bi_cfg = mono_cfg;
  bi_cfg.languages = {Language::en, Language::fr};
  const auto mono = generate_synthetic(mono_cfg);
  const auto bi = generate_synthetic(bi_cfg);

  SamplingConfig sampling;
  const auto mono_anchors = epoch_anchor_count(mono, sampling);
  const auto bi_anchors = epoch_anchor_count(bi, sampling);
  CHECK(bi_anchors == 2 * mono_anchors);

  SamplingConfig equalized = sampling;
  equalized.equalize_steps = true;
  CHECK(epoch_anchor_count(bi, equalized) == mono_anchors);
}

TEST_CASE("train rejects packs without usable splits") {
  auto pack = generate_synthetic(testutil::tiny_synthetic_config(79));
  for (auto& rec : pack.records)
    if (rec.split == Split::val) rec.split = Split::test;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  CHECK_THROWS_WITH_AS(train(pack, tiny_model_config(pack), cfg), doctest::Contains("validation"),
                       std::invalid_argument);
}

TEST_CASE("history CSV carries the five metric columns") {
  TrainHistory history;
  history.epochs.push_back({0, 2.5, 2.6, 1e-4, 14.3, 0.1});
  history.epochs.push_back({1, 2.0, 2.1, 9e-5, 15.0, 0.1});
  const std::string path = "test_history.csv";
  write_history_csv(history, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,train_loss,val_loss,lr,scale");
  std::string row;
  std::getline(in, row);
  CHECK(row.substr(0, 2) == "0,");
}
