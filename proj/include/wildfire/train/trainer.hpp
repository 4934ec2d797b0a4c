#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "wildfire/batch.hpp"
#include "wildfire/metrics.hpp"
#include "wildfire/train/adamw.hpp"
#include "wildfire/train/checkpoint.hpp"
#include "wildfire/train/config.hpp"
#include "wildfire/train/dice.hpp"
#include "wildfire/train/schedule.hpp"

namespace wildfire::train {

/// Epoch loop: augmented random-crop batches, forward in train mode, dice
/// loss, backward, AdamW with the one-cycle rate; then a validation pass on
/// centre crops. The best epoch (lowest validation loss, or training loss
/// without a validation split) is kept as a checkpoint.
template <class T>
class Trainer {
 public:
  using EpochCallback = std::function<void(const HistoryRow&)>;

  Trainer(models::SegmentationModel<T>& model, TrainConfig cfg, std::vector<PatchSample> train_samples,
          std::vector<PatchSample> val_samples = {})
      : model_(model),
        cfg_(std::move(cfg)),
        train_(std::move(train_samples)),
        val_(std::move(val_samples)),
        optimizer_(model.trainable_parameters(), cfg_.optimizer) {
    cfg_.validate();
    if (train_.empty()) throw ConfigError("training needs a non-empty train split");
    for (const auto* split : {&train_, &val_})
      for (const auto& s : *split)
        if (s.split == "test") throw ConfigError("sample '" + s.id + "' is tagged test and cannot be trained on");
    for (const auto& s : val_) check_crop(s, cfg_.augment.crop);
    stream_.emplace(train_, cfg_.batch_size, augment_config(), cfg_.seed, cfg_.workers);
    for (const auto& s : val_) val_crops_.push_back(center_crop(s, cfg_.augment.crop));
  }

  std::size_t steps_per_epoch() const { return stream_->batches_per_epoch(); }
  std::uint64_t total_steps() const { return cfg_.epochs * steps_per_epoch(); }
  std::uint64_t epochs_done() const { return epochs_done_; }
  const std::vector<HistoryRow>& history() const { return history_; }
  const TrainConfig& config() const { return cfg_; }
  const std::optional<Checkpoint<T>>& best() const { return best_; }

  void on_epoch(EpochCallback cb) { callback_ = std::move(cb); }

  /// Trains until `until_epoch` epochs are done (default: all configured).
  const std::vector<HistoryRow>& fit(std::optional<std::size_t> until_epoch = std::nullopt) {
    const std::size_t stop = std::min(until_epoch.value_or(cfg_.epochs), cfg_.epochs);
    while (epochs_done_ < stop) run_epoch();
    return history_;
  }

  /// Current state of the run.
  Checkpoint<T> checkpoint() const {
    Checkpoint<T> ck = snapshot(model_);
    ck.train_config = to_json(cfg_);
    const auto names = trainable_names();
    const auto& st = optimizer_.state();
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto shape = model_.parameter(names[i]).shape();
      ck.adam_m.push_back({names[i], shape, st.m[i]});
      ck.adam_v.push_back({names[i], shape, st.v[i]});
    }
    ck.optimizer_step = st.step;
    ck.epochs_done = epochs_done_;
    ck.seed = cfg_.seed;
    ck.history = history_;
    ck.best_score = best_score_;
    ck.best_epoch = best_ ? best_->epochs_done : 0;
    return ck;
  }

  /// Restores model, optimizer and loop position from a checkpoint of the
  /// same run, so that fit() continues where it stopped.
  void resume(const Checkpoint<T>& ck) {
    if (ck.model_config != model_.config()) throw ConfigError("checkpoint was written for a different model config");
    if (ck.epochs_done > cfg_.epochs)
      throw ConfigError("checkpoint has " + std::to_string(ck.epochs_done) + " epochs but the run has only " +
                        std::to_string(cfg_.epochs));
    restore_parameters(model_, ck.params);
    const auto names = trainable_names();
    auto& st = optimizer_.mutable_state();
    auto fill = [&](const std::vector<StoredTensor<T>>& from, std::vector<std::vector<T>>& to) {
      if (from.empty() && ck.optimizer_step == 0) return;
      for (std::size_t i = 0; i < names.size(); ++i) {
        const StoredTensor<T>* hit = nullptr;
        for (const auto& s : from)
          if (s.name == names[i]) hit = &s;
        if (!hit) throw NotFoundError("checkpoint has no optimizer moment for '" + names[i] + "'");
        if (hit->values.size() != to[i].size()) throw ShapeError("optimizer moment of '" + names[i] + "' has the wrong size");
        to[i] = hit->values;
      }
    };
    fill(ck.adam_m, st.m);
    fill(ck.adam_v, st.v);
    st.step = ck.optimizer_step;
    epochs_done_ = ck.epochs_done;
    history_ = ck.history;
    best_score_ = ck.best_score;
    best_.reset();
    if (ck.best_epoch == ck.epochs_done && ck.epochs_done > 0) best_ = ck;
    stream_->seek(epochs_done_, 0);
  }

 private:
  AugmentConfig augment_config() const {
    AugmentConfig a = cfg_.augment;
    a.seed = cfg_.augment.seed ^ (cfg_.seed * 0x9E3779B97F4A7C15ULL);
    return a;
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> names;
    for (const auto& p : model_.parameters())
      if (p.trainable) names.push_back(p.name);
    return names;
  }

  void run_epoch() {
    const auto sched = cfg_.effective_schedule();
    stream_->seek(epochs_done_, 0);
    double loss_sum = 0, lr = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < steps_per_epoch(); ++b) {
      const auto batch = stream_->next();
      const std::uint64_t step = optimizer_.state().step;
      lr = one_cycle_lr(step, total_steps(), sched);
      auto loss = dice_loss(model_.forward(stack_images<T>(batch), ad::Mode::Train), stack_masks<T>(batch),
                            static_cast<T>(cfg_.dice_smooth));
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epochs_done_ + 1) + ", step " +
                           std::to_string(step) + " (first sample '" + batch.front().id + "')");
      optimizer_.zero_grad();
      ad::backward(loss);
      optimizer_.step(lr);
      optimizer_.zero_grad();
      loss_sum += value * static_cast<double>(batch.size());
      seen += batch.size();
    }
    ++epochs_done_;
    HistoryRow row{epochs_done_, loss_sum / static_cast<double>(seen), std::numeric_limits<double>::quiet_NaN(),
                   std::numeric_limits<double>::quiet_NaN(), lr};
    if (!val_crops_.empty()) validate(row);
    history_.push_back(row);
    const double score = val_crops_.empty() ? row.train_loss : row.val_loss;
    if (score < best_score_) {
      best_score_ = score;
      best_ = checkpoint();
    }
    if (callback_) callback_(row);
  }

  void validate(HistoryRow& row) {
    ad::NoGradGuard no_grad;
    double loss_sum = 0;
    metrics::ConfusionCounts counts;
    for (auto [lo, hi] : size_runs(val_crops_, cfg_.batch_size)) {
      std::vector<PatchSample> chunk(val_crops_.begin() + lo, val_crops_.begin() + hi);
      const auto probs = model_.forward(stack_images<T>(chunk), ad::Mode::Eval);
      loss_sum += static_cast<double>(dice_loss(probs, stack_masks<T>(chunk), static_cast<T>(cfg_.dice_smooth)).item()) *
                  static_cast<double>(chunk.size());
      const std::size_t plane = chunk.front().plane();
      for (std::size_t k = 0; k < chunk.size(); ++k) {
        const auto& s = chunk[k];
        std::vector<T> p(probs.data().begin() + k * plane, probs.data().begin() + (k + 1) * plane);
        FireMask truth(s.width, s.height);
        truth.bits = s.mask;
        counts += metrics::confusion(metrics::binarize(p, s.width, s.height, 0.5), truth, s.valid_height,
                                     s.valid_width);
      }
    }
    row.val_loss = loss_sum / static_cast<double>(val_crops_.size());
    row.val_iou = metrics::compute_metrics(counts).iou;
  }

  models::SegmentationModel<T>& model_;
  TrainConfig cfg_;
  std::vector<PatchSample> train_;
  std::vector<PatchSample> val_;
  std::vector<PatchSample> val_crops_;
  AdamW<T> optimizer_;
  std::optional<BatchStream> stream_;
  std::uint64_t epochs_done_ = 0;
  std::vector<HistoryRow> history_;
  double best_score_ = std::numeric_limits<double>::infinity();
  std::optional<Checkpoint<T>> best_;
  EpochCallback callback_;
};

}  // namespace wildfire::train
