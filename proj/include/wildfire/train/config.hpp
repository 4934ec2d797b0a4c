#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "wildfire/dataset.hpp"
#include "wildfire/train/adamw.hpp"
#include "wildfire/train/schedule.hpp"

namespace wildfire::train {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  OneCycleConfig schedule;
  /// "peak": schedule.peak_lr is the cycle maximum. "initial": it is the
  /// step-0 rate and the maximum becomes peak_lr·div_factor.
  std::string lr_anchor = "peak";
  AdamWConfig optimizer;
  double dice_smooth = 1.0;
  AugmentConfig augment;  ///< augment.crop is also the validation centre crop
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  OneCycleConfig effective_schedule() const {
    OneCycleConfig s = schedule;
    if (lr_anchor == "initial") s.peak_lr = schedule.peak_lr * schedule.div_factor;
    return s;
  }

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (workers < 1) throw ConfigError("workers must be positive");
    if (lr_anchor != "peak" && lr_anchor != "initial") throw ConfigError("lr_anchor must be 'peak' or 'initial'");
    if (!(dice_smooth > 0.0)) throw ConfigError("dice_smooth must be positive");
    schedule.validate();
    optimizer.validate();
    augment.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json aug;
  to_json(aug, c.augment);
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"peak_lr", c.schedule.peak_lr},
          {"div_factor", c.schedule.div_factor},
          {"final_div", c.schedule.final_div},
          {"warmup_fraction", c.schedule.warmup_fraction},
          {"lr_anchor", c.lr_anchor},
          {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
          {"eps", c.optimizer.eps},
          {"weight_decay", c.optimizer.weight_decay},
          {"dice_smooth", c.dice_smooth},
          {"augment", aug},
          {"seed", c.seed},
          {"workers", c.workers}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.schedule.peak_lr = j.value("peak_lr", c.schedule.peak_lr);
    c.schedule.div_factor = j.value("div_factor", c.schedule.div_factor);
    c.schedule.final_div = j.value("final_div", c.schedule.final_div);
    c.schedule.warmup_fraction = j.value("warmup_fraction", c.schedule.warmup_fraction);
    c.lr_anchor = j.value("lr_anchor", c.lr_anchor);
    if (j.contains("betas")) {
      const auto& b = j.at("betas");
      if (!b.is_array() || b.size() != 2) throw ConfigError("betas must be a pair");
      c.optimizer.beta1 = b[0].get<double>();
      c.optimizer.beta2 = b[1].get<double>();
    }
    c.optimizer.eps = j.value("eps", c.optimizer.eps);
    c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
    c.dice_smooth = j.value("dice_smooth", c.dice_smooth);
    if (j.contains("augment")) from_json(j.at("augment"), c.augment);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open train config: " + path);
  try {
    return train_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("train config " + path + " is not valid JSON: " + e.what());
  }
}

}  // namespace wildfire::train
