#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "wildfire/error.hpp"

namespace wildfire::train {

struct OneCycleConfig {
  double peak_lr = 1e-3;
  double div_factor = 25.0;   ///< start lr = peak / div_factor
  double final_div = 1e4;     ///< last-step lr = peak / final_div
  double warmup_fraction = 0.3;

  void validate() const {
    if (!(peak_lr > 0.0) || !(div_factor > 0.0) || !(final_div > 0.0))
      throw ConfigError("one-cycle rates and divisors must be positive");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in (0,1)");
  }
};

/// Index of the step that carries the peak rate: round(warmup_fraction·(total-1)).
inline std::uint64_t warmup_end(std::uint64_t total_steps, const OneCycleConfig& cfg) {
  if (total_steps == 0) throw ConfigError("one-cycle schedule needs at least one step");
  const auto last = static_cast<double>(total_steps - 1);
  return static_cast<std::uint64_t>(std::llround(cfg.warmup_fraction * last));
}

/// One-cycle cosine schedule over steps 0..total-1. Cosine ramp from
/// peak/div_factor at step 0 to peak at warmup_end(), then cosine anneal to
/// peak/final_div at the last step. The peak is returned at warmup_end()
/// and nowhere else.
inline double one_cycle_lr(std::uint64_t step, std::uint64_t total_steps, const OneCycleConfig& cfg) {
  cfg.validate();
  if (step >= total_steps)
    throw ConfigError("scheduler step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
  const std::uint64_t w = warmup_end(total_steps, cfg), last = total_steps - 1;
  const double peak = cfg.peak_lr;
  if (step == w) return peak;
  double lr;
  if (step < w) {
    const double lo = peak / cfg.div_factor;
    const double t = static_cast<double>(step) / static_cast<double>(w);
    lr = lo + (peak - lo) * (1.0 - std::cos(std::numbers::pi * t)) / 2.0;
  } else {
    const double lo = peak / cfg.final_div;
    const double t = static_cast<double>(step - w) / static_cast<double>(last - w);
    lr = lo + (peak - lo) * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
  }
  return lr < peak ? lr : std::nextafter(peak, 0.0);
}

}  // namespace wildfire::train
