#pragma once

#include <cstddef>
#include <vector>

#include "wildfire/autodiff.hpp"
#include "wildfire/dataset.hpp"
#include "wildfire/models/model.hpp"

namespace wildfire {

/// Stacks equally sized samples into an N×C×H×W image tensor.
template <class T>
ad::Tensor<T> stack_images(const std::vector<PatchSample>& batch) {
  if (batch.empty()) throw ShapeError("cannot stack an empty batch");
  const auto& f = batch.front();
  std::vector<T> v;
  v.reserve(batch.size() * f.image.size());
  for (const auto& s : batch) {
    if (s.channels != f.channels || s.height != f.height || s.width != f.width)
      throw ShapeError("batch mixes sample sizes: '" + f.id + "' and '" + s.id + "'");
    for (float x : s.image) v.push_back(static_cast<T>(x));
  }
  return ad::Tensor<T>({batch.size(), f.channels, f.height, f.width}, std::move(v));
}

/// Stacks the masks of equally sized samples into an N×1×H×W 0/1 tensor.
template <class T>
ad::Tensor<T> stack_masks(const std::vector<PatchSample>& batch) {
  if (batch.empty()) throw ShapeError("cannot stack an empty batch");
  const auto& f = batch.front();
  std::vector<T> v;
  v.reserve(batch.size() * f.mask.size());
  for (const auto& s : batch) {
    if (s.height != f.height || s.width != f.width)
      throw ShapeError("batch mixes sample sizes: '" + f.id + "' and '" + s.id + "'");
    for (auto b : s.mask) v.push_back(b ? T(1) : T(0));
  }
  return ad::Tensor<T>({batch.size(), 1, f.height, f.width}, std::move(v));
}

/// Consecutive runs of at most batch_size equally sized samples, as index ranges.
inline std::vector<std::pair<std::size_t, std::size_t>> size_runs(const std::vector<PatchSample>& samples,
                                                                   std::size_t batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  std::size_t lo = 0;
  for (std::size_t i = 1; i <= samples.size(); ++i) {
    const bool cut = i == samples.size() || i - lo == batch_size || samples[i].height != samples[lo].height ||
                     samples[i].width != samples[lo].width || samples[i].channels != samples[lo].channels;
    if (cut) {
      runs.emplace_back(lo, i);
      lo = i;
    }
  }
  return runs;
}

/// Eval-mode probability maps (H·W values each), one per sample, in input order.
template <class T>
std::vector<std::vector<T>> predict(models::SegmentationModel<T>& model, const std::vector<PatchSample>& samples,
                                    std::size_t batch_size = 8) {
  ad::NoGradGuard no_grad;
  std::vector<std::vector<T>> out;
  out.reserve(samples.size());
  for (auto [lo, hi] : size_runs(samples, batch_size)) {
    std::vector<PatchSample> chunk(samples.begin() + lo, samples.begin() + hi);
    const auto probs = model.forward(stack_images<T>(chunk), ad::Mode::Eval);
    const std::size_t plane = chunk.front().plane();
    for (std::size_t k = 0; k < chunk.size(); ++k)
      out.emplace_back(probs.data().begin() + k * plane, probs.data().begin() + (k + 1) * plane);
  }
  return out;
}

}  // namespace wildfire
