#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wildfire/models/layers.hpp"

namespace wildfire::models {

/// Common interface of the segmentation networks: N×C×H×W images in [0,1]
/// map to N×1×H×W fire probabilities.
template <class T>
class SegmentationModel {
 public:
  explicit SegmentationModel(std::uint64_t seed) : store_(seed) {}
  virtual ~SegmentationModel() = default;
  SegmentationModel(const SegmentationModel&) = delete;
  SegmentationModel& operator=(const SegmentationModel&) = delete;

  virtual std::string arch() const = 0;
  /// Config JSON including the "arch" tag; rebuilding from it gives the same layout.
  virtual nlohmann::json config() const = 0;
  virtual std::size_t in_channels() const = 0;
  /// Throws ShapeError if an H×W input cannot be processed.
  virtual void check_input(std::size_t h, std::size_t w) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& images, Mode mode) = 0;

  std::vector<NamedTensor<T>>& parameters() { return store_.items(); }
  const std::vector<NamedTensor<T>>& parameters() const { return store_.items(); }

  std::vector<Tensor<T>> trainable_parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : store_.items())
      if (p.trainable) out.push_back(p.tensor);
    return out;
  }

  Tensor<T> parameter(const std::string& name) const {
    for (const auto& p : store_.items())
      if (p.name == name) return p.tensor;
    throw NotFoundError("model has no parameter '" + name + "'");
  }

 protected:
  void check_batch(const Tensor<T>& images) const {
    if (images.rank() != 4 || images.dim(0) == 0)
      throw ShapeError(arch() + ": expected an N×C×H×W batch, got " + ad::shape_str(images.shape()));
    if (images.dim(1) != in_channels())
      throw ShapeError(arch() + ": expected " + std::to_string(in_channels()) + " input channels, got " +
                       std::to_string(images.dim(1)));
    check_input(images.dim(2), images.dim(3));
  }

  ParamStore<T> store_;
};

/// Number of trainable scalars (buffers excluded).
template <class T>
std::size_t count_parameters(const SegmentationModel<T>& model) {
  std::size_t n = 0;
  for (const auto& p : model.parameters())
    if (p.trainable) n += p.tensor.numel();
  return n;
}

namespace detail {

inline void require_positive(std::size_t v, const char* what) {
  if (v == 0) throw ConfigError(std::string(what) + " must be positive");
}

template <class V>
V json_get(const nlohmann::json& j, const char* key, V fallback) {
  try {
    return j.contains(key) ? j.at(key).get<V>() : fallback;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config field '") + key + "': " + e.what());
  }
}

}  // namespace detail

/// Single 1×1 convolution plus sigmoid: a per-pixel logistic regression on
/// the input bands. Used as a minimal baseline and for fixtures whose ground
/// truth is a band threshold.
struct PixelLogisticConfig {
  std::size_t in_channels = 3;
  std::uint64_t seed = 0;

  void validate() const { detail::require_positive(in_channels, "in_channels"); }
  static PixelLogisticConfig from_json(const nlohmann::json& j) {
    PixelLogisticConfig c;
    c.in_channels = detail::json_get(j, "in_channels", c.in_channels);
    c.seed = detail::json_get(j, "seed", c.seed);
    c.validate();
    return c;
  }
  nlohmann::json to_json() const { return {{"arch", "pixel_logistic"}, {"in_channels", in_channels}, {"seed", seed}}; }
};

template <class T>
class PixelLogistic : public SegmentationModel<T> {
 public:
  explicit PixelLogistic(PixelLogisticConfig cfg) : SegmentationModel<T>(cfg.seed), cfg_(cfg) {
    cfg_.validate();
    head_ = Conv2d<T>(this->store_, "head", ConvSpec{cfg.in_channels, 1, 1, 1, 1, 0});
  }
  std::string arch() const override { return "pixel_logistic"; }
  nlohmann::json config() const override { return cfg_.to_json(); }
  std::size_t in_channels() const override { return cfg_.in_channels; }
  void check_input(std::size_t, std::size_t) const override {}
  Tensor<T> forward(const Tensor<T>& images, Mode) override {
    this->check_batch(images);
    return ad::sigmoid(head_(images));
  }

 private:
  PixelLogisticConfig cfg_;
  Conv2d<T> head_;
};

}  // namespace wildfire::models
