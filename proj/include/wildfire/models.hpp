#pragma once

#include <fstream>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "wildfire/models/model.hpp"
#include "wildfire/models/swinunet.hpp"
#include "wildfire/models/transunet.hpp"
#include "wildfire/models/unet.hpp"

namespace wildfire::models {

/// Builds a model from a config tagged with "arch": unet, transunet_lite,
/// swinunet_lite or pixel_logistic.
template <class T>
std::unique_ptr<SegmentationModel<T>> make_model(const nlohmann::json& cfg) {
  if (!cfg.is_object() || !cfg.contains("arch") || !cfg.at("arch").is_string())
    throw ConfigError("model config needs a string field \"arch\"");
  const auto arch = cfg.at("arch").get<std::string>();
  if (arch == "unet") return std::make_unique<UNet<T>>(UNetConfig::from_json(cfg));
  if (arch == "transunet_lite") return std::make_unique<TransUNetLite<T>>(TransUNetLiteConfig::from_json(cfg));
  if (arch == "swinunet_lite") return std::make_unique<SwinUNetLite<T>>(SwinUNetLiteConfig::from_json(cfg));
  if (arch == "pixel_logistic") return std::make_unique<PixelLogistic<T>>(PixelLogisticConfig::from_json(cfg));
  throw ConfigError("unknown model arch '" + arch + "'");
}

inline nlohmann::json load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model config: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model config " + path + " is not valid JSON: " + e.what());
  }
}

}  // namespace wildfire::models
