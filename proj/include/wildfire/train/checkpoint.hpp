#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "wildfire/models.hpp"
#include "wildfire/raster_io.hpp"

namespace wildfire::train {

/// One row of the per-epoch training log. val_loss and val_iou are NaN
/// when there is no validation split.
struct HistoryRow {
  std::size_t epoch = 0;  ///< 1-based
  double train_loss = 0;
  double val_loss = 0;
  double val_iou = 0;
  double lr = 0;

  friend bool operator==(const HistoryRow& a, const HistoryRow& b) {
    auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    return a.epoch == b.epoch && same(a.train_loss, b.train_loss) && same(a.val_loss, b.val_loss) &&
           same(a.val_iou, b.val_iou) && same(a.lr, b.lr);
  }
};

template <class T>
struct StoredTensor {
  std::string name;
  ad::Shape shape;
  std::vector<T> values;
};

/// Everything needed to rebuild a model and continue its training run.
template <class T>
struct Checkpoint {
  nlohmann::json model_config;
  nlohmann::json train_config;  ///< null for bare model snapshots
  std::vector<StoredTensor<T>> params;  ///< every model tensor, buffers included
  std::vector<StoredTensor<T>> adam_m;  ///< keyed by trainable parameter name
  std::vector<StoredTensor<T>> adam_v;
  std::uint64_t optimizer_step = 0;
  std::uint64_t epochs_done = 0;
  std::uint64_t seed = 0;
  std::vector<HistoryRow> history;
  double best_score = std::numeric_limits<double>::infinity();
  std::uint64_t best_epoch = 0;  ///< 0 until an epoch has finished
};

template <class T>
std::vector<StoredTensor<T>> capture_parameters(const models::SegmentationModel<T>& model) {
  std::vector<StoredTensor<T>> out;
  for (const auto& p : model.parameters()) out.push_back({p.name, p.tensor.shape(), p.tensor.values()});
  return out;
}

/// Copies stored values into the model. Every model tensor must be present
/// with the same shape and no stored tensor may be left over.
template <class T>
void restore_parameters(models::SegmentationModel<T>& model, const std::vector<StoredTensor<T>>& stored) {
  std::size_t used = 0;
  for (auto& p : model.parameters()) {
    const StoredTensor<T>* hit = nullptr;
    for (const auto& s : stored)
      if (s.name == p.name) hit = &s;
    if (!hit) throw NotFoundError("checkpoint has no tensor for parameter '" + p.name + "'");
    if (hit->shape != p.tensor.shape())
      throw ShapeError("parameter '" + p.name + "': checkpoint shape " + ad::shape_str(hit->shape) +
                       " does not match model shape " + ad::shape_str(p.tensor.shape()));
    std::copy(hit->values.begin(), hit->values.end(), p.tensor.mutable_data().begin());
    ++used;
  }
  if (used != stored.size())
    for (const auto& s : stored) {
      bool known = false;
      for (const auto& p : model.parameters()) known = known || p.name == s.name;
      if (!known) throw NotFoundError("checkpoint tensor '" + s.name + "' has no counterpart in the model");
    }
}

namespace detail {

template <class T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <class T>
std::vector<std::uint8_t> encode_le(const std::vector<T>& v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<std::uint8_t> out(v.size() * sizeof(T));
  for (std::size_t i = 0; i < v.size(); ++i) {
    const U bits = std::bit_cast<U>(v[i]);
    for (std::size_t b = 0; b < sizeof(T); ++b) out[i * sizeof(T) + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

template <class S>
std::vector<S> decode_le(const std::vector<std::uint8_t>& bytes) {
  using U = std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t>;
  std::vector<S> out(bytes.size() / sizeof(S));
  for (std::size_t i = 0; i < out.size(); ++i) {
    U bits = 0;
    for (std::size_t b = 0; b < sizeof(S); ++b) bits |= static_cast<U>(bytes[i * sizeof(S) + b]) << (8 * b);
    out[i] = std::bit_cast<S>(bits);
  }
  return out;
}

inline nlohmann::json number_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }
inline double number_or_nan(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

inline nlohmann::json history_to_json(const std::vector<HistoryRow>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"epoch", r.epoch},
                   {"train_loss", detail::number_or_null(r.train_loss)},
                   {"val_loss", detail::number_or_null(r.val_loss)},
                   {"val_iou", detail::number_or_null(r.val_iou)},
                   {"lr", r.lr}});
  return out;
}

inline std::vector<HistoryRow> history_from_json(const nlohmann::json& j) {
  std::vector<HistoryRow> rows;
  for (const auto& r : j)
    rows.push_back({r.at("epoch").get<std::size_t>(), detail::number_or_nan(r.at("train_loss")),
                    detail::number_or_nan(r.at("val_loss")), detail::number_or_nan(r.at("val_iou")),
                    r.at("lr").get<double>()});
  return rows;
}

/// CSV with header epoch,train_loss,val_loss,val_iou,lr. Missing
/// validation values are written as empty fields.
inline std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string out = "epoch,train_loss,val_loss,val_iou,lr\n";
  auto num = [](double x) {
    if (std::isnan(x)) return std::string();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  for (const auto& r : rows)
    out += std::to_string(r.epoch) + "," + num(r.train_loss) + "," + num(r.val_loss) + "," + num(r.val_iou) + "," +
           num(r.lr) + "\n";
  return out;
}

/// Writes the checkpoint directory: one blob per tensor under tensors/ and
/// manifest.json, the manifest last.
template <class T>
void save_checkpoint(const Checkpoint<T>& ck, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "tensors", ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  nlohmann::json tensors = nlohmann::json::array();
  auto put = [&](const std::string& group, const StoredTensor<T>& t) {
    if (ad::numel(t.shape) != t.values.size()) throw ShapeError("tensor '" + t.name + "' disagrees with its shape");
    const std::string file = "tensors/" + group + "." + t.name + ".bin";
    const auto bytes = detail::encode_le(t.values);
    wildfire::detail::write_atomically(dir / file, bytes.data(), bytes.size());
    tensors.push_back({{"group", group}, {"name", t.name}, {"shape", t.shape}, {"file", file}});
  };
  for (const auto& t : ck.params) put("param", t);
  for (const auto& t : ck.adam_m) put("adam_m", t);
  for (const auto& t : ck.adam_v) put("adam_v", t);
  nlohmann::json m = {{"format", "wildfire-checkpoint-1"},
                      {"dtype", detail::dtype_name<T>()},
                      {"model", ck.model_config},
                      {"train", ck.train_config},
                      {"tensors", tensors},
                      {"optimizer_step", ck.optimizer_step},
                      {"epochs_done", ck.epochs_done},
                      {"seed", ck.seed},
                      {"best_score", detail::number_or_null(ck.best_score)},
                      {"best_epoch", ck.best_epoch},
                      {"history", history_to_json(ck.history)}};
  wildfire::detail::write_text_atomically(dir / "manifest.json", m.dump(2) + "\n");
}

/// Reads a checkpoint directory. Stored f32/f64 values are converted to T.
template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open checkpoint manifest " + manifest_path.string());
  Checkpoint<T> ck;
  try {
    const auto m = nlohmann::json::parse(in);
    if (m.at("format") != "wildfire-checkpoint-1") throw FormatError("unknown checkpoint format");
    const std::string dtype = m.at("dtype").get<std::string>();
    if (dtype != "f32" && dtype != "f64") throw FormatError("unknown checkpoint dtype '" + dtype + "'");
    ck.model_config = m.at("model");
    ck.train_config = m.value("train", nlohmann::json());
    ck.optimizer_step = m.at("optimizer_step").get<std::uint64_t>();
    ck.epochs_done = m.at("epochs_done").get<std::uint64_t>();
    ck.seed = m.at("seed").get<std::uint64_t>();
    ck.best_score = m.at("best_score").is_null() ? std::numeric_limits<double>::infinity()
                                                 : m.at("best_score").get<double>();
    ck.best_epoch = m.at("best_epoch").get<std::uint64_t>();
    ck.history = history_from_json(m.at("history"));
    for (const auto& t : m.at("tensors")) {
      StoredTensor<T> st;
      st.name = t.at("name").get<std::string>();
      st.shape = t.at("shape").get<ad::Shape>();
      const auto file = t.at("file").get<std::string>();
      if (file.find("..") != std::string::npos) throw FormatError("tensor path escapes the checkpoint: " + file);
      const auto bytes = tiff::read_file((dir / file).string());
      const std::size_t width = dtype == "f32" ? 4 : 8;
      if (bytes.size() != ad::numel(st.shape) * width)
        throw FormatError("blob " + file + " holds " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(ad::numel(st.shape) * width));
      if (dtype == "f32") {
        for (float x : detail::decode_le<float>(bytes)) st.values.push_back(static_cast<T>(x));
      } else {
        for (double x : detail::decode_le<double>(bytes)) st.values.push_back(static_cast<T>(x));
      }
      const auto group = t.at("group").get<std::string>();
      if (group == "param") ck.params.push_back(std::move(st));
      else if (group == "adam_m") ck.adam_m.push_back(std::move(st));
      else if (group == "adam_v") ck.adam_v.push_back(std::move(st));
      else throw FormatError("unknown tensor group '" + group + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  return ck;
}

/// Bare snapshot of a model (no optimizer state).
template <class T>
Checkpoint<T> snapshot(const models::SegmentationModel<T>& model) {
  Checkpoint<T> ck;
  ck.model_config = model.config();
  ck.params = capture_parameters(model);
  return ck;
}

/// Rebuilds the model recorded in a checkpoint and loads its tensors.
template <class T>
std::unique_ptr<models::SegmentationModel<T>> load_model(const std::filesystem::path& dir) {
  const auto ck = load_checkpoint<T>(dir);
  auto model = models::make_model<T>(ck.model_config);
  restore_parameters(*model, ck.params);
  return model;
}

}  // namespace wildfire::train
