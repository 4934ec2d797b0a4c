#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "wildfire/error.hpp"
#include "wildfire/raster_io.hpp"

#ifndef WILDFIRE_DEFAULT_CONFIG_DIR
#define WILDFIRE_DEFAULT_CONFIG_DIR "configs"
#endif

namespace wildfire::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw FormatError(p.string() + " is not valid JSON: " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) { detail::write_text_atomically(p, j.dump(2) + "\n"); }

/// Hex SHA-1 of a git blob object holding `content`.
inline std::string git_blob_hash(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1) throw Error("SHA-1 failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

inline fs::path config_dir() {
  if (const char* env = std::getenv("WILDFIRE_CONFIG_DIR"); env && *env) return env;
  return WILDFIRE_DEFAULT_CONFIG_DIR;
}

/// An existing path is taken as is; otherwise `name` is looked up as
/// <config dir>/<kind>/<name>[.json].
inline fs::path resolve_config(const std::string& name, const std::string& kind) {
  if (fs::exists(name)) return name;
  const fs::path base = config_dir() / kind;
  for (const fs::path& p : {base / name, base / (name + ".json")})
    if (fs::is_regular_file(p)) return p;
  throw NotFoundError("no " + kind + " config '" + name + "' (searched " + base.string() + ")");
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Provenance record of one command invocation, written atomically once
/// the command has produced all of its outputs.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv)
      : command_(std::move(command)), argv_(std::move(argv)), started_(utc_now()) {}

  void seed(std::uint64_t s) { seed_ = s; }
  void config(const fs::path& p) {
    configs_.push_back({{"path", p.string()}, {"sha1", git_blob_hash(read_text(p))}});
  }
  /// For configs that live only in memory (e.g. taken from a checkpoint).
  void config_text(const std::string& label, const std::string& text) {
    configs_.push_back({{"path", label}, {"sha1", git_blob_hash(text)}});
  }
  void artifact(const fs::path& p) { artifacts_.push_back(p.string()); }

  json to_json() const {
    std::string joined;
    for (const auto& c : configs_) joined += c.at("sha1").get<std::string>() + "\n";
    json j = {{"command", command_},
              {"argv", argv_},
              {"configs", configs_},
              {"config_hash", git_blob_hash(joined)},
              {"started", started_},
              {"finished", utc_now()},
              {"artifacts", artifacts_}};
    j["seed"] = seed_ ? json(*seed_) : json();
    return j;
  }

  void write(const fs::path& path) { write_json(path, to_json()); }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::string started_;
  std::optional<std::uint64_t> seed_;
  json configs_ = json::array();
  std::vector<std::string> artifacts_;
};

inline std::vector<BandId> parse_bands(const std::string& text) {
  std::vector<BandId> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(band_from_index(std::stoi(item)));
    } catch (const std::logic_error&) {
      out.push_back(band_from_name(item));
    }
  }
  if (out.empty()) throw ConfigError("empty band list");
  return out;
}

}  // namespace wildfire::cli
