#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "wildfire/error.hpp"
#include "wildfire/png.hpp"
#include "wildfire/raster_io.hpp"

namespace wildfire {

/// Binary per-pixel fire label raster. Bits are 0 or 1, row-major.
struct FireMask {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> bits;
  std::string source;

  FireMask() = default;
  FireMask(std::uint32_t w, std::uint32_t h, std::string src = {})
      : width(w), height(h), bits(std::size_t{w} * h, 0), source(std::move(src)) {}

  std::size_t pixels() const { return bits.size(); }
  std::uint8_t at(std::uint32_t row, std::uint32_t col) const { return bits[std::size_t{row} * width + col]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  bool same_shape(const FireMask& o) const { return width == o.width && height == o.height; }

  friend bool operator==(const FireMask& a, const FireMask& b) {
    return a.width == b.width && a.height == b.height && a.bits == b.bits;
  }
};

// ---------------------------------------------------------------------------
// Spectral rules
// ---------------------------------------------------------------------------

/// Band value, constant, ratio or difference of two terms.
struct BandExpr {
  struct Term {
    std::optional<BandId> band;
    double constant = 0.0;
  };
  enum class Op { None, Ratio, Difference };

  Term lhs;
  Op op = Op::None;
  Term rhs;
  std::string text;
};

enum class Cmp { Less, LessEqual, Greater, GreaterEqual };

struct Clause {
  BandExpr lhs;
  Cmp cmp = Cmp::Greater;
  BandExpr rhs;
};

/// Conjunction of clauses. A pixel fires iff every clause holds.
struct SpectralRule {
  std::string name;
  std::vector<Clause> clauses;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline BandExpr::Term parse_term(std::string_view s, std::string_view whole) {
  s = trim(s);
  if (s.empty()) throw ConfigError("malformed band expression: '" + std::string(whole) + "'");
  BandExpr::Term t;
  if (s.front() == 'B' || s.front() == 'b') {
    int idx = 0;
    auto [p, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), idx);
    if (ec != std::errc{} || p != s.data() + s.size())
      throw ConfigError("malformed band reference '" + std::string(s) + "' in '" + std::string(whole) + "'");
    t.band = band_from_index(idx);
    return t;
  }
  // std::from_chars for double is unavailable on some toolchains; strtod on a copy.
  std::string copy(s);
  char* end = nullptr;
  t.constant = std::strtod(copy.c_str(), &end);
  if (end != copy.c_str() + copy.size() || !std::isfinite(t.constant))
    throw ConfigError("malformed constant '" + copy + "' in '" + std::string(whole) + "'");
  return t;
}

}  // namespace detail

/// Parses "B7", "1000", "B7/B5" or "B7-B6". Constants may be negative only
/// in single-term form.
inline BandExpr parse_band_expr(std::string_view text) {
  BandExpr e;
  e.text = std::string(detail::trim(text));
  const std::string_view s = e.text;
  std::size_t pos = s.find('/');
  if (pos != std::string_view::npos) {
    e.op = BandExpr::Op::Ratio;
  } else {
    pos = s.find('-', 1);
    if (pos != std::string_view::npos) e.op = BandExpr::Op::Difference;
  }
  if (e.op == BandExpr::Op::None) {
    e.lhs = detail::parse_term(s, s);
  } else {
    e.lhs = detail::parse_term(s.substr(0, pos), s);
    e.rhs = detail::parse_term(s.substr(pos + 1), s);
  }
  return e;
}

inline Cmp parse_cmp(std::string_view s) {
  s = detail::trim(s);
  if (s == "<") return Cmp::Less;
  if (s == "<=" || s == "≤") return Cmp::LessEqual;
  if (s == ">") return Cmp::Greater;
  if (s == ">=" || s == "≥") return Cmp::GreaterEqual;
  throw ConfigError("unknown comparison '" + std::string(s) + "'");
}

inline std::string_view to_string(Cmp c) {
  switch (c) {
    case Cmp::Less: return "<";
    case Cmp::LessEqual: return "<=";
    case Cmp::Greater: return ">";
    case Cmp::GreaterEqual: return ">=";
  }
  return "?";
}

inline SpectralRule rule_from_json(const nlohmann::json& j) {
  try {
    SpectralRule r;
    r.name = j.at("name").get<std::string>();
    for (const auto& c : j.at("clauses")) {
      auto side = [](const nlohmann::json& v) {
        return v.is_number() ? parse_band_expr(v.dump()) : parse_band_expr(v.get<std::string>());
      };
      r.clauses.push_back(Clause{side(c.at("lhs")), parse_cmp(c.at("cmp").get<std::string>()), side(c.at("rhs"))});
    }
    if (r.clauses.empty()) throw ConfigError("rule '" + r.name + "' has no clauses");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed rule JSON: ") + e.what());
  }
}

inline nlohmann::json rule_to_json(const SpectralRule& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["clauses"] = nlohmann::json::array();
  for (const auto& c : r.clauses)
    j["clauses"].push_back({{"lhs", c.lhs.text}, {"cmp", std::string(to_string(c.cmp))}, {"rhs", c.rhs.text}});
  return j;
}

inline SpectralRule load_rule(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open rule file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("rule file " + path + " is not valid JSON: " + e.what());
  }
  return rule_from_json(j);
}

/// Convenience builder: make_rule("r", {{"B7/B5", ">", "2"}, {"B7", ">", "1000"}}).
inline SpectralRule make_rule(std::string name,
                              const std::vector<std::array<std::string, 3>>& clauses) {
  SpectralRule r{std::move(name), {}};
  for (const auto& [l, c, rr] : clauses) r.clauses.push_back({parse_band_expr(l), parse_cmp(c), parse_band_expr(rr)});
  if (r.clauses.empty()) throw ConfigError("rule '" + r.name + "' has no clauses");
  return r;
}

namespace detail {

struct ResolvedTerm {
  const std::vector<std::uint16_t>* band = nullptr;
  double constant = 0.0;
  double value(std::size_t p) const { return band ? static_cast<double>((*band)[p]) : constant; }
};

struct ResolvedExpr {
  ResolvedTerm lhs, rhs;
  BandExpr::Op op;
  // Returns false when the expression is undefined (zero denominator).
  bool eval(std::size_t p, double& out) const {
    const double a = lhs.value(p);
    switch (op) {
      case BandExpr::Op::None: out = a; return true;
      case BandExpr::Op::Difference: out = a - rhs.value(p); return true;
      case BandExpr::Op::Ratio: {
        const double b = rhs.value(p);
        if (b == 0.0) return false;
        out = a / b;
        return true;
      }
    }
    return false;
  }
};

inline ResolvedTerm resolve(const Scene& s, const BandExpr::Term& t) {
  ResolvedTerm r;
  if (t.band) {
    if (!s.has_band(*t.band))
      throw NotFoundError("rule references band " + std::to_string(band_index(*t.band)) +
                          " missing from scene '" + s.scene_id() + "'");
    r.band = &s.band(*t.band);
  } else {
    r.constant = t.constant;
  }
  return r;
}

inline ResolvedExpr resolve(const Scene& s, const BandExpr& e) {
  return ResolvedExpr{resolve(s, e.lhs), e.op == BandExpr::Op::None ? ResolvedTerm{} : resolve(s, e.rhs), e.op};
}

}  // namespace detail

inline FireMask eval_rule(const Scene& scene, const SpectralRule& rule) {
  if (rule.clauses.empty()) throw ConfigError("rule '" + rule.name + "' has no clauses");
  struct Resolved {
    detail::ResolvedExpr lhs, rhs;
    Cmp cmp;
  };
  std::vector<Resolved> clauses;
  for (const auto& c : rule.clauses)
    clauses.push_back({detail::resolve(scene, c.lhs), detail::resolve(scene, c.rhs), c.cmp});

  FireMask mask(scene.width(), scene.height(), rule.name);
  for (std::size_t p = 0; p < mask.pixels(); ++p) {
    bool fire = true;
    for (const auto& c : clauses) {
      double a = 0, b = 0;
      if (!c.lhs.eval(p, a) || !c.rhs.eval(p, b)) {
        fire = false;
        break;
      }
      bool ok = false;
      switch (c.cmp) {
        case Cmp::Less: ok = a < b; break;
        case Cmp::LessEqual: ok = a <= b; break;
        case Cmp::Greater: ok = a > b; break;
        case Cmp::GreaterEqual: ok = a >= b; break;
      }
      if (!ok) {
        fire = false;
        break;
      }
    }
    mask.bits[p] = fire ? 1 : 0;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Combiners
// ---------------------------------------------------------------------------

namespace detail {

inline void check_combinable(const std::vector<FireMask>& masks, const char* what) {
  if (masks.size() < 2)
    throw ConfigError(std::string(what) + " needs at least 2 masks, got " + std::to_string(masks.size()));
  for (const auto& m : masks)
    if (!m.same_shape(masks.front()))
      throw ShapeError(std::string(what) + ": mask '" + m.source + "' is " + std::to_string(m.width) + "x" +
                       std::to_string(m.height) + ", expected " + std::to_string(masks.front().width) + "x" +
                       std::to_string(masks.front().height));
}

inline FireMask count_at_least(const std::vector<FireMask>& masks, std::size_t quorum, std::string source) {
  FireMask out(masks.front().width, masks.front().height, std::move(source));
  for (std::size_t p = 0; p < out.pixels(); ++p) {
    std::size_t votes = 0;
    for (const auto& m : masks) votes += m.bits[p] ? 1 : 0;
    out.bits[p] = votes >= quorum ? 1 : 0;
  }
  return out;
}

}  // namespace detail

/// Pixel fires iff every input mask fires.
inline FireMask combine_intersection(const std::vector<FireMask>& masks) {
  detail::check_combinable(masks, "intersection");
  return detail::count_at_least(masks, masks.size(), "intersection");
}

/// Pixel fires iff at least `quorum` input masks fire.
inline FireMask combine_voting(const std::vector<FireMask>& masks, std::size_t quorum = 2) {
  detail::check_combinable(masks, "voting");
  if (quorum < 1 || quorum > masks.size())
    throw ConfigError("voting quorum " + std::to_string(quorum) + " outside 1.." + std::to_string(masks.size()));
  return detail::count_at_least(masks, quorum, "voting");
}

/// Pixel fires iff any input mask fires; expresses disjunctive rule sets.
inline FireMask combine_union(const std::vector<FireMask>& masks) {
  if (masks.empty()) throw ConfigError("union needs at least 1 mask");
  if (masks.size() == 1) return masks.front();
  detail::check_combinable(masks, "union");
  return detail::count_at_least(masks, 1, "union");
}

// ---------------------------------------------------------------------------
// Example rule sets.
//
// These mimic the shape of the three operational Landsat-8 active-fire
// algorithms (SWIR ratio tests plus absolute SWIR thresholds). The numeric
// thresholds are illustrative placeholders for the bundled synthetic data
// and are NOT the published coefficients of those algorithms.
// ---------------------------------------------------------------------------

inline std::vector<SpectralRule> example_rules() {
  return {
      make_rule("schroeder-like", {{{"B7/B5", ">", "2.5"}}, {{"B7-B5", ">", "6000"}}, {{"B7", ">", "12000"}}}),
      make_rule("murphy-like", {{{"B7/B6", ">", "1.4"}}, {{"B6/B5", ">", "1.4"}}, {{"B7", ">", "9000"}}}),
      make_rule("kumar-roy-like", {{{"B7", ">", "14000"}}, {{"B7-B6", ">", "3500"}}}),
  };
}

// ---------------------------------------------------------------------------
// Mask files: 1-bit PNG, or .wfr with a single plane of band id 0.
// ---------------------------------------------------------------------------

inline void save_mask(const FireMask& mask, const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".png" || ext == ".PNG") {
    png::Image img{mask.width, mask.height, 1, mask.bits};
    png::write(path, img, 1);
  } else {
    RawRaster r{mask.width, mask.height, {0}, {std::vector<std::uint16_t>(mask.bits.begin(), mask.bits.end())}};
    write_wfr(path, r);
  }
}

inline FireMask load_mask(const std::string& path) {
  const auto head = tiff::read_file(path);
  FireMask m;
  m.source = std::filesystem::path(path).stem().string();
  if (looks_like_wfr(head)) {
    auto r = decode_wfr(head, path);
    if (r.planes.size() != 1) throw FormatError("mask container must hold exactly one plane: " + path);
    m.width = r.width;
    m.height = r.height;
    m.bits.resize(r.planes[0].size());
    for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = r.planes[0][i] ? 1 : 0;
    return m;
  }
  auto img = png::read(path);
  if (img.channels != 1) throw FormatError("mask PNG must be grayscale: " + path);
  m.width = img.width;
  m.height = img.height;
  m.bits.resize(img.pixels.size());
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = img.pixels[i] ? 1 : 0;
  return m;
}

}  // namespace wildfire
