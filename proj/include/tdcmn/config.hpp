#pragma once

#include <cctype>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tdcmn/data.hpp"
#include "tdcmn/error.hpp"
#include "tdcmn/models.hpp"
#include "tdcmn/train.hpp"

namespace tdcmn {

/// Sectioned key/value file in a small TOML subset:
///
///   # comment
///   [section]
///   key = "string" | bare-word | 1.5 | true | [1, 3, 5] | ["a", "b"]
///
/// Keys are addressed as "section.key". Entry order is preserved so that
/// to_string() reproduces a canonical, reloadable file.
class KeyValueConfig {
 public:
  struct Entry {
    std::string key;    // section.key
    std::string value;  // canonical text
  };

  static KeyValueConfig parse(const std::string& text, const std::string& origin = "config") {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string where = origin + ":" + std::to_string(line_no);
      std::string s = trim(strip_comment(line));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']' || s.size() < 3) throw ConfigError(where + ": malformed section header");
        section = trim(s.substr(1, s.size() - 2));
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      const std::string key = trim(s.substr(0, eq));
      if (key.empty()) throw ConfigError(where + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      cfg.set(full, canonical(trim(s.substr(eq + 1)), where));
    }
    return cfg;
  }

  /// Applies "section.key=value".
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
    }
    set(trim(assignment.substr(0, eq)),
        canonical(trim(assignment.substr(eq + 1)), "override '" + assignment + "'"));
  }

  void set(const std::string& key, std::string value) {
    for (auto& e : entries_) {
      if (e.key == key) {
        e.value = std::move(value);
        return;
      }
    }
    entries_.push_back({key, std::move(value)});
  }

  bool has(const std::string& key) const { return find(key) != nullptr; }

  std::string get_string(const std::string& key, const std::string& fallback = {}) const {
    const std::string* v = find(key);
    return v ? unquote(*v) : fallback;
  }

  double get_double(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    return v ? to_double(*v, key) : fallback;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    const std::string* v = find(key);
    return v ? to_uint(*v, key) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (*v == "true") return true;
    if (*v == "false") return false;
    throw ConfigError(key + ": expected true or false, got " + *v);
  }

  std::vector<std::string> get_list(const std::string& key) const {
    const std::string* v = find(key);
    if (!v) return {};
    if (v->size() < 2 || v->front() != '[' || v->back() != ']') {
      throw ConfigError(key + ": expected a list, got " + *v);
    }
    std::vector<std::string> items;
    for (const auto& item : split_list(v->substr(1, v->size() - 2))) items.push_back(unquote(item));
    return items;
  }

  std::vector<std::size_t> get_uint_list(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& s : get_list(key)) out.push_back(static_cast<std::size_t>(to_uint(s, key)));
    return out;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  /// Canonical text grouped by section in first-appearance order.
  std::string to_string() const {
    std::vector<std::string> sections;
    for (const auto& e : entries_) {
      const std::string s = section_of(e.key);
      if (std::find(sections.begin(), sections.end(), s) == sections.end()) sections.push_back(s);
    }
    std::string out;
    for (const auto& s : sections) {
      if (!s.empty()) out += (out.empty() ? "" : "\n") + std::string("[") + s + "]\n";
      for (const auto& e : entries_) {
        if (section_of(e.key) != s) continue;
        out += e.key.substr(s.empty() ? 0 : s.size() + 1) + " = " + e.value + "\n";
      }
    }
    return out;
  }

  friend bool operator==(const KeyValueConfig& a, const KeyValueConfig& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (const auto& e : a.entries_) {
      const std::string* v = b.find(e.key);
      if (!v || *v != e.value) return false;
    }
    return true;
  }

 private:
  const std::string* find(const std::string& key) const {
    for (const auto& e : entries_) {
      if (e.key == key) return &e.value;
    }
    return nullptr;
  }

  static std::string section_of(const std::string& key) {
    const auto dot = key.rfind('.');
    return dot == std::string::npos ? std::string{} : key.substr(0, dot);
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  static std::vector<std::string> split_list(const std::string& body) {
    std::vector<std::string> items;
    std::string cur;
    bool quoted = false;
    for (char c : body) {
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        items.push_back(trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty() || !items.empty()) items.push_back(trim(cur));
    return items;
  }

  static std::string quote(const std::string& s) { return "\"" + s + "\""; }

  static std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
  }

  static bool is_number(const std::string& s) {
    if (s.empty()) return false;
    double d = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), d);
    return r.ec == std::errc() && r.ptr == s.data() + s.size();
  }

  /// Scalars keep their text (numbers, booleans) or become quoted strings;
  /// lists are rewritten as "[a, b]" with canonical items.
  static std::string canonical(const std::string& raw, const std::string& where) {
    if (raw.empty()) throw ConfigError(where + ": missing value");
    if (raw.front() == '[') {
      if (raw.back() != ']') throw ConfigError(where + ": unterminated list");
      std::string out = "[";
      const auto items = split_list(raw.substr(1, raw.size() - 2));
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].empty()) throw ConfigError(where + ": empty list item");
        out += (i ? ", " : "") + canonical(items[i], where);
      }
      return out + "]";
    }
    if (raw.front() == '"') {
      if (raw.size() < 2 || raw.back() != '"') throw ConfigError(where + ": unterminated string");
      return raw;
    }
    if (raw == "true" || raw == "false" || is_number(raw)) return raw;
    return quote(raw);
  }

  static double to_double(const std::string& v, const std::string& key) {
    double d = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), d);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
      throw ConfigError(key + ": expected a number, got " + v);
    }
    return d;
  }

  static std::uint64_t to_uint(const std::string& v, const std::string& key) {
    std::uint64_t u = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), u);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
      throw ConfigError(key + ": expected a non-negative integer, got " + v);
    }
    return u;
  }

  std::vector<Entry> entries_;
};

inline KeyValueConfig load_config_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return KeyValueConfig::parse(text, path.string());
}

// ---------------------------------------------------------------------------
// Typed views
// ---------------------------------------------------------------------------

/// Reads a [synthetic] section. `types` entries are "name:channels".
inline std::pair<SyntheticSpec, std::size_t> synthetic_spec_from(const KeyValueConfig& cfg) {
  SyntheticSpec spec = SyntheticSpec::standard(cfg.get_uint("synthetic.seed", 0));
  spec.num_classes = cfg.get_uint("synthetic.num_classes", spec.num_classes);
  spec.clips = cfg.get_uint("synthetic.clips", spec.clips);
  spec.noise = cfg.get_double("synthetic.noise", spec.noise);
  spec.amplitude = cfg.get_double("synthetic.amplitude", spec.amplitude);
  if (cfg.has("synthetic.types")) {
    spec.types.clear();
    for (const auto& item : cfg.get_list("synthetic.types")) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos || colon == 0) {
        throw ConfigError("synthetic.types: entry '" + item + "' is not name:channels");
      }
      std::size_t channels = 0;
      const std::string count = item.substr(colon + 1);
      const auto r = std::from_chars(count.data(), count.data() + count.size(), channels);
      if (r.ec != std::errc() || r.ptr != count.data() + count.size()) {
        throw ConfigError("synthetic.types: entry '" + item + "' has a non-integer channel count");
      }
      if (channels == 0) {
        throw ConfigError("synthetic.types: concept type '" + item.substr(0, colon) +
                          "' has L_i = 0 channels");
      }
      spec.types.push_back({item.substr(0, colon), channels});
    }
  }
  if (cfg.has("synthetic.patterns")) {
    const auto patterns = cfg.get_list("synthetic.patterns");
    auto types = cfg.get_uint_list("synthetic.plant_types");
    auto channels = cfg.get_uint_list("synthetic.plant_channels");
    if (types.empty()) types.assign(patterns.size(), 0);
    if (channels.empty()) channels.assign(patterns.size(), 0);
    if (types.size() != patterns.size() || channels.size() != patterns.size()) {
      throw ConfigError("synthetic.plant_types / plant_channels must match synthetic.patterns in length");
    }
    spec.plants.clear();
    for (std::size_t c = 0; c < patterns.size(); ++c) {
      spec.plants.push_back({types[c], channels[c], pattern_from_string(patterns[c])});
    }
  } else if (spec.num_classes <= spec.plants.size()) {
    spec.plants.resize(spec.num_classes);
  }
  const std::size_t count = cfg.get_uint("synthetic.count", 600);
  spec.validate();
  return {spec, count};
}

inline TrainConfig train_config_from(const KeyValueConfig& cfg) {
  TrainConfig t;
  t.lr0 = cfg.get_double("train.lr0", t.lr0);
  t.momentum = cfg.get_double("train.momentum", t.momentum);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  t.lr_drop_factor = cfg.get_double("train.lr_drop_factor", t.lr_drop_factor);
  t.lr_drop_every = cfg.get_uint("train.lr_drop_every", t.lr_drop_every);
  t.max_epochs = cfg.get_uint("train.max_epochs", t.max_epochs);
  t.batch_size = cfg.get_uint("train.batch_size", t.batch_size);
  t.seed = cfg.get_uint("run.seed", t.seed);
  t.loss_mode = loss_mode_from_string(cfg.get_string("train.loss_mode", to_string(t.loss_mode)));
  t.validate();
  return t;
}

/// Model settings from [model]; concept types, clips and class count come
/// from the dataset and must agree with any values the file pins.
inline ModelConfig model_config_from(const KeyValueConfig& cfg, const Dataset& data) {
  ModelConfig m;
  m.concept_types = data.types;
  m.clips = data.clips;
  m.num_classes = data.num_classes;
  m.variant = variant_from_string(cfg.get_string("model.variant", to_string(m.variant)));
  if (cfg.has("model.kernel_widths")) m.kernel_widths = cfg.get_uint_list("model.kernel_widths");
  if (cfg.has("model.classifier_hidden")) m.classifier_hidden = cfg.get_uint_list("model.classifier_hidden");
  m.hidden_n = cfg.get_uint("model.hidden_n", 0);
  m.hidden_l = cfg.get_uint("model.hidden_l", 0);
  m.co_multi_type = cfg.get_bool("model.co_multi_type", false);

  auto mismatch = [](const std::string& what, const std::string& cfg_v, const std::string& data_v) {
    throw DimensionError("model/data shape mismatch on " + what + ": config has " + cfg_v +
                         ", dataset has " + data_v);
  };
  if (cfg.has("model.clips") && cfg.get_uint("model.clips", 0) != data.clips) {
    mismatch("clips", std::to_string(cfg.get_uint("model.clips", 0)), std::to_string(data.clips));
  }
  if (cfg.has("model.num_classes") && cfg.get_uint("model.num_classes", 0) != data.num_classes) {
    mismatch("num_classes", std::to_string(cfg.get_uint("model.num_classes", 0)),
             std::to_string(data.num_classes));
  }
  if (cfg.has("model.channels")) {
    const auto pinned = cfg.get_uint_list("model.channels");
    std::vector<std::size_t> actual;
    for (const auto& t : data.types) actual.push_back(t.channels);
    if (pinned != actual) {
      auto fmt = [](const std::vector<std::size_t>& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
        return s + "]";
      };
      mismatch("channels per concept type", fmt(pinned), fmt(actual));
    }
  }
  m.validate();
  return m;
}

}  // namespace tdcmn
