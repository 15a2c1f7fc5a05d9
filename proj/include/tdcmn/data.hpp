#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdcmn/error.hpp"
#include "tdcmn/params.hpp"
#include "tdcmn/tensor.hpp"

namespace tdcmn {

namespace fs = std::filesystem;

struct ConceptType {
  std::string name;
  std::size_t channels = 0;  // L_i

  friend bool operator==(const ConceptType&, const ConceptType&) = default;
};

/// One detector's scores for one video: [channels, clips].
struct ConceptSequence {
  std::string type;
  Tensor scores;

  std::size_t channels() const { return scores.dim(0); }
  std::size_t clips() const { return scores.dim(1); }
};

struct VideoSample {
  std::string id;
  std::vector<ConceptSequence> sequences;  // one per concept type, in type order
  std::vector<std::size_t> labels;         // exactly one in single-label mode

  std::size_t label() const { return labels.at(0); }

  std::size_t clips() const {
    return sequences.empty() ? 0 : sequences.front().clips();
  }

  bool has_label(std::size_t c) const {
    return std::find(labels.begin(), labels.end(), c) != labels.end();
  }
};

struct Dataset {
  std::vector<ConceptType> types;
  std::size_t clips = 0;
  std::size_t num_classes = 0;
  bool multi_label = false;
  std::vector<VideoSample> samples;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }

  std::size_t total_channels() const {
    std::size_t n = 0;
    for (const auto& t : types) n += t.channels;
    return n;
  }

  /// Checks every sample against the dataset-level types, clip count and
  /// class count.
  void validate() const {
    std::set<std::string> names;
    for (const auto& t : types) {
      if (!names.insert(t.name).second) {
        throw DataError("duplicate concept type '" + t.name + "'");
      }
    }
    for (const auto& s : samples) {
      if (s.sequences.size() != types.size()) {
        throw DataError("sample '" + s.id + "' has " +
                        std::to_string(s.sequences.size()) +
                        " concept sequences, expected " +
                        std::to_string(types.size()));
      }
      for (std::size_t i = 0; i < types.size(); ++i) {
        const auto& seq = s.sequences[i];
        if (seq.type != types[i].name) {
          throw DataError("sample '" + s.id + "' sequence " + std::to_string(i) +
                          " has type '" + seq.type + "', expected '" +
                          types[i].name + "'");
        }
        if (seq.scores.rank() != 2 || seq.channels() != types[i].channels) {
          throw DataError("sample '" + s.id + "' type '" + seq.type +
                          "' has shape " + shape_str(seq.scores.shape) +
                          ", expected " + std::to_string(types[i].channels) +
                          " channels");
        }
        if (seq.clips() != clips) {
          throw DataError("sample '" + s.id + "' type '" + seq.type + "' has " +
                          std::to_string(seq.clips()) + " clips, expected " +
                          std::to_string(clips));
        }
        if (!seq.scores.all_finite()) {
          throw DataError("sample '" + s.id + "' has non-finite scores");
        }
      }
      if (s.labels.empty() || (!multi_label && s.labels.size() != 1)) {
        throw DataError("sample '" + s.id + "' has " + std::to_string(s.labels.size()) +
                        " labels in " + (multi_label ? "multi" : "single") +
                        "-label mode");
      }
      for (std::size_t l : s.labels) {
        if (l >= num_classes) {
          throw DataError("sample '" + s.id + "' label " + std::to_string(l) +
                          " out of range for " + std::to_string(num_classes) +
                          " classes");
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Binary score matrices
//
//   offset 0   8 bytes  magic "TDCSCORE"
//   offset 8   uint32   channels (little-endian)
//   offset 12  uint32   clips (little-endian)
//   offset 16  float64  channels*clips values, row-major, little-endian
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kScoreMagic{'T', 'D', 'C', 'S', 'C', 'O', 'R', 'E'};

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace detail

inline std::string encode_scores(const Tensor& scores) {
  if (scores.rank() != 2) {
    throw DimensionError("score matrix must be rank 2, got " + shape_str(scores.shape));
  }
  std::string out(kScoreMagic.begin(), kScoreMagic.end());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(scores.dim(0)));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(scores.dim(1)));
  out.reserve(16 + 8 * scores.numel());
  for (double v : scores.data) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

/// `origin` names the source in error messages.
inline Tensor decode_scores(const std::string& bytes, const std::string& origin) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16) {
    throw ParseError(origin + ": offset " + std::to_string(bytes.size()) +
                     ": truncated header (need 16 bytes)");
  }
  if (!std::equal(kScoreMagic.begin(), kScoreMagic.end(), bytes.begin())) {
    throw ParseError(origin + ": offset 0: bad magic");
  }
  const auto rows = detail::get_le<std::uint32_t>(p + 8);
  const auto cols = detail::get_le<std::uint32_t>(p + 12);
  if (rows == 0 || cols == 0) {
    throw ParseError(origin + ": offset 8: zero dimension " + std::to_string(rows) +
                     "x" + std::to_string(cols));
  }
  const std::size_t n = std::size_t{rows} * cols;
  if (bytes.size() != 16 + 8 * n) {
    throw ParseError(origin + ": offset " + std::to_string(std::min(bytes.size(), 16 + 8 * n)) +
                     ": expected " + std::to_string(16 + 8 * n) + " bytes, file has " +
                     std::to_string(bytes.size()));
  }
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < n; ++i) {
    t.data[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(p + 16 + 8 * i));
    if (!std::isfinite(t.data[i])) {
      throw ParseError(origin + ": offset " + std::to_string(16 + 8 * i) +
                       ": non-finite score");
    }
  }
  return t;
}

/// JSON slow path: a nested array [[...], ...] of equal-length rows.
inline Tensor decode_scores_json(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(origin + ": offset " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty()) {
    throw ParseError(origin + ": offset 0: expected a non-empty array of rows");
  }
  const std::size_t rows = j.size(), cols = j[0].size();
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      throw ParseError(origin + ": row " + std::to_string(r) + " has wrong length");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) {
        throw ParseError(origin + ": row " + std::to_string(r) + " column " +
                         std::to_string(c) + " is not a number");
      }
      t.at(r, c) = j[r][c].get<double>();
    }
  }
  return t;
}

inline Tensor read_scores(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  if (path.extension() == ".json") return decode_scores_json(bytes, path.string());
  return decode_scores(bytes, path.string());
}

// ---------------------------------------------------------------------------
// Manifest (JSON lines)
// ---------------------------------------------------------------------------

inline constexpr const char* kManifestName = "manifest.jsonl";

inline fs::path manifest_path(const fs::path& path) {
  return fs::is_directory(path) ? path / kManifestName : path;
}

/// Writes `dataset` as manifest.jsonl plus one binary matrix per sequence
/// under <dir>/<type>/<id>.bin.
inline void save_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (const auto& t : dataset.types) {
    fs::create_directories(dir / t.name, ec);
    if (ec) throw IoError("cannot create '" + (dir / t.name).string() + "': " + ec.message());
  }
  std::string manifest;
  nlohmann::json header = {{"format", "tdcmn-manifest"},
                           {"version", 1},
                           {"num_classes", dataset.num_classes},
                           {"multi_label", dataset.multi_label}};
  manifest += header.dump() + "\n";
  for (const auto& s : dataset.samples) {
    nlohmann::json line;
    line["id"] = s.id;
    if (dataset.multi_label) {
      line["labels"] = s.labels;
    } else {
      line["label"] = s.label();
    }
    nlohmann::json seqs = nlohmann::json::array();
    for (const auto& seq : s.sequences) {
      const std::string rel = seq.type + "/" + s.id + ".bin";
      detail::write_file(dir / rel, encode_scores(seq.scores));
      seqs.push_back({{"type", seq.type}, {"path", rel}});
    }
    line["sequences"] = std::move(seqs);
    manifest += line.dump() + "\n";
  }
  detail::write_file(dir / kManifestName, manifest);
}

/// Reads a manifest (directory or file path) and every score file it names.
/// Paths inside the manifest are relative to the manifest's directory.
inline Dataset load_dataset(const fs::path& path) {
  const fs::path mpath = manifest_path(path);
  const fs::path base = mpath.parent_path();
  const std::string text = detail::read_file(mpath);

  Dataset ds;
  std::size_t declared_classes = 0;
  bool have_header = false;
  std::size_t max_label = 0;
  bool any_label = false;

  std::istringstream lines(text);
  std::string line;
  std::size_t offset = 0, line_no = 0;
  while (std::getline(lines, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = mpath.string() + ": line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(mpath.string() + ": offset " +
                       std::to_string(line_offset + (e.byte ? e.byte - 1 : 0)) +
                       ": " + e.what());
    }
    try {
      if (j.contains("format")) {
        if (j.at("format") != "tdcmn-manifest") {
          throw ParseError(where + ": unknown manifest format");
        }
        declared_classes = j.value("num_classes", std::size_t{0});
        ds.multi_label = j.value("multi_label", false);
        have_header = true;
        continue;
      }
      VideoSample s;
      s.id = j.at("id").get<std::string>();
      if (j.contains("labels")) {
        s.labels = j.at("labels").get<std::vector<std::size_t>>();
        ds.multi_label = true;
      } else {
        s.labels = {j.at("label").get<std::size_t>()};
      }
      for (std::size_t l : s.labels) {
        max_label = std::max(max_label, l);
        any_label = true;
      }
      std::vector<ConceptType> types;
      for (const auto& seq : j.at("sequences")) {
        ConceptSequence cs;
        cs.type = seq.at("type").get<std::string>();
        const fs::path file = base / seq.at("path").get<std::string>();
        if (!fs::exists(file)) {
          throw IoError(where + ": sample '" + s.id + "' references missing file '" +
                        file.string() + "'");
        }
        cs.scores = read_scores(file);
        types.push_back({cs.type, cs.channels()});
        s.sequences.push_back(std::move(cs));
      }
      if (s.sequences.empty()) throw DataError(where + ": sample has no sequences");
      if (ds.samples.empty()) {
        ds.types = types;
        ds.clips = s.clips();
      } else if (types != ds.types) {
        throw DataError(where + ": sample '" + s.id +
                        "' has a concept-type layout different from the first sample");
      }
      ds.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + " (offset " + std::to_string(line_offset) + "): " + e.what());
    }
  }
  (void)have_header;
  ds.num_classes = std::max(declared_classes, any_label ? max_label + 1 : 0);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data with planted temporal patterns
// ---------------------------------------------------------------------------

/// Temporal shapes of planted concept activations: a single hot clip, a
/// long run covering half the video, and a short run whose position moves.
enum class PatternKind { burst, sustained, position_variant };

inline std::string to_string(PatternKind k) {
  switch (k) {
    case PatternKind::burst: return "burst";
    case PatternKind::sustained: return "sustained";
    case PatternKind::position_variant: return "position-variant";
  }
  return "?";
}

inline PatternKind pattern_from_string(const std::string& s) {
  if (s == "burst") return PatternKind::burst;
  if (s == "sustained") return PatternKind::sustained;
  if (s == "position-variant") return PatternKind::position_variant;
  throw ConfigError("unknown pattern kind '" + s + "'");
}

/// Number of consecutive hot clips for `kind` in a video of `clips` clips.
inline std::size_t pattern_duration(PatternKind kind, std::size_t clips) {
  switch (kind) {
    case PatternKind::burst: return 1;
    case PatternKind::position_variant: return std::max<std::size_t>(2, clips / 5);
    case PatternKind::sustained: return std::max<std::size_t>(3, clips / 2);
  }
  return 1;
}

struct PlantedPattern {
  std::size_t type = 0;     // index into SyntheticSpec::types
  std::size_t channel = 0;
  PatternKind kind = PatternKind::burst;
};

struct SyntheticSpec {
  std::size_t num_classes = 3;
  std::size_t clips = 16;
  std::vector<ConceptType> types{{"scene", 8}, {"object", 12}};
  std::vector<PlantedPattern> plants;  // one per class
  double noise = 0.1;
  double amplitude = 1.0;
  std::uint64_t seed = 0;

  /// All classes share one planted channel and differ only by pattern, so
  /// the temporal shape is the only class evidence.
  static SyntheticSpec standard(std::uint64_t seed = 0) {
    SyntheticSpec s;
    s.seed = seed;
    s.plants = {{0, 0, PatternKind::burst},
                {0, 0, PatternKind::sustained},
                {0, 0, PatternKind::position_variant}};
    return s;
  }

  void validate() const {
    if (num_classes < 1) throw ConfigError("num_classes must be at least 1");
    if (clips == 0) throw ConfigError("clips must be positive");
    if (types.empty()) throw ConfigError("types must not be empty");
    std::set<std::string> names;
    for (const auto& t : types) {
      if (t.channels == 0) {
        throw ConfigError("types: concept type '" + t.name + "' has 0 channels");
      }
      if (t.name.empty() || !names.insert(t.name).second) {
        throw ConfigError("types: concept type names must be unique and non-empty");
      }
    }
    if (!(noise >= 0.0) || !std::isfinite(noise)) {
      throw ConfigError("noise must be a finite value >= 0");
    }
    if (plants.size() != num_classes) {
      throw ConfigError("plants: need one planted pattern per class (" +
                        std::to_string(num_classes) + "), got " +
                        std::to_string(plants.size()));
    }
    std::map<std::pair<std::size_t, std::size_t>, std::set<std::size_t>> durations;
    for (std::size_t c = 0; c < plants.size(); ++c) {
      const auto& p = plants[c];
      if (p.type >= types.size()) {
        throw ConfigError("plants: class " + std::to_string(c) + " uses type index " +
                          std::to_string(p.type) + " but only " +
                          std::to_string(types.size()) + " types exist");
      }
      if (p.channel >= types[p.type].channels) {
        throw ConfigError("plants: class " + std::to_string(c) + " plants channel " +
                          std::to_string(p.channel) + " but type '" + types[p.type].name +
                          "' has only " + std::to_string(types[p.type].channels) +
                          " channels");
      }
      const std::size_t d = pattern_duration(p.kind, clips);
      if (d > clips) {
        throw ConfigError("plants: pattern '" + to_string(p.kind) + "' needs " +
                          std::to_string(d) + " clips, only " + std::to_string(clips) +
                          " available");
      }
      if (!durations[{p.type, p.channel}].insert(d).second) {
        throw ConfigError("plants: classes sharing type " + std::to_string(p.type) +
                          " channel " + std::to_string(p.channel) +
                          " must use patterns of distinct duration");
      }
    }
  }
};

/// Predicts the class whose planted channel sum is closest to its pattern's
/// nominal mass. Exact at zero noise.
inline std::size_t planted_oracle_predict(const SyntheticSpec& spec,
                                          const VideoSample& sample) {
  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < spec.plants.size(); ++c) {
    const auto& p = spec.plants[c];
    const Tensor& x = sample.sequences.at(p.type).scores;
    double s = 0.0;
    for (std::size_t t = 0; t < x.dim(1); ++t) s += x.at(p.channel, t);
    const double err = std::abs(
        s - spec.amplitude * static_cast<double>(pattern_duration(p.kind, spec.clips)));
    if (err < best_err) {
      best_err = err;
      best = c;
    }
  }
  return best;
}

inline double planted_oracle_accuracy(const SyntheticSpec& spec,
                                      const std::vector<VideoSample>& samples) {
  if (samples.empty()) return 1.0;
  std::size_t hits = 0;
  for (const auto& s : samples) hits += planted_oracle_predict(spec, s) == s.label();
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

/// Deterministic given spec.seed. Labels cycle through the classes so every
/// class gets floor or ceil of count / num_classes samples.
inline Dataset generate_synthetic(const SyntheticSpec& spec, std::size_t count) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  Dataset ds;
  ds.types = spec.types;
  ds.clips = spec.clips;
  ds.num_classes = spec.num_classes;
  ds.samples.reserve(count);
  const int width = std::max<int>(4, static_cast<int>(std::to_string(count).size()));
  for (std::size_t i = 0; i < count; ++i) {
    VideoSample s;
    std::ostringstream id;
    id << 'v' << std::setw(width) << std::setfill('0') << i;
    s.id = id.str();
    const std::size_t label = i % spec.num_classes;
    s.labels = {label};
    for (const auto& t : spec.types) {
      ConceptSequence seq{t.name, Tensor({t.channels, spec.clips})};
      if (spec.noise > 0.0) {
        for (double& v : seq.scores.data) v = spec.noise * noise(rng);
      }
      s.sequences.push_back(std::move(seq));
    }
    const auto& plant = spec.plants[label];
    const std::size_t d = pattern_duration(plant.kind, spec.clips);
    std::uniform_int_distribution<std::size_t> start_dist(0, spec.clips - d);
    const std::size_t start = start_dist(rng);
    Tensor& x = s.sequences[plant.type].scores;
    for (std::size_t t = start; t < start + d; ++t) x.at(plant.channel, t) += spec.amplitude;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

struct SplitResult {
  Dataset train;
  Dataset test;
};

/// Class-stratified split; `train_fraction` of each class (rounded) goes to
/// train. Stratifies on each sample's first label. Both halves keep the
/// input order.
inline SplitResult split(const Dataset& dataset, double train_fraction,
                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split fraction must lie strictly between 0 and 1");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    by_class[dataset.samples[i].labels.at(0)].push_back(i);
  }
  Rng rng(seed);
  struct Quota {
    std::vector<std::size_t>* idx;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < 2) {
      throw DataError("cannot stratify: class " + std::to_string(cls) + " has " +
                      std::to_string(idx.size()) + " sample(s), need at least 2");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const double exact = train_fraction * static_cast<double>(idx.size());
    const auto base = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({&idx, std::clamp<std::size_t>(base, 1, idx.size() - 1), exact - std::floor(exact)});
  }
  // Largest remainder: the train total is round(fraction * n) whenever the
  // one-sample-per-side floor allows it. Ties go to a seeded class order.
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return quotas[a].remainder > quotas[b].remainder;
  });
  const auto target = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(dataset.samples.size())));
  std::size_t total = 0;
  for (const auto& q : quotas) total += q.take;
  for (std::size_t i : order) {
    if (total >= target) break;
    if (quotas[i].take + 1 < quotas[i].idx->size()) {
      ++quotas[i].take;
      ++total;
    }
  }
  for (auto it = order.rbegin(); it != order.rend() && total > target; ++it) {
    if (quotas[*it].take > 1) {
      --quotas[*it].take;
      --total;
    }
  }
  std::vector<bool> to_train(dataset.samples.size(), false);
  for (const auto& q : quotas) {
    for (std::size_t n = 0; n < q.take; ++n) to_train[(*q.idx)[n]] = true;
  }
  SplitResult out;
  for (Dataset* d : {&out.train, &out.test}) {
    d->types = dataset.types;
    d->clips = dataset.clips;
    d->num_classes = dataset.num_classes;
    d->multi_label = dataset.multi_label;
  }
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    (to_train[i] ? out.train : out.test).samples.push_back(dataset.samples[i]);
  }
  return out;
}

}  // namespace tdcmn
