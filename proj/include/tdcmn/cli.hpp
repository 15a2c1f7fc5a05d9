#pragma once

#include <charconv>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tdcmn/checkpoint.hpp"
#include "tdcmn/config.hpp"
#include "tdcmn/data.hpp"
#include "tdcmn/error.hpp"
#include "tdcmn/models.hpp"
#include "tdcmn/train.hpp"

namespace tdcmn::cli {

namespace fs = std::filesystem;

/// Process exit codes; stable for scripting.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,  // I/O, data and numeric failures
  kConfig = 2,
  kShape = 3,
  kCheckpoint = 4,
  kVariant = 5,
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return kConfig;
    case ErrorKind::dimension: return kShape;
    case ErrorKind::checkpoint: return kCheckpoint;
    case ErrorKind::variant: return kVariant;
    default: return kFailure;
  }
}

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  std::optional<fs::path> config;
  std::vector<std::string> overrides;
};

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace detail {

inline KeyValueConfig resolve_config(const GlobalOptions& g, const char* command) {
  if (!g.config) throw ConfigError(std::string(command) + ": --config is required");
  KeyValueConfig cfg = load_config_file(*g.config);
  for (const auto& o : g.overrides) cfg.apply_override(o);
  return cfg;
}

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir.string() + "'" +
                  (ec ? ": " + ec.message() : ""));
  }
}

inline Dataset load_existing(const std::string& key, const std::string& path) {
  if (path.empty()) throw ConfigError(key + ": no dataset path given");
  if (!fs::exists(path)) throw ConfigError(key + ": path '" + path + "' does not exist");
  return load_dataset(path);
}

/// Training/test sets as described by a [data] section.
struct DataPlan {
  std::string dataset;
  std::string test_dataset;
  double train_fraction = 0.5;
  std::uint64_t split_seed = 0;

  static DataPlan from(const KeyValueConfig& cfg) {
    DataPlan p;
    auto absolute = [](const std::string& s) {
      return s.empty() ? s : fs::absolute(s).lexically_normal().string();
    };
    p.dataset = absolute(cfg.get_string("data.dataset"));
    p.test_dataset = absolute(cfg.get_string("data.test_dataset"));
    p.train_fraction = cfg.get_double("data.train_fraction", p.train_fraction);
    p.split_seed = cfg.get_uint("data.split_seed", cfg.get_uint("run.seed", 0));
    return p;
  }

  static DataPlan from(const nlohmann::json& j) {
    DataPlan p;
    p.dataset = j.value("dataset", std::string{});
    p.test_dataset = j.value("test_dataset", std::string{});
    p.train_fraction = j.value("train_fraction", 0.5);
    p.split_seed = j.value("split_seed", std::uint64_t{0});
    return p;
  }

  nlohmann::json to_json() const {
    return {{"dataset", dataset}, {"test_dataset", test_dataset},
            {"train_fraction", train_fraction}, {"split_seed", split_seed}};
  }

  SplitResult load() const {
    Dataset all = load_existing("data.dataset", dataset);
    if (!test_dataset.empty()) {
      Dataset test = load_existing("data.test_dataset", test_dataset);
      if (test.types != all.types || test.clips != all.clips) {
        throw DimensionError("test dataset layout (" + std::to_string(test.types.size()) +
                             " types, " + std::to_string(test.clips) +
                             " clips) differs from training dataset (" +
                             std::to_string(all.types.size()) + " types, " +
                             std::to_string(all.clips) + " clips)");
      }
      const std::size_t classes = std::max(all.num_classes, test.num_classes);
      all.num_classes = test.num_classes = classes;
      return {std::move(all), std::move(test)};
    }
    return split(all, train_fraction, split_seed);
  }
};

/// The training set's test partition recorded in a checkpoint, or the
/// whole dataset at `path`.
inline Dataset evaluation_set(const LoadedCheckpoint& ck, const std::optional<fs::path>& path) {
  if (path) return load_existing("--dataset", path->string());
  if (!ck.extra.contains("data")) {
    throw ConfigError("checkpoint records no dataset; pass --dataset");
  }
  return DataPlan::from(ck.extra.at("data")).load().test;
}

inline void require_compatible(const Model& model, const Dataset& data) {
  const ModelConfig& mc = model.config();
  if (mc.num_classes != data.num_classes) {
    throw DimensionError("checkpoint predicts " + std::to_string(mc.num_classes) +
                         " classes but dataset has " + std::to_string(data.num_classes));
  }
  if (mc.clips != data.clips) {
    throw DimensionError("checkpoint expects " + std::to_string(mc.clips) +
                         " clips but dataset has " + std::to_string(data.clips));
  }
  if (mc.concept_types != data.types) {
    auto fmt = [](const std::vector<ConceptType>& ts) {
      std::string s;
      for (const auto& t : ts) s += (s.empty() ? "" : ", ") + t.name + ":" + std::to_string(t.channels);
      return "[" + s + "]";
    };
    throw DimensionError("checkpoint concept types " + fmt(mc.concept_types) +
                         " differ from dataset " + fmt(data.types));
  }
}

/// FNV-1a over the serialized model config, as 16 hex digits.
inline std::string config_hash(const ModelConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline LossMode checkpoint_loss_mode(const LoadedCheckpoint& ck) {
  return loss_mode_from_string(ck.extra.value("loss_mode", std::string("single-label")));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateResult {
  Dataset dataset;
  double oracle_accuracy = 0.0;
};

inline GenerateResult cmd_generate(const GlobalOptions& g, std::ostream& out) {
  KeyValueConfig cfg = detail::resolve_config(g, "generate");
  if (g.seed) cfg.set("synthetic.seed", std::to_string(*g.seed));
  const auto [spec, count] = synthetic_spec_from(cfg);
  const fs::path dir = g.out ? *g.out : fs::path(cfg.get_string("synthetic.out"));
  if (dir.empty()) throw ConfigError("generate: no output directory (--out or synthetic.out)");

  GenerateResult r;
  r.dataset = generate_synthetic(spec, count);
  r.oracle_accuracy = planted_oracle_accuracy(spec, r.dataset.samples);
  detail::ensure_directory(dir);
  save_dataset(r.dataset, dir);

  std::vector<std::size_t> per_class(spec.num_classes, 0);
  for (const auto& s : r.dataset.samples) ++per_class[s.label()];
  out << "wrote " << r.dataset.size() << " samples to " << dir.string() << "\n"
      << "  classes: " << spec.num_classes << " (counts";
  for (std::size_t c : per_class) out << " " << c;
  out << ")\n  clips N: " << spec.clips << "\n  concept types:";
  for (const auto& t : spec.types) out << " " << t.name << "(L=" << t.channels << ")";
  out << "\n  planted patterns:";
  for (const auto& p : spec.plants) {
    out << " " << to_string(p.kind) << "@" << spec.types[p.type].name << "[" << p.channel << "]";
  }
  out << "\n  noise: " << format_double(spec.noise) << ", seed: " << spec.seed
      << "\n  oracle accuracy: " << format_double(r.oracle_accuracy) << "\n";
  return r;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainResult {
  fs::path out_dir;
  std::vector<EpochLog> log;
  double best_map = 0.0;
  std::size_t best_epoch = 0;
};

inline TrainResult cmd_train(const GlobalOptions& g, std::ostream& out) {
  KeyValueConfig cfg = detail::resolve_config(g, "train");
  if (g.seed) cfg.set("run.seed", std::to_string(*g.seed));
  if (g.out) cfg.set("run.out", "\"" + g.out->string() + "\"");
  const std::string out_dir = cfg.get_string("run.out");
  if (out_dir.empty()) throw ConfigError("train: no output directory (--out or run.out)");

  const TrainConfig tc = train_config_from(cfg);
  const detail::DataPlan plan = detail::DataPlan::from(cfg);
  const SplitResult data = plan.load();
  const ModelConfig mc = model_config_from(cfg, data.train);
  if (data.test.empty()) throw DataError("train: test set is empty");

  // Archive every value actually used, defaults included.
  auto put = [&](const std::string& k, const std::string& v) { cfg.set(k, v); };
  auto quoted = [](const std::string& s) { return "\"" + s + "\""; };
  auto list = [](const std::vector<std::size_t>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s + "]";
  };
  put("data.train_fraction", format_double(plan.train_fraction));
  put("data.split_seed", std::to_string(plan.split_seed));
  put("model.variant", quoted(to_string(mc.variant)));
  put("model.kernel_widths", list(mc.kernel_widths));
  put("model.classifier_hidden", list(mc.hidden_layers()));
  put("model.hidden_n", std::to_string(mc.hidden_n));
  put("model.hidden_l", std::to_string(mc.hidden_l));
  put("train.lr0", format_double(tc.lr0));
  put("train.momentum", format_double(tc.momentum));
  put("train.weight_decay", format_double(tc.weight_decay));
  put("train.lr_drop_factor", format_double(tc.lr_drop_factor));
  put("train.lr_drop_every", std::to_string(tc.lr_drop_every));
  put("train.max_epochs", std::to_string(tc.max_epochs));
  put("train.batch_size", std::to_string(tc.batch_size));
  put("train.loss_mode", quoted(to_string(tc.loss_mode)));
  put("run.seed", std::to_string(tc.seed));

  const fs::path dir(out_dir);
  detail::ensure_directory(dir);
  tdcmn::detail::write_file(dir / "config.resolved.toml", cfg.to_string());

  Model model = Model::create(mc, tc.seed);
  out << "training " << to_string(mc.variant) << " on " << data.train.size() << " samples ("
      << data.test.size() << " test), " << model.parameters().total_elements()
      << " parameters, " << tc.max_epochs << " epochs\n";

  TrainResult r;
  r.out_dir = dir;
  std::string log_text;
  auto extra = [&](const EpochLog& e) {
    return nlohmann::json{{"epoch", e.epoch},
                          {"seed", tc.seed},
                          {"loss_mode", to_string(tc.loss_mode)},
                          {"test_mAP", e.test_map ? nlohmann::json(*e.test_map) : nlohmann::json(nullptr)},
                          {"data", plan.to_json()}};
  };
  bool have_best = false;
  r.log = train(model, data.train, tc, &data.test, [&](const EpochLog& e, const Model& m) {
    log_text += e.to_json().dump() + "\n";
    tdcmn::detail::write_file(dir / "log.jsonl", log_text);
    out << "epoch " << e.epoch << "  lr " << format_double(e.lr) << "  loss "
        << format_double(e.train_loss) << "  test mAP " << format_double(*e.test_map) << "\n";
    if (!have_best || *e.test_map > r.best_map) {
      have_best = true;
      r.best_map = *e.test_map;
      r.best_epoch = e.epoch;
      save_checkpoint(m, dir / "best.ckpt.json", extra(e));
    }
  });
  if (r.log.empty()) {
    tdcmn::detail::write_file(dir / "log.jsonl", "");
    save_checkpoint(model, dir / "best.ckpt.json", nlohmann::json{{"epoch", 0}, {"seed", tc.seed},
                    {"loss_mode", to_string(tc.loss_mode)}, {"data", plan.to_json()}});
  }
  EpochLog last;
  if (!r.log.empty()) last = r.log.back();
  save_checkpoint(model, dir / "final.ckpt.json", extra(last));
  out << "best test mAP " << format_double(r.best_map) << " at epoch " << r.best_epoch
      << "; artifacts in " << dir.string() << "\n";
  return r;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline EvalReport cmd_eval(const fs::path& checkpoint, const std::optional<fs::path>& dataset,
                           const GlobalOptions& g, std::ostream& out) {
  const LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const Dataset data = detail::evaluation_set(ck, dataset);
  detail::require_compatible(ck.model, data);
  EvalReport report = evaluate(ck.model, data, detail::checkpoint_loss_mode(ck));
  report.metadata = {{"checkpoint", checkpoint.filename().string()},
                     {"variant", to_string(ck.model.config().variant)},
                     {"config_hash", detail::config_hash(ck.model.config())},
                     {"samples", data.size()},
                     {"epoch", ck.extra.value("epoch", 0)},
                     {"seed", ck.extra.value("seed", std::uint64_t{0})}};

  out << "mAP " << std::fixed << std::setprecision(4) << report.mean_ap << "  (top-1 accuracy "
      << report.accuracy << ", " << data.size() << " samples)\n";
  out << "class        AP\n";
  for (std::size_t c = 0; c < report.class_ap.size(); ++c) {
    out << std::setw(5) << c << "  ";
    if (report.class_ap[c]) out << std::setw(8) << *report.class_ap[c] << "\n";
    else out << "     n/a\n";
  }
  out.unsetf(std::ios::floatfield);
  for (const auto& w : report.warnings) out << "warning: " << w << "\n";

  const fs::path dir = g.out ? *g.out : checkpoint.parent_path();
  detail::ensure_directory(dir.empty() ? fs::path(".") : dir);
  const fs::path report_path =
      (dir.empty() ? fs::path(".") : dir) / ("eval_" + checkpoint.stem().stem().string() + ".json");
  tdcmn::detail::write_file(report_path, report.to_json().dump(2) + "\n");
  out << "report written to " << report_path.string() << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

inline std::vector<std::string> modules_of(Variant v) {
  std::vector<std::string> m;
  if (uses_intra(v)) m.push_back("intra");
  if (uses_cross_si(v)) m.push_back("cross-si");
  if (uses_cross_co(v)) m.push_back("cross-co");
  return m;
}

/// Writes coefficients_<module>.csv, differences_<module>.csv and
/// time_coefficients_<module>.csv for every TDC module (or just `module`).
inline std::vector<CoefficientDump> cmd_inspect(const fs::path& checkpoint,
                                                const std::optional<fs::path>& dataset,
                                                const std::optional<std::string>& module,
                                                const GlobalOptions& g, std::ostream& out) {
  const LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const Variant v = ck.model.config().variant;
  if (!has_tdc(v)) {
    throw VariantError("checkpoint variant '" + to_string(v) +
                       "' pools with max over clips and has no temporal dynamic convolution "
                       "coefficients to inspect");
  }
  std::vector<std::string> modules = modules_of(v);
  if (module) {
    if (std::find(modules.begin(), modules.end(), *module) == modules.end()) {
      throw VariantError("variant '" + to_string(v) + "' has no '" + *module + "' module");
    }
    modules = {*module};
  }
  if (!g.out) throw ConfigError("inspect: --out is required");
  const Dataset data = detail::evaluation_set(ck, dataset);
  detail::require_compatible(ck.model, data);
  detail::ensure_directory(*g.out);

  std::vector<CoefficientDump> dumps;
  for (const auto& m : modules) {
    CoefficientDump d = dump_coefficients(ck.model, data, true, m);
    tdcmn::detail::write_file(*g.out / ("coefficients_" + m + ".csv"), d.coefficients_csv());
    tdcmn::detail::write_file(*g.out / ("differences_" + m + ".csv"), d.differences_csv());
    tdcmn::detail::write_file(*g.out / ("time_coefficients_" + m + ".csv"), d.time_csv());
    out << "module " << m << ": " << d.groups.size() << " (class, type) groups over "
        << data.size() << " samples\n";
    dumps.push_back(std::move(d));
  }
  out << "CSV files written to " << g.out->string() << "\n";
  return dumps;
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

/// Parses `args` (without the program name) and runs one subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Temporal dynamic concept modeling: generate, train, eval, inspect", "tdcmn"};
  app.require_subcommand(1);

  GlobalOptions g;
  std::uint64_t seed = 0;
  std::string out_dir, config;
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Seed overriding the configuration");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--config", config, "Configuration file");
    sub->add_option("--override", g.overrides, "section.key=value, repeatable")->take_all();
  };

  auto* gen = app.add_subcommand("generate", "Write a synthetic planted-pattern dataset");
  std::string spec_file;
  gen->add_option("spec", spec_file, "Synthetic spec file (same as --config)");
  add_globals(gen);

  auto* tr = app.add_subcommand("train", "Train a model from a run configuration");
  add_globals(tr);

  std::string checkpoint, dataset, module;
  auto* ev = app.add_subcommand("eval", "Report per-class AP and mAP of a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--dataset", dataset, "Dataset (default: the checkpoint's test split)");
  add_globals(ev);

  auto* in = app.add_subcommand("inspect", "Export mean coefficient CSVs per class");
  in->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  in->add_option("--dataset", dataset, "Dataset (default: the checkpoint's test split)");
  in->add_option("--module", module, "intra, cross-si or cross-co (default: all)");
  add_globals(in);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  for (CLI::App* sub : {gen, tr, ev, in}) {
    if (sub->count("--seed")) g.seed = seed;
  }
  if (!out_dir.empty()) g.out = out_dir;
  if (!config.empty()) g.config = config;
  if (!spec_file.empty()) g.config = spec_file;

  try {
    if (gen->parsed()) {
      cmd_generate(g, out);
    } else if (tr->parsed()) {
      cmd_train(g, out);
    } else if (ev->parsed()) {
      cmd_eval(checkpoint, dataset.empty() ? std::nullopt : std::optional<fs::path>(dataset), g, out);
    } else if (in->parsed()) {
      cmd_inspect(checkpoint, dataset.empty() ? std::nullopt : std::optional<fs::path>(dataset),
                  module.empty() ? std::nullopt : std::optional<std::string>(module), g, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace tdcmn::cli
