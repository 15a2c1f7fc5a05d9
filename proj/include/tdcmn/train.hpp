#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdcmn/autodiff.hpp"
#include "tdcmn/data.hpp"
#include "tdcmn/error.hpp"
#include "tdcmn/models.hpp"
#include "tdcmn/params.hpp"

namespace tdcmn {

enum class LossMode { single_label, multi_label };

inline std::string to_string(LossMode m) {
  return m == LossMode::single_label ? "single-label" : "multi-label";
}

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "single-label") return LossMode::single_label;
  if (s == "multi-label") return LossMode::multi_label;
  throw ConfigError("unknown loss_mode '" + s + "'");
}

struct TrainConfig {
  double lr0 = 0.5;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double lr_drop_factor = 0.1;
  std::size_t lr_drop_every = 32;
  std::size_t max_epochs = 40;
  std::size_t batch_size = 12;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::single_label;

  void validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) {
      throw ConfigError("lr_drop_factor must lie in (0,1]");
    }
    if (lr_drop_every == 0) throw ConfigError("lr_drop_every must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
  }

  /// Step schedule: lr0 * drop^floor(epoch / drop_every), epoch 0-based.
  double learning_rate(std::size_t epoch) const {
    return lr0 * std::pow(lr_drop_factor, static_cast<double>(epoch / lr_drop_every));
  }
};

/// Softmax cross-entropy (single-label) or mean per-class logistic loss
/// (multi-label) for one sample.
inline Var loss(Var logits, const std::vector<std::size_t>& labels, LossMode mode) {
  const std::size_t classes = logits.value().numel();
  for (std::size_t l : labels) {
    if (l >= classes) {
      throw DataError("label " + std::to_string(l) + " out of range for " +
                      std::to_string(classes) + " classes");
    }
  }
  if (mode == LossMode::single_label) {
    if (labels.size() != 1) {
      throw DataError("single-label loss needs exactly one label, got " +
                      std::to_string(labels.size()));
    }
    return softmax_cross_entropy(logits, labels[0]);
  }
  std::vector<double> targets(classes, 0.0);
  for (std::size_t l : labels) targets[l] = 1.0;
  return logistic_loss(logits, targets);
}

inline Var loss(Var logits, std::size_t label, LossMode mode) {
  return loss(logits, std::vector<std::size_t>{label}, mode);
}

/// Momentum SGD with L2 weight decay folded into the gradient:
///   v <- mu v - lr (g + wd p),  p <- p + v
class SgdMomentum {
 public:
  SgdMomentum(const ParameterStore& params, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& e : params) velocity_.emplace_back(e.value.shape, 0.0);
  }

  void step(ParameterStore& params, const std::vector<Tensor>& grads, double lr) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i].value;
      Tensor& v = velocity_[i];
      const Tensor& g = grads[i];
      for (std::size_t k = 0; k < p.numel(); ++k) {
        v.data[k] = momentum_ * v.data[k] - lr * (g.data[k] + weight_decay_ * p.data[k]);
        p.data[k] += v.data[k];
      }
    }
  }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Mean of precision@rank over the ranks of the positives, ranking by score
/// descending with ties broken by original index. nullopt without positives.
inline std::optional<double> average_precision(const std::vector<double>& scores,
                                               const std::vector<bool>& positives) {
  if (scores.size() != positives.size()) {
    throw DimensionError("average_precision: " + std::to_string(scores.size()) +
                         " scores for " + std::to_string(positives.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positives[order[rank]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

struct EvalReport {
  std::vector<std::optional<double>> class_ap;  // nullopt: no positives, excluded
  double mean_ap = 0.0;
  double accuracy = 0.0;  // top-1 against the first label
  std::vector<std::string> warnings;
  nlohmann::json metadata = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json ap = nlohmann::json::array();
    for (const auto& a : class_ap) ap.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
    return {{"mAP", mean_ap}, {"class_ap", ap}, {"accuracy", accuracy},
            {"warnings", warnings}, {"metadata", metadata}};
  }
};

/// Class scores: softmax probabilities (single-label) or sigmoids
/// (multi-label).
inline std::vector<double> class_scores(const Tensor& logits, LossMode mode) {
  std::vector<double> out(logits.data);
  if (mode == LossMode::single_label) {
    const double mx = *std::max_element(out.begin(), out.end());
    double z = 0.0;
    for (double& v : out) z += (v = std::exp(v - mx));
    for (double& v : out) v /= z;
  } else {
    for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
  }
  return out;
}

/// Per-class AP over the whole dataset and their mean. Read-only on model.
inline EvalReport evaluate(const Model& model, const Dataset& dataset,
                           LossMode mode = LossMode::single_label) {
  if (dataset.empty()) throw DataError("evaluate: empty dataset");
  const std::size_t C = model.config().num_classes;
  if (dataset.num_classes > C) {
    throw DimensionError("evaluate: dataset has " + std::to_string(dataset.num_classes) +
                         " classes, model predicts " + std::to_string(C));
  }
  std::vector<std::vector<double>> per_class(C);
  std::size_t correct = 0;
  for (const auto& s : dataset.samples) {
    const std::vector<double> sc = class_scores(model.predict(s), mode);
    for (std::size_t c = 0; c < C; ++c) per_class[c].push_back(sc[c]);
    const auto best = static_cast<std::size_t>(
        std::max_element(sc.begin(), sc.end()) - sc.begin());
    correct += best == s.labels.at(0);
  }
  EvalReport report;
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<bool> pos;
    pos.reserve(dataset.size());
    for (const auto& s : dataset.samples) pos.push_back(s.has_label(c));
    const auto ap = average_precision(per_class[c], pos);
    report.class_ap.push_back(ap);
    if (ap) {
      sum += *ap;
      ++counted;
    } else {
      report.warnings.push_back("class " + std::to_string(c) +
                                " has no positives; excluded from mAP");
    }
  }
  if (counted == 0) throw DataError("evaluate: no class has a positive sample");
  report.mean_ap = sum / static_cast<double>(counted);
  report.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  return report;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> test_map;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss},
            {"test_mAP", test_map ? nlohmann::json(*test_map) : nlohmann::json(nullptr)}};
  }
};

using EpochCallback = std::function<void(const EpochLog&, const Model&)>;

namespace detail {

inline std::string largest_parameter(const ParameterStore& params) {
  std::string name;
  double best = -1.0;
  for (const auto& e : params) {
    double sq = 0.0;
    for (double v : e.value.data) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!(norm <= best)) {  // also catches NaN
      best = norm;
      name = e.name;
    }
  }
  std::ostringstream os;
  os << "largest parameter norm " << best << " at '" << name << "'";
  return os.str();
}

}  // namespace detail

/// Mini-batch momentum SGD. Each epoch visits the training set in an order
/// drawn from a generator seeded with cfg.seed, so runs are reproducible.
/// When `test` is given its mAP is logged after every epoch.
inline std::vector<EpochLog> train(Model& model, const Dataset& train_set,
                                   const TrainConfig& cfg, const Dataset* test = nullptr,
                                   const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  ParameterStore& params = model.parameters();
  SgdMomentum opt(params, cfg.momentum, cfg.weight_decay);
  std::vector<Tensor> grads;
  for (const auto& e : params) grads.emplace_back(e.value.shape, 0.0);

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochLog> log;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cfg.learning_rate(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (Tensor& g : grads) g.fill(0.0);
      try {
        for (std::size_t k = start; k < end; ++k) {
          const VideoSample& s = train_set.samples[order[k]];
          Tape tape;
          const BoundParameters bound = bind(tape, params, true);
          const Var l = loss(model.forward(tape, bound, s), s.labels, cfg.loss_mode);
          tape.backward(l);
          loss_sum += l.value()[0];
          for (std::size_t i = 0; i < grads.size(); ++i) {
            const Tensor& g = bound[i].grad();
            for (std::size_t e = 0; e < g.numel(); ++e) grads[i].data[e] += inv * g.data[e];
          }
        }
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(batch_index) + ": " + e.what() + "; " +
                           detail::largest_parameter(params));
      }
      opt.step(params, grads, lr);
    }
    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.lr = lr;
    entry.train_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(entry.train_loss)) {
      throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                         "; " + detail::largest_parameter(params));
    }
    if (test) entry.test_map = evaluate(model, *test, cfg.loss_mode).mean_ap;
    log.push_back(entry);
    if (on_epoch) on_epoch(entry, model);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Coefficient inspection
// ---------------------------------------------------------------------------

/// Channel and time coefficients averaged per (class, concept type).
struct CoefficientDump {
  struct Group {
    std::string label;  // class index, or "all"
    std::string type;
    std::size_t samples = 0;
    Tensor channel_mean;  // [L_i, J]
    Tensor time_mean;     // [1, N]
  };
  std::string module;
  std::vector<std::size_t> kernel_widths;
  std::vector<Group> groups;

  /// Columns: class, concept_type, width, channel, mean_coeff.
  std::string coefficients_csv() const {
    std::string out = "class,concept_type,width,channel,mean_coeff\n";
    char buf[64];
    for (const auto& g : groups) {
      for (std::size_t j = 0; j < kernel_widths.size(); ++j) {
        for (std::size_t c = 0; c < g.channel_mean.dim(0); ++c) {
          std::snprintf(buf, sizeof buf, "%.17g", g.channel_mean.at(c, j));
          out += g.label + "," + g.type + "," + std::to_string(kernel_widths[j]) + "," +
                 std::to_string(c) + "," + buf + "\n";
        }
      }
    }
    return out;
  }

  /// Adjacent-width differences, larger width minus smaller.
  std::string differences_csv() const {
    std::string out = "class,concept_type,channel,width_hi,width_lo,diff\n";
    char buf[64];
    for (const auto& g : groups) {
      for (std::size_t j = 1; j < kernel_widths.size(); ++j) {
        for (std::size_t c = 0; c < g.channel_mean.dim(0); ++c) {
          std::snprintf(buf, sizeof buf, "%.17g", g.channel_mean.at(c, j) - g.channel_mean.at(c, j - 1));
          out += g.label + "," + g.type + "," + std::to_string(c) + "," +
                 std::to_string(kernel_widths[j]) + "," + std::to_string(kernel_widths[j - 1]) +
                 "," + buf + "\n";
        }
      }
    }
    return out;
  }

  std::string time_csv() const {
    std::string out = "class,concept_type,clip,mean_coeff\n";
    char buf[64];
    for (const auto& g : groups) {
      for (std::size_t t = 0; t < g.time_mean.numel(); ++t) {
        std::snprintf(buf, sizeof buf, "%.17g", g.time_mean.data[t]);
        out += g.label + "," + g.type + "," + std::to_string(t) + "," + buf + "\n";
      }
    }
    return out;
  }

  const Group* find(const std::string& label, const std::string& type) const {
    for (const auto& g : groups) {
      if (g.label == label && g.type == type) return &g;
    }
    return nullptr;
  }
};

/// Runs the model over `dataset` and averages the coefficients of one
/// module ("intra", "cross-si" or "cross-co"; empty picks intra when the
/// variant has it, else its cross module). Groups by class when requested;
/// classes without samples are omitted.
inline CoefficientDump dump_coefficients(const Model& model, const Dataset& dataset,
                                         bool group_by_class, std::string module = {}) {
  const Variant v = model.config().variant;
  if (!has_tdc(v)) {
    throw VariantError("variant " + to_string(v) +
                       " has no temporal dynamic convolution; nothing to inspect");
  }
  if (module.empty()) {
    module = uses_intra(v) ? "intra" : uses_cross_si(v) ? "cross-si" : "cross-co";
  }
  if ((module == "intra" && !uses_intra(v)) || (module == "cross-si" && !uses_cross_si(v)) ||
      (module == "cross-co" && !uses_cross_co(v))) {
    throw VariantError("variant " + to_string(v) + " has no '" + module + "' module");
  }
  if (dataset.empty()) throw DataError("dump_coefficients: empty dataset");

  CoefficientDump dump;
  dump.module = module;
  dump.kernel_widths = model.config().kernel_widths;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> slot;  // (class, type) -> group
  const auto& types = model.config().concept_types;
  const std::size_t groups_per_label = types.size();
  const std::size_t label_count = group_by_class ? model.config().num_classes : 1;
  std::vector<CoefficientDump::Group> acc(label_count * groups_per_label);

  for (const auto& s : dataset.samples) {
    ForwardTrace trace;
    model.predict(s, &trace);
    std::vector<std::size_t> labels = group_by_class ? s.labels : std::vector<std::size_t>{0};
    for (const auto& e : trace.entries) {
      if (e.module != module) continue;
      std::size_t ti = 0;
      while (ti < types.size() && types[ti].name != e.type) ++ti;
      for (std::size_t l : labels) {
        auto& g = acc[l * groups_per_label + ti];
        if (g.samples == 0) {
          g.channel_mean = Tensor(e.channel_coefficients.shape, 0.0);
          g.time_mean = Tensor(e.time_coefficients.shape, 0.0);
        }
        ++g.samples;
        for (std::size_t k = 0; k < g.channel_mean.numel(); ++k)
          g.channel_mean.data[k] += e.channel_coefficients.data[k];
        for (std::size_t k = 0; k < g.time_mean.numel(); ++k)
          g.time_mean.data[k] += e.time_coefficients.data[k];
      }
    }
  }
  for (std::size_t l = 0; l < label_count; ++l) {
    for (std::size_t ti = 0; ti < types.size(); ++ti) {
      auto& g = acc[l * groups_per_label + ti];
      if (g.samples == 0) continue;
      const double inv = 1.0 / static_cast<double>(g.samples);
      for (double& x : g.channel_mean.data) x *= inv;
      for (double& x : g.time_mean.data) x *= inv;
      g.label = group_by_class ? std::to_string(l) : "all";
      g.type = types[ti].name;
      dump.groups.push_back(std::move(g));
    }
  }
  return dump;
}

}  // namespace tdcmn
