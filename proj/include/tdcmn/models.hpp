#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tdcmn/autodiff.hpp"
#include "tdcmn/data.hpp"
#include "tdcmn/error.hpp"
#include "tdcmn/params.hpp"
#include "tdcmn/tdc.hpp"

namespace tdcmn {

enum class Variant {
  baseline,
  intdcm_only,
  crtdcm_si_only,
  crtdcm_co_only,
  tdcmn_si,
  tdcmn_co,
};

inline constexpr Variant kAllVariants[] = {
    Variant::baseline,       Variant::intdcm_only, Variant::crtdcm_si_only,
    Variant::crtdcm_co_only, Variant::tdcmn_si,    Variant::tdcmn_co};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::intdcm_only: return "intdcm-only";
    case Variant::crtdcm_si_only: return "crtdcm-si-only";
    case Variant::crtdcm_co_only: return "crtdcm-co-only";
    case Variant::tdcmn_si: return "tdcmn-si";
    case Variant::tdcmn_co: return "tdcmn-co";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + s + "'");
}

inline bool uses_intra(Variant v) {
  return v == Variant::intdcm_only || v == Variant::tdcmn_si || v == Variant::tdcmn_co;
}
inline bool uses_cross_si(Variant v) {
  return v == Variant::crtdcm_si_only || v == Variant::tdcmn_si;
}
inline bool uses_cross_co(Variant v) {
  return v == Variant::crtdcm_co_only || v == Variant::tdcmn_co;
}
inline bool has_tdc(Variant v) { return v != Variant::baseline; }

struct ModelConfig {
  std::vector<ConceptType> concept_types;
  std::size_t clips = 16;
  Variant variant = Variant::tdcmn_co;
  std::vector<std::size_t> kernel_widths{1, 3, 5};
  /// Hidden widths of the classifier MLP. Unset: one layer of
  /// max(256, L). Empty: a single affine map.
  std::optional<std::vector<std::size_t>> classifier_hidden;
  std::size_t num_classes = 2;
  std::size_t hidden_n = 0;  // 0: TdcConfig default
  std::size_t hidden_l = 0;  // 0: TdcConfig default
  /// Lets crtdcm-co run on more than two concept types with one channel
  /// head per type and one time-coefficient row per type.
  bool co_multi_type = false;

  std::size_t total_channels() const {
    std::size_t n = 0;
    for (const auto& t : concept_types) n += t.channels;
    return n;
  }

  std::size_t representation_width() const {
    const std::size_t L = total_channels();
    return (variant == Variant::tdcmn_si || variant == Variant::tdcmn_co) ? 2 * L : L;
  }

  std::vector<std::size_t> hidden_layers() const {
    if (classifier_hidden) return *classifier_hidden;
    return {std::max<std::size_t>(256, total_channels())};
  }

  TdcConfig tdc_config(std::size_t channels) const {
    TdcConfig c;
    c.channels = channels;
    c.clips = clips;
    c.kernel_widths = kernel_widths;
    c.hidden_n = hidden_n;
    c.hidden_l = hidden_l;
    return c;
  }

  void validate() const {
    if (concept_types.empty()) throw ConfigError("model needs at least one concept type");
    for (const auto& t : concept_types) {
      if (t.channels == 0) {
        throw ConfigError("concept type '" + t.name + "' has 0 channels");
      }
    }
    if (clips == 0) throw ConfigError("clips must be positive");
    if (num_classes == 0) throw ConfigError("num_classes must be positive");
    TdcConfig::validate_kernel_widths(kernel_widths);
    for (std::size_t h : hidden_layers()) {
      if (h == 0) throw ConfigError("classifier hidden widths must be positive");
    }
    if (uses_cross_co(variant)) {
      const std::size_t O = concept_types.size();
      if (co_multi_type ? O < 2 : O != 2) {
        throw ConfigError("variant " + to_string(variant) + " needs " +
                          (co_multi_type ? "at least" : "exactly") +
                          " 2 concept types, got " + std::to_string(O));
      }
    }
  }
};

/// Coupled cross-type block: per-type convolutions, per-type channel heads
/// fed by the joint summed representation, one time head with a row per type.
struct CrCoParameters {
  std::vector<MultiWidthConvParameters> conv;  // per type
  std::vector<std::size_t> channel_w1;         // per type, [N, n]
  std::vector<std::size_t> channel_w2;         // per type, [n, J]
  std::size_t time_w1 = 0;                     // [l, L]
  std::size_t time_w2 = 0;                     // [O, l]

  static CrCoParameters create(ParameterStore& store, const std::string& prefix,
                               const ModelConfig& cfg, Rng& rng) {
    CrCoParameters p;
    const std::size_t N = cfg.clips, J = cfg.kernel_widths.size();
    const std::size_t L = cfg.total_channels(), O = cfg.concept_types.size();
    const TdcConfig joint = cfg.tdc_config(L);
    const std::size_t n = joint.channel_hidden(), l = joint.time_hidden();
    for (const auto& t : cfg.concept_types) {
      const std::string base = prefix + "." + t.name;
      p.conv.push_back(MultiWidthConvParameters::create(store, base, t.channels,
                                                        cfg.kernel_widths, rng));
      p.channel_w1.push_back(store.add_uniform(base + ".channel_head.w1", {N, n}, N, rng));
      p.channel_w2.push_back(store.add_uniform(base + ".channel_head.w2", {n, J}, n, rng));
    }
    p.time_w1 = store.add_uniform(prefix + ".time_head.w1", {l, L}, L, rng);
    p.time_w2 = store.add_uniform(prefix + ".time_head.w2", {O, l}, l, rng);
    return p;
  }
};

struct ClassifierParameters {
  std::vector<std::size_t> weight;  // [in, out]
  std::vector<std::size_t> bias;    // [1, out]
  std::size_t input_width = 0;

  static ClassifierParameters create(ParameterStore& store, const std::string& prefix,
                                     std::size_t input_width,
                                     const std::vector<std::size_t>& hidden,
                                     std::size_t num_classes, Rng& rng) {
    ClassifierParameters p;
    p.input_width = input_width;
    std::size_t in = input_width;
    std::vector<std::size_t> widths = hidden;
    widths.push_back(num_classes);
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const std::string base = prefix + ".fc" + std::to_string(i);
      p.weight.push_back(store.add_uniform(base + ".weight", {in, widths[i]}, in, rng));
      p.bias.push_back(store.add_uniform(base + ".bias", {1, widths[i]}, in, rng));
      in = widths[i];
    }
    return p;
  }
};

/// Coefficients captured during a forward pass, one entry per concept type
/// per TDC-bearing module.
struct ForwardTrace {
  struct Entry {
    std::string module;      // "intra", "cross-si" or "cross-co"
    std::string type;        // concept type name
    Tensor channel_coefficients;  // [L_i, J]
    Tensor time_coefficients;     // [1, N]
  };
  std::vector<Entry> entries;
};

/// Affine layers with tanh between them; the last layer has no activation.
inline Var classifier_forward(Var x, const ClassifierParameters& p,
                              const BoundParameters& bound) {
  if (x.shape() != Shape{1, p.input_width}) {
    throw DimensionError("classifier: input " + shape_str(x.shape()) +
                         " does not match configured width [1x" +
                         std::to_string(p.input_width) + "]");
  }
  for (std::size_t i = 0; i < p.weight.size(); ++i) {
    x = add(matmul(x, bound[p.weight[i]]), bound[p.bias[i]]);
    if (i + 1 < p.weight.size()) x = tanh_map(x);
  }
  return x;
}

/// Coupled cross-type representation [1,L] from per-type sequences [L_i,N].
inline Var crtdcm_co_forward(const std::vector<Var>& xs, const CrCoParameters& p,
                             const BoundParameters& bound,
                             const std::vector<std::string>& type_names = {},
                             ForwardTrace* trace = nullptr) {
  const std::size_t O = xs.size();
  if (O < 2 || p.conv.size() != O) {
    throw ConfigError("crtdcm_co_forward: needs one input per configured type (" +
                      std::to_string(p.conv.size()) + ", at least 2), got " +
                      std::to_string(O));
  }
  std::vector<std::vector<Var>> results(O);
  std::vector<Var> summed;
  for (std::size_t i = 0; i < O; ++i) {
    std::vector<Var> w, b;
    for (std::size_t k : p.conv[i].weight) w.push_back(bound[k]);
    for (std::size_t k : p.conv[i].bias) b.push_back(bound[k]);
    results[i] = multi_scale_conv(xs[i], w, b);
    summed.push_back(add_n(results[i]));
  }
  const Var xprime = concat_axis(summed, 0);  // [L,N]
  const Var a_t = time_coefficients(xprime, bound[p.time_w1], bound[p.time_w2]);  // [O,N]

  std::vector<Var> parts;
  std::size_t row = 0;
  for (std::size_t i = 0; i < O; ++i) {
    const std::size_t li = xs[i].shape()[0];
    // Rows of the joint channel coefficients that belong to type i.
    const Var block = slice_axis(xprime, 0, row, row + li);
    const Var a_k = channel_coefficients(block, bound[p.channel_w1[i]], bound[p.channel_w2[i]]);
    const Var a_ti = slice_axis(a_t, 0, i, i + 1);
    parts.push_back(temporal_fuse(a_ti, channel_fuse(results[i], a_k)));
    if (trace) {
      trace->entries.push_back({"cross-co", i < type_names.size() ? type_names[i] : std::to_string(i),
                                a_k.value(), a_ti.value()});
    }
    row += li;
  }
  return concat_axis(parts, 1);
}

/// Assembled network for one ModelConfig. Owns its parameters; forward()
/// only reads them, so a frozen model may be evaluated from several threads
/// as long as each thread uses its own tape.
class Model {
 public:
  static Model create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.config_ = cfg;
    Rng rng(seed);
    const Variant v = cfg.variant;
    if (uses_intra(v)) {
      for (const auto& t : cfg.concept_types) {
        m.intra_.push_back(TdcParameters::create(m.params_, "intra." + t.name,
                                                 cfg.tdc_config(t.channels), rng));
      }
    }
    if (uses_cross_si(v)) {
      m.cross_si_ = TdcParameters::create(m.params_, "cross_si",
                                          cfg.tdc_config(cfg.total_channels()), rng);
    }
    if (uses_cross_co(v)) {
      m.cross_co_ = CrCoParameters::create(m.params_, "cross_co", cfg, rng);
    }
    m.classifier_ = ClassifierParameters::create(m.params_, "classifier",
                                                 cfg.representation_width(),
                                                 cfg.hidden_layers(), cfg.num_classes, rng);
    return m;
  }

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  const std::vector<TdcParameters>& intra_blocks() const { return intra_; }
  const std::optional<TdcParameters>& cross_si_block() const { return cross_si_; }
  const std::optional<CrCoParameters>& cross_co_block() const { return cross_co_; }
  const ClassifierParameters& classifier() const { return classifier_; }

  /// Places the sample's score matrices on the tape after checking them
  /// against the configured concept types.
  std::vector<Var> inputs(Tape& tape, const VideoSample& sample) const {
    const auto& types = config_.concept_types;
    if (sample.sequences.size() != types.size()) {
      throw DimensionError("sample '" + sample.id + "' has " +
                           std::to_string(sample.sequences.size()) +
                           " concept types, model expects " + std::to_string(types.size()));
    }
    std::vector<Var> xs;
    for (std::size_t i = 0; i < types.size(); ++i) {
      const auto& seq = sample.sequences[i];
      const Shape expected{types[i].channels, config_.clips};
      if (seq.scores.shape != expected) {
        throw DimensionError("sample '" + sample.id + "' type '" + seq.type + "' has shape " +
                             shape_str(seq.scores.shape) + ", model expects " +
                             shape_str(expected));
      }
      xs.push_back(tape.watch(seq.scores, false));
    }
    return xs;
  }

  /// Max over clips per type, concatenated: [1,L].
  Var baseline_features(const std::vector<Var>& xs) const {
    std::vector<Var> pooled;
    for (const Var& x : xs) {
      pooled.push_back(reshape(max_axis(x, 1), {1, x.shape()[0]}));
    }
    return concat_axis(pooled, 1);
  }

  /// Per-type TDC outputs concatenated in type order: [1,L].
  Var intdcm_forward(const std::vector<Var>& xs, const BoundParameters& bound,
                     ForwardTrace* trace = nullptr) const {
    if (intra_.empty()) throw VariantError(to_string(config_.variant) + " has no intra-domain module");
    std::vector<Var> parts;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      TdcTrace tt;
      parts.push_back(tdc_forward(xs[i], TdcVars::bind(intra_[i], bound), trace ? &tt : nullptr));
      if (trace) {
        trace->entries.push_back({"intra", config_.concept_types[i].name,
                                  std::move(tt.channel_coefficients),
                                  std::move(tt.time_coefficients)});
      }
    }
    return concat_axis(parts, 1);
  }

  /// One TDC over all types stacked along channels: [1,L].
  Var crtdcm_si_forward(const std::vector<Var>& xs, const BoundParameters& bound,
                        ForwardTrace* trace = nullptr) const {
    if (!cross_si_) throw VariantError(to_string(config_.variant) + " has no crtdcm-si module");
    TdcTrace tt;
    const Var out = tdc_forward(concat_axis(xs, 0), TdcVars::bind(*cross_si_, bound),
                                trace ? &tt : nullptr);
    if (trace) {
      std::size_t row = 0;
      for (const auto& t : config_.concept_types) {
        Tensor block({t.channels, tt.channel_coefficients.dim(1)});
        std::copy_n(tt.channel_coefficients.data.begin() +
                        static_cast<std::ptrdiff_t>(row * block.dim(1)),
                    block.numel(), block.data.begin());
        trace->entries.push_back({"cross-si", t.name, std::move(block), tt.time_coefficients});
        row += t.channels;
      }
    }
    return out;
  }

  Var crtdcm_co_forward(const std::vector<Var>& xs, const BoundParameters& bound,
                        ForwardTrace* trace = nullptr) const {
    if (!cross_co_) throw VariantError(to_string(config_.variant) + " has no crtdcm-co module");
    std::vector<std::string> names;
    for (const auto& t : config_.concept_types) names.push_back(t.name);
    return tdcmn::crtdcm_co_forward(xs, *cross_co_, bound, names, trace);
  }

  /// Video representation fed to the classifier.
  Var representation(const std::vector<Var>& xs, const BoundParameters& bound,
                     ForwardTrace* trace = nullptr) const {
    switch (config_.variant) {
      case Variant::baseline: return baseline_features(xs);
      case Variant::intdcm_only: return intdcm_forward(xs, bound, trace);
      case Variant::crtdcm_si_only: return crtdcm_si_forward(xs, bound, trace);
      case Variant::crtdcm_co_only: return crtdcm_co_forward(xs, bound, trace);
      case Variant::tdcmn_si:
        return concat_axis({intdcm_forward(xs, bound, trace), crtdcm_si_forward(xs, bound, trace)}, 1);
      case Variant::tdcmn_co:
        return concat_axis({intdcm_forward(xs, bound, trace), crtdcm_co_forward(xs, bound, trace)}, 1);
    }
    throw VariantError("unknown variant");
  }

  /// Logits [1, num_classes].
  Var forward(Tape& tape, const BoundParameters& bound, const VideoSample& sample,
              ForwardTrace* trace = nullptr) const {
    const std::vector<Var> xs = inputs(tape, sample);
    return classifier_forward(representation(xs, bound, trace), classifier_, bound);
  }

  /// Inference without gradients.
  Tensor predict(const VideoSample& sample, ForwardTrace* trace = nullptr) const {
    Tape tape;
    const BoundParameters bound = bind(tape, params_, false);
    return forward(tape, bound, sample, trace).value();
  }

  /// Overwrites every parameter from `values`, which must hold exactly this
  /// model's names and shapes.
  void load_parameters(const ParameterStore& values) {
    if (values.size() != params_.size()) {
      throw CheckpointError("parameter count " + std::to_string(values.size()) +
                            " does not match model layout " + std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& dst = params_[i];
      const Tensor& src = values.value(dst.name);
      if (src.shape != dst.value.shape) {
        throw CheckpointError("parameter '" + dst.name + "' has shape " + shape_str(src.shape) +
                              ", model expects " + shape_str(dst.value.shape));
      }
      dst.value = src;
    }
  }

 private:
  ModelConfig config_;
  ParameterStore params_;
  std::vector<TdcParameters> intra_;
  std::optional<TdcParameters> cross_si_;
  std::optional<CrCoParameters> cross_co_;
  ClassifierParameters classifier_;
};

}  // namespace tdcmn
