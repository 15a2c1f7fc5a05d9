#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "tdcmn/autodiff.hpp"
#include "tdcmn/error.hpp"
#include "tdcmn/params.hpp"

namespace tdcmn {

/// Shape configuration of one temporal dynamic convolution block.
struct TdcConfig {
  std::size_t channels = 0;  // L_i
  std::size_t clips = 0;     // N
  std::vector<std::size_t> kernel_widths{1, 3, 5};
  std::size_t hidden_n = 0;  // channel-head width; 0 selects the default
  std::size_t hidden_l = 0;  // time-head width; 0 selects the default

  std::size_t num_widths() const { return kernel_widths.size(); }

  std::size_t channel_hidden() const {
    return hidden_n ? hidden_n : std::max<std::size_t>(4, clips / 2);
  }
  std::size_t time_hidden() const {
    return hidden_l ? hidden_l : std::max<std::size_t>(8, channels / 8);
  }

  void validate() const {
    if (channels == 0) throw ConfigError("tdc: channels must be positive");
    if (clips == 0) throw ConfigError("tdc: clips must be positive");
    validate_kernel_widths(kernel_widths);
  }

  static void validate_kernel_widths(const std::vector<std::size_t>& widths) {
    if (widths.empty()) throw ConfigError("kernel_widths must not be empty");
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (widths[i] % 2 == 0) {
        throw ConfigError("kernel_widths must be odd, got " +
                          std::to_string(widths[i]));
      }
      if (i && widths[i] <= widths[i - 1]) {
        throw ConfigError("kernel_widths must be strictly increasing");
      }
    }
  }
};

/// One convolution per kernel width, each mapping L channels to L channels.
struct MultiWidthConvParameters {
  std::vector<std::size_t> weight;  // store indices, [L,L,width]
  std::vector<std::size_t> bias;    // [L]

  static MultiWidthConvParameters create(ParameterStore& store,
                                         const std::string& prefix,
                                         std::size_t channels,
                                         const std::vector<std::size_t>& widths,
                                         Rng& rng) {
    MultiWidthConvParameters p;
    for (std::size_t w : widths) {
      const std::string base = prefix + ".conv_k" + std::to_string(w);
      const std::size_t fan_in = channels * w;
      p.weight.push_back(store.add_uniform(base + ".weight", {channels, channels, w}, fan_in, rng));
      p.bias.push_back(store.add_uniform(base + ".bias", {channels}, fan_in, rng));
    }
    return p;
  }
};

/// Store indices of every learnable tensor of one TDC block.
struct TdcParameters {
  TdcConfig config;
  MultiWidthConvParameters conv;
  std::size_t reduce_weight = 0;  // [L, J*L, 1]
  std::size_t reduce_bias = 0;    // [L]
  std::size_t channel_w1 = 0;     // [N, n]
  std::size_t channel_w2 = 0;     // [n, J]
  std::size_t time_w1 = 0;        // [l, L]
  std::size_t time_w2 = 0;        // [1, l]

  static TdcParameters create(ParameterStore& store, const std::string& prefix,
                              const TdcConfig& cfg, Rng& rng) {
    cfg.validate();
    TdcParameters p;
    p.config = cfg;
    const std::size_t L = cfg.channels, N = cfg.clips, J = cfg.num_widths();
    const std::size_t n = cfg.channel_hidden(), l = cfg.time_hidden();
    p.conv = MultiWidthConvParameters::create(store, prefix, L, cfg.kernel_widths, rng);
    p.reduce_weight = store.add_uniform(prefix + ".reduce.weight", {L, J * L, 1}, J * L, rng);
    p.reduce_bias = store.add_uniform(prefix + ".reduce.bias", {L}, J * L, rng);
    p.channel_w1 = store.add_uniform(prefix + ".channel_head.w1", {N, n}, N, rng);
    p.channel_w2 = store.add_uniform(prefix + ".channel_head.w2", {n, J}, n, rng);
    p.time_w1 = store.add_uniform(prefix + ".time_head.w1", {l, L}, L, rng);
    p.time_w2 = store.add_uniform(prefix + ".time_head.w2", {1, l}, l, rng);
    return p;
  }
};

/// A TdcParameters set placed on a tape.
struct TdcVars {
  TdcConfig config;
  std::vector<Var> conv_weight;
  std::vector<Var> conv_bias;
  Var reduce_weight, reduce_bias;
  Var channel_w1, channel_w2;
  Var time_w1, time_w2;

  static TdcVars bind(const TdcParameters& p, const BoundParameters& bound) {
    TdcVars v;
    v.config = p.config;
    for (std::size_t i : p.conv.weight) v.conv_weight.push_back(bound[i]);
    for (std::size_t i : p.conv.bias) v.conv_bias.push_back(bound[i]);
    v.reduce_weight = bound[p.reduce_weight];
    v.reduce_bias = bound[p.reduce_bias];
    v.channel_w1 = bound[p.channel_w1];
    v.channel_w2 = bound[p.channel_w2];
    v.time_w1 = bound[p.time_w1];
    v.time_w2 = bound[p.time_w2];
    return v;
  }
};

/// Coefficients produced by one forward pass of a TDC block.
struct TdcTrace {
  Tensor channel_coefficients;  // [L, J]
  Tensor time_coefficients;     // [1, N]
};

inline void require_sequence_shape(Var x, std::size_t channels,
                                   std::size_t clips, const char* op) {
  const Shape expected{channels, clips};
  if (x.shape() != expected) {
    throw DimensionError(std::string(op) + ": input " + shape_str(x.shape()) +
                         " does not match configured " + shape_str(expected));
  }
}

/// Per-width convolutions X^j = conv_j(x), each [L,N].
inline std::vector<Var> multi_scale_conv(Var x, const std::vector<Var>& weights,
                                         const std::vector<Var>& biases) {
  std::vector<Var> out;
  out.reserve(weights.size());
  for (std::size_t j = 0; j < weights.size(); ++j) {
    out.push_back(conv1d_same(x, weights[j], biases[j]));
  }
  return out;
}

inline std::vector<Var> multi_scale_conv(Var x, const TdcVars& p) {
  require_sequence_shape(x, p.config.channels, p.config.clips, "multi_scale_conv");
  return multi_scale_conv(x, p.conv_weight, p.conv_bias);
}

/// X' = width-1 convolution over the channel-wise concatenation of the
/// J convolution results.
inline Var reduce_concat_conv(const std::vector<Var>& results, const TdcVars& p) {
  if (results.size() != p.config.num_widths()) {
    throw ConfigError("reduce_concat_conv: got " + std::to_string(results.size()) +
                      " convolution results for " +
                      std::to_string(p.config.num_widths()) + " kernel widths");
  }
  for (const Var& r : results) {
    require_sequence_shape(r, p.config.channels, p.config.clips, "reduce_concat_conv");
  }
  return conv1d_same(concat_axis(results, 0), p.reduce_weight, p.reduce_bias);
}

/// softmax(tanh(X' W1) W2), normalized over the width axis.
inline Var channel_coefficients(Var xprime, Var w1, Var w2) {
  return softmax_axis(matmul(tanh_map(matmul(xprime, w1)), w2), 1);
}

/// softmax(W2 tanh(W1 X')), normalized over the time axis.
inline Var time_coefficients(Var xprime, Var w1, Var w2) {
  return softmax_axis(matmul(w2, tanh_map(matmul(w1, xprime))), 1);
}

inline Var channel_coefficients(Var xprime, const TdcVars& p) {
  return channel_coefficients(xprime, p.channel_w1, p.channel_w2);
}

inline Var time_coefficients(Var xprime, const TdcVars& p) {
  return time_coefficients(xprime, p.time_w1, p.time_w2);
}

/// X''(c,t) = sum_j a_k(c,j) X^j(c,t)
inline Var channel_fuse(const std::vector<Var>& results, Var a_k) {
  if (results.empty()) throw DimensionError("channel_fuse: no convolution results");
  const Shape& rs = results.front().shape();
  const Shape expected{rs.at(0), results.size()};
  if (a_k.shape() != expected) {
    throw DimensionError("channel_fuse: channel coefficients " + shape_str(a_k.shape()) +
                         " do not match " + std::to_string(results.size()) +
                         " results of shape " + shape_str(rs));
  }
  std::vector<Var> weighted;
  weighted.reserve(results.size());
  for (std::size_t j = 0; j < results.size(); ++j) {
    weighted.push_back(scale_rows(results[j], slice_axis(a_k, 1, j, j + 1)));
  }
  return add_n(weighted);
}

/// a_t X''^T : [1,N] x [N,L] -> [1,L]
inline Var temporal_fuse(Var a_t, Var fused) {
  if (a_t.shape().size() != 2 || a_t.shape()[0] != 1 ||
      fused.shape().size() != 2 || a_t.shape()[1] != fused.shape()[1]) {
    throw DimensionError("temporal_fuse: time coefficients " + shape_str(a_t.shape()) +
                         " do not match fused sequence " + shape_str(fused.shape()));
  }
  return matmul(a_t, transpose(fused));
}

inline Var fuse(const std::vector<Var>& results, Var a_k, Var a_t) {
  return temporal_fuse(a_t, channel_fuse(results, a_k));
}

/// Full block: convolutions, coefficient generation, results fusion.
/// Returns the video-level representation [1,L].
inline Var tdc_forward(Var x, const TdcVars& p, TdcTrace* trace = nullptr) {
  const std::vector<Var> results = multi_scale_conv(x, p);
  const Var xprime = reduce_concat_conv(results, p);
  const Var a_k = channel_coefficients(xprime, p);
  const Var a_t = time_coefficients(xprime, p);
  if (trace) {
    trace->channel_coefficients = a_k.value();
    trace->time_coefficients = a_t.value();
  }
  return fuse(results, a_k, a_t);
}

}  // namespace tdcmn
