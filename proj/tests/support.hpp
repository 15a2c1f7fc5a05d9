#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "tdcmn/tdcmn.hpp"

namespace tdcmn::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data) v = d(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

/// A unique scratch directory under the system temp dir, removed on exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("tdcmn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Floor on the denominator of the relative error.
inline constexpr double kGradRelFloor = 1e-4;

inline double grad_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradRelFloor});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckResult {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of every element of `params` with central
/// differences. `build` records a scalar loss on the tape.
inline GradCheckResult grad_check(
    ParameterStore& params,
    const std::function<Var(Tape&, const BoundParameters&)>& build, double eps = 1e-6) {
  Tape tape;
  const BoundParameters bound = bind(tape, params, true);
  tape.backward(build(tape, bound));
  std::vector<Tensor> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(bound[i].grad());

  auto eval = [&] {
    Tape t;
    const BoundParameters b = bind(t, params, false);
    return build(t, b).value()[0];
  };
  GradCheckResult r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& v = params[i].value;
    for (std::size_t e = 0; e < v.numel(); ++e) {
      const double saved = v.data[e];
      v.data[e] = saved + eps;
      const double fp = eval();
      v.data[e] = saved - eps;
      const double fm = eval();
      v.data[e] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double rel = grad_relative_error(analytic[i].data[e], numeric);
      ++r.checked;
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst = params[i].name + "[" + std::to_string(e) + "]";
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Loop oracles (plain nested loops, no tape)
// ---------------------------------------------------------------------------

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t.at(r, c);
  return m;
}

/// out[o][t] = b[o] + sum_i sum_k w[o][i][k] * x[i][t + k - K/2], zero outside.
inline Mat loop_conv(const Mat& x, const Tensor& w, const Tensor& b) {
  const std::size_t cout = w.dim(0), cin = w.dim(1), K = w.dim(2), N = x[0].size();
  const long half = static_cast<long>(K / 2);
  Mat out(cout, std::vector<double>(N, 0.0));
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t t = 0; t < N; ++t) {
      double s = b.data[o];
      for (std::size_t i = 0; i < cin; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
          const long src = static_cast<long>(t) + static_cast<long>(k) - half;
          if (src < 0 || src >= static_cast<long>(N)) continue;
          s += w.at(o, i, k) * x[i][static_cast<std::size_t>(src)];
        }
      }
      out[o][t] = s;
    }
  }
  return out;
}

inline std::vector<double> loop_softmax(std::vector<double> v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double z = 0.0;
  for (double& x : v) z += (x = std::exp(x - m));
  for (double& x : v) x /= z;
  return v;
}

/// Channel head: A[c][:] = softmax_j( sum_q tanh(sum_t X[c][t] W1[t][q]) W2[q][j] ).
inline Mat loop_channel_head(const Mat& xp, const Tensor& w1, const Tensor& w2) {
  const std::size_t n = w1.dim(1), J = w2.dim(1), N = xp[0].size();
  Mat a;
  for (const auto& row : xp) {
    std::vector<double> h(n);
    for (std::size_t q = 0; q < n; ++q) {
      double s = 0.0;
      for (std::size_t t = 0; t < N; ++t) s += row[t] * w1.at(t, q);
      h[q] = std::tanh(s);
    }
    std::vector<double> z(J, 0.0);
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t q = 0; q < n; ++q) z[j] += h[q] * w2.at(q, j);
    a.push_back(loop_softmax(z));
  }
  return a;
}

/// Time head: row r = softmax_t( sum_p W2[r][p] tanh(sum_c W1[p][c] X[c][t]) ).
inline Mat loop_time_head(const Mat& xp, const Tensor& w1, const Tensor& w2) {
  const std::size_t l = w1.dim(0), L = xp.size(), N = xp[0].size(), R = w2.dim(0);
  Mat h(l, std::vector<double>(N));
  for (std::size_t p = 0; p < l; ++p)
    for (std::size_t t = 0; t < N; ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < L; ++c) s += w1.at(p, c) * xp[c][t];
      h[p][t] = std::tanh(s);
    }
  Mat a;
  for (std::size_t r = 0; r < R; ++r) {
    std::vector<double> z(N, 0.0);
    for (std::size_t t = 0; t < N; ++t)
      for (std::size_t p = 0; p < l; ++p) z[t] += w2.at(r, p) * h[p][t];
    a.push_back(loop_softmax(z));
  }
  return a;
}

/// out[c] = sum_t a_t[t] * sum_j a_k[c][j] * X^j[c][t].
inline std::vector<double> loop_fuse(const std::vector<Mat>& xs, const Mat& a_k,
                                     const std::vector<double>& a_t) {
  const std::size_t L = xs[0].size(), N = xs[0][0].size();
  std::vector<double> out(L, 0.0);
  for (std::size_t c = 0; c < L; ++c)
    for (std::size_t t = 0; t < N; ++t) {
      double fused = 0.0;
      for (std::size_t j = 0; j < xs.size(); ++j) fused += a_k[c][j] * xs[j][c][t];
      out[c] += a_t[t] * fused;
    }
  return out;
}

/// The whole TDC block as loops over a store laid out by TdcParameters.
inline std::vector<double> loop_tdc(const Tensor& x, const ParameterStore& s,
                                    const TdcParameters& p) {
  const Mat xm = to_mat(x);
  std::vector<Mat> results;
  for (std::size_t j = 0; j < p.conv.weight.size(); ++j) {
    results.push_back(loop_conv(xm, s[p.conv.weight[j]].value, s[p.conv.bias[j]].value));
  }
  Mat stacked;
  for (const auto& r : results) stacked.insert(stacked.end(), r.begin(), r.end());
  const Mat xp = loop_conv(stacked, s[p.reduce_weight].value, s[p.reduce_bias].value);
  const Mat a_k = loop_channel_head(xp, s[p.channel_w1].value, s[p.channel_w2].value);
  const Mat a_t = loop_time_head(xp, s[p.time_w1].value, s[p.time_w2].value);
  return loop_fuse(results, a_k, a_t[0]);
}

/// The coupled cross-type block as loops.
inline std::vector<double> loop_crco(const std::vector<Tensor>& xs, const ParameterStore& s,
                                     const CrCoParameters& p) {
  std::vector<std::vector<Mat>> results;
  Mat xp;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Mat xm = to_mat(xs[i]);
    std::vector<Mat> r;
    for (std::size_t j = 0; j < p.conv[i].weight.size(); ++j) {
      r.push_back(loop_conv(xm, s[p.conv[i].weight[j]].value, s[p.conv[i].bias[j]].value));
    }
    Mat sum(xm.size(), std::vector<double>(xm[0].size(), 0.0));
    for (const auto& m : r)
      for (std::size_t c = 0; c < m.size(); ++c)
        for (std::size_t t = 0; t < m[c].size(); ++t) sum[c][t] += m[c][t];
    xp.insert(xp.end(), sum.begin(), sum.end());
    results.push_back(std::move(r));
  }
  const Mat a_t = loop_time_head(xp, s[p.time_w1].value, s[p.time_w2].value);
  std::vector<double> out;
  std::size_t row = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t li = xs[i].dim(0);
    const Mat block(xp.begin() + static_cast<long>(row), xp.begin() + static_cast<long>(row + li));
    const Mat a_k = loop_channel_head(block, s[p.channel_w1[i]].value, s[p.channel_w2[i]].value);
    const auto part = loop_fuse(results[i], a_k, a_t[i]);
    out.insert(out.end(), part.begin(), part.end());
    row += li;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

inline ModelConfig desk_config(Variant v, std::size_t l1 = 4, std::size_t l2 = 6,
                               std::size_t clips = 8, std::size_t classes = 3) {
  ModelConfig c;
  c.concept_types = {{"scene", l1}, {"object", l2}};
  c.clips = clips;
  c.variant = v;
  c.kernel_widths = {1, 3, 5};
  c.num_classes = classes;
  c.classifier_hidden = std::vector<std::size_t>{8};
  return c;
}

inline VideoSample random_sample(const ModelConfig& c, Rng& rng, std::size_t label = 0) {
  VideoSample s;
  s.id = "s";
  for (const auto& t : c.concept_types) {
    s.sequences.push_back({t.name, random_tensor({t.channels, c.clips}, rng, 0.0, 1.0)});
  }
  s.labels = {label};
  return s;
}

}  // namespace tdcmn::testing
