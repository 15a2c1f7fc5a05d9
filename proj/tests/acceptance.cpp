// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>

#include "support.hpp"
#include "tdcmn/cli.hpp"

using namespace tdcmn;
using namespace tdcmn::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::printf("%s criterion %d (%s): %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

void info(const std::string& line) {
  std::printf("INFO %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, const char* f = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

TdcParameters make_block(ParameterStore& store, std::size_t channels, std::size_t clips,
                         std::vector<std::size_t> widths, Rng& rng) {
  TdcConfig cfg;
  cfg.channels = channels;
  cfg.clips = clips;
  cfg.kernel_widths = std::move(widths);
  return TdcParameters::create(store, "tdc", cfg, rng);
}

Tensor run_block(const ParameterStore& store, const TdcParameters& p, const Tensor& x,
                 TdcTrace* trace = nullptr) {
  Tape tape;
  const BoundParameters bound = bind(tape, store, false);
  const TdcVars vars = TdcVars::bind(p, bound);
  return tdc_forward(tape.constant(x), vars, trace).value();
}

// Worst |row sum - 1| and smallest entry over the rows of `t`.
void row_stats(const Tensor& t, double& worst_sum, double& min_entry) {
  const std::size_t cols = t.dim(1);
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      s += t.at(r, c);
      min_entry = std::min(min_entry, t.at(r, c));
    }
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }
}

// ---------------------------------------------------------------------------

void gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  for (Variant v : kAllVariants) {
    const ModelConfig c = desk_config(v);
    Model m = Model::create(c, 101);
    Rng rng(202);
    const VideoSample s = random_sample(c, rng, 1);
    const auto r = grad_check(m.parameters(), [&](Tape& t, const BoundParameters& b) {
      return loss(m.forward(t, b, s), s.labels, LossMode::single_label);
    });
    checked += r.checked;
    if (r.max_rel > worst) {
      worst = r.max_rel;
      where = to_string(v) + " " + r.worst;
    }
  }
  const double secs = seconds_since(t0);
  report(1, "gradient correctness", worst < 1e-5 && secs < 60.0,
         std::to_string(checked) + " parameters over 6 variants, max relative error " + fmt(worst) +
             (where.empty() ? "" : " at " + where) + ", " + fmt(secs) + " s");
}

void stochasticity() {
  Rng rng(303);
  double worst_sum = 0.0, min_entry = 1.0;
  std::size_t rows = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    if (trial % 2 == 0) {
      ParameterStore store;
      const std::size_t l = 2 + static_cast<std::size_t>(trial % 5), n = 3 + static_cast<std::size_t>(trial % 7);
      const TdcParameters p = make_block(store, l, n, {1, 3, 5}, rng);
      TdcTrace tr;
      run_block(store, p, random_tensor({l, n}, rng, -3.0, 3.0), &tr);
      row_stats(tr.channel_coefficients, worst_sum, min_entry);
      row_stats(tr.time_coefficients, worst_sum, min_entry);
      rows += tr.channel_coefficients.dim(0) + tr.time_coefficients.dim(0);
    } else {
      const ModelConfig c = desk_config(Variant::tdcmn_co);
      const Model m = Model::create(c, static_cast<std::uint64_t>(trial));
      const VideoSample s = random_sample(c, rng);
      ForwardTrace trace;
      m.predict(s, &trace);
      for (const auto& e : trace.entries) {
        row_stats(e.channel_coefficients, worst_sum, min_entry);
        row_stats(e.time_coefficients, worst_sum, min_entry);
        rows += e.channel_coefficients.dim(0) + e.time_coefficients.dim(0);
      }
    }
  }
  report(2, "stochasticity invariants", worst_sum <= 1e-12 && min_entry >= 0.0,
         std::to_string(rows) + " coefficient rows on 1000 inputs (including coupled A_k1/A_k2), max |sum-1| " +
             fmt(worst_sum) + ", min entry " + fmt(min_entry));
}

void oracle_equivalence() {
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ParameterStore store;
    const std::size_t l = 1 + static_cast<std::size_t>(trial % 4), n = 2 + static_cast<std::size_t>(trial % 6);
    const TdcParameters p = make_block(store, l, n, {1, 3, 5}, rng);
    const Tensor x = random_tensor({l, n}, rng);
    const Tensor out = run_block(store, p, x);
    const auto expect = loop_tdc(x, store, p);
    for (std::size_t k = 0; k < l; ++k) worst = std::max(worst, std::abs(out.data[k] - expect[k]));

    const ModelConfig c = desk_config(Variant::crtdcm_co_only, 2 + static_cast<std::size_t>(trial % 3),
                                      3 + static_cast<std::size_t>(trial % 2), n + 1);
    const Model m = Model::create(c, static_cast<std::uint64_t>(trial));
    const VideoSample s = random_sample(c, rng);
    Tape tape;
    const BoundParameters bound = bind(tape, m.parameters(), false);
    const Tensor co = m.crtdcm_co_forward(m.inputs(tape, s), bound).value();
    const auto co_expect = loop_crco({s.sequences[0].scores, s.sequences[1].scores}, m.parameters(),
                                     *m.cross_co_block());
    for (std::size_t k = 0; k < co.numel(); ++k) worst = std::max(worst, std::abs(co.data[k] - co_expect[k]));
  }
  report(3, "oracle equivalence", worst <= 1e-10,
         "100 TDC and 100 coupled cross-type instances, max deviation " + fmt(worst));
}

Tensor permute_clips(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor y(x.shape);
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t t = 0; t < x.dim(1); ++t) y.data[c * x.dim(1) + t] = x.at(c, perm[t]);
  return y;
}

void receptive_field() {
  Rng rng(505);
  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double pointwise = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ParameterStore store;
    const TdcParameters p = make_block(store, 4, 8, {1}, rng);
    const Tensor x = random_tensor({4, 8}, rng);
    std::shuffle(perm.begin(), perm.end(), rng);
    pointwise = std::max(pointwise, max_abs_diff(run_block(store, p, x), run_block(store, p, permute_clips(x, perm))));
  }

  // A burst against one edge next to an isolated negative spike.
  ParameterStore store;
  Rng block_rng(506);
  const TdcParameters p = make_block(store, 4, 8, {1, 3, 5}, block_rng);
  Tensor planted({4, 8}, 0.0);
  for (std::size_t t = 0; t < 3; ++t) planted.data[t] = 3.0;
  planted.data[8 + 7] = -2.0;
  const Tensor base = run_block(store, p, planted);
  double wide = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    wide = std::max(wide, max_abs_diff(base, run_block(store, p, permute_clips(planted, perm))));
  }
  report(4, "receptive-field behavior", pointwise <= 1e-9 && wide > 1e-3,
         "widths [1]: max deviation " + fmt(pointwise) + " over 100 permutations; widths [1,3,5]: " +
             fmt(wide) + " on the planted input");
}

// ---------------------------------------------------------------------------
// End-to-end criteria share the synthetic datasets and trained checkpoints.

struct Experiment {
  fs::path root;
  fs::path configs;
  std::ostringstream sink;

  fs::path data_dir(std::uint64_t seed) const { return root / ("data_" + std::to_string(seed)); }

  void generate(std::uint64_t seed) {
    if (fs::exists(data_dir(seed) / "manifest.jsonl")) return;
    cli::GlobalOptions g;
    g.config = configs / "synthetic.toml";
    g.seed = seed;
    g.out = data_dir(seed);
    cli::cmd_generate(g, sink);
  }

  cli::TrainResult train(const std::string& variant, std::uint64_t seed, const fs::path& out,
                         std::vector<std::string> extra = {}) {
    generate(seed);
    cli::GlobalOptions g;
    g.config = configs / "train_tdcmn_co.toml";
    g.seed = seed;
    g.out = out;
    g.overrides = {"data.dataset=\"" + data_dir(seed).string() + "\"", "data.split_seed=" + std::to_string(seed),
                   "model.variant=\"" + variant + "\""};
    g.overrides.insert(g.overrides.end(), extra.begin(), extra.end());
    return cli::cmd_train(g, sink);
  }
};

double final_map(const cli::TrainResult& r) { return *r.log.back().test_map; }

void synthetic_ordering(Experiment& ex) {
  const auto t0 = Clock::now();
  const std::vector<std::string> variants{"baseline", "tdcmn-si", "tdcmn-co"};
  std::vector<double> mean(3, 0.0);
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (std::size_t v = 0; v < 3; ++v) {
      const auto r = ex.train(variants[v], seed, ex.root / ("run_" + variants[v] + "_" + std::to_string(seed)));
      mean[v] += final_map(r) / 3.0;
      per_seed += " " + variants[v] + "@" + std::to_string(seed) + "=" + fmt(final_map(r), "%.4f");
    }
  }
  const double secs = seconds_since(t0);
  info("criterion 5 per-run test mAP:" + per_seed);
  const bool ok = mean[2] >= mean[1] && mean[1] >= mean[0] && mean[2] - mean[0] >= 0.05 && secs < 600.0;
  report(5, "synthetic-task ordering", ok,
         "mean test mAP over seeds 0-2 after 40 epochs: baseline " + fmt(mean[0], "%.4f") + ", tdcmn-si " +
             fmt(mean[1], "%.4f") + ", tdcmn-co " + fmt(mean[2], "%.4f") + ", " + fmt(secs, "%.0f") + " s");

  // The unscaled initial rate, reported but not gated.
  const auto base = ex.train("baseline", 0, ex.root / "lr05_baseline", {"train.lr0=0.5"});
  const auto co = ex.train("tdcmn-co", 0, ex.root / "lr05_co", {"train.lr0=0.5"});
  info("criterion 5 with lr0 = 0.5, seed 0: baseline " + fmt(final_map(base), "%.4f") + ", tdcmn-co " +
       fmt(final_map(co), "%.4f"));
}

double ap_by_enumeration(const std::vector<double>& scores, const std::vector<bool>& pos) {
  // Each positive's precision at its own rank, summed in rank order.
  std::vector<std::pair<std::size_t, double>> terms;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!pos[i]) continue;
    std::size_t rank = 1, hits = 1;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (scores[j] > scores[i]) {
        ++rank;
        if (pos[j]) ++hits;
      }
    }
    terms.emplace_back(rank, static_cast<double>(hits) / static_cast<double>(rank));
  }
  std::sort(terms.begin(), terms.end());
  double sum = 0.0;
  for (const auto& [rank, p] : terms) sum += p;
  return sum / static_cast<double>(terms.size());
}

void ap_oracle() {
  Rng rng(606);
  std::size_t vectors = 0, mismatches = 0;
  for (std::size_t n = 1; n <= 8; ++n) {
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      std::vector<double> scores(n);
      std::vector<bool> pos(n);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        scores[i] = u(rng) + static_cast<double>(i) * 1e-9;  // distinct
        pos[i] = (mask >> i) & 1u;
      }
      ++vectors;
      const auto ap = average_precision(scores, pos);
      if (mask == 0) {
        mismatches += ap.has_value();
      } else if (!ap || *ap != ap_by_enumeration(scores, pos)) {
        ++mismatches;
      }
    }
  }
  report(6, "AP oracle", mismatches == 0,
         std::to_string(vectors) + " relevance vectors of length 1-8, " + std::to_string(mismatches) +
             " mismatches under exact equality");
}

void determinism(Experiment& ex) {
  const std::vector<std::string> shrink{"train.max_epochs=3"};
  ex.train("tdcmn-co", 1, ex.root / "det_a", shrink);
  ex.train("tdcmn-co", 1, ex.root / "det_b", shrink);
  bool same = true;
  std::string diff;
  for (const char* f : {"log.jsonl", "best.ckpt.json", "final.ckpt.json"}) {
    if (tdcmn::detail::read_file(ex.root / "det_a" / f) != tdcmn::detail::read_file(ex.root / "det_b" / f)) {
      same = false;
      diff += std::string(" ") + f;
    }
  }
  // The resolved configs differ only in run.out.
  auto resolved = [&](const char* run) {
    KeyValueConfig c = load_config_file(ex.root / run / "config.resolved.toml");
    c.set("run.out", "\"\"");
    return c.to_string();
  };
  if (resolved("det_a") != resolved("det_b")) {
    same = false;
    diff += " config.resolved.toml";
  }
  report(7, "determinism", same,
         same ? "two cmd_train runs produced byte-identical checkpoints and logs"
              : "files differ:" + diff);
}

// diff for (class, type, channel) indexed by width pair, from differences_<m>.csv
std::map<std::string, std::vector<double>> read_differences(const fs::path& csv, const std::string& type,
                                                            std::size_t channel) {
  std::map<std::string, std::vector<double>> by_class;
  std::istringstream in(tdcmn::detail::read_file(csv));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::istringstream fields(line);
    for (std::string s; std::getline(fields, s, ',');) f.push_back(s);
    if (f.size() != 6 || f[1] != type || std::stoul(f[2]) != channel) continue;
    by_class[f[0]].push_back(std::stod(f[5]));
  }
  return by_class;
}

void coefficient_inspection(Experiment& ex) {
  // Planted scene channel 0; class 0 is the burst, class 1 the sustained pattern.
  std::size_t separated = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const fs::path run = ex.root / ("run_tdcmn-co_" + std::to_string(seed));
    const fs::path out = ex.root / ("inspect_" + std::to_string(seed));
    cli::GlobalOptions g;
    g.out = out;
    cli::cmd_inspect(run / "final.ckpt.json", std::nullopt, std::string("intra"), g, ex.sink);
    const auto diffs = read_differences(out / "differences_intra.csv", "scene", 0);
    const auto& burst = diffs.at("0");
    const auto& sustained = diffs.at("1");
    bool opposite = false;
    std::string pairs;
    for (std::size_t k = 0; k < burst.size(); ++k) {
      opposite = opposite || burst[k] * sustained[k] < 0.0;
      pairs += (k ? "; " : "") + fmt(burst[k], "%+.3g") + " vs " + fmt(sustained[k], "%+.3g");
    }
    separated += opposite;
    detail += " seed " + std::to_string(seed) + (opposite ? " separated" : " not separated") + " (" + pairs + ")";
  }
  report(8, "coefficient inspection", separated >= 2,
         std::to_string(separated) + "/3 seeds show opposite-sign width differences on scene channel 0;" + detail);
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path source = argc > 1 ? fs::path(argv[1]) : fs::path(TDCMN_SOURCE_DIR);
  auto guarded = [](int id, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::exception& e) {
      report(id, "aborted", false, e.what());
    }
  };
  guarded(1, gradient_correctness);
  guarded(2, stochasticity);
  guarded(3, oracle_equivalence);
  guarded(4, receptive_field);
  guarded(6, ap_oracle);

  TempDir dir("acceptance");
  Experiment ex;
  ex.root = dir.path();
  ex.configs = source / "configs";
  guarded(5, [&] { synthetic_ordering(ex); });
  guarded(7, [&] { determinism(ex); });
  guarded(8, [&] { coefficient_inspection(ex); });

  std::printf("%s: %d criterion failure(s)\n", failures ? "FAILED" : "PASSED", failures);
  return failures ? 1 : 0;
}
