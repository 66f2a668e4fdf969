// Acceptance harness: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--only 1,2,...] [--work DIR]

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "seqmetric/run.hpp"
#include "seqmetric/synthetic.hpp"

using namespace seqmetric;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---- 1: full-pipeline gradients -------------------------------------------

Outcome gradient_check() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g;
  std::vector<MotionSequence> seqs;
  for (int cls = 0; cls < 3; ++cls) {
    for (int k = 0; k < 4; ++k) {
      MotionSequence s;
      s.frames = Array(3 + rng() % 4, 3);
      for (double& v : s.frames.values()) v = g(rng);
      s.category = "class" + std::to_string(cls);
      s.source_id = s.category + "/" + std::to_string(k);
      seqs.push_back(std::move(s));
    }
  }
  const Dataset data(seqs);
  const std::size_t P = 2, M = 2;
  const Episode ep = sample_episode(data, P, M, rng);
  std::vector<const MotionSequence*> batch;
  for (std::size_t i : ep.flatten()) batch.push_back(&data.sequences()[i]);

  EncoderConfig c;
  c.input_dim = 3;
  c.hidden = 4;
  c.embedding = 4;
  c.attention_width = 3;
  c.head_width = 8;
  double worst = 0.0;
  std::string worst_name;
  for (LossKind kind : {LossKind::MmdNca, LossKind::Triplet, LossKind::Contrastive, LossKind::Nca, LossKind::NPair}) {
    for (bool ln : {true, false}) {
      EncoderConfig cc = c;
      cc.layer_norm_enabled = ln;
      EncoderParams p = init_params(cc, rng);
      // Move away from the near-zero init so every path carries gradient.
      std::normal_distribution<double> jitter(0.0, 0.4);
      for (auto& e : p.entries())
        for (double& v : e.tensor.mutable_value().values()) v += jitter(rng);
      const Array mask = make_dropout_mask(cc, rng);
      LossConfig lc;
      lc.kind = kind;
      if (lc.needs_margin()) lc.margin = 1.0;
      std::vector<Tensor> ts = p.tensors();
      const double err = finite_difference_check(
          [&]() {
            const EmbedOutput out = embed_batch(batch, p, cc, EncodeMode::Train, &mask);
            return episode_loss(out.embeddings, P, M, lc);
          },
          ts, 1e-6);
      if (err > worst || worst_name.empty()) {
        worst = err;
        worst_name = to_string(kind) + (ln ? "+ln" : "");
      }
    }
  }
  return {worst < 1e-4, fmt("max relative error %.3g (worst %s) over 5 losses x layer norm on/off", worst,
                            worst_name.c_str())};
}

// ---- 2: MMD axioms -----------------------------------------------------------

double direct_mmd2(const Array& x, const Array& y, const std::vector<double>& sigmas) {
  auto k = [&](const Array& a, std::size_t i, const Array& b, std::size_t j) {
    double d = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) d += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
    double s = 0.0;
    for (double sg : sigmas) s += std::exp(-d / (2.0 * sg * sg));
    return s;
  };
  const double m = static_cast<double>(x.rows()), n = static_cast<double>(y.rows());
  double xx = 0.0, xy = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.rows(); ++j) xx += k(x, i, x, j);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < y.rows(); ++j) xy += k(x, i, y, j);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.rows(); ++j) yy += k(y, i, y, j);
  return xx / (m * m) - 2.0 * xy / (m * n) + yy / (n * n);
}

Outcome mmd_axioms() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  const KernelSpec spec;
  double min_val = std::numeric_limits<double>::infinity(), asym = 0.0, self = 0.0, oracle = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 1 + rng() % 8;
    const double spread = 0.1 + 0.02 * trial;
    Array x(1 + rng() % 10, d), y(1 + rng() % 10, d);
    for (double& v : x.values()) v = spread * g(rng);
    for (double& v : y.values()) v = g(rng);
    if (trial % 5 == 0) {
      // Near-duplicate sets push the value toward zero.
      y = x;
      for (double& v : y.values()) v += 1e-5 * g(rng);
    }
    const double v = mmd_squared(x, y, spec);
    min_val = std::min(min_val, v);
    asym = std::max(asym, std::abs(v - mmd_squared(y, x, spec)));
    self = std::max(self, std::abs(mmd_squared(x, x, spec)));
    oracle = std::max(oracle, std::abs(v - direct_mmd2(x, y, spec.bandwidths)));
  }
  const bool ok = min_val >= -1e-12 && asym <= 1e-12 && self < 1e-12 && oracle <= 1e-12;
  return {ok, fmt("500 pairs: min %.3g, max asymmetry %.3g, max |mmd(X,X)| %.3g, max oracle gap %.3g", min_val, asym,
                  self, oracle)};
}

// ---- 3: DTW vs exhaustive enumeration ---------------------------------------

double enumerate_paths(const MotionSequence& x, const MotionSequence& y, LocalCost cost) {
  const std::size_t n = x.length(), m = y.length();
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
    acc += local_cost(x.frames, i, y.frames, j, cost);
    if (i == n - 1 && j == m - 1) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < n) walk(i + 1, j, acc);
    if (j + 1 < m) walk(i, j + 1, acc);
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

MotionSequence seq_of(std::initializer_list<double> v) {
  MotionSequence s;
  s.frames = Array(v.size(), 1, std::vector<double>(v));
  return s;
}

Outcome dtw_oracle() {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g;
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 6, m = 1 + rng() % 6, d = 1 + rng() % 3;
    MotionSequence x, y;
    x.frames = Array(n, d);
    y.frames = Array(m, d);
    for (double& v : x.frames.values()) v = g(rng);
    for (double& v : y.frames.values()) v = g(rng);
    if (dtw_distance(x, y).distance != enumerate_paths(x, y, LocalCost::Euclidean)) ++mismatches;
  }
  const double ex = dtw_distance(seq_of({0, 1, 2}), seq_of({0, 1, 1, 2}), LocalCost::Manhattan).distance;
  return {mismatches == 0 && ex == 0.0,
          fmt("%d/200 inexact matches; DTW([0,1,2],[0,1,1,2]) = %g", mismatches, ex)};
}

// ---- 4: FPR protocol oracle -------------------------------------------------

Outcome fpr_oracle() {
  std::mt19937_64 rng(404);
  const std::vector<double> levels{0.95, 0.90, 0.85, 0.80, 0.75, 0.70};
  int mismatches = 0, non_monotone = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back("L" + std::to_string(rng() % 4));
    labels[1] = labels[0];
    DistanceMatrix d{Array(n, n, 0.0), "oracle", {}};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double v = trial % 3 == 0 ? static_cast<double>(rng() % 5) : std::uniform_real_distribution<double>(0, 4)(rng);
        d.values(i, j) = d.values(j, i) = v;
      }
    }
    const FprResult r = fpr_at_tpr(d, labels, levels);
    for (std::size_t k = 0; k < levels.size(); ++k) {
      // Sweep every observed distance as a candidate threshold.
      double best_tau = std::numeric_limits<double>::infinity(), best_fpr = 0.0;
      for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
          const double tau = d.values(a, b);
          double tp = 0, fp = 0, np = 0, nn = 0;
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
              const bool same = labels[i] == labels[j];
              (same ? np : nn) += 1;
              if (d.values(i, j) <= tau) (same ? tp : fp) += 1;
            }
          }
          if (tp / np >= levels[k] - 1e-12 && tau < best_tau) {
            best_tau = tau;
            best_fpr = fp / nn;
          }
        }
      }
      if (r.points[k].fpr != best_fpr || r.points[k].threshold != best_tau) ++mismatches;
      if (k > 0 && r.points[k].fpr > r.points[k - 1].fpr) ++non_monotone;
    }
  }
  return {mismatches == 0 && non_monotone == 0,
          fmt("%d inexact levels, %d monotonicity violations over 100 matrices x 6 levels", mismatches,
              non_monotone)};
}

// ---- 8: schedule and clipping -----------------------------------------------

Outcome schedule_and_clipping() {
  const TrainConfig t;
  const double l0 = lr_at(0, t), l50 = lr_at(50, t), l100 = lr_at(100, t);
  const bool lr_ok =
      std::abs(l0 - 0.0001) <= 1e-12 && std::abs(l50 - 0.000096) <= 1e-12 && std::abs(l100 - 0.00009216) <= 1e-12;
  std::mt19937_64 rng(88);
  std::normal_distribution<double> g;
  std::vector<std::vector<Array>> fixtures;
  fixtures.push_back({Array(1, 1, 1e300), Array(1, 1, -1e300)});
  fixtures.push_back({Array(3, 3, 1e-300), Array(1, 1, 1e200)});
  fixtures.push_back({Array(1, 1, 25.0 + 1e-9), Array(1, 1, 0.0)});
  fixtures.push_back({Array(200, 200, 25.0 / 200.0 * (1.0 + 1e-15)), Array(1, 1, 0.0)});
  for (int k = 0; k < 500; ++k) {
    std::vector<Array> f;
    for (int j = 0; j < 2; ++j) {
      Array a(1 + rng() % 40, 1 + rng() % 40);
      const double scale = std::pow(10.0, static_cast<double>(rng() % 60) - 20.0);
      for (double& v : a.values()) v = scale * g(rng);
      f.push_back(std::move(a));
    }
    fixtures.push_back(std::move(f));
  }
  double worst = 0.0;
  for (auto& f : fixtures) {
    clip_global(f, {"a", "b"}, 25.0);
    worst = std::max(worst, global_norm(f));
  }
  return {lr_ok && worst <= 25.0 + 1e-9,
          fmt("lr(0,50,100) = %.12g, %.12g, %.12g; max post-clip norm %.15g over %zu fixtures", l0, l50, l100, worst,
              fixtures.size())};
}

// ---- 5, 6, 7, 9: synthetic benchmark -----------------------------------------

struct BenchRun {
  TrainState state;
  std::vector<EvalReport> reports;
  double train_seconds = 0.0;
  std::string dir;
};

BenchRun bench_run(const RunConfig& config, const DataSplit& data, const std::string& dir) {
  BenchRun r;
  r.dir = dir;
  fs::remove_all(dir);
  prepare_run_dir(config, dir);
  const auto t0 = Clock::now();
  run_training(config, data, dir, &r.state);
  r.train_seconds = seconds_since(t0);
  r.reports = run_evaluation(config, data, &r.state.params, dir);
  return r;
}

double fpr80(const BenchRun& r, const std::string& metric) {
  for (const auto& rep : r.reports) {
    if (rep.metric == metric) return rep.fpr_at(0.80).value();
  }
  throw std::runtime_error("no report for " + metric);
}

const EvalReport& report(const BenchRun& r, const std::string& metric) {
  for (const auto& rep : r.reports) {
    if (rep.metric == metric) return rep;
  }
  throw std::runtime_error("no report for " + metric);
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::string work = (fs::temp_directory_path() / "seqmetric_acceptance").string();
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--work DIR]\n");
      return 2;
    }
  }
  auto wanted = [&](int k) { return only.empty() || only.count(k) > 0; };
  int failures = 0;
  auto report_line = [&](int k, const Outcome& o, double sec) {
    std::printf("criterion %d: %s  %s  [%.1fs]\n", k, o.pass ? "PASS" : "FAIL", o.detail.c_str(), sec);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  };
  auto timed = [&](int k, const std::function<Outcome()>& f) {
    if (!wanted(k)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report_line(k, o, seconds_since(t0));
  };

  timed(1, [] {
    const auto t0 = Clock::now();
    Outcome o = gradient_check();
    const double sec = seconds_since(t0);
    if (sec >= 300.0) o.pass = false;
    return o;
  });
  timed(2, mmd_axioms);
  timed(3, dtw_oracle);
  timed(4, fpr_oracle);

  if (wanted(5) || wanted(6) || wanted(7) || wanted(9)) {
    const auto t0 = Clock::now();
    std::optional<BenchRun> full, triplet, no_att, repeat;
    std::string setup_error;
    RunConfig cfg;
    DataSplit data;
    try {
      cfg = load_run_config(std::string(SEQMETRIC_DATA_DIR) + "/benchmark.json");
      cfg.data.synthetic = std::string(SEQMETRIC_DATA_DIR) + "/" + fs::path(cfg.data.synthetic).filename().string();
      data = load_data(cfg);
      full = bench_run(cfg, data, work + "/mmd_nca");
      std::printf("  benchmark: %zu train / %zu test sequences, split %s, %zu updates, desk profile\n",
                  data.train.size(), data.test.size(), data.hash.c_str(), cfg.train.total_updates);
      std::printf("  mmd_nca  train %.0fs  %s\n", full->train_seconds, report(*full, "learned").table_row().c_str());
      std::printf("  dtw               %s\n", report(*full, "dtw").table_row().c_str());
      std::fflush(stdout);
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    auto need_full = [&]() -> const BenchRun& {
      if (!full) throw std::runtime_error("benchmark run failed: " + setup_error);
      return *full;
    };
    const double setup_sec = seconds_since(t0);

    timed(5, [&] {
      const BenchRun& f = need_full();
      RunConfig tc = cfg;
      tc.loss.kind = LossKind::Triplet;
      tc.loss.margin = 0.2;
      tc.eval.metrics = {"learned"};
      triplet = bench_run(tc, data, work + "/triplet");
      std::printf("  triplet  train %.0fs  %s\n", triplet->train_seconds,
                  report(*triplet, "learned").table_row().c_str());
      const EvalReport& learned = report(f, "learned");
      const double m = fpr80(f, "learned"), d = fpr80(f, "dtw"), t = fpr80(*triplet, "learned");
      const bool a = learned.nmi >= 0.80 && m <= 0.15;
      const bool b = d - m >= 0.10;
      const bool c = m <= t;
      const bool budget = cfg.train.total_updates <= 2000 && f.train_seconds < 1800.0 &&
                          triplet->train_seconds < 1800.0;
      return Outcome{a && b && c && budget,
                     fmt("(a) NMI %.3f, FPR-80 %.2f%% %s; (b) DTW FPR-80 %.2f%%, margin %.2f pts %s; (c) triplet FPR-80 "
                         "%.2f%% %s; %zu updates, %.0fs + %.0fs training",
                         learned.nmi, 100 * m, a ? "ok" : "MISS", 100 * d, 100 * (d - m), b ? "ok" : "MISS", 100 * t,
                         c ? "ok" : "MISS", cfg.train.total_updates, f.train_seconds, triplet->train_seconds)};
    });

    timed(6, [&] {
      const BenchRun& f = need_full();
      const EncoderConfig enc = resolved_encoder(cfg, data);
      const std::string cls = data.test.front().category;
      std::vector<MotionSequence> picked;
      for (const auto& s : data.test) {
        if (s.category == cls && picked.size() < 20) picked.push_back(s);
      }
      double mass = 0.0;
      for (const auto& sc : attention_scores(picked, f.state.params, enc)) mass += middle_third_mass(sc);
      mass /= static_cast<double>(picked.size());
      double all = 0.0;
      const auto every = attention_scores(data.test, f.state.params, enc);
      for (const auto& sc : every) all += middle_third_mass(sc);
      all /= static_cast<double>(every.size());
      return Outcome{picked.size() == 20 && mass >= 0.50,
                     fmt("unseen class %s: mean middle-third attention mass %.3f over %zu sequences (all test "
                         "classes %.3f; uniform would be about 0.33)",
                         cls.c_str(), mass, picked.size(), all)};
    });

    timed(7, [&] {
      const BenchRun& f = need_full();
      RunConfig nc = cfg;
      nc.encoder.attention_enabled = false;
      nc.eval.metrics = {"learned"};
      no_att = bench_run(nc, data, work + "/no_attention");
      std::printf("  no-att   train %.0fs  %s\n", no_att->train_seconds, report(*no_att, "learned").table_row().c_str());
      const double m = fpr80(f, "learned"), n = fpr80(*no_att, "learned");
      return Outcome{n - m >= 0.03, fmt("without attention FPR-80 %.2f%% vs full %.2f%% (gap %.2f pts, need >= 3)",
                                        100 * n, 100 * m, 100 * (n - m))};
    });

    timed(9, [&] {
      need_full();
      repeat = bench_run(cfg, data, work + "/mmd_nca_repeat");
      std::vector<std::string> differing;
      for (const char* name :
           {"config.json", "train_log.jsonl", "checkpoint.txt", "eval_learned.json", "eval_dtw.json"}) {
        const std::string a = read_file(full->dir + "/" + name), b = read_file(repeat->dir + "/" + name);
        if (a != b) differing.push_back(name);
      }
      std::string list;
      for (const auto& s : differing) list += " " + s;
      return Outcome{differing.empty(), differing.empty()
                                            ? std::string("config, log, checkpoint and both EvalReports byte-identical")
                                            : "differing:" + list};
    });
    std::printf("  benchmark setup %.0fs\n", setup_sec);
  }

  timed(8, schedule_and_clipping);
  std::printf("%s\n", failures == 0 ? "ALL CRITERIA PASS" : fmt("%d CRITERIA FAILED", failures).c_str());
  return failures == 0 ? 0 : 1;
}
