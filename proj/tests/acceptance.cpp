// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dricl/checkpoint.hpp"
#include "dricl/experiment.hpp"
#include "dricl/oracle.hpp"
#include "dricl/verify.hpp"

using namespace dricl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v, const char* f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + fmt(f, v[i]);
  return out;
}

// Seeds where a[i] <= b[i]; reported alongside the medians, not judged.
int paired_count(const std::vector<double>& a, const std::vector<double>& b) {
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] <= b[i] ? 1 : 0;
  return n;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("dricl-acceptance-" + std::to_string(std::random_device{}()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  fs::path path_;
};

Verdict suite_verdict(int id, const std::string& title, const SuiteResult& r, double limit_seconds) {
  const bool fast = r.seconds < limit_seconds;
  return {id, title, r.passed && fast,
          fmt("max error %.3g (tol %.0e) over %zu cases, %.2f s (limit %.0f s)", r.max_error, r.tolerance, r.cases,
              r.seconds, limit_seconds) +
              (r.detail.empty() ? "" : "; " + r.detail)};
}

// Small model and packed sequence for the reduction identities.
struct Tiny {
  Vocabulary vocab;
  PackedSequence seq;
  ModelParams<double> params;
};

Tiny tiny(int k, std::uint64_t seed) {
  FamilySpec spec;
  const auto pool = generate_synthetic_tasks(spec, 40, seed);
  Tiny t;
  t.vocab = Vocabulary::build({pool});
  t.seq = pack_sequence(pool, k, 128, t.vocab, seed);
  t.params = init_params<double>({static_cast<int>(t.vocab.size()), 16, 2, 2, 128, 32}, seed);
  return t;
}

Verdict reductions() {
  std::string detail;
  bool ok = true;

  // (a) metaicl loss against the mean of independently recomputed NLLs.
  double worst_a = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t = tiny(12, seed);
    DrIclConfig c;
    c.mode = TrainMode::metaicl;
    c.window_size = 3;
    const auto log = sequence_gradient(t.params, t.seq, 0, c).second;
    const auto nll = oracle::naive_per_demo_nll(t.params, t.seq, MaskMode::causal_full);
    double mean = 0.0;
    for (double v : nll) mean += v;
    mean /= static_cast<double>(nll.size());
    worst_a = std::max(worst_a, std::abs(log.l_diff - mean));
  }
  ok = ok && worst_a <= 1e-10;
  detail += fmt("(a) |L_metaicl - mean NLL| %.2e (tol 1e-10)", worst_a);

  // (b) one SGD step: dricl displacement against metaicl + it displacements.
  double worst_b = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t = tiny(8, seed);
    OptimizerConfig oc;
    oc.kind = OptimizerKind::sgd;
    oc.learning_rate = 0.05;
    auto step = [&](TrainMode mode) {
      DrIclConfig c;
      c.mode = mode;
      c.alpha = 0.0;
      c.window_size = 10;
      auto p = t.params;
      Optimizer<double> opt(oc, p);
      train_step(p, opt, t.seq, 0, c);
      auto d = flatten(p);
      const auto p0 = flatten(t.params);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= p0[i];
      return d;
    };
    const auto dd = step(TrainMode::dricl);
    const auto dm = step(TrainMode::metaicl);
    const auto di = step(TrainMode::it);
    for (std::size_t i = 0; i < dd.size(); ++i) worst_b = std::max(worst_b, std::abs(dd[i] - (dm[i] + di[i])));
  }
  ok = ok && worst_b <= 1e-9;
  detail += fmt("; (b) |step_dricl - (step_metaicl + step_it)| %.2e (tol 1e-9)", worst_b);

  // (c) gamma = 1e9 on loss traces bounded like model NLLs, losses in [0, 6].
  oracle::FixtureOptions bounded;
  bounded.spike_rate = 0.0;
  double worst_c = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto fx = oracle::make_fixture(seed, bounded);
    fx.config.gamma = 1e9;
    LossTrace trace;
    trace.losses = fx.losses;
    for (const auto& r : compute_advantages(trace, fx.config)) worst_c = std::max(worst_c, std::abs(r.advantage - 1));
  }
  ok = ok && worst_c <= 1e-8;
  detail += fmt("; (c) max|A-1| %.2e on 1000 traces with |R| <= 6 (tol 1e-8)", worst_c);
  return {5, "reduction identities", ok, detail};
}

// Trend runs: one trained model per (config, seed).
struct TrendRun {
  std::vector<double> accuracies;  // pooled over held-out tasks, per k
  double final_bucket_variance = 0.0;
  double train_seconds = 0.0;
};

RunConfig seeded(RunConfig c, std::uint64_t seed) {
  c.corpus.seed = seed;
  c.train.seed = seed;
  c.eval.seed = seed;
  return c;
}

TrendRun trend_run(const RunConfig& cfg, bool evaluate) {
  const auto t0 = Clock::now();
  const auto data = generate_dataset(cfg.corpus);
  const auto out = run_training(cfg, data.vocab, data.sequences);
  TrendRun r;
  r.train_seconds = seconds_since(t0);
  r.final_bucket_variance = loss_variance_by_progress(out.log, 5).back();
  if (evaluate) {
    const auto pooled = pooled_report(evaluate_tasks(out.model.as_double(), data.vocab, data.eval_pools, cfg.eval));
    r.accuracies = pooled.accuracies();
  }
  return r;
}

double accuracy_at(const RunConfig& cfg, const TrendRun& r, int k) {
  const auto& grid = cfg.eval.k_grid;
  const auto it = std::find(grid.begin(), grid.end(), k);
  if (it == grid.end() || r.accuracies.size() != grid.size()) throw Error("k grid lacks k=" + std::to_string(k));
  return r.accuracies[static_cast<std::size_t>(it - grid.begin())];
}

Verdict determinism() {
  RunConfig c;
  c.corpus.family.family = TaskFamily::label_permutation;
  c.corpus.tasks = 6;
  c.corpus.eval_tasks = 2;
  c.corpus.count = 40;
  c.corpus.sequences_per_task = 2;
  c.corpus.budget = 96;
  c.corpus.seed = 3;
  c.model = ModelDims{0, 16, 1, 2, 0, 32};
  c.train.seed = 3;
  c.train.iterations = 2;
  c.eval.n_per_k = 10;
  c.eval.k_grid = {0, 1, 3};
  c.eval.seed = 3;

  TempDir dir;
  std::vector<std::string> mismatches;
  auto produce = [&](const std::string& tag) {
    const auto data = generate_dataset(c.corpus);
    save_dataset(data, dir / (tag + "-data"));
    const auto out = run_training(c, data.vocab, data.sequences);
    out.model.save(data.vocab, dir / (tag + ".bin"));
    write_train_log(dir / (tag + "-log.jsonl"), c.train, out.log);
    const auto reports = evaluate_tasks(out.model.as_double(), data.vocab, data.eval_pools, c.eval);
    emit_report(pooled_report(reports), dir / (tag + "-report.csv"), ReportFormat::csv);
    return std::pair{data, out};
  };
  const auto [data_a, out_a] = produce("a");
  produce("b");
  for (const char* leaf : {"-data/tasks.jsonl", "-data/eval_tasks.jsonl", "-data/vocab.json", "-data/packed.jsonl",
                           ".bin", "-log.jsonl", "-report.csv"}) {
    if (slurp(dir / (std::string("a") + leaf)) != slurp(dir / (std::string("b") + leaf))) {
      mismatches.push_back(std::string("repeat ") + leaf);
    }
  }

  // Round-trips: data files, checkpoint, train log, report.
  const auto back = load_dataset(dir / "a-data");
  save_dataset(back, dir / "c-data");
  for (const char* leaf : {"tasks.jsonl", "eval_tasks.jsonl", "vocab.json", "packed.jsonl"}) {
    if (slurp(dir / "a-data" / leaf) != slurp(dir / "c-data" / leaf)) mismatches.push_back(std::string("data ") + leaf);
  }
  if (!(back.vocab == data_a.vocab)) mismatches.push_back("vocab");
  Vocabulary v;
  const auto params = load_checkpoint<double>(dir / "a.bin", &v);
  if (flatten(params) != flatten(out_a.model.as_double()) || !(v == data_a.vocab)) mismatches.push_back("checkpoint");
  save_checkpoint(params, v, dir / "c.bin");
  const auto params_f64 = load_checkpoint<double>(dir / "c.bin");
  if (flatten(params_f64) != flatten(params)) mismatches.push_back("checkpoint re-save");
  TrainConfig tc;
  const auto log = read_train_log(dir / "a-log.jsonl", &tc);
  write_train_log(dir / "c-log.jsonl", tc, log);
  if (!(tc == c.train) || slurp(dir / "a-log.jsonl") != slurp(dir / "c-log.jsonl")) mismatches.push_back("train log");
  emit_report(parse_report_csv(dir / "a-report.csv"), dir / "c-report.csv", ReportFormat::csv);
  if (slurp(dir / "a-report.csv") != slurp(dir / "c-report.csv")) mismatches.push_back("report");

  std::string detail = "repeat runs: corpus, checkpoint, log and report bytes; round-trips: data, checkpoint, log, report";
  if (!mismatches.empty()) {
    detail += "; mismatched:";
    for (const auto& m : mismatches) detail += " " + m;
  }
  return {9, "determinism and round-trips", mismatches.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path config_path = DRICL_TREND_CONFIG;
  int seeds = 5;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--config") {
      config_path = argv[i + 1];
    } else if (flag == "--seeds") {
      seeds = std::stoi(argv[i + 1]);
    } else {
      std::cerr << "usage: dricl_acceptance [--config trend.json] [--seeds N]\n";
      return 2;
    }
  }

  std::vector<Verdict> verdicts;
  auto report = [&](Verdict v) {
    std::cout << (v.passed ? "PASS" : "FAIL") << " criterion " << v.id << " (" << v.title << "): " << v.detail
              << std::endl;
    verdicts.push_back(std::move(v));
  };

  try {
    report(suite_verdict(1, "advantage oracle equivalence", run_replay_suite({1000, 0, 1e-12}), 10.0));
    report(suite_verdict(2, "pcw mask equivalence", run_mask_suite({200, 0, 1e-9}), 60.0));
    report(suite_verdict(3, "gradient correctness", run_gradcheck_suite({0, 1e-4, 1e-6}), 300.0));

    {
      const std::vector<double> row = {0.69, 0.72, 0.77, 0.77, 0.78, 0.76, 0.76, 0.76, 0.80, 0.76, 0.76};
      const double v = performance_variance(row);
      report({4, "variance convention", std::abs(v - 8.0e-4) <= 5e-5,
              fmt("population variance %.4e, expected 8.00e-04 +- 5e-05", v)});
    }

    report(reductions());

    const RunConfig base = load_run_config(config_path);
    base.validate();
    std::cerr << "trend config " << config_path << ": " << nlohmann::json(base).dump() << "\n";

    std::vector<double> gains, var_dricl, var_metaicl, bucket_on, bucket_off;
    double slowest = 0.0;
    for (int s = 0; s < seeds; ++s) {
      const auto seed = static_cast<std::uint64_t>(s);
      auto cfg = seeded(base, seed);
      cfg.train.dricl.mode = TrainMode::dricl;
      const auto d = trend_run(cfg, true);
      auto meta_cfg = cfg;
      meta_cfg.train.dricl.mode = TrainMode::metaicl;
      const auto m = trend_run(meta_cfg, true);
      slowest = std::max({slowest, d.train_seconds, m.train_seconds});
      gains.push_back(accuracy_at(cfg, d, 10) - accuracy_at(cfg, d, 0));
      var_dricl.push_back(performance_variance(d.accuracies));
      var_metaicl.push_back(performance_variance(m.accuracies));
      std::cerr << "seed " << s << " dricl acc [" << join(d.accuracies, "%.3f") << "] metaicl acc ["
                << join(m.accuracies, "%.3f") << "] train " << fmt("%.0f/%.0f s", d.train_seconds, m.train_seconds)
                << "\n";
    }
    report({6, "in-context gain", median(gains) >= 0.15 && slowest < 1800.0,
            fmt("median acc(k=10) - acc(k=0) %.3f (need >= 0.15); per seed [", median(gains)) + join(gains, "%.3f") +
                fmt("]; slowest training run %.0f s (limit 1800 s)", slowest)});
    report({7, "stability across k", median(var_dricl) <= median(var_metaicl),
            fmt("median accuracy variance dricl %.3e vs metaicl %.3e; dricl [", median(var_dricl),
                median(var_metaicl)) +
                join(var_dricl, "%.2e") + "] metaicl [" + join(var_metaicl, "%.2e") + "]" +
                fmt("; dricl <= metaicl in %d of %d seeds", paired_count(var_dricl, var_metaicl), seeds)});

    for (int s = 0; s < seeds; ++s) {
      auto cfg = seeded(base, static_cast<std::uint64_t>(s));
      cfg.corpus.label_noise = 0.2;
      cfg.train.dricl.mode = TrainMode::dricl;
      cfg.train.dricl.reweight = true;
      const auto on = trend_run(cfg, false);
      cfg.train.dricl.reweight = false;
      const auto off = trend_run(cfg, false);
      bucket_on.push_back(on.final_bucket_variance);
      bucket_off.push_back(off.final_bucket_variance);
      std::cerr << "seed " << s << " final-bucket loss variance on " << on.final_bucket_variance << " off "
                << off.final_bucket_variance << "\n";
    }
    report({8, "noise damping", median(bucket_on) <= median(bucket_off),
            fmt("20%% label noise, median final-bucket loss variance reweight on %.4f vs off %.4f; on [",
                median(bucket_on), median(bucket_off)) +
                join(bucket_on, "%.4f") + "] off [" + join(bucket_off, "%.4f") + "]" +
                fmt("; on <= off in %d of %d seeds", paired_count(bucket_on, bucket_off), seeds)});

    report(determinism());
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance run aborted: " << e.what() << std::endl;
    return 1;
  }

  const auto failed = std::count_if(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return !v.passed; });
  std::cout << (verdicts.size() - static_cast<std::size_t>(failed)) << "/" << verdicts.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
