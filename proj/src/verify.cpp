#include "dricl/verify.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "dricl/model.hpp"
#include "dricl/oracle.hpp"

namespace dricl {

namespace {

using Clock = std::chrono::steady_clock;

constexpr double kGradScaleFloor = 1e-3;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<AdvantageRecord> engine_records(const LossTrace& trace, const DrIclConfig& cfg) {
  return compute_advantages(trace, cfg);
}

// A small mixed-family corpus for model-level checks.
struct TinyCorpus {
  Vocabulary vocab;
  std::vector<PackedSequence> sequences;
};

TinyCorpus tiny_corpus(std::size_t count, std::uint64_t seed, std::size_t min_budget, std::size_t max_budget) {
  const TaskFamily families[] = {TaskFamily::label_permutation, TaskFamily::key_value_lookup,
                                 TaskFamily::modular_arithmetic, TaskFamily::pattern_copy};
  std::vector<TaskPool> pools;
  for (std::size_t f = 0; f < 4; ++f) {
    FamilySpec spec;
    spec.family = families[f];
    pools.push_back(generate_synthetic_tasks(spec, 40, derive_seed(seed, "pool" + std::to_string(f))));
  }
  TinyCorpus out{Vocabulary::build(pools), {}};
  std::mt19937_64 rng(derive_seed(seed, "tiny-corpus"));
  for (std::size_t i = 0; i < count; ++i) {
    const auto& pool = pools[i % pools.size()];
    const auto budget = std::uniform_int_distribution<std::size_t>(min_budget, max_budget)(rng);
    const int k = std::uniform_int_distribution<int>(1, 60)(rng);
    out.sequences.push_back(pack_sequence(pool, k, budget, out.vocab, rng()));
  }
  return out;
}

}  // namespace

AdvantageEngine faulty_advantage_engine(const std::string& fault) {
  if (fault == "missing-clip") {
    return [](const LossTrace& t, const DrIclConfig& cfg) {
      DrIclConfig c = cfg;
      c.reward_clip = std::numeric_limits<double>::infinity();
      return compute_advantages(t, c);
    };
  }
  if (fault == "gamma-ignored") {
    return [](const LossTrace& t, const DrIclConfig& cfg) {
      DrIclConfig c = cfg;
      c.gamma = 1.0;
      return compute_advantages(t, c);
    };
  }
  if (fault == "stale-window") {
    // Reuses the first sampled window's reference loss for every later window.
    return [](const LossTrace& t, const DrIclConfig& cfg) {
      auto records = compute_advantages(t, cfg);
      const AdvantageRecord* first = nullptr;
      for (auto& r : records) {
        if (r.window < 1) continue;
        if (first == nullptr) {
          first = &r;
          continue;
        }
        r.sampled_indices = first->sampled_indices;
        r.sampling_loss = first->sampling_loss;
        r.reward = t.losses[r.k - 1] - r.sampling_loss;
        r.advantage = advantage(r.reward, cfg);
      }
      return records;
    };
  }
  throw Error("unknown fault '" + fault + "' (expected missing-clip, gamma-ignored or stale-window)");
}

SuiteResult run_replay_suite(const ReplaySuiteOptions& opts, const AdvantageEngine& engine) {
  const auto t0 = Clock::now();
  const AdvantageEngine& run = engine ? engine : AdvantageEngine(engine_records);
  SuiteResult r;
  r.name = "replay";
  r.tolerance = opts.tolerance;
  for (std::size_t i = 0; i < opts.fixtures; ++i) {
    const std::uint64_t seed = opts.seed + i;
    const auto fx = oracle::make_fixture(seed);
    LossTrace trace;
    trace.losses = fx.losses;
    const double err = oracle::max_record_error(run(trace, fx.config), oracle::replay_advantages(fx));
    ++r.cases;
    if (err > r.max_error) r.max_error = err;
    if (!(err <= opts.tolerance) && !r.failing_seed) {
      r.failing_seed = seed;
      std::ostringstream d;
      d << "fixture seed " << seed << " (K=" << fx.K << ", W=" << fx.config.window_size
        << ", S=" << fx.config.sample_size << ", gamma=" << fx.config.gamma << ", clip=" << fx.config.reward_clip
        << ")";
      r.detail = d.str();
    }
  }
  r.passed = !r.failing_seed;
  r.seconds = seconds_since(t0);
  return r;
}

SuiteResult run_mask_suite(const MaskSuiteOptions& opts) {
  const auto t0 = Clock::now();
  SuiteResult r;
  r.name = "mask";
  r.tolerance = opts.tolerance;
  const auto corpus = tiny_corpus(opts.sequences, opts.seed, 24, 240);
  ModelDims dims{static_cast<int>(corpus.vocab.size()), 16, 2, 2, 256, 32};
  const auto params = init_params<double>(dims, derive_seed(opts.seed, "mask-model"));

  double naive_err = 0.0;
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
    const auto& seq = corpus.sequences[i];
    const auto zero = per_demo_nll(params, seq, ContextMode::zero_shot).losses;
    double err = 0.0;
    for (std::size_t k = 0; k < seq.K(); ++k) {
      const auto alone = per_demo_nll(params, seq.standalone(k), ContextMode::many_shot).losses;
      err = std::max(err, std::abs(zero[k] - alone.at(0)));
    }
    if (i % 10 == 0) {
      const auto many = per_demo_nll(params, seq, ContextMode::many_shot).losses;
      const auto naive_many = oracle::naive_per_demo_nll(params, seq, MaskMode::causal_full);
      const auto naive_zero = oracle::naive_per_demo_nll(params, seq, MaskMode::pcw_parallel);
      for (std::size_t k = 0; k < seq.K(); ++k) {
        naive_err = std::max({naive_err, std::abs(many[k] - naive_many[k]), std::abs(zero[k] - naive_zero[k])});
      }
      err = std::max(err, naive_err);
    }
    ++r.cases;
    r.max_error = std::max(r.max_error, err);
    if (!(err <= opts.tolerance) && !r.failing_seed) {
      r.failing_seed = opts.seed;
      r.detail = "sequence " + std::to_string(i) + " (" + seq.task_id + ", K=" + std::to_string(seq.K()) + ")";
    }
  }
  if (r.detail.empty()) {
    std::ostringstream d;
    d << "naive forward max |delta| " << naive_err;
    r.detail = d.str();
  }
  r.passed = !r.failing_seed;
  r.seconds = seconds_since(t0);
  return r;
}

SuiteResult run_gradcheck_suite(const GradSuiteOptions& opts) {
  const auto t0 = Clock::now();
  SuiteResult r;
  r.name = "gradcheck";
  r.tolerance = opts.tolerance;

  FamilySpec spec;
  const auto pool = generate_synthetic_tasks(spec, 60, derive_seed(opts.seed, "grad-pool"));
  const auto vocab = Vocabulary::build({pool});
  const ModelDims dims{static_cast<int>(vocab.size()), 12, 2, 2, 96, 16};
  const auto seq = pack_sequence(pool, 40, 96, vocab, derive_seed(opts.seed, "grad-seq"));
  const auto params = init_params<double>(dims, derive_seed(opts.seed, "grad-model"));

  DrIclConfig cfg;
  cfg.window_size = 4;
  cfg.sample_size = 2;
  cfg.gamma = 2.0;
  cfg.alpha = 0.2;

  const auto many = trace_sequence(params, seq, ContextMode::many_shot);
  const auto zero = trace_sequence(params, seq, ContextMode::zero_shot);
  const auto objective = compute_sequence_objective(many.trace, zero.trace, cfg);
  const auto analytic = grad(params, seq, objective.loss, &many, &zero);

  // Frozen weights: the loss seen by finite differences is the same linear
  // combination of per-demonstration NLLs.
  const auto& node = objective.loss;
  auto frozen = [&](const ModelParams<double>& p) {
    const auto m = per_demo_nll(p, seq, ContextMode::many_shot).losses;
    const auto z = per_demo_nll(p, seq, ContextMode::zero_shot).losses;
    double v = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) v += node.many_weights[k] * m[k] + node.zero_weights[k] * z[k];
    return v;
  };
  const auto numeric = oracle::finite_diff_grad(params, frozen, opts.step);

  const auto a = flatten(analytic);
  const auto b = flatten(numeric);
  // Components far below the gradient's scale sit at the finite-difference
  // rounding floor, so they are judged relative to that scale instead.
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  const double floor = kGradScaleFloor * scale;
  std::size_t worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor});
    if (e > r.max_error) {
      r.max_error = e;
      worst = i;
    }
  }
  r.cases = a.size();
  std::ostringstream d;
  d << a.size() << " parameters, K=" << seq.K() << ", worst component " << worst << " (autodiff " << a[worst]
    << ", numeric " << b[worst] << ")";
  r.detail = d.str();
  r.passed = r.max_error <= opts.tolerance && a.size() <= 5000;
  if (!r.passed) r.failing_seed = opts.seed;
  r.seconds = seconds_since(t0);
  return r;
}

std::string format_suite(const SuiteResult& r) {
  std::ostringstream out;
  out << (r.passed ? "PASS" : "FAIL") << "  " << r.name << "  cases=" << r.cases << "  max_error=" << r.max_error
      << "  tol=" << r.tolerance << "  " << std::fixed;
  out.precision(2);
  out << r.seconds << "s";
  if (r.failing_seed) out << "  failing seed " << *r.failing_seed;
  if (!r.detail.empty()) out << "  [" << r.detail << "]";
  return out.str();
}

}  // namespace dricl
