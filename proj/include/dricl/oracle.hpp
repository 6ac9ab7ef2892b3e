#pragma once

// Brute-force reference implementations for verification. Nothing here
// calls engine computation code; only the engine's type definitions are
// shared.

#include <cstdint>
#include <functional>
#include <vector>

#include "dricl/model.hpp"
#include "dricl/objective.hpp"

namespace dricl::oracle {

struct TraceFixture {
  std::uint64_t seed = 0;
  std::size_t K = 0;
  std::vector<double> losses;
  DrIclConfig config;
};

struct FixtureOptions {
  std::size_t max_K = 400;
  int max_window = 20;
  int max_samples = 5;
  std::vector<double> gammas = {1.0, 11.0, 100.0};
  std::vector<double> reward_clips = {2.0, 5.0, 55.0};
  double spike_rate = 0.05;  // chance a loss is multiplied by 10
};

/// Reproducible from the seed. Losses mix smooth values, rounded values
/// (exact ties), constant stretches, and occasional spikes.
TraceFixture make_fixture(std::uint64_t seed, const FixtureOptions& opts = {});

/// Loop-and-formula recomputation of every demonstration's advantage record.
std::vector<AdvantageRecord> replay_advantages(const TraceFixture& fixture);

/// Largest field-wise relative error between two record lists; +inf when an
/// integer field (k, window, sampled indices) or the length differs.
double max_record_error(const std::vector<AdvantageRecord>& a, const std::vector<AdvantageRecord>& b);

/// |a - b| / max(|a|, |b|), with 0 when both are 0.
double relative_error(double a, double b);

/// Central differences, one scalar at a time. h must lie in [1e-6, 1e-3].
std::vector<double> finite_diff_grad(const std::vector<double>& point,
                                     const std::function<double(const std::vector<double>&)>& loss, double h = 1e-4);

ModelParams<double> finite_diff_grad(const ModelParams<double>& params,
                                     const std::function<double(const ModelParams<double>&)>& loss,
                                     double h = 1e-4);

/// Unoptimized re-implementation of the transformer forward pass. Visibility
/// and positions are re-derived from mask.mode and the mask's spans.
std::vector<std::vector<double>> naive_forward(const ModelParams<double>& params, const std::vector<TokenId>& tokens,
                                               const MaskSpec& mask);

/// Per-demonstration label NLLs recomputed from naive_forward logits.
std::vector<double> naive_per_demo_nll(const ModelParams<double>& params, const PackedSequence& seq,
                                       MaskMode mode);

}  // namespace dricl::oracle
