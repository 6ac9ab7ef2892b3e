#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dricl/objective.hpp"

namespace dricl {

struct SuiteResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  std::optional<std::uint64_t> failing_seed;
  std::string detail;
  double seconds = 0.0;
};

using AdvantageEngine = std::function<std::vector<AdvantageRecord>(const LossTrace&, const DrIclConfig&)>;

/// compute_advantages with a deliberate defect, for exercising the checks.
/// Known faults: "missing-clip", "gamma-ignored", "stale-window".
AdvantageEngine faulty_advantage_engine(const std::string& fault);

struct ReplaySuiteOptions {
  std::size_t fixtures = 1000;
  std::uint64_t seed = 0;
  double tolerance = 1e-12;
};

/// Engine advantage records against the oracle replay on seeded fixtures.
SuiteResult run_replay_suite(const ReplaySuiteOptions& opts = {}, const AdvantageEngine& engine = nullptr);

struct MaskSuiteOptions {
  std::size_t sequences = 200;
  std::uint64_t seed = 0;
  double tolerance = 1e-9;
};

/// Zero-shot losses from one pcw-parallel pass against standalone
/// instruction + demonstration passes; a sample of sequences is also
/// recomputed with the naive forward pass under both masks.
SuiteResult run_mask_suite(const MaskSuiteOptions& opts = {});

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  double step = 1e-4;
  double tolerance = 1e-6;
};

/// Autodiff gradient of L_diff (advantages frozen) against central finite
/// differences on a model of at most 5,000 parameters.
SuiteResult run_gradcheck_suite(const GradSuiteOptions& opts = {});

std::string format_suite(const SuiteResult& r);

}  // namespace dricl
