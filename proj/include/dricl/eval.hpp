#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dricl/model.hpp"
#include "dricl/trainer.hpp"

namespace dricl {

struct KShotResult {
  int k = 0;
  std::size_t matches = 0;
  std::size_t n = 0;
  double accuracy = 0.0;
  bool skipped = false;  // demonstrations did not fit the budget
  std::string note;
};

/// AVG, MAX and the population variance cover the evaluated (non-skipped) rows.
struct EvalReport {
  std::string task_id;
  std::vector<KShotResult> rows;
  double avg = 0.0;
  double max = 0.0;
  double variance = 0.0;

  [[nodiscard]] std::vector<double> accuracies() const;
};

struct SweepOptions {
  std::vector<int> k_grid = {0, 1, 3, 5, 10, 20};
  std::size_t n_per_k = 100;
  std::uint64_t seed = 0;
  std::size_t budget = 8000;
  /// 0: longest label in the two pools. Unconstrained decoding only.
  std::size_t max_label_len = 0;
  /// Decode only continuations of labels seen in the two pools.
  bool constrain_to_labels = true;
};

/// Per k: n test queries, each packed after k train demonstrations with its
/// label withheld, greedily decoded and exact-matched against the gold label.
template <typename Scalar>
EvalReport kshot_sweep(const ModelParams<Scalar>& params, const Vocabulary& vocab, const TaskPool& test_pool,
                       const TaskPool& train_pool, const SweepOptions& opts);

/// Recomputes AVG/MAX/variance from rows.
void summarize(EvalReport& report);

/// Population variance (divide by N); needs at least two values.
double performance_variance(std::span<const double> values);

/// Splits the log's steps into n_buckets equal progress buckets and returns
/// the population variance of every per-k many-shot loss in each bucket.
std::vector<double> loss_variance_by_progress(const TrainLog& log, std::size_t n_buckets);

enum class ReportFormat { csv, table };

/// csv: "k,accuracy", one row per evaluated k, then AVG, MAX, VAR rows.
/// An empty report is header-only.
void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);
std::string format_report(const EvalReport& report, ReportFormat format);
EvalReport parse_report_csv(const std::filesystem::path& path);

/// Side-by-side accuracy table with one column per named report.
std::string comparison_table(const std::vector<std::string>& names, const std::vector<EvalReport>& reports);

}  // namespace dricl
