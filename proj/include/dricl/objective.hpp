#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "dricl/model.hpp"

namespace dricl {

/// dricl: reweighted many-shot plus zero-shot, combined with alpha.
/// metaicl: plain many-shot mean. it: plain zero-shot mean.
enum class TrainMode { dricl, metaicl, it };

std::string_view to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view text);

struct DrIclConfig {
  double alpha = 0.2;
  double gamma = 11.0;  // nats
  int window_size = 10;
  int sample_size = 1;
  double reward_clip = 55.0;  // nats
  TrainMode mode = TrainMode::dricl;
  /// false keeps the differentiated objective but forces every advantage to 1.
  bool reweight = true;

  void validate() const;
  friend bool operator==(const DrIclConfig&, const DrIclConfig&) = default;
};

struct AdvantageRecord {
  std::size_t k = 0;       // 1-based demonstration index
  std::size_t window = 0;  // 0-based reweighting window
  std::vector<std::size_t> sampled_indices;  // 1-based, ascending
  double sampling_loss = 0.0;
  double reward = 0.0;
  double advantage = 1.0;

  friend bool operator==(const AdvantageRecord&, const AdvantageRecord&) = default;
};

/// Fitted target density over the sampling window and per-demonstration
/// weights p(L_i)/q(L_i). p is a Gaussian with the window's mean and
/// population standard deviation; q is uniform over the window's loss range.
struct ImportanceModel {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<std::size_t> indices;  // 1-based demonstrations of the sampling window
  std::vector<double> weights;
};

/// Relative width within which two importance weights count as tied.
inline constexpr double kWeightTieTolerance = 1e-12;
/// Below this standard deviation every weight in the window is equal.
inline constexpr double kDegenerateStddev = 1e-12;

/// 0-based reweighting window of the 1-based demonstration k.
std::size_t window_index(std::size_t k, std::size_t window_size);

/// Importance model for reweighting window w >= 1, fitted on window w-1.
ImportanceModel importance_weights(const LossTrace& trace, std::size_t w, const DrIclConfig& cfg);

/// The min(S, window) highest weights; ties go to the lowest index. Returned ascending.
std::vector<std::size_t> select_samples(const ImportanceModel& model, std::size_t sample_size);

double sampling_loss(const LossTrace& trace, const std::vector<std::size_t>& sampled_indices);

inline double reward(double loss_k, double loss_sampling) { return loss_k - loss_sampling; }

/// exp(clip(R, +-reward_clip) / gamma).
double advantage(double reward, const DrIclConfig& cfg);

/// Advantage records for every demonstration (neutral, A = 1, in window 0).
std::vector<AdvantageRecord> compute_advantages(const LossTrace& many, const DrIclConfig& cfg);

/// (1/K) sum_k L[k] A[k]; the advantages enter as constant weights.
LossNode reweighted_many_shot_loss(const LossTrace& trace, const std::vector<double>& advantages);
/// (1/K) sum_k L[k] over a zero-shot trace.
LossNode mean_zero_shot_loss(const LossTrace& trace);

double differentiated_loss(double many, double zero, double alpha);
LossNode differentiated_loss(const LossNode& many, const LossNode& zero, double alpha);

struct SequenceObjective {
  LossNode loss;  // L_diff in dricl mode
  std::vector<AdvantageRecord> records;
  double many_shot_loss = 0.0;  // reweighted mean (dricl) or plain mean
  double zero_shot_loss = 0.0;  // plain mean
};

SequenceObjective compute_sequence_objective(const LossTrace& many, const LossTrace& zero, const DrIclConfig& cfg);

// ---------------------------------------------------------------------------
// Advantage audit log: a config header line, then one line per (sequence, k)
// with the record fields plus the demonstration's many-shot loss.
// ---------------------------------------------------------------------------

struct AuditEntry {
  std::size_t sequence_id = 0;
  double many_loss = 0.0;
  AdvantageRecord record;
};

struct AuditLog {
  DrIclConfig config;
  std::vector<AuditEntry> entries;
};

void write_audit_header(std::ostream& out, const DrIclConfig& cfg);
void write_audit_records(std::ostream& out, const LossTrace& many, const std::vector<AdvantageRecord>& records);
AuditLog read_audit_log(const std::filesystem::path& path);

}  // namespace dricl
