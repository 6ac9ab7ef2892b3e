#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "dricl/objective.hpp"

namespace dricl {

enum class OptimizerKind { adam, sgd };
enum class Precision { f32, f64 };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);
std::string_view to_string(Precision p);
Precision parse_precision(std::string_view text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.0;      // sgd only
  double weight_decay = 0.0;  // decoupled

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct TrainConfig {
  DrIclConfig dricl;
  OptimizerConfig optimizer;
  int iterations = 1;  // passes over the corpus (T)
  int batch_size = 1;
  Precision precision = Precision::f64;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // steps; 0 disables

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct StepLog {
  std::size_t step = 0;
  std::size_t sequence_id = 0;
  std::size_t K = 0;
  std::vector<double> many_losses;
  std::vector<double> zero_losses;
  std::vector<AdvantageRecord> advantages;
  double many_shot_loss = 0.0;
  double zero_shot_loss = 0.0;
  double l_diff = 0.0;
};

struct EpochSummary {
  int iteration = 0;
  double mean_l_diff = 0.0;
  double mean_many_shot = 0.0;  // unweighted mean of per-k many-shot losses
  double mean_zero_shot = 0.0;
};

struct TrainLog {
  std::vector<StepLog> steps;
  std::vector<EpochSummary> epochs;
};

/// Adam or SGD(+momentum) with decoupled weight decay, over every tensor.
template <typename Scalar>
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, const ModelParams<Scalar>& like);
  void step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads);
  [[nodiscard]] long steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  ModelParams<Scalar> m_, v_;
  long t_ = 0;
};

/// Forward both contexts, build the objective, and return the gradient of
/// L (advantages frozen) together with the step's log entry.
template <typename Scalar>
std::pair<ModelParams<Scalar>, StepLog> sequence_gradient(const ModelParams<Scalar>& params, const PackedSequence& seq,
                                                          std::size_t sequence_id, const DrIclConfig& cfg);

/// One optimizer update on one sequence.
template <typename Scalar>
StepLog train_step(ModelParams<Scalar>& params, Optimizer<Scalar>& opt, const PackedSequence& seq,
                   std::size_t sequence_id, const DrIclConfig& cfg);

template <typename Scalar>
struct TrainResult {
  ModelParams<Scalar> params;
  TrainLog log;
};

/// Called after every `checkpoint_every` optimizer steps.
template <typename Scalar>
using CheckpointHook = std::function<void(std::size_t step, const ModelParams<Scalar>&)>;

/// Runs T passes over the corpus in order. Throws NonFiniteError naming the
/// step and sequence when a loss or gradient stops being finite.
template <typename Scalar>
TrainResult<Scalar> train(const TrainConfig& cfg, const std::vector<PackedSequence>& corpus,
                          ModelParams<Scalar> init, const CheckpointHook<Scalar>& hook = {});

// TrainLog file: a config header record, one record per step, one per epoch.
void write_train_log_header(std::ostream& out, const TrainConfig& cfg);
void write_step_record(std::ostream& out, const StepLog& s);
void write_epoch_record(std::ostream& out, const EpochSummary& e);
void write_train_log(const std::filesystem::path& path, const TrainConfig& cfg, const TrainLog& log);
TrainLog read_train_log(const std::filesystem::path& path, TrainConfig* cfg = nullptr);

}  // namespace dricl
