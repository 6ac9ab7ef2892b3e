#pragma once

// End-to-end pipeline shared by the command-line tool and the acceptance
// runs: corpus generation, training at either precision, k-shot evaluation.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <vector>

#include "dricl/eval.hpp"
#include "dricl/trainer.hpp"

namespace dricl {

struct CorpusConfig {
  FamilySpec family;
  int count = 100;              // examples per pool
  int tasks = 20;               // training tasks
  int eval_tasks = 4;           // held-out tasks, each with a train and a test pool
  int sequences_per_task = 1;
  int k_target = 350;
  std::size_t budget = 8000;    // tokens per packed sequence
  double label_noise = 0.0;     // fraction of training labels replaced
  std::uint64_t seed = 0;

  void validate() const;
};

struct RunConfig {
  CorpusConfig corpus;
  /// vocab is always taken from the corpus vocabulary; max_positions 0
  /// means the longest training sequence.
  ModelDims model{64, 64, 2, 2, 0, 256};
  TrainConfig train;
  SweepOptions eval;

  void validate() const;
};

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);
void to_json(nlohmann::json& j, const SweepOptions& s);
void from_json(const nlohmann::json& j, SweepOptions& s);
void to_json(nlohmann::json& j, const RunConfig& c);
/// Layers j over the current value of c. Unknown sections or keys throw.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

struct Dataset {
  std::vector<TaskPool> train_pools;
  std::vector<TaskPool> eval_pools;  // train/test pairs, train first
  Vocabulary vocab;
  std::vector<PackedSequence> sequences;
};

/// Training pools (balanced, optionally label-noised), held-out evaluation
/// pools, the vocabulary over all of them, and the packed training corpus.
Dataset generate_dataset(const CorpusConfig& cfg);

/// sequences_per_task packed sequences per pool, interleaved: one sequence
/// from every pool, then the next round.
std::vector<PackedSequence> pack_corpus(const std::vector<TaskPool>& pools, const Vocabulary& vocab, int k_target,
                                        std::size_t budget, int sequences_per_task, std::uint64_t seed);

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Parameters held at the training precision.
struct TrainedModel {
  Precision precision = Precision::f64;
  ModelParams<float> f32;
  ModelParams<double> f64;

  [[nodiscard]] ModelParams<double> as_double() const;
  void save(const Vocabulary& vocab, const std::filesystem::path& path) const;
};

struct TrainOutcome {
  TrainedModel model;
  TrainLog log;
};

ModelDims effective_dims(const RunConfig& cfg, const Vocabulary& vocab, const std::vector<PackedSequence>& corpus);

/// Initializes from train.seed and runs train() at the configured precision.
TrainOutcome run_training(const RunConfig& cfg, const Vocabulary& vocab, const std::vector<PackedSequence>& corpus,
                          const std::function<void(std::size_t, const TrainedModel&)>& on_checkpoint = {});

/// Pairs each held-out task's test pool with its train pool and sweeps it.
std::vector<EvalReport> evaluate_tasks(const ModelParams<double>& params, const Vocabulary& vocab,
                                       const std::vector<TaskPool>& pools, const SweepOptions& opts);

/// Per-k accuracy averaged over tasks (skipped rows excluded), summarized.
EvalReport pooled_report(const std::vector<EvalReport>& reports, const std::string& name = "all");

}  // namespace dricl
