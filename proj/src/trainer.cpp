#include "dricl/trainer.hpp"

#include <cmath>
#include <fstream>

#include "dricl/serialize.hpp"

namespace dricl {

void TrainConfig::validate() const {
  dricl.validate();
  if (iterations < 1) throw Error("iterations must be >= 1");
  if (batch_size < 1) throw Error("batch size must be >= 1");
  if (!(optimizer.learning_rate >= 0.0)) throw Error("learning rate must be >= 0");
  if (checkpoint_every < 0) throw Error("checkpoint cadence must be >= 0");
}

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

template <typename Scalar>
void accumulate(ModelParams<Scalar>& into, const ModelParams<Scalar>& g, Scalar scale) {
  std::vector<const Mat<Scalar>*> src;
  g.for_each_tensor([&](const std::string&, const Mat<Scalar>& m) { src.push_back(&m); });
  std::size_t i = 0;
  into.for_each_tensor([&](const std::string&, Mat<Scalar>& m) { m += scale * *src[i++]; });
}

}  // namespace

template <typename Scalar>
std::pair<ModelParams<Scalar>, StepLog> sequence_gradient(const ModelParams<Scalar>& params, const PackedSequence& seq,
                                                          std::size_t sequence_id, const DrIclConfig& cfg) {
  const auto many = trace_sequence(params, seq, ContextMode::many_shot, sequence_id);
  const auto zero = trace_sequence(params, seq, ContextMode::zero_shot, sequence_id);

  StepLog log;
  log.sequence_id = sequence_id;
  log.K = seq.K();
  log.many_losses = many.trace.losses;
  log.zero_losses = zero.trace.losses;
  if (!all_finite(log.many_losses) || !all_finite(log.zero_losses)) {
    throw NonFiniteError("non-finite per-demonstration loss on sequence " + std::to_string(sequence_id));
  }
  const auto objective = compute_sequence_objective(many.trace, zero.trace, cfg);
  log.advantages = objective.records;
  log.many_shot_loss = objective.many_shot_loss;
  log.zero_shot_loss = objective.zero_shot_loss;
  log.l_diff = objective.loss.value;
  if (!std::isfinite(log.l_diff)) {
    throw NonFiniteError("non-finite objective on sequence " + std::to_string(sequence_id));
  }
  auto g = grad(params, seq, objective.loss, &many, &zero);
  if (!g.all_finite()) throw NonFiniteError("non-finite gradient on sequence " + std::to_string(sequence_id));
  return {std::move(g), std::move(log)};
}

template <typename Scalar>
StepLog train_step(ModelParams<Scalar>& params, Optimizer<Scalar>& opt, const PackedSequence& seq,
                   std::size_t sequence_id, const DrIclConfig& cfg) {
  auto [g, log] = sequence_gradient(params, seq, sequence_id, cfg);
  opt.step(params, g);
  return log;
}

template <typename Scalar>
TrainResult<Scalar> train(const TrainConfig& cfg, const std::vector<PackedSequence>& corpus, ModelParams<Scalar> init,
                          const CheckpointHook<Scalar>& hook) {
  cfg.validate();
  if (corpus.empty()) throw Error("corpus is empty");

  TrainResult<Scalar> result{std::move(init), {}};
  auto& params = result.params;
  Optimizer<Scalar> opt(cfg.optimizer, params);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::size_t step = 0;

  for (int it = 0; it < cfg.iterations; ++it) {
    EpochSummary epoch;
    epoch.iteration = it;
    double sum_many = 0.0, sum_zero = 0.0;
    std::size_t count_k = 0;
    for (std::size_t start = 0; start < corpus.size(); start += batch) {
      const std::size_t end = std::min(corpus.size(), start + batch);
      ModelParams<Scalar> total = zero_params<Scalar>(params.dims);
      for (std::size_t i = start; i < end; ++i) {
        try {
          auto [g, log] = sequence_gradient(params, corpus[i], i, cfg.dricl);
          accumulate(total, g, static_cast<Scalar>(1.0 / static_cast<double>(end - start)));
          log.step = step++;
          epoch.mean_l_diff += log.l_diff;
          for (std::size_t k = 0; k < log.K; ++k) {
            sum_many += log.many_losses[k];
            sum_zero += log.zero_losses[k];
          }
          count_k += log.K;
          result.log.steps.push_back(std::move(log));
        } catch (const NonFiniteError& e) {
          throw NonFiniteError(std::string(e.what()) + " at step " + std::to_string(step) + " (iteration " +
                               std::to_string(it) + ")");
        }
      }
      opt.step(params, total);
      if (!params.all_finite()) {
        throw NonFiniteError("parameters became non-finite at step " + std::to_string(step) + " (sequence " +
                             std::to_string(end - 1) + ")");
      }
      if (hook && cfg.checkpoint_every > 0 && opt.steps_taken() % cfg.checkpoint_every == 0) {
        hook(static_cast<std::size_t>(opt.steps_taken()), params);
      }
    }
    epoch.mean_l_diff /= static_cast<double>(corpus.size());
    epoch.mean_many_shot = sum_many / static_cast<double>(count_k);
    epoch.mean_zero_shot = sum_zero / static_cast<double>(count_k);
    result.log.epochs.push_back(epoch);
  }
  return result;
}

template std::pair<ModelParams<float>, StepLog> sequence_gradient(const ModelParams<float>&, const PackedSequence&,
                                                                  std::size_t, const DrIclConfig&);
template std::pair<ModelParams<double>, StepLog> sequence_gradient(const ModelParams<double>&, const PackedSequence&,
                                                                   std::size_t, const DrIclConfig&);
template StepLog train_step(ModelParams<float>&, Optimizer<float>&, const PackedSequence&, std::size_t,
                            const DrIclConfig&);
template StepLog train_step(ModelParams<double>&, Optimizer<double>&, const PackedSequence&, std::size_t,
                            const DrIclConfig&);
template TrainResult<float> train(const TrainConfig&, const std::vector<PackedSequence>&, ModelParams<float>,
                                  const CheckpointHook<float>&);
template TrainResult<double> train(const TrainConfig&, const std::vector<PackedSequence>&, ModelParams<double>,
                                   const CheckpointHook<double>&);

// ---------------------------------------------------------------------------

void write_train_log_header(std::ostream& out, const TrainConfig& cfg) {
  out << nlohmann::json({{"type", "config"}, {"train", cfg}}).dump() << '\n';
}

void write_step_record(std::ostream& out, const StepLog& s) {
  nlohmann::json j = s;
  j["type"] = "step";
  out << j.dump() << '\n';
}

void write_epoch_record(std::ostream& out, const EpochSummary& e) {
  nlohmann::json j = e;
  j["type"] = "epoch";
  out << j.dump() << '\n';
}

void write_train_log(const std::filesystem::path& path, const TrainConfig& cfg, const TrainLog& log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_train_log_header(out, cfg);
  for (const auto& s : log.steps) write_step_record(out, s);
  for (const auto& e : log.epochs) write_epoch_record(out, e);
  if (!out) throw Error("write failed: " + path.string());
}

TrainLog read_train_log(const std::filesystem::path& path, TrainConfig* cfg) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  TrainLog log;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      const auto type = j.at("type").get<std::string>();
      if (type == "config") {
        if (cfg != nullptr) *cfg = j.at("train").get<TrainConfig>();
      } else if (type == "step") {
        log.steps.push_back(j.get<StepLog>());
      } else if (type == "epoch") {
        log.epochs.push_back(j.get<EpochSummary>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error("train log line " + std::to_string(line) + ": " + e.what());
    }
  }
  return log;
}

}  // namespace dricl
