#include "dricl/serialize.hpp"

namespace dricl {

using nlohmann::json;

namespace {

// Missing keys keep the value already in `out`, so partial config files
// layer over defaults.
template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

}  // namespace

void to_json(json& j, const ModelDims& d) {
  j = {{"vocab", d.vocab},   {"width", d.width},
       {"layers", d.layers}, {"heads", d.heads},
       {"max_positions", d.max_positions}, {"ff_width", d.ff_width}};
}

void from_json(const json& j, ModelDims& d) {
  read_opt(j, "vocab", d.vocab);
  read_opt(j, "width", d.width);
  read_opt(j, "layers", d.layers);
  read_opt(j, "heads", d.heads);
  read_opt(j, "max_positions", d.max_positions);
  read_opt(j, "ff_width", d.ff_width);
}

void to_json(json& j, const DrIclConfig& c) {
  j = {{"alpha", c.alpha},
       {"gamma", c.gamma},
       {"window_size", c.window_size},
       {"sample_size", c.sample_size},
       {"reward_clip", c.reward_clip},
       {"mode", std::string(to_string(c.mode))},
       {"reweight", c.reweight}};
}

void from_json(const json& j, DrIclConfig& c) {
  read_opt(j, "alpha", c.alpha);
  read_opt(j, "gamma", c.gamma);
  read_opt(j, "window_size", c.window_size);
  read_opt(j, "sample_size", c.sample_size);
  read_opt(j, "reward_clip", c.reward_clip);
  if (j.contains("mode")) c.mode = parse_train_mode(j.at("mode").get<std::string>());
  read_opt(j, "reweight", c.reweight);
}

void to_json(json& j, const OptimizerConfig& c) {
  j = {{"kind", std::string(to_string(c.kind))},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay}};
}

void from_json(const json& j, OptimizerConfig& c) {
  if (j.contains("kind")) c.kind = parse_optimizer(j.at("kind").get<std::string>());
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "epsilon", c.epsilon);
  read_opt(j, "momentum", c.momentum);
  read_opt(j, "weight_decay", c.weight_decay);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"dricl", c.dricl},
       {"optimizer", c.optimizer},
       {"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"precision", std::string(to_string(c.precision))},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const json& j, TrainConfig& c) {
  read_opt(j, "dricl", c.dricl);
  read_opt(j, "optimizer", c.optimizer);
  read_opt(j, "iterations", c.iterations);
  read_opt(j, "batch_size", c.batch_size);
  if (j.contains("precision")) c.precision = parse_precision(j.at("precision").get<std::string>());
  read_opt(j, "seed", c.seed);
  read_opt(j, "checkpoint_every", c.checkpoint_every);
}

void to_json(json& j, const AdvantageRecord& r) {
  j = {{"k", r.k},
       {"window", r.window},
       {"sampled_indices", r.sampled_indices},
       {"sampling_loss", r.sampling_loss},
       {"reward", r.reward},
       {"advantage", r.advantage}};
}

void from_json(const json& j, AdvantageRecord& r) {
  j.at("k").get_to(r.k);
  j.at("window").get_to(r.window);
  j.at("sampled_indices").get_to(r.sampled_indices);
  j.at("sampling_loss").get_to(r.sampling_loss);
  j.at("reward").get_to(r.reward);
  j.at("advantage").get_to(r.advantage);
}

void to_json(json& j, const StepLog& s) {
  j = {{"step", s.step},
       {"sequence_id", s.sequence_id},
       {"K", s.K},
       {"many_losses", s.many_losses},
       {"zero_losses", s.zero_losses},
       {"advantages", s.advantages},
       {"many_shot_loss", s.many_shot_loss},
       {"zero_shot_loss", s.zero_shot_loss},
       {"l_diff", s.l_diff}};
}

void from_json(const json& j, StepLog& s) {
  j.at("step").get_to(s.step);
  j.at("sequence_id").get_to(s.sequence_id);
  j.at("K").get_to(s.K);
  j.at("many_losses").get_to(s.many_losses);
  j.at("zero_losses").get_to(s.zero_losses);
  j.at("advantages").get_to(s.advantages);
  j.at("many_shot_loss").get_to(s.many_shot_loss);
  j.at("zero_shot_loss").get_to(s.zero_shot_loss);
  j.at("l_diff").get_to(s.l_diff);
}

void to_json(json& j, const EpochSummary& e) {
  j = {{"iteration", e.iteration},
       {"mean_l_diff", e.mean_l_diff},
       {"mean_many_shot", e.mean_many_shot},
       {"mean_zero_shot", e.mean_zero_shot}};
}

void from_json(const json& j, EpochSummary& e) {
  j.at("iteration").get_to(e.iteration);
  j.at("mean_l_diff").get_to(e.mean_l_diff);
  j.at("mean_many_shot").get_to(e.mean_many_shot);
  j.at("mean_zero_shot").get_to(e.mean_zero_shot);
}

}  // namespace dricl
