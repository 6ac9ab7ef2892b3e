#include "dricl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "dricl/serialize.hpp"

namespace dricl {

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::dricl: return "dricl";
    case TrainMode::metaicl: return "metaicl";
    case TrainMode::it: return "it";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view text) {
  if (text == "dricl") return TrainMode::dricl;
  if (text == "metaicl") return TrainMode::metaicl;
  if (text == "it") return TrainMode::it;
  throw Error("unknown mode '" + std::string(text) + "' (expected dricl, metaicl or it)");
}

void DrIclConfig::validate() const {
  if (!(alpha >= -1.0 && alpha <= 1.0)) throw Error("alpha must be in [-1, 1]");
  if (!(gamma > 0.0)) throw Error("gamma must be > 0");
  if (window_size < 1) throw Error("window size must be >= 1");
  if (sample_size < 1 || sample_size > window_size) throw Error("sample size must be in [1, window size]");
  if (!(reward_clip > 0.0)) throw Error("reward clip must be > 0");
}

std::size_t window_index(std::size_t k, std::size_t window_size) {
  if (k < 1 || window_size < 1) throw Error("window_index needs k >= 1 and W >= 1");
  return (k - 1) / window_size;
}

ImportanceModel importance_weights(const LossTrace& trace, std::size_t w, const DrIclConfig& cfg) {
  const auto W = static_cast<std::size_t>(cfg.window_size);
  if (w < 1) throw Error("window 0 has no sampling window");
  const std::size_t first = (w - 1) * W + 1;
  const std::size_t last = std::min(w * W, trace.K());
  if (first > last) throw Error("empty sampling window");

  ImportanceModel m;
  double lo = trace.losses[first - 1], hi = lo, sum = 0.0;
  for (std::size_t i = first; i <= last; ++i) {
    const double L = trace.losses[i - 1];
    m.indices.push_back(i);
    sum += L;
    lo = std::min(lo, L);
    hi = std::max(hi, L);
  }
  const auto n = static_cast<double>(m.indices.size());
  m.mean = sum / n;
  double ss = 0.0;
  for (std::size_t i : m.indices) ss += (trace.losses[i - 1] - m.mean) * (trace.losses[i - 1] - m.mean);
  m.stddev = std::sqrt(ss / n);

  if (m.stddev < kDegenerateStddev) {
    m.weights.assign(m.indices.size(), 1.0);
    return m;
  }
  const double q = 1.0 / (hi - lo);
  const double norm = 1.0 / (m.stddev * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t i : m.indices) {
    const double z = (trace.losses[i - 1] - m.mean) / m.stddev;
    m.weights.push_back(norm * std::exp(-0.5 * z * z) / q);
  }
  return m;
}

std::vector<std::size_t> select_samples(const ImportanceModel& model, std::size_t sample_size) {
  if (sample_size < 1) throw Error("sample size must be >= 1");
  const std::size_t take = std::min(sample_size, model.weights.size());
  std::vector<bool> used(model.weights.size(), false);
  std::vector<std::size_t> picked;
  for (std::size_t s = 0; s < take; ++s) {
    double best = -1.0;
    for (std::size_t j = 0; j < model.weights.size(); ++j) {
      if (!used[j]) best = std::max(best, model.weights[j]);
    }
    // Lowest index among the weights tied with the maximum.
    for (std::size_t j = 0; j < model.weights.size(); ++j) {
      if (!used[j] && model.weights[j] >= best * (1.0 - kWeightTieTolerance)) {
        used[j] = true;
        picked.push_back(model.indices[j]);
        break;
      }
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

double sampling_loss(const LossTrace& trace, const std::vector<std::size_t>& sampled_indices) {
  if (sampled_indices.empty()) throw Error("sampling loss of an empty selection");
  double sum = 0.0;
  for (std::size_t i : sampled_indices) sum += trace.losses.at(i - 1);
  return sum / static_cast<double>(sampled_indices.size());
}

double advantage(double reward, const DrIclConfig& cfg) {
  return std::exp(std::clamp(reward, -cfg.reward_clip, cfg.reward_clip) / cfg.gamma);
}

std::vector<AdvantageRecord> compute_advantages(const LossTrace& many, const DrIclConfig& cfg) {
  const auto W = static_cast<std::size_t>(cfg.window_size);
  const bool active = cfg.mode == TrainMode::dricl && cfg.reweight;
  std::vector<AdvantageRecord> records;
  records.reserve(many.K());
  std::size_t cached_window = 0;
  std::vector<std::size_t> cached_selection;
  double cached_loss = 0.0;
  for (std::size_t k = 1; k <= many.K(); ++k) {
    AdvantageRecord r;
    r.k = k;
    r.window = window_index(k, W);
    if (active && r.window >= 1) {
      if (r.window != cached_window) {
        cached_selection = select_samples(importance_weights(many, r.window, cfg),
                                          static_cast<std::size_t>(cfg.sample_size));
        cached_loss = sampling_loss(many, cached_selection);
        cached_window = r.window;
      }
      r.sampled_indices = cached_selection;
      r.sampling_loss = cached_loss;
      r.reward = reward(many.losses[k - 1], cached_loss);
      r.advantage = advantage(r.reward, cfg);
    }
    records.push_back(std::move(r));
  }
  return records;
}

LossNode reweighted_many_shot_loss(const LossTrace& trace, const std::vector<double>& advantages) {
  if (advantages.size() != trace.K()) throw Error("advantage count does not match K");
  if (trace.K() == 0) throw Error("empty loss trace");
  const double inv_k = 1.0 / static_cast<double>(trace.K());
  LossNode node;
  node.many_weights.resize(trace.K());
  node.zero_weights.assign(trace.K(), 0.0);
  for (std::size_t k = 0; k < trace.K(); ++k) {
    if (!(advantages[k] > 0.0) || !std::isfinite(advantages[k])) throw Error("advantages must be finite and > 0");
    node.many_weights[k] = advantages[k] * inv_k;
    node.value += trace.losses[k] * advantages[k];
  }
  node.value *= inv_k;
  return node;
}

LossNode mean_zero_shot_loss(const LossTrace& trace) {
  if (trace.K() == 0) throw Error("empty loss trace");
  const double inv_k = 1.0 / static_cast<double>(trace.K());
  LossNode node;
  node.many_weights.assign(trace.K(), 0.0);
  node.zero_weights.assign(trace.K(), inv_k);
  for (double L : trace.losses) node.value += L;
  node.value *= inv_k;
  return node;
}

double differentiated_loss(double many, double zero, double alpha) {
  return (1.0 + alpha) * many + (1.0 - alpha) * zero;
}

LossNode differentiated_loss(const LossNode& many, const LossNode& zero, double alpha) {
  if (many.many_weights.size() != zero.many_weights.size() || many.zero_weights.size() != zero.zero_weights.size()) {
    throw Error("loss nodes belong to different sequences");
  }
  LossNode out;
  out.value = differentiated_loss(many.value, zero.value, alpha);
  out.many_weights.resize(many.many_weights.size());
  out.zero_weights.resize(many.zero_weights.size());
  for (std::size_t k = 0; k < out.many_weights.size(); ++k) {
    out.many_weights[k] = (1.0 + alpha) * many.many_weights[k] + (1.0 - alpha) * zero.many_weights[k];
  }
  for (std::size_t k = 0; k < out.zero_weights.size(); ++k) {
    out.zero_weights[k] = (1.0 + alpha) * many.zero_weights[k] + (1.0 - alpha) * zero.zero_weights[k];
  }
  return out;
}

SequenceObjective compute_sequence_objective(const LossTrace& many, const LossTrace& zero, const DrIclConfig& cfg) {
  cfg.validate();
  if (many.K() == 0) throw Error("K must be >= 1");
  if (many.K() != zero.K()) throw Error("many-shot and zero-shot traces differ in length");

  SequenceObjective out;
  out.records = compute_advantages(many, cfg);
  std::vector<double> adv(many.K());
  std::transform(out.records.begin(), out.records.end(), adv.begin(), [](const auto& r) { return r.advantage; });
  const LossNode many_node = reweighted_many_shot_loss(many, adv);
  const LossNode zero_node = mean_zero_shot_loss(zero);
  out.many_shot_loss = many_node.value;
  out.zero_shot_loss = zero_node.value;
  switch (cfg.mode) {
    case TrainMode::dricl: out.loss = differentiated_loss(many_node, zero_node, cfg.alpha); break;
    case TrainMode::metaicl: out.loss = many_node; break;
    case TrainMode::it: out.loss = zero_node; break;
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_audit_header(std::ostream& out, const DrIclConfig& cfg) {
  out << nlohmann::json({{"type", "config"}, {"dricl", cfg}}).dump() << '\n';
}

void write_audit_records(std::ostream& out, const LossTrace& many, const std::vector<AdvantageRecord>& records) {
  for (const auto& r : records) {
    nlohmann::json j = r;
    j["sequence"] = many.sequence_id;
    j["many_loss"] = many.losses.at(r.k - 1);
    out << j.dump() << '\n';
  }
}

AuditLog read_audit_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  AuditLog log;
  bool have_header = false;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      if (j.value("type", "") == "config") {
        log.config = j.at("dricl").get<DrIclConfig>();
        have_header = true;
        continue;
      }
      AuditEntry e;
      e.sequence_id = j.at("sequence").get<std::size_t>();
      e.many_loss = j.at("many_loss").get<double>();
      e.record = j.get<AdvantageRecord>();
      log.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw Error("audit log line " + std::to_string(line) + ": " + e.what());
    }
  }
  if (!have_header) throw Error("audit log has no config header");
  return log;
}

}  // namespace dricl
