#include "dricl/experiment.hpp"

#include <fstream>

#include "dricl/checkpoint.hpp"
#include "dricl/serialize.hpp"

namespace dricl {

using nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

// Every key of `given` must exist in `known`; objects are checked recursively.
void check_keys(const json& given, const json& known, const std::string& where) {
  if (!given.is_object()) throw Error("config section '" + where + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    auto it = known.find(key);
    if (it == known.end()) throw Error("unknown config key '" + path + "'");
    if (it->is_object()) check_keys(value, *it, path);
  }
}

}  // namespace

void CorpusConfig::validate() const {
  if (count < 2) throw Error("count must be >= 2");
  if (tasks < 1) throw Error("tasks must be >= 1");
  if (eval_tasks < 0) throw Error("eval tasks must be >= 0");
  if (sequences_per_task < 1) throw Error("sequences per task must be >= 1");
  if (k_target < 1) throw Error("k target must be >= 1");
  if (budget < 8) throw Error("budget must be >= 8 tokens");
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) throw Error("label noise must lie in [0, 1]");
  if (family.num_labels < 2 || family.num_labels > 26) throw Error("num_labels must be in [2, 26]");
  if (family.noise_chars < 0) throw Error("noise_chars must be >= 0");
  if (family.num_keys < 2) throw Error("num_keys must be >= 2");
  if (family.modulus < 2) throw Error("modulus must be >= 2");
  if (family.pattern_length < 1) throw Error("pattern_length must be >= 1");
}

void RunConfig::validate() const {
  corpus.validate();
  train.validate();
  if (model.max_positions < 0) throw Error("max_positions must be >= 0");
  ModelDims d = model;
  d.vocab = std::max(d.vocab, Vocabulary::kNumSpecial + 1);
  d.max_positions = std::max(d.max_positions, 1);
  d.validate();
  if (eval.k_grid.empty()) throw Error("k grid is empty");
  for (int k : eval.k_grid) {
    if (k < 0) throw Error("k values must be >= 0");
  }
  if (eval.n_per_k < 1) throw Error("n per k must be >= 1");
  if (eval.budget < 8) throw Error("eval budget must be >= 8 tokens");
}

void to_json(json& j, const CorpusConfig& c) {
  j = {{"family", std::string(to_string(c.family.family))},
       {"num_labels", c.family.num_labels},
       {"noise_chars", c.family.noise_chars},
       {"num_keys", c.family.num_keys},
       {"modulus", c.family.modulus},
       {"pattern_length", c.family.pattern_length},
       {"count", c.count},
       {"tasks", c.tasks},
       {"eval_tasks", c.eval_tasks},
       {"sequences_per_task", c.sequences_per_task},
       {"k_target", c.k_target},
       {"budget", c.budget},
       {"label_noise", c.label_noise},
       {"seed", c.seed}};
}

void from_json(const json& j, CorpusConfig& c) {
  if (j.contains("family")) c.family.family = parse_family(j.at("family").get<std::string>());
  read_opt(j, "num_labels", c.family.num_labels);
  read_opt(j, "noise_chars", c.family.noise_chars);
  read_opt(j, "num_keys", c.family.num_keys);
  read_opt(j, "modulus", c.family.modulus);
  read_opt(j, "pattern_length", c.family.pattern_length);
  read_opt(j, "count", c.count);
  read_opt(j, "tasks", c.tasks);
  read_opt(j, "eval_tasks", c.eval_tasks);
  read_opt(j, "sequences_per_task", c.sequences_per_task);
  read_opt(j, "k_target", c.k_target);
  read_opt(j, "budget", c.budget);
  read_opt(j, "label_noise", c.label_noise);
  read_opt(j, "seed", c.seed);
}

void to_json(json& j, const SweepOptions& s) {
  j = {{"k_grid", s.k_grid},
       {"n_per_k", s.n_per_k},
       {"seed", s.seed},
       {"budget", s.budget},
       {"max_label_len", s.max_label_len},
       {"constrain_to_labels", s.constrain_to_labels}};
}

void from_json(const json& j, SweepOptions& s) {
  read_opt(j, "k_grid", s.k_grid);
  read_opt(j, "n_per_k", s.n_per_k);
  read_opt(j, "seed", s.seed);
  read_opt(j, "budget", s.budget);
  read_opt(j, "max_label_len", s.max_label_len);
  read_opt(j, "constrain_to_labels", s.constrain_to_labels);
}

void to_json(json& j, const RunConfig& c) {
  j = {{"corpus", c.corpus}, {"model", c.model}, {"train", c.train}, {"eval", c.eval}};
}

void from_json(const json& j, RunConfig& c) {
  check_keys(j, json(c), "");
  read_opt(j, "corpus", c.corpus);
  read_opt(j, "model", c.model);
  read_opt(j, "train", c.train);
  read_opt(j, "eval", c.eval);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  try {
    from_json(j, c);
  } catch (const json::exception& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
  return c;
}

std::vector<PackedSequence> pack_corpus(const std::vector<TaskPool>& pools, const Vocabulary& vocab, int k_target,
                                        std::size_t budget, int sequences_per_task, std::uint64_t seed) {
  std::vector<PackedSequence> out;
  for (int s = 0; s < sequences_per_task; ++s) {
    for (std::size_t p = 0; p < pools.size(); ++p) {
      const auto stream = "pack:" + std::to_string(p) + ":" + std::to_string(s);
      out.push_back(pack_sequence(pools[p], k_target, budget, vocab, derive_seed(seed, stream)));
    }
  }
  return out;
}

Dataset generate_dataset(const CorpusConfig& cfg) {
  cfg.validate();
  Dataset d;
  std::vector<TaskPool> raw;
  for (int i = 0; i < cfg.tasks; ++i) {
    raw.push_back(generate_synthetic_tasks(cfg.family, cfg.count, derive_seed(cfg.seed, "train-task:" + std::to_string(i))));
  }
  d.train_pools = balance_corpus(raw, derive_seed(cfg.seed, "balance"));
  if (cfg.label_noise > 0.0) {
    for (std::size_t i = 0; i < d.train_pools.size(); ++i) {
      d.train_pools[i] = inject_label_noise(d.train_pools[i], cfg.label_noise,
                                            derive_seed(cfg.seed, "noise:" + std::to_string(i)));
    }
  }
  for (int i = 0; i < cfg.eval_tasks; ++i) {
    const auto seed = derive_seed(cfg.seed, "eval-task:" + std::to_string(i));
    d.eval_pools.push_back(generate_synthetic_tasks(cfg.family, cfg.count, seed, Split::train));
    d.eval_pools.push_back(generate_synthetic_tasks(cfg.family, cfg.count, seed, Split::test));
  }
  std::vector<TaskPool> all = d.train_pools;
  all.insert(all.end(), d.eval_pools.begin(), d.eval_pools.end());
  d.vocab = Vocabulary::build(all);
  d.sequences = pack_corpus(d.train_pools, d.vocab, cfg.k_target, cfg.budget, cfg.sequences_per_task,
                            derive_seed(cfg.seed, "pack"));
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_task_pools(data.train_pools, dir / "tasks.jsonl");
  save_task_pools(data.eval_pools, dir / "eval_tasks.jsonl");
  save_vocabulary(data.vocab, dir / "vocab.json");
  save_packed_corpus(data.sequences, dir / "packed.jsonl");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.vocab = load_vocabulary(dir / "vocab.json");
  d.sequences = load_packed_corpus(dir / "packed.jsonl");
  if (std::filesystem::exists(dir / "tasks.jsonl")) d.train_pools = load_task_pools(dir / "tasks.jsonl");
  if (std::filesystem::exists(dir / "eval_tasks.jsonl")) d.eval_pools = load_task_pools(dir / "eval_tasks.jsonl");
  for (const auto& s : d.sequences) validate_sequence(s, d.vocab.size());
  return d;
}

ModelParams<double> TrainedModel::as_double() const {
  return precision == Precision::f64 ? f64 : cast_params<double>(f32);
}

void TrainedModel::save(const Vocabulary& vocab, const std::filesystem::path& path) const {
  if (precision == Precision::f64) {
    save_checkpoint(f64, vocab, path);
  } else {
    save_checkpoint(f32, vocab, path);
  }
}

ModelDims effective_dims(const RunConfig& cfg, const Vocabulary& vocab, const std::vector<PackedSequence>& corpus) {
  ModelDims d = cfg.model;
  d.vocab = static_cast<int>(vocab.size());
  if (d.max_positions == 0) {
    for (const auto& s : corpus) d.max_positions = std::max(d.max_positions, static_cast<int>(s.token_ids.size()));
  }
  return d;
}

TrainOutcome run_training(const RunConfig& cfg, const Vocabulary& vocab, const std::vector<PackedSequence>& corpus,
                          const std::function<void(std::size_t, const TrainedModel&)>& on_checkpoint) {
  cfg.validate();
  if (corpus.empty()) throw Error("corpus is empty");
  const auto dims = effective_dims(cfg, vocab, corpus);
  dims.validate();
  for (const auto& s : corpus) {
    if (s.token_ids.size() > static_cast<std::size_t>(dims.max_positions)) {
      throw Error("sequence " + s.task_id + " has " + std::to_string(s.token_ids.size()) +
                  " tokens, more than max_positions " + std::to_string(dims.max_positions));
    }
  }
  const auto seed = derive_seed(cfg.train.seed, "init");
  TrainOutcome out;
  out.model.precision = cfg.train.precision;
  if (cfg.train.precision == Precision::f32) {
    CheckpointHook<float> hook;
    if (on_checkpoint) {
      hook = [&](std::size_t step, const ModelParams<float>& p) {
        TrainedModel m;
        m.precision = Precision::f32;
        m.f32 = p;
        on_checkpoint(step, m);
      };
    }
    auto r = train<float>(cfg.train, corpus, init_params<float>(dims, seed), hook);
    out.model.f32 = std::move(r.params);
    out.log = std::move(r.log);
  } else {
    CheckpointHook<double> hook;
    if (on_checkpoint) {
      hook = [&](std::size_t step, const ModelParams<double>& p) {
        TrainedModel m;
        m.f64 = p;
        on_checkpoint(step, m);
      };
    }
    auto r = train<double>(cfg.train, corpus, init_params<double>(dims, seed), hook);
    out.model.f64 = std::move(r.params);
    out.log = std::move(r.log);
  }
  return out;
}

std::vector<EvalReport> evaluate_tasks(const ModelParams<double>& params, const Vocabulary& vocab,
                                       const std::vector<TaskPool>& pools, const SweepOptions& opts) {
  std::vector<EvalReport> reports;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    if (pools[i].split != Split::test) continue;
    const TaskPool* train_pool = nullptr;
    for (const auto& p : pools) {
      if (p.task_id == pools[i].task_id && p.split == Split::train) train_pool = &p;
    }
    if (train_pool == nullptr) throw Error("task " + pools[i].task_id + " has no train pool");
    SweepOptions o = opts;
    o.seed = derive_seed(opts.seed, "eval:" + pools[i].task_id);
    reports.push_back(kshot_sweep(params, vocab, pools[i], *train_pool, o));
  }
  if (reports.empty()) throw Error("no held-out test pools to evaluate");
  return reports;
}

EvalReport pooled_report(const std::vector<EvalReport>& reports, const std::string& name) {
  EvalReport out;
  out.task_id = name;
  if (reports.empty()) return out;
  for (const auto& first : reports.front().rows) {
    KShotResult row;
    row.k = first.k;
    std::size_t tasks = 0;
    double sum = 0.0;
    for (const auto& r : reports) {
      for (const auto& x : r.rows) {
        if (x.k != first.k || x.skipped) continue;
        sum += x.accuracy;
        row.matches += x.matches;
        row.n += x.n;
        ++tasks;
      }
    }
    if (tasks == 0) {
      row.skipped = true;
      row.note = "skipped in every task";
    } else {
      row.accuracy = sum / static_cast<double>(tasks);
    }
    out.rows.push_back(row);
  }
  summarize(out);
  return out;
}

}  // namespace dricl
