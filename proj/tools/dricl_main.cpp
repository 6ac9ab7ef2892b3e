// dricl: data generation, packing, training, evaluation and verification.
// Exit codes: 0 ok, 1 verification failure, 2 usage or invalid config,
// 3 runtime abort (I/O, non-finite loss).

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "dricl/checkpoint.hpp"
#include "dricl/experiment.hpp"
#include "dricl/serialize.hpp"
#include "dricl/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dricl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerify = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

// Raised for invalid flag combinations and configs; maps to exit 2.
struct UsageError : Error {
  using Error::Error;
};

template <typename T>
void set_if(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

void echo_config(const std::string& command, const json& cfg) {
  std::cout << "dricl " << command << " effective config: " << cfg.dump() << '\n';
}

void print_histogram(const std::vector<PackedSequence>& seqs) {
  std::cout << "k-shot histogram (K: sequences)\n";
  for (const auto& [k, n] : kshot_histogram(seqs)) std::cout << "  " << k << ": " << n << '\n';
}

RunConfig base_config(const std::string& path, json* raw = nullptr) {
  if (path.empty()) return RunConfig{};
  try {
    auto cfg = load_run_config(path);
    if (raw != nullptr) {
      std::ifstream in(path);
      *raw = json::parse(in);
    }
    return cfg;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

void validate_or_usage(const RunConfig& cfg) {
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
}

std::vector<int> parse_k_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int k = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(k);
    } catch (const std::exception&) {
      throw UsageError("bad k list '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("empty k list");
  return out;
}

// ---------------------------------------------------------------------------

struct GenDataFlags {
  std::string config, out = "data";
  std::optional<std::string> family;
  std::optional<int> count, tasks, eval_tasks, k_target, per_task, num_labels, noise_chars;
  std::optional<std::size_t> budget;
  std::optional<std::uint64_t> seed;
  std::optional<double> label_noise;
};

int cmd_gen_data(const GenDataFlags& f) {
  json raw;
  RunConfig cfg = base_config(f.config, &raw);
  const bool family_in_config = raw.contains("corpus") && raw["corpus"].contains("family");
  if (!f.family && !family_in_config) throw UsageError("--family is required (or corpus.family in --config)");
  auto& c = cfg.corpus;
  try {
    if (f.family) c.family.family = parse_family(*f.family);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  set_if(f.count, c.count);
  set_if(f.tasks, c.tasks);
  set_if(f.eval_tasks, c.eval_tasks);
  set_if(f.k_target, c.k_target);
  set_if(f.per_task, c.sequences_per_task);
  set_if(f.num_labels, c.family.num_labels);
  set_if(f.noise_chars, c.family.noise_chars);
  set_if(f.budget, c.budget);
  set_if(f.seed, c.seed);
  set_if(f.label_noise, c.label_noise);
  try {
    c.validate();
  } catch (const Error& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  echo_config("gen-data", json{{"corpus", c}, {"out", f.out}});

  const auto data = generate_dataset(c);
  save_dataset(data, f.out);
  std::cout << "wrote " << data.train_pools.size() << " training pools, " << data.eval_pools.size() / 2
            << " held-out tasks, " << data.sequences.size() << " packed sequences, vocabulary " << data.vocab.size()
            << " to " << f.out << '\n';
  print_histogram(data.sequences);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PackFlags {
  std::string tasks, vocab, out = "packed";
  int k_target = 350;
  std::size_t budget = 8000;
  int per_task = 1;
  std::uint64_t seed = 0;
};

int cmd_pack(const PackFlags& f) {
  if (f.k_target < 1) throw UsageError("--k-target must be >= 1");
  if (f.per_task < 1) throw UsageError("--per-task must be >= 1");
  if (f.budget < 8) throw UsageError("--budget must be >= 8");
  echo_config("pack", json{{"tasks", f.tasks},
                           {"vocab", f.vocab},
                           {"k_target", f.k_target},
                           {"budget", f.budget},
                           {"per_task", f.per_task},
                           {"seed", f.seed},
                           {"out", f.out}});
  auto pools = load_task_pools(f.tasks);
  std::vector<TaskPool> train_pools;
  for (auto& p : pools) {
    if (p.split == Split::train) train_pools.push_back(std::move(p));
  }
  if (train_pools.empty()) throw Error(f.tasks + " holds no training pools");
  const Vocabulary vocab = f.vocab.empty() ? Vocabulary::build(train_pools) : load_vocabulary(f.vocab);
  const auto seqs = pack_corpus(train_pools, vocab, f.k_target, f.budget, f.per_task, derive_seed(f.seed, "pack"));
  fs::create_directories(f.out);
  save_vocabulary(vocab, fs::path(f.out) / "vocab.json");
  save_packed_corpus(seqs, fs::path(f.out) / "packed.jsonl");
  std::cout << "wrote " << seqs.size() << " packed sequences to " << f.out << '\n';
  print_histogram(seqs);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string config, data = "data", out = "run";
  std::optional<std::string> mode, optimizer, precision, reweight;
  std::optional<double> alpha, gamma, clip, lr, weight_decay;
  std::optional<int> window, samples, iterations, batch, checkpoint_every;
  std::optional<int> width, layers, heads, ff_width, max_positions;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainFlags& f) {
  RunConfig cfg = base_config(f.config);
  auto& t = cfg.train;
  try {
    if (f.mode) t.dricl.mode = parse_train_mode(*f.mode);
    if (f.optimizer) t.optimizer.kind = parse_optimizer(*f.optimizer);
    if (f.precision) t.precision = parse_precision(*f.precision);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (f.reweight) {
    if (*f.reweight == "on") {
      t.dricl.reweight = true;
    } else if (*f.reweight == "off") {
      t.dricl.reweight = false;
    } else {
      throw UsageError("--reweight expects on or off");
    }
  }
  set_if(f.alpha, t.dricl.alpha);
  set_if(f.gamma, t.dricl.gamma);
  set_if(f.clip, t.dricl.reward_clip);
  set_if(f.window, t.dricl.window_size);
  set_if(f.samples, t.dricl.sample_size);
  set_if(f.lr, t.optimizer.learning_rate);
  set_if(f.weight_decay, t.optimizer.weight_decay);
  set_if(f.iterations, t.iterations);
  set_if(f.batch, t.batch_size);
  set_if(f.checkpoint_every, t.checkpoint_every);
  set_if(f.seed, t.seed);
  set_if(f.width, cfg.model.width);
  set_if(f.layers, cfg.model.layers);
  set_if(f.heads, cfg.model.heads);
  set_if(f.ff_width, cfg.model.ff_width);
  set_if(f.max_positions, cfg.model.max_positions);
  validate_or_usage(cfg);

  const auto data = load_dataset(f.data);
  if (data.sequences.empty()) throw Error(f.data + " holds no packed sequences");
  const auto dims = effective_dims(cfg, data.vocab, data.sequences);
  echo_config("train", json{{"model", dims}, {"train", t}, {"data", f.data}, {"out", f.out}});

  const fs::path out(f.out);
  fs::create_directories(out);
  auto outcome = run_training(cfg, data.vocab, data.sequences, [&](std::size_t step, const TrainedModel& m) {
    m.save(data.vocab, out / ("checkpoint-" + std::to_string(step) + ".bin"));
  });
  outcome.model.save(data.vocab, out / "checkpoint.bin");
  write_train_log(out / "train_log.jsonl", t, outcome.log);
  {
    std::ofstream audit(out / "audit.jsonl");
    if (!audit) throw Error("cannot write " + (out / "audit.jsonl").string());
    write_audit_header(audit, t.dricl);
    for (const auto& s : outcome.log.steps) {
      LossTrace trace;
      trace.sequence_id = s.sequence_id;
      trace.losses = s.many_losses;
      write_audit_records(audit, trace, s.advantages);
    }
  }
  std::ofstream(out / "config.json") << json{{"model", dims}, {"train", t}}.dump(2) << '\n';

  const auto& last = outcome.log.epochs.back();
  std::cout << "trained " << outcome.log.steps.size() << " steps\n"
            << "final epoch " << last.iteration << ": L_diff " << last.mean_l_diff << ", many-shot "
            << last.mean_many_shot << ", zero-shot " << last.mean_zero_shot << '\n'
            << "wrote " << (out / "checkpoint.bin").string() << ", train_log.jsonl, audit.jsonl\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalFlags {
  std::string config, checkpoint, data = "data", tasks, out = "eval";
  std::optional<std::string> k;
  std::optional<std::size_t> n, budget, max_label_len;
  std::optional<std::uint64_t> seed;
  bool unconstrained = false;
};

int cmd_eval(const EvalFlags& f) {
  RunConfig cfg = base_config(f.config);
  auto& e = cfg.eval;
  if (f.k) e.k_grid = parse_k_list(*f.k);
  set_if(f.n, e.n_per_k);
  set_if(f.budget, e.budget);
  set_if(f.max_label_len, e.max_label_len);
  set_if(f.seed, e.seed);
  if (f.unconstrained) e.constrain_to_labels = false;
  validate_or_usage(cfg);
  const fs::path tasks = f.tasks.empty() ? fs::path(f.data) / "eval_tasks.jsonl" : fs::path(f.tasks);
  echo_config("eval", json{{"eval", e}, {"checkpoint", f.checkpoint}, {"tasks", tasks.string()}, {"out", f.out}});

  if (!fs::exists(f.checkpoint)) throw Error("checkpoint " + f.checkpoint + " does not exist");
  Vocabulary vocab;
  const auto params = load_checkpoint<double>(f.checkpoint, &vocab);
  const auto pools = load_task_pools(tasks);
  const auto reports = evaluate_tasks(params, vocab, pools, e);

  const fs::path out(f.out);
  fs::create_directories(out);
  std::vector<std::string> names;
  std::ofstream summary(out / "summary.csv");
  if (!summary) throw Error("cannot write " + (out / "summary.csv").string());
  summary.precision(17);
  summary << "task,evaluated_k,avg,max,variance\n";
  auto summary_row = [&](const EvalReport& r) {
    std::size_t evaluated = 0;
    for (const auto& row : r.rows) evaluated += row.skipped ? 0 : 1;
    summary << r.task_id << ',' << evaluated << ',' << r.avg << ',' << r.max << ',' << r.variance << '\n';
  };
  for (const auto& r : reports) {
    emit_report(r, out / (r.task_id + ".csv"), ReportFormat::csv);
    summary_row(r);
    names.push_back(r.task_id);
    for (const auto& row : r.rows) {
      if (row.skipped) std::cout << r.task_id << " k=" << row.k << " skipped: " << row.note << '\n';
    }
  }
  const auto pooled = pooled_report(reports);
  summary_row(pooled);
  names.push_back(pooled.task_id);
  auto all = reports;
  all.push_back(pooled);
  std::cout << comparison_table(names, all);
  std::cout << "wrote " << reports.size() << " task reports and summary.csv to " << f.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct CheckFlags {
  std::string suite = "all";
  std::optional<std::string> fault;
  std::size_t fixtures = 1000;
  std::size_t sequences = 200;
  std::uint64_t seed = 0;
};

int cmd_check(const CheckFlags& f) {
  if (f.suite != "all" && f.suite != "replay" && f.suite != "mask" && f.suite != "gradcheck") {
    throw UsageError("--suite expects replay, mask, gradcheck or all");
  }
  AdvantageEngine engine;
  if (f.fault) {
    try {
      engine = faulty_advantage_engine(*f.fault);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  echo_config("check", json{{"suite", f.suite},
                            {"inject_fault", f.fault.value_or("")},
                            {"fixtures", f.fixtures},
                            {"sequences", f.sequences},
                            {"seed", f.seed}});
  bool ok = true;
  auto report = [&](const SuiteResult& r) {
    std::cout << format_suite(r) << std::endl;
    ok = ok && r.passed;
  };
  if (f.suite == "all" || f.suite == "replay") report(run_replay_suite({f.fixtures, f.seed, 1e-12}, engine));
  if (f.suite == "all" || f.suite == "mask") report(run_mask_suite({f.sequences, f.seed, 1e-9}));
  if (f.suite == "all" || f.suite == "gradcheck") report(run_gradcheck_suite({f.seed, 1e-4, 1e-6}));
  return ok ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DrICL training and evaluation engine"};
  app.require_subcommand(1);

  GenDataFlags gen;
  auto* g = app.add_subcommand("gen-data", "Generate synthetic task pools and a packed training corpus");
  g->add_option("--config", gen.config, "JSON run config (flags take precedence)");
  g->add_option("--family", gen.family, "perm | lookup | modular | copy");
  g->add_option("--count", gen.count, "Examples per pool");
  g->add_option("--tasks", gen.tasks, "Training tasks");
  g->add_option("--eval-tasks", gen.eval_tasks, "Held-out tasks");
  g->add_option("--k-target", gen.k_target, "Demonstrations per packed sequence");
  g->add_option("--per-task", gen.per_task, "Packed sequences per training task");
  g->add_option("--budget", gen.budget, "Tokens per packed sequence");
  g->add_option("--num-labels", gen.num_labels, "Label-permutation classes");
  g->add_option("--noise-chars", gen.noise_chars, "Label-permutation distractor digits");
  g->add_option("--label-noise", gen.label_noise, "Fraction of training labels replaced");
  g->add_option("--seed", gen.seed, "Corpus seed");
  g->add_option("--out", gen.out, "Output directory")->capture_default_str();

  PackFlags pack;
  auto* p = app.add_subcommand("pack", "Pack a task file into training sequences");
  p->add_option("--tasks", pack.tasks, "Task JSONL file")->required();
  p->add_option("--vocab", pack.vocab, "Existing vocabulary (built from the tasks if omitted)");
  p->add_option("--k-target", pack.k_target, "Demonstrations per packed sequence")->capture_default_str();
  p->add_option("--budget", pack.budget, "Tokens per packed sequence")->capture_default_str();
  p->add_option("--per-task", pack.per_task, "Packed sequences per task")->capture_default_str();
  p->add_option("--seed", pack.seed, "Packing seed")->capture_default_str();
  p->add_option("--out", pack.out, "Output directory")->capture_default_str();

  TrainFlags tr;
  auto* t = app.add_subcommand("train", "Train on a packed corpus");
  t->add_option("--config", tr.config, "JSON run config (flags take precedence)");
  t->add_option("--data", tr.data, "Directory written by gen-data or pack")->capture_default_str();
  t->add_option("--out", tr.out, "Output directory")->capture_default_str();
  t->add_option("--mode", tr.mode, "dricl | metaicl | it");
  t->add_option("--alpha", tr.alpha, "Differentiation weight in [-1, 1]");
  t->add_option("--gamma", tr.gamma, "Advantage temperature");
  t->add_option("--clip", tr.clip, "Reward clip");
  t->add_option("--window", tr.window, "Reweighting window size W");
  t->add_option("--samples", tr.samples, "Sample size S");
  t->add_option("--reweight", tr.reweight, "on | off");
  t->add_option("--lr", tr.lr, "Learning rate");
  t->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay");
  t->add_option("--optimizer", tr.optimizer, "adam | sgd");
  t->add_option("--iterations", tr.iterations, "Passes over the corpus");
  t->add_option("--batch", tr.batch, "Sequences per optimizer step");
  t->add_option("--precision", tr.precision, "f32 | f64");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Steps between checkpoints (0 disables)");
  t->add_option("--seed", tr.seed, "Initialization seed");
  t->add_option("--width", tr.width, "Model width");
  t->add_option("--layers", tr.layers, "Transformer layers");
  t->add_option("--heads", tr.heads, "Attention heads");
  t->add_option("--ff-width", tr.ff_width, "Feed-forward width");
  t->add_option("--max-positions", tr.max_positions, "Position table size (0: longest sequence)");

  EvalFlags ev;
  auto* e = app.add_subcommand("eval", "k-shot accuracy sweep over held-out tasks");
  e->add_option("--config", ev.config, "JSON run config (flags take precedence)");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Directory holding eval_tasks.jsonl")->capture_default_str();
  e->add_option("--tasks", ev.tasks, "Task file with train and test pools (overrides --data)");
  e->add_option("--k", ev.k, "Comma-separated k grid");
  e->add_option("--n", ev.n, "Queries per k");
  e->add_option("--budget", ev.budget, "Prompt token budget");
  e->add_option("--max-label-len", ev.max_label_len, "Decoding cap (0: longest label)");
  e->add_option("--seed", ev.seed, "Sampling seed");
  e->add_flag("--unconstrained", ev.unconstrained, "Free greedy decoding over the whole vocabulary");
  e->add_option("--out", ev.out, "Output directory")->capture_default_str();

  CheckFlags ck;
  auto* c = app.add_subcommand("check", "Run the verification suites");
  c->add_option("--suite", ck.suite, "replay | mask | gradcheck | all")->capture_default_str();
  c->add_option("--inject-fault", ck.fault, "missing-clip | gamma-ignored | stale-window");
  c->add_option("--fixtures", ck.fixtures, "Replay fixtures")->capture_default_str();
  c->add_option("--sequences", ck.sequences, "Mask-suite sequences")->capture_default_str();
  c->add_option("--seed", ck.seed, "Base seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (p->parsed()) return cmd_pack(pack);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (c->parsed()) return cmd_check(ck);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const NonFiniteError& err) {
    std::cerr << "aborted: " << err.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
