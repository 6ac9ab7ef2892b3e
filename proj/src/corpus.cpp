#include "dricl/corpus.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>
#include <set>

namespace dricl {

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw Error("unknown split '" + std::string(text) + "'");
}

std::string_view to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::label_permutation: return "label-permutation";
    case TaskFamily::key_value_lookup: return "key-value-lookup";
    case TaskFamily::modular_arithmetic: return "modular-arithmetic";
    case TaskFamily::pattern_copy: return "pattern-copy";
  }
  return "?";
}

TaskFamily parse_family(std::string_view name) {
  if (name == "label-permutation" || name == "perm") return TaskFamily::label_permutation;
  if (name == "key-value-lookup" || name == "lookup") return TaskFamily::key_value_lookup;
  if (name == "modular-arithmetic" || name == "modular") return TaskFamily::modular_arithmetic;
  if (name == "pattern-copy" || name == "copy") return TaskFamily::pattern_copy;
  throw Error("unknown task family '" + std::string(name) + "'");
}

namespace {

bool printable(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) >= 0x20; });
}

// Inputs whose seeded hash is 0 mod 4 belong to the test split.
Split split_of(std::string_view input, std::uint64_t seed) {
  return fnv1a(input, derive_seed(seed, "split")) % 4 == 0 ? Split::test : Split::train;
}

std::string instruction_for(const FamilySpec& spec) {
  switch (spec.family) {
    case TaskFamily::label_permutation: return "Classify:";
    case TaskFamily::key_value_lookup: return "Look up:";
    case TaskFamily::modular_arithmetic: return "Add mod " + std::to_string(spec.modulus) + ":";
    case TaskFamily::pattern_copy: return "Copy:";
  }
  return {};
}

std::string random_string(std::mt19937_64& rng, std::string_view alphabet, int length) {
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string out;
  for (int i = 0; i < length; ++i) out.push_back(alphabet[pick(rng)]);
  return out;
}

constexpr std::string_view kLower = "abcdefghijklmnopqrstuvwxyz";
constexpr std::string_view kUpper = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
constexpr std::string_view kDigits = "0123456789";

}  // namespace

void validate_pool(const TaskPool& pool) {
  if (pool.instruction_text.empty()) throw Error("pool '" + pool.task_id + "': empty instruction");
  if (pool.examples.empty()) throw Error("empty pool");
  if (pool.split == Split::train && pool.examples.size() < 2) {
    throw Error("pool '" + pool.task_id + "': train split needs at least 2 examples");
  }
  for (const auto& ex : pool.examples) {
    if (ex.input_text.empty() || ex.label_text.empty()) {
      throw Error("pool '" + pool.task_id + "': empty input or label");
    }
    if (!printable(ex.input_text) || !printable(ex.label_text) || !printable(pool.instruction_text)) {
      throw Error("pool '" + pool.task_id + "': control characters are reserved");
    }
  }
}

TaskPool generate_synthetic_tasks(const FamilySpec& spec, int count, std::uint64_t seed, Split split) {
  if (count < 2) throw Error("count must be >= 2");

  TaskPool pool;
  pool.task_id = std::string(to_string(spec.family)) + "-" + std::to_string(seed);
  pool.instruction_text = instruction_for(spec);
  pool.split = split;

  std::mt19937_64 structure_rng(derive_seed(seed, "structure"));
  std::mt19937_64 draw_rng(derive_seed(seed, split == Split::train ? "draw-train" : "draw-test"));

  // Draws candidate examples until one lands in the requested split.
  auto draw = [&](auto&& make) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
      TaskExample ex = make();
      if (split_of(ex.input_text, seed) == split) return ex;
    }
    throw Error("task '" + pool.task_id + "': no inputs fall in the " + std::string(to_string(split)) +
                " split");
  };

  switch (spec.family) {
    case TaskFamily::label_permutation: {
      if (spec.num_labels < 2 || spec.num_labels > 26) throw Error("num_labels must be in [2, 26]");
      std::vector<int> perm(static_cast<std::size_t>(spec.num_labels));
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), structure_rng);
      // Classes follow a shuffled balanced schedule so label marginals are
      // uniform whenever count is a multiple of num_labels.
      std::vector<int> schedule(static_cast<std::size_t>(count));
      for (int i = 0; i < count; ++i) schedule[static_cast<std::size_t>(i)] = i % spec.num_labels;
      std::shuffle(schedule.begin(), schedule.end(), draw_rng);
      std::uniform_int_distribution<int> cls(0, spec.num_labels - 1);
      auto make = [&](int c) {
        std::string input(1, kLower[static_cast<std::size_t>(c)]);
        input += random_string(draw_rng, kDigits, spec.noise_chars);
        return TaskExample{pool.task_id, input, std::string(1, kUpper[static_cast<std::size_t>(perm[c])])};
      };
      for (int i = 0; i < count; ++i) {
        const int planned = schedule[static_cast<std::size_t>(i)];
        std::optional<TaskExample> ex;
        for (int attempt = 0; attempt < 1000 && !ex; ++attempt) {
          TaskExample candidate = make(planned);
          if (split_of(candidate.input_text, seed) == split) ex = std::move(candidate);
        }
        // A class whose every input hashes to the other split falls back to any class.
        pool.examples.push_back(ex ? std::move(*ex) : draw([&] { return make(cls(draw_rng)); }));
      }
      break;
    }
    case TaskFamily::key_value_lookup: {
      if (spec.num_keys < 2) throw Error("num_keys must be >= 2");
      std::vector<std::pair<std::string, std::string>> table;
      std::set<std::string> seen;
      bool has_train = false, has_test = false;
      for (int attempt = 0; attempt < 100000; ++attempt) {
        const bool full = static_cast<int>(table.size()) >= spec.num_keys;
        if (full && has_train && has_test) break;
        std::string key = random_string(structure_rng, kLower, 2);
        std::string value = random_string(structure_rng, kUpper, 1);
        if (!seen.insert(key).second) continue;
        const bool is_test = split_of(key, seed) == Split::test;
        if (full && (is_test ? has_test : has_train)) continue;
        (is_test ? has_test : has_train) = true;
        table.emplace_back(std::move(key), std::move(value));
      }
      std::vector<std::size_t> in_split;
      for (std::size_t i = 0; i < table.size(); ++i) {
        if (split_of(table[i].first, seed) == split) in_split.push_back(i);
      }
      std::uniform_int_distribution<std::size_t> pick(0, in_split.size() - 1);
      for (int i = 0; i < count; ++i) {
        const auto& [key, value] = table[in_split[pick(draw_rng)]];
        pool.examples.push_back({pool.task_id, key, value});
      }
      break;
    }
    case TaskFamily::modular_arithmetic: {
      if (spec.modulus < 2) throw Error("modulus must be >= 2");
      std::uniform_int_distribution<int> operand(0, spec.modulus - 1);
      for (int i = 0; i < count; ++i) {
        pool.examples.push_back(draw([&] {
          const int a = operand(draw_rng);
          const int b = operand(draw_rng);
          return TaskExample{pool.task_id, std::to_string(a) + "+" + std::to_string(b),
                             std::to_string((a + b) % spec.modulus)};
        }));
      }
      break;
    }
    case TaskFamily::pattern_copy: {
      if (spec.pattern_length < 1) throw Error("pattern_length must be >= 1");
      for (int i = 0; i < count; ++i) {
        pool.examples.push_back(draw([&] {
          std::string s = random_string(draw_rng, kLower.substr(0, 8), spec.pattern_length);
          return TaskExample{pool.task_id, s, s};
        }));
      }
      break;
    }
  }
  validate_pool(pool);
  return pool;
}

std::vector<std::string> label_set(const TaskPool& pool) {
  std::set<std::string> labels;
  for (const auto& ex : pool.examples) labels.insert(ex.label_text);
  return {labels.begin(), labels.end()};
}

TaskPool inject_label_noise(const TaskPool& pool, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw Error("noise rate must be in [0, 1]");
  TaskPool out = pool;
  const auto labels = label_set(pool);
  if (labels.size() < 2) return out;
  std::mt19937_64 rng(derive_seed(seed, "label-noise:" + pool.task_id));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, labels.size() - 2);
  for (auto& ex : out.examples) {
    if (coin(rng) >= rate) continue;
    // Index into the label set with the true label removed.
    std::size_t j = pick(rng);
    const auto truth = std::find(labels.begin(), labels.end(), ex.label_text) - labels.begin();
    if (static_cast<std::ptrdiff_t>(j) >= truth) ++j;
    ex.label_text = labels[j];
  }
  return out;
}

// ---------------------------------------------------------------------------

PackedSequence PackedSequence::standalone(std::size_t k) const {
  PackedSequence out;
  out.task_id = task_id;
  const TokenRange instr = instruction_region();
  const TokenRange demo = demo_region(k);
  out.token_ids.assign(token_ids.begin(), token_ids.begin() + static_cast<std::ptrdiff_t>(instr.end));
  out.token_ids.insert(out.token_ids.end(), token_ids.begin() + static_cast<std::ptrdiff_t>(demo.begin),
                       token_ids.begin() + static_cast<std::ptrdiff_t>(demo.end));
  out.instruction_span = instruction_span;
  const std::size_t shift = demo.begin - instr.end;
  const auto& d = demo_spans[k];
  out.demo_spans.push_back({{d.x.begin - shift, d.x.end - shift}, {d.y.begin - shift, d.y.end - shift}});
  return out;
}

void validate_sequence(const PackedSequence& seq, std::size_t vocab_size) {
  const auto& t = seq.token_ids;
  auto fail = [&](const std::string& what) { throw Error("invalid packed sequence: " + what); };
  if (t.empty() || t[0] != Vocabulary::kBos) fail("must start with BOS");
  if (seq.instruction_span.begin != 1 || seq.instruction_span.empty()) fail("instruction span");
  if (seq.demo_spans.empty()) fail("K must be >= 1");
  std::size_t cursor = seq.instruction_span.end;
  for (const auto& d : seq.demo_spans) {
    if (d.x.begin != cursor + 1 || d.x.empty()) fail("x span out of order");
    if (d.y.begin != d.x.end + 1 || d.y.empty()) fail("y span out of order");
    if (d.y.end >= t.size()) fail("span past end of tokens");
    if (t[cursor] != Vocabulary::kSepX || t[d.x.end] != Vocabulary::kSepY || t[d.y.end] != Vocabulary::kEod) {
      fail("misplaced delimiter");
    }
    cursor = d.y.end + 1;
  }
  if (cursor != t.size()) fail("trailing tokens");
  for (TokenId id : t) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) fail("token id out of range");
  }
}

std::size_t demo_token_cost(const Vocabulary&, const TaskExample& ex) {
  return ex.input_text.size() + ex.label_text.size() + 3;
}

std::size_t instruction_token_cost(const Vocabulary&, const TaskPool& pool) {
  return pool.instruction_text.size() + 1;
}

namespace {

void append_demo(PackedSequence& seq, const Vocabulary& vocab, const TaskExample& ex) {
  auto& t = seq.token_ids;
  DemoSpan span;
  t.push_back(Vocabulary::kSepX);
  span.x.begin = t.size();
  for (TokenId id : vocab.encode(ex.input_text)) t.push_back(id);
  span.x.end = t.size();
  t.push_back(Vocabulary::kSepY);
  span.y.begin = t.size();
  for (TokenId id : vocab.encode(ex.label_text)) t.push_back(id);
  span.y.end = t.size();
  t.push_back(Vocabulary::kEod);
  seq.demo_spans.push_back(span);
}

}  // namespace

PackedSequence pack_sequence(const TaskPool& pool, int k_target, std::size_t budget, const Vocabulary& vocab,
                             std::uint64_t seed) {
  if (pool.examples.empty()) throw Error("empty pool");
  if (k_target < 1) throw Error("k_target must be >= 1");

  std::mt19937_64 rng(derive_seed(seed, "pack:" + pool.task_id));
  const std::size_t n = pool.examples.size();
  const auto k = static_cast<std::size_t>(k_target);
  std::vector<std::size_t> order;
  if (n >= k) {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates: only the first k positions are needed.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    order.resize(k);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < k; ++i) order.push_back(pick(rng));
  }

  PackedSequence seq;
  seq.task_id = pool.task_id;
  std::size_t used = instruction_token_cost(vocab, pool);
  if (used + demo_token_cost(vocab, pool.examples[order.front()]) > budget) {
    throw Error("budget of " + std::to_string(budget) + " tokens cannot hold the instruction and one demonstration");
  }
  seq.token_ids.push_back(Vocabulary::kBos);
  seq.instruction_span.begin = 1;
  for (TokenId id : vocab.encode(pool.instruction_text)) seq.token_ids.push_back(id);
  seq.instruction_span.end = seq.token_ids.size();

  for (std::size_t idx : order) {
    const auto& ex = pool.examples[idx];
    const std::size_t cost = demo_token_cost(vocab, ex);
    if (used + cost > budget) break;  // drop this and every later demonstration
    used += cost;
    append_demo(seq, vocab, ex);
  }
  return seq;
}

std::vector<TokenId> pack_prompt(const TaskPool& pool, const std::vector<TaskExample>& demos,
                                 const TaskExample& query, std::size_t budget, const Vocabulary& vocab) {
  std::size_t cost = instruction_token_cost(vocab, pool) + query.input_text.size() + 2;
  for (const auto& d : demos) cost += demo_token_cost(vocab, d);
  if (cost > budget) return {};

  PackedSequence seq;
  seq.token_ids.push_back(Vocabulary::kBos);
  for (TokenId id : vocab.encode(pool.instruction_text)) seq.token_ids.push_back(id);
  for (const auto& d : demos) append_demo(seq, vocab, d);
  seq.token_ids.push_back(Vocabulary::kSepX);
  for (TokenId id : vocab.encode(query.input_text)) seq.token_ids.push_back(id);
  seq.token_ids.push_back(Vocabulary::kSepY);
  return std::move(seq.token_ids);
}

std::vector<TaskPool> balance_corpus(const std::vector<TaskPool>& pools, std::uint64_t seed) {
  if (pools.empty()) return {};
  std::size_t smallest = pools.front().examples.size();
  for (const auto& p : pools) smallest = std::min(smallest, p.examples.size());
  const std::size_t cap = 10 * smallest;

  std::vector<TaskPool> out;
  out.reserve(pools.size());
  for (const auto& p : pools) {
    if (p.examples.size() <= cap) {
      out.push_back(p);
      continue;
    }
    std::vector<std::size_t> idx(p.examples.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, "balance:" + p.task_id));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    TaskPool kept = p;
    kept.examples.clear();
    for (std::size_t i : idx) kept.examples.push_back(p.examples[i]);
    out.push_back(std::move(kept));
  }
  return out;
}

std::map<std::size_t, std::size_t> kshot_histogram(const std::vector<PackedSequence>& sequences) {
  std::map<std::size_t, std::size_t> hist;
  for (const auto& s : sequences) ++hist[s.K()];
  return hist;
}

}  // namespace dricl
