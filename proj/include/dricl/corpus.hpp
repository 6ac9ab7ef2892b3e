#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dricl/common.hpp"

namespace dricl {

enum class Split { train, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct TaskExample {
  std::string task_id;
  std::string input_text;
  std::string label_text;

  friend bool operator==(const TaskExample&, const TaskExample&) = default;
};

struct TaskPool {
  std::string task_id;
  std::string instruction_text;
  Split split = Split::train;
  std::vector<TaskExample> examples;

  friend bool operator==(const TaskPool&, const TaskPool&) = default;
};

/// Throws if the pool violates its invariants (non-empty instruction,
/// non-empty printable input/label text, >= 2 examples for train pools).
void validate_pool(const TaskPool& pool);

// ---------------------------------------------------------------------------
// Synthetic task families
// ---------------------------------------------------------------------------

enum class TaskFamily { label_permutation, key_value_lookup, modular_arithmetic, pattern_copy };

std::string_view to_string(TaskFamily family);
/// Accepts the canonical names plus the short aliases perm, lookup, modular, copy.
TaskFamily parse_family(std::string_view name);

struct FamilySpec {
  TaskFamily family = TaskFamily::label_permutation;
  int num_labels = 4;     // label-permutation: classes and label symbols
  int noise_chars = 1;    // label-permutation: distractor digits after the class letter
  int num_keys = 8;       // key-value lookup: table size
  int modulus = 7;        // modular arithmetic
  int pattern_length = 3; // pattern copy
};

/// Deterministic pool for (family, count, seed, split). The task structure
/// (label permutation, lookup table, ...) depends on the seed only, so the
/// train and test pools of one seed describe the same task. Inputs are
/// partitioned between splits by a seeded hash, so the splits never share
/// an example.
TaskPool generate_synthetic_tasks(const FamilySpec& family, int count, std::uint64_t seed,
                                  Split split = Split::train);

/// The set of labels a pool can emit, sorted.
std::vector<std::string> label_set(const TaskPool& pool);

/// Replaces a `rate` fraction of labels (chosen by seed) with a different
/// label drawn from the pool's own label set.
TaskPool inject_label_noise(const TaskPool& pool, double rate, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Character-level vocabulary with four reserved special tokens.
class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kSepX = 1;
  static constexpr TokenId kSepY = 2;
  static constexpr TokenId kEod = 3;
  static constexpr TokenId kNumSpecial = 4;

  Vocabulary() = default;
  /// Symbols are assigned ids 4.. in ascending byte order.
  explicit Vocabulary(std::vector<char> symbols);

  static Vocabulary build(const std::vector<TaskPool>& pools);

  [[nodiscard]] std::size_t size() const { return symbols_.size() + kNumSpecial; }
  [[nodiscard]] const std::vector<char>& symbols() const { return symbols_; }
  [[nodiscard]] bool is_special(TokenId id) const { return id >= 0 && id < kNumSpecial; }

  [[nodiscard]] TokenId id_of(char c) const;
  [[nodiscard]] char symbol_of(TokenId id) const;
  [[nodiscard]] std::vector<TokenId> encode(std::string_view text) const;
  /// Special tokens are rendered as <bos>, <x>, <y>, <eod>.
  [[nodiscard]] std::string decode(const std::vector<TokenId>& ids) const;
  [[nodiscard]] std::string decode(const std::vector<TokenId>& ids, TokenRange range) const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<char> symbols_;
  std::vector<TokenId> lookup_ = std::vector<TokenId>(256, -1);
};

// ---------------------------------------------------------------------------
// Packing
// ---------------------------------------------------------------------------

struct DemoSpan {
  TokenRange x;
  TokenRange y;

  friend bool operator==(const DemoSpan&, const DemoSpan&) = default;
};

/// Layout: BOS I (SEP_X x SEP_Y y EOD){K}. Spans index only the text tokens.
struct PackedSequence {
  std::string task_id;
  std::vector<TokenId> token_ids;
  TokenRange instruction_span;
  std::vector<DemoSpan> demo_spans;

  [[nodiscard]] std::size_t K() const { return demo_spans.size(); }
  /// BOS plus instruction: the tokens every demonstration may attend to.
  [[nodiscard]] TokenRange instruction_region() const { return {0, instruction_span.end}; }
  /// SEP_X .. EOD of demonstration k (0-based).
  [[nodiscard]] TokenRange demo_region(std::size_t k) const {
    return {demo_spans[k].x.begin - 1, demo_spans[k].y.end + 1};
  }
  /// The standalone "instruction + demonstration k" sequence.
  [[nodiscard]] PackedSequence standalone(std::size_t k) const;

  friend bool operator==(const PackedSequence&, const PackedSequence&) = default;
};

/// Throws if spans are not ordered/contiguous or delimiters are misplaced.
void validate_sequence(const PackedSequence& seq, std::size_t vocab_size);

std::size_t demo_token_cost(const Vocabulary& vocab, const TaskExample& ex);
std::size_t instruction_token_cost(const Vocabulary& vocab, const TaskPool& pool);

PackedSequence pack_sequence(const TaskPool& pool, int k_target, std::size_t budget,
                             const Vocabulary& vocab, std::uint64_t seed);

/// Packs demonstrations in the given order, then SEP_X query SEP_Y with the
/// label withheld. Returns an empty vector if the prompt exceeds the budget.
std::vector<TokenId> pack_prompt(const TaskPool& pool, const std::vector<TaskExample>& demos,
                                 const TaskExample& query, std::size_t budget,
                                 const Vocabulary& vocab);

/// Downsamples so that no pool exceeds 10x the smallest; order is kept.
std::vector<TaskPool> balance_corpus(const std::vector<TaskPool>& pools, std::uint64_t seed = 0);

std::map<std::size_t, std::size_t> kshot_histogram(const std::vector<PackedSequence>& sequences);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Line-delimited task records {"task_id","input","label"} with optional
/// "instruction" and "split". Groups by (task_id, split) in first-seen order.
std::vector<TaskPool> load_task_pools(const std::filesystem::path& path);
/// As load_task_pools, but the file must hold exactly one pool.
TaskPool load_task_pool(const std::filesystem::path& path);
void save_task_pools(const std::vector<TaskPool>& pools, const std::filesystem::path& path);

void save_packed_corpus(const std::vector<PackedSequence>& seqs, const std::filesystem::path& path);
std::vector<PackedSequence> load_packed_corpus(const std::filesystem::path& path);

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);

}  // namespace dricl
