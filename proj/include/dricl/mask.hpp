#pragma once

#include <vector>

#include "dricl/corpus.hpp"

namespace dricl {

/// causal_full gives every demonstration the preceding ones as context
/// (many-shot); pcw_parallel cuts every demonstration off from the others
/// so it only sees the instruction (zero-shot).
enum class MaskMode { causal_full, pcw_parallel };

std::string_view to_string(MaskMode mode);

/// Concrete attention visibility and position indices for one sequence.
///
/// Under pcw_parallel, token groups are: -1 for BOS + instruction, k for the
/// k-th demonstration region (SEP_X .. EOD). A query sees a key iff the key
/// is not later than the query and either lies in the instruction group or
/// shares the query's group. Positions restart at the instruction length for
/// every demonstration.
struct MaskSpec {
  MaskMode mode = MaskMode::causal_full;
  TokenRange instruction_span;
  std::vector<DemoSpan> demo_spans;
  std::vector<int> group;
  std::vector<int> positions;

  [[nodiscard]] std::size_t length() const { return positions.size(); }
  [[nodiscard]] bool visible(std::size_t query, std::size_t key) const {
    if (key > query) return false;
    if (mode == MaskMode::causal_full) return true;
    return group[key] < 0 || group[key] == group[query];
  }
  [[nodiscard]] int max_position() const;
};

MaskSpec build_mask(const PackedSequence& seq, MaskMode mode);
/// Plain causal mask over an arbitrary prefix (generation, evaluation).
MaskSpec causal_mask(std::size_t length);

}  // namespace dricl
