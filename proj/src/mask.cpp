#include "dricl/mask.hpp"

#include <algorithm>
#include <numeric>

namespace dricl {

std::string_view to_string(MaskMode mode) {
  return mode == MaskMode::causal_full ? "causal-full" : "pcw-parallel";
}

int MaskSpec::max_position() const {
  return positions.empty() ? -1 : *std::max_element(positions.begin(), positions.end());
}

MaskSpec causal_mask(std::size_t length) {
  MaskSpec m;
  m.mode = MaskMode::causal_full;
  m.group.assign(length, -1);
  m.positions.resize(length);
  std::iota(m.positions.begin(), m.positions.end(), 0);
  return m;
}

MaskSpec build_mask(const PackedSequence& seq, MaskMode mode) {
  const std::size_t n = seq.token_ids.size();
  if (mode == MaskMode::causal_full) {
    MaskSpec m = causal_mask(n);
    m.instruction_span = seq.instruction_span;
    m.demo_spans = seq.demo_spans;
    return m;
  }
  if (seq.demo_spans.empty() || seq.instruction_span.empty()) {
    throw Error("pcw-parallel mask requires instruction and demonstration spans");
  }
  MaskSpec m;
  m.mode = mode;
  m.instruction_span = seq.instruction_span;
  m.demo_spans = seq.demo_spans;
  m.group.assign(n, -1);
  m.positions.assign(n, 0);
  const TokenRange instr = seq.instruction_region();
  for (std::size_t i = instr.begin; i < instr.end; ++i) m.positions[i] = static_cast<int>(i);
  for (std::size_t k = 0; k < seq.K(); ++k) {
    const TokenRange region = seq.demo_region(k);
    if (region.end > n || region.begin < instr.end) throw Error("demonstration span outside the sequence");
    for (std::size_t i = region.begin; i < region.end; ++i) {
      m.group[i] = static_cast<int>(k);
      m.positions[i] = static_cast<int>(instr.end + (i - region.begin));
    }
  }
  return m;
}

}  // namespace dricl
