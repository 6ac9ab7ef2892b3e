#include <algorithm>
#include <set>

#include "dricl/corpus.hpp"

namespace dricl {

Vocabulary::Vocabulary(std::vector<char> symbols) : symbols_(std::move(symbols)) {
  std::sort(symbols_.begin(), symbols_.end(),
            [](char a, char b) { return static_cast<unsigned char>(a) < static_cast<unsigned char>(b); });
  if (std::adjacent_find(symbols_.begin(), symbols_.end()) != symbols_.end()) {
    throw Error("vocabulary symbols must be unique");
  }
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const auto c = static_cast<unsigned char>(symbols_[i]);
    if (c < 0x20) throw Error("control characters are reserved");
    lookup_[c] = static_cast<TokenId>(i) + kNumSpecial;
  }
}

Vocabulary Vocabulary::build(const std::vector<TaskPool>& pools) {
  std::set<char> chars;
  auto add = [&](const std::string& s) { chars.insert(s.begin(), s.end()); };
  for (const auto& p : pools) {
    add(p.instruction_text);
    for (const auto& ex : p.examples) {
      add(ex.input_text);
      add(ex.label_text);
    }
  }
  return Vocabulary(std::vector<char>(chars.begin(), chars.end()));
}

TokenId Vocabulary::id_of(char c) const {
  const TokenId id = lookup_[static_cast<unsigned char>(c)];
  if (id < 0) throw Error(std::string("character '") + c + "' is not in the vocabulary");
  return id;
}

char Vocabulary::symbol_of(TokenId id) const {
  if (id < kNumSpecial || static_cast<std::size_t>(id) >= size()) {
    throw Error("token id " + std::to_string(id) + " has no symbol");
  }
  return symbols_[static_cast<std::size_t>(id - kNumSpecial)];
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(id_of(c));
  return ids;
}

std::string Vocabulary::decode(const std::vector<TokenId>& ids) const {
  return decode(ids, {0, ids.size()});
}

std::string Vocabulary::decode(const std::vector<TokenId>& ids, TokenRange range) const {
  std::string out;
  for (std::size_t i = range.begin; i < range.end; ++i) {
    switch (ids.at(i)) {
      case kBos: out += "<bos>"; break;
      case kSepX: out += "<x>"; break;
      case kSepY: out += "<y>"; break;
      case kEod: out += "<eod>"; break;
      default: out.push_back(symbol_of(ids[i]));
    }
  }
  return out;
}

}  // namespace dricl
