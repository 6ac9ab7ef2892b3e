#include <algorithm>
#include <fstream>
#include <json.hpp>

#include "dricl/corpus.hpp"

namespace dricl {

using nlohmann::json;

namespace {

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::string string_field(const json& rec, const char* name, std::size_t line) {
  auto it = rec.find(name);
  if (it == rec.end()) throw Error("line " + std::to_string(line) + ": missing field \"" + name + "\"");
  if (!it->is_string()) throw Error("line " + std::to_string(line) + ": field \"" + name + "\" must be a string");
  return it->get<std::string>();
}

json range_json(TokenRange r) { return json::array({r.begin, r.end}); }

TokenRange range_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error("span must be [start, end)");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

}  // namespace

std::vector<TaskPool> load_task_pools(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<TaskPool> pools;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::parse_error& e) {
      throw Error("line " + std::to_string(line) + ": malformed record (" + e.what() + ")");
    }
    if (!rec.is_object()) throw Error("line " + std::to_string(line) + ": record must be an object");
    TaskExample ex{string_field(rec, "task_id", line), string_field(rec, "input", line),
                   string_field(rec, "label", line)};
    if (ex.input_text.empty() || ex.label_text.empty()) {
      throw Error("line " + std::to_string(line) + ": empty input or label");
    }
    const Split split = rec.contains("split") ? parse_split(string_field(rec, "split", line)) : Split::train;
    auto it = std::find_if(pools.begin(), pools.end(),
                           [&](const TaskPool& p) { return p.task_id == ex.task_id && p.split == split; });
    if (it == pools.end()) {
      TaskPool p;
      p.task_id = ex.task_id;
      p.split = split;
      p.instruction_text = rec.contains("instruction") ? string_field(rec, "instruction", line) : "Answer:";
      pools.push_back(std::move(p));
      it = std::prev(pools.end());
    }
    it->examples.push_back(std::move(ex));
  }
  if (pools.empty()) throw Error("empty pool");
  return pools;
}

TaskPool load_task_pool(const std::filesystem::path& path) {
  auto pools = load_task_pools(path);
  if (pools.size() != 1) {
    throw Error(path.string() + " holds " + std::to_string(pools.size()) + " pools, expected exactly one");
  }
  return std::move(pools.front());
}

void save_task_pools(const std::vector<TaskPool>& pools, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& p : pools) {
    for (const auto& ex : p.examples) {
      json rec = {{"task_id", ex.task_id},
                  {"input", ex.input_text},
                  {"label", ex.label_text},
                  {"instruction", p.instruction_text},
                  {"split", std::string(to_string(p.split))}};
      out << rec.dump() << '\n';
    }
  }
  if (!out) throw Error("write failed: " + path.string());
}

void save_packed_corpus(const std::vector<PackedSequence>& seqs, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& s : seqs) {
    json spans = json::array();
    for (const auto& d : s.demo_spans) spans.push_back({{"x", range_json(d.x)}, {"y", range_json(d.y)}});
    json rec = {{"task_id", s.task_id},
                {"token_ids", s.token_ids},
                {"instruction_span", range_json(s.instruction_span)},
                {"demo_spans", std::move(spans)}};
    out << rec.dump() << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<PackedSequence> load_packed_corpus(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<PackedSequence> seqs;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json rec = json::parse(text);
      PackedSequence s;
      s.task_id = rec.at("task_id").get<std::string>();
      s.token_ids = rec.at("token_ids").get<std::vector<TokenId>>();
      s.instruction_span = range_from(rec.at("instruction_span"));
      for (const auto& d : rec.at("demo_spans")) s.demo_spans.push_back({range_from(d.at("x")), range_from(d.at("y"))});
      seqs.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw Error("line " + std::to_string(line) + ": malformed packed record (" + e.what() + ")");
    } catch (const Error& e) {
      throw Error("line " + std::to_string(line) + ": " + e.what());
    }
  }
  return seqs;
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << json({{"symbols", std::string(vocab.symbols().begin(), vocab.symbols().end())}}).dump() << '\n';
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    const auto j = json::parse(in);
    const auto s = j.at("symbols").get<std::string>();
    return Vocabulary(std::vector<char>(s.begin(), s.end()));
  } catch (const json::exception& e) {
    throw Error("malformed vocabulary file " + path.string() + ": " + e.what());
  }
}

}  // namespace dricl
