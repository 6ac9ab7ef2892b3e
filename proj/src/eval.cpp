#include "dricl/eval.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace dricl {

std::vector<double> EvalReport::accuracies() const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (!r.skipped) out.push_back(r.accuracy);
  }
  return out;
}

double performance_variance(std::span<const double> values) {
  if (values.size() < 2) throw Error("performance variance needs at least two values");
  // Deviations are taken from the first value so a constant list gives exactly 0.
  const double n = static_cast<double>(values.size());
  const double shift = values.front();
  double sum = 0.0;
  for (double v : values) sum += v - shift;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - shift - mean) * (v - shift - mean);
  return ss / n;
}

void summarize(EvalReport& report) {
  const auto acc = report.accuracies();
  report.avg = acc.empty() ? 0.0 : std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
  report.max = acc.empty() ? 0.0 : *std::max_element(acc.begin(), acc.end());
  report.variance = acc.size() >= 2 ? performance_variance(acc) : 0.0;
}

namespace {

std::vector<std::size_t> draw_indices(std::mt19937_64& rng, std::size_t pool_size, std::size_t count) {
  std::vector<std::size_t> out;
  if (pool_size >= count) {
    std::vector<std::size_t> idx(pool_size);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool_size - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    out.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool_size - 1);
    for (std::size_t i = 0; i < count; ++i) out.push_back(pick(rng));
  }
  return out;
}

}  // namespace

template <typename Scalar>
EvalReport kshot_sweep(const ModelParams<Scalar>& params, const Vocabulary& vocab, const TaskPool& test_pool,
                       const TaskPool& train_pool, const SweepOptions& opts) {
  if (opts.n_per_k < 1) throw Error("n per k must be >= 1");
  if (test_pool.examples.empty() || train_pool.examples.empty()) throw Error("empty pool");
  std::size_t max_label = opts.max_label_len;
  if (max_label == 0) {
    for (const auto* pool : {&test_pool, &train_pool}) {
      for (const auto& ex : pool->examples) max_label = std::max(max_label, ex.label_text.size());
    }
  }
  const std::size_t budget = std::min(opts.budget, static_cast<std::size_t>(params.dims.max_positions));
  std::vector<std::vector<TokenId>> candidates;
  if (opts.constrain_to_labels) {
    std::set<std::string> labels;
    for (const auto* pool : {&test_pool, &train_pool}) {
      for (const auto& l : label_set(*pool)) labels.insert(l);
    }
    for (const auto& l : labels) candidates.push_back(vocab.encode(l));
  }
  auto decode = [&](const std::vector<TokenId>& prompt) {
    if (!opts.constrain_to_labels) return generate_label(params, prompt, max_label, vocab);
    std::string out;
    for (TokenId id : generate_label_constrained(params, prompt, candidates)) out.push_back(vocab.symbol_of(id));
    return out;
  };

  EvalReport report;
  report.task_id = test_pool.task_id;
  for (int k : opts.k_grid) {
    if (k < 0) throw Error("k must be >= 0");
    KShotResult row;
    row.k = k;
    row.n = opts.n_per_k;
    std::mt19937_64 rng(derive_seed(opts.seed, "sweep:" + test_pool.task_id + ":k=" + std::to_string(k)));
    const auto queries = draw_indices(rng, test_pool.examples.size(), opts.n_per_k);
    for (std::size_t q : queries) {
      const auto& query = test_pool.examples[q];
      std::vector<TaskExample> demos;
      for (std::size_t i : draw_indices(rng, train_pool.examples.size(), static_cast<std::size_t>(k))) {
        demos.push_back(train_pool.examples[i]);
      }
      const auto prompt = pack_prompt(train_pool, demos, query, budget, vocab);
      if (prompt.empty()) {
        row.skipped = true;
        row.note = std::to_string(k) + " demonstrations do not fit within " + std::to_string(budget) + " tokens";
        break;
      }
      if (decode(prompt) == query.label_text) ++row.matches;
    }
    row.accuracy = row.skipped ? 0.0 : static_cast<double>(row.matches) / static_cast<double>(row.n);
    if (row.skipped) row.matches = 0;
    report.rows.push_back(std::move(row));
  }
  summarize(report);
  return report;
}

template EvalReport kshot_sweep(const ModelParams<float>&, const Vocabulary&, const TaskPool&, const TaskPool&,
                                const SweepOptions&);
template EvalReport kshot_sweep(const ModelParams<double>&, const Vocabulary&, const TaskPool&, const TaskPool&,
                                const SweepOptions&);

std::vector<double> loss_variance_by_progress(const TrainLog& log, std::size_t n_buckets) {
  if (log.steps.empty()) throw Error("empty train log");
  if (n_buckets < 1) throw Error("need at least one bucket");
  const std::size_t n = log.steps.size();
  std::vector<double> out;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    const std::size_t begin = b * n / n_buckets;
    const std::size_t end = (b + 1) * n / n_buckets;
    if (begin == end) throw Error("progress bucket " + std::to_string(b) + " is empty");
    std::vector<double> losses;
    for (std::size_t s = begin; s < end; ++s) {
      losses.insert(losses.end(), log.steps[s].many_losses.begin(), log.steps[s].many_losses.end());
    }
    out.push_back(losses.size() >= 2 ? performance_variance(losses) : 0.0);
  }
  return out;
}

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_num(const std::string& s, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error("report line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_report(const EvalReport& report, ReportFormat format) {
  std::ostringstream out;
  const auto acc = report.accuracies();
  if (format == ReportFormat::csv) {
    out << "k,accuracy\n";
    for (const auto& r : report.rows) {
      if (!r.skipped) out << r.k << ',' << num(r.accuracy) << '\n';
    }
    if (!acc.empty()) {
      out << "AVG," << num(report.avg) << '\n';
      out << "MAX," << num(report.max) << '\n';
      out << "VAR," << num(report.variance) << '\n';
    }
    return out.str();
  }
  out << "task: " << report.task_id << '\n';
  out << std::setw(6) << "k" << "  " << std::setw(10) << "accuracy" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : report.rows) {
    out << std::setw(6) << r.k << "  ";
    if (r.skipped) {
      out << std::setw(10) << "skipped" << "  (" << r.note << ")\n";
    } else {
      out << std::setw(10) << r.accuracy << '\n';
    }
  }
  if (!acc.empty()) {
    out << std::setw(6) << "AVG" << "  " << std::setw(10) << report.avg << '\n';
    out << std::setw(6) << "MAX" << "  " << std::setw(10) << report.max << '\n';
    out << std::setw(6) << "VAR" << "  " << std::scientific << std::setprecision(2) << std::setw(10)
        << report.variance << '\n';
  }
  return out.str();
}

void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << format_report(report, format);
  if (!out) throw Error("write failed: " + path.string());
}

EvalReport parse_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  EvalReport report;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (line == 1) {
      if (text != "k,accuracy") throw Error("report is missing its k,accuracy header");
      continue;
    }
    const auto comma = text.find(',');
    if (comma == std::string::npos) throw Error("report line " + std::to_string(line) + ": expected two columns");
    const std::string key = text.substr(0, comma);
    const double value = parse_num(text.substr(comma + 1), line);
    if (key == "AVG") {
      report.avg = value;
    } else if (key == "MAX") {
      report.max = value;
    } else if (key == "VAR") {
      report.variance = value;
    } else {
      KShotResult r;
      r.k = static_cast<int>(parse_num(key, line));
      r.accuracy = value;
      report.rows.push_back(r);
    }
  }
  if (line == 0) throw Error("empty report file");
  return report;
}

std::string comparison_table(const std::vector<std::string>& names, const std::vector<EvalReport>& reports) {
  if (names.size() != reports.size()) throw Error("one name per report");
  std::vector<int> ks;
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      if (std::find(ks.begin(), ks.end(), r.k) == ks.end()) ks.push_back(r.k);
    }
  }
  std::sort(ks.begin(), ks.end());
  std::ostringstream out;
  out << std::setw(6) << "k";
  for (const auto& n : names) out << "  " << std::setw(10) << n;
  out << '\n' << std::fixed << std::setprecision(4);
  auto cell = [&](const EvalReport& rep, int k) -> std::string {
    for (const auto& r : rep.rows) {
      if (r.k == k) {
        if (r.skipped) return "skipped";
        std::ostringstream s;
        s << std::fixed << std::setprecision(4) << r.accuracy;
        return s.str();
      }
    }
    return "-";
  };
  for (int k : ks) {
    out << std::setw(6) << k;
    for (const auto& rep : reports) out << "  " << std::setw(10) << cell(rep, k);
    out << '\n';
  }
  out << std::setw(6) << "AVG";
  for (const auto& rep : reports) out << "  " << std::setw(10) << rep.avg;
  out << '\n' << std::setw(6) << "MAX";
  for (const auto& rep : reports) out << "  " << std::setw(10) << rep.max;
  out << '\n' << std::setw(6) << "VAR" << std::scientific << std::setprecision(2);
  for (const auto& rep : reports) out << "  " << std::setw(10) << rep.variance;
  out << '\n';
  return out.str();
}

}  // namespace dricl
