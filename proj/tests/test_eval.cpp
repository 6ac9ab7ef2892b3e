#include <doctest.h>

#include <cmath>
#include <map>

#include "dricl/eval.hpp"
#include "helpers.hpp"

using namespace dricl;

TEST_SUITE("eval") {

TEST_CASE("performance variance") {
  const std::vector<double> openbookqa = {0.69, 0.72, 0.77, 0.77, 0.78, 0.76, 0.76, 0.76, 0.80, 0.76, 0.76};
  CHECK(std::abs(performance_variance(openbookqa) - 8.0e-4) <= 5e-5);
  const std::vector<double> constant = {0.4, 0.4, 0.4};
  CHECK(performance_variance(constant) == 0.0);
  const std::vector<double> two = {0.0, 1.0};
  CHECK(performance_variance(two) == 0.25);
  const std::vector<double> one = {0.5};
  CHECK_THROWS_AS(performance_variance(one), Error);
}

TEST_CASE("loss variance by progress") {
  TrainLog log;
  for (std::size_t i = 0; i < 100; ++i) {
    StepLog s;
    s.step = i;
    s.many_losses = {static_cast<double>(i), static_cast<double>(i)};
    log.steps.push_back(s);
  }
  const auto v = loss_variance_by_progress(log, 5);
  REQUIRE(v.size() == 5);
  // Each bucket holds 20 consecutive integers: variance (20^2 - 1) / 12.
  for (double x : v) CHECK(x == doctest::Approx(399.0 / 12.0).epsilon(1e-12));
  for (auto& s : log.steps) s.many_losses = {1.25, 1.25, 1.25};
  for (double x : loss_variance_by_progress(log, 4)) CHECK(x == 0.0);
  CHECK_THROWS_AS(loss_variance_by_progress(log, 101), Error);
}

TEST_CASE("sweeps") {
  FamilySpec spec;
  const auto train_pool = generate_synthetic_tasks(spec, 100, 5, Split::train);
  const auto test_pool = generate_synthetic_tasks(spec, 100, 5, Split::test);
  const auto vocab = Vocabulary::build({train_pool, test_pool});
  const ModelDims dims{static_cast<int>(vocab.size()), 16, 1, 2, 128, 32};
  SweepOptions opts;
  opts.k_grid = {0, 1, 3, 5};
  opts.n_per_k = 50;
  opts.seed = 3;

  SUBCASE("a model that always emits the gold label scores 1") {
    // A single-label task: every gold label is "A", and the model emits A.
    TaskPool tr = train_pool, te = test_pool;
    for (auto* p : {&tr, &te}) {
      for (auto& ex : p->examples) ex.label_text = "A";
    }
    auto params = init_params<double>(dims, 1);
    params.final_gain.setZero();
    params.final_bias.setZero();
    params.final_bias(0, 0) = 1.0;
    params.output.setZero();
    params.output(0, vocab.id_of('A')) = 10.0;
    params.output(0, Vocabulary::kEod) = 1.0;
    for (bool constrained : {true, false}) {
      opts.constrain_to_labels = constrained;
      opts.max_label_len = 1;
      const auto r = kshot_sweep(params, vocab, te, tr, opts);
      for (const auto& row : r.rows) CHECK(row.accuracy == 1.0);
      CHECK(r.avg == 1.0);
      CHECK(r.max == 1.0);
      CHECK(r.variance == 0.0);
    }
  }
  SUBCASE("untrained models sit at chance at k=0") {
    opts.k_grid = {0};
    opts.n_per_k = 400;
    double total = 0.0;
    const int models = 6;
    for (int m = 0; m < models; ++m) {
      const auto params = init_params<double>(dims, 100 + m);
      total += kshot_sweep(params, vocab, test_pool, train_pool, opts).rows[0].accuracy;
    }
    const double mean = total / models;
    // A predictor that ignores the query scores the frequency of the label it
    // favours, so the mean lies between the rarest and the commonest label
    // frequency of the test pool, up to four binomial standard deviations.
    std::map<std::string, double> freq;
    for (const auto& ex : test_pool.examples) freq[ex.label_text] += 1.0 / test_pool.examples.size();
    double lo = 1.0, hi = 0.0;
    for (const auto& [label, f] : freq) {
      lo = std::min(lo, f);
      hi = std::max(hi, f);
    }
    CHECK(freq.size() == static_cast<std::size_t>(spec.num_labels));
    const double p = 1.0 / spec.num_labels;
    const double sigma = std::sqrt(p * (1 - p) / (400.0 * models));
    CHECK(mean >= lo - 4 * sigma);
    CHECK(mean <= hi + 4 * sigma);
  }
  SUBCASE("identical seeds give identical reports") {
    const auto params = init_params<double>(dims, 2);
    const auto a = kshot_sweep(params, vocab, test_pool, train_pool, opts);
    const auto b = kshot_sweep(params, vocab, test_pool, train_pool, opts);
    CHECK(format_report(a, ReportFormat::csv) == format_report(b, ReportFormat::csv));
    for (const auto& row : a.rows) {
      CHECK(row.accuracy >= 0.0);
      CHECK(row.accuracy <= 1.0);
      CHECK(row.n == 50);
    }
    double mx = 0.0, sum = 0.0;
    for (const auto& row : a.rows) {
      mx = std::max(mx, row.accuracy);
      sum += row.accuracy;
    }
    CHECK(a.max == mx);
    CHECK(a.avg == doctest::Approx(sum / 4));
  }
  SUBCASE("k values beyond the budget are skipped") {
    opts.k_grid = {0, 3, 60};
    const auto params = init_params<double>(dims, 2);
    const auto r = kshot_sweep(params, vocab, test_pool, train_pool, opts);
    CHECK_FALSE(r.rows[0].skipped);
    CHECK(r.rows[2].skipped);
    CHECK(r.accuracies().size() == 2);
    CHECK(format_report(r, ReportFormat::table).find("skipped") != std::string::npos);
  }
}

TEST_CASE("report files") {
  test::TempDir dir("report");
  SUBCASE("an empty grid gives a header-only csv") {
    emit_report(EvalReport{}, dir / "e.csv", ReportFormat::csv);
    CHECK(test::read_file(dir / "e.csv") == "k,accuracy\n");
  }
  SUBCASE("csv round-trip") {
    EvalReport r;
    r.task_id = "t";
    for (int k : {0, 1, 3, 5, 10}) {
      KShotResult row;
      row.k = k;
      row.n = 50;
      row.accuracy = 0.1 + 0.137 * k / 7.0;
      r.rows.push_back(row);
    }
    summarize(r);
    emit_report(r, dir / "r.csv", ReportFormat::csv);
    const auto back = parse_report_csv(dir / "r.csv");
    REQUIRE(back.rows.size() == r.rows.size());
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      CHECK(back.rows[i].k == r.rows[i].k);
      CHECK(back.rows[i].accuracy == r.rows[i].accuracy);
    }
    CHECK(back.avg == r.avg);
    CHECK(back.max == r.max);
    CHECK(back.variance == r.variance);
  }
  SUBCASE("comparison table") {
    EvalReport a, b;
    for (int k : {0, 5}) {
      KShotResult row;
      row.k = k;
      row.accuracy = 0.25 * (k + 1) / 6.0;
      a.rows.push_back(row);
      row.accuracy = 0.5;
      b.rows.push_back(row);
    }
    summarize(a);
    summarize(b);
    const auto table = comparison_table({"dricl", "metaicl"}, {a, b});
    CHECK(table.find("dricl") != std::string::npos);
    CHECK(table.find("metaicl") != std::string::npos);
    CHECK(table.find("0.5000") != std::string::npos);
    CHECK_THROWS_AS(comparison_table({"x"}, {a, b}), Error);
  }
}

}  // TEST_SUITE
