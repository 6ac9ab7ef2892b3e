#include <doctest.h>

#include "dricl/experiment.hpp"
#include "dricl/serialize.hpp"
#include "helpers.hpp"

using namespace dricl;
using nlohmann::json;

namespace {

CorpusConfig small_corpus(std::uint64_t seed) {
  CorpusConfig c;
  c.count = 60;
  c.tasks = 3;
  c.eval_tasks = 2;
  c.k_target = 12;
  c.budget = 96;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("run config json") {
  RunConfig c;
  c.corpus.family.family = TaskFamily::modular_arithmetic;
  c.corpus.label_noise = 0.2;
  c.model.width = 32;
  c.train.dricl.gamma = 7.0;
  c.train.precision = Precision::f32;
  c.eval.k_grid = {0, 2};
  c.eval.constrain_to_labels = false;
  RunConfig back;
  from_json(json(c), back);
  CHECK(json(back) == json(c));

  SUBCASE("partial files layer over defaults") {
    RunConfig layered;
    from_json(json::parse(R"({"train": {"dricl": {"alpha": 0.4}}, "model": {"layers": 3}})"), layered);
    CHECK(layered.train.dricl.alpha == 0.4);
    CHECK(layered.train.dricl.gamma == 11.0);
    CHECK(layered.model.layers == 3);
    CHECK(layered.model.width == RunConfig{}.model.width);
  }
  SUBCASE("unknown keys are rejected") {
    RunConfig r;
    CHECK_THROWS_WITH_AS(from_json(json::parse(R"({"train": {"dricl": {"gama": 3}}})"), r),
                         doctest::Contains("train.dricl.gama"), Error);
    CHECK_THROWS_AS(from_json(json::parse(R"({"trainer": {}})"), r), Error);
  }
  SUBCASE("validation") {
    RunConfig r;
    r.corpus.label_noise = 1.5;
    CHECK_THROWS_AS(r.validate(), Error);
    r = RunConfig{};
    r.eval.k_grid = {};
    CHECK_THROWS_AS(r.validate(), Error);
    r = RunConfig{};
    r.model.heads = 3;
    CHECK_THROWS_AS(r.validate(), Error);
    CHECK_NOTHROW(RunConfig{}.validate());
  }
}

TEST_CASE("datasets") {
  const auto a = generate_dataset(small_corpus(4));
  const auto b = generate_dataset(small_corpus(4));
  CHECK(a.train_pools == b.train_pools);
  CHECK(a.eval_pools == b.eval_pools);
  CHECK(a.sequences == b.sequences);
  CHECK(a.train_pools.size() == 3);
  REQUIRE(a.eval_pools.size() == 4);
  CHECK(a.eval_pools[0].split == Split::train);
  CHECK(a.eval_pools[1].split == Split::test);
  CHECK(a.eval_pools[0].task_id == a.eval_pools[1].task_id);
  for (const auto& t : a.train_pools) {
    for (const auto& e : a.eval_pools) CHECK(t.task_id != e.task_id);
  }
  for (const auto& s : a.sequences) CHECK(s.token_ids.size() <= 96);

  test::TempDir dir("dataset");
  save_dataset(a, dir.path());
  const auto back = load_dataset(dir.path());
  CHECK(back.train_pools == a.train_pools);
  CHECK(back.eval_pools == a.eval_pools);
  CHECK(back.vocab == a.vocab);
  CHECK(back.sequences == a.sequences);

  SUBCASE("label noise touches training pools only") {
    auto cfg = small_corpus(4);
    cfg.label_noise = 0.3;
    const auto noisy = generate_dataset(cfg);
    CHECK(noisy.eval_pools == a.eval_pools);
    std::size_t changed = 0, total = 0;
    for (std::size_t p = 0; p < a.train_pools.size(); ++p) {
      for (std::size_t i = 0; i < a.train_pools[p].examples.size(); ++i) {
        changed += a.train_pools[p].examples[i].label_text != noisy.train_pools[p].examples[i].label_text;
        ++total;
      }
    }
    CHECK(changed > total / 6);
    CHECK(changed < total / 2);
  }
}

TEST_CASE("training and evaluation pipeline") {
  const auto data = generate_dataset(small_corpus(5));
  RunConfig cfg;
  cfg.model = {0, 16, 1, 2, 0, 32};
  cfg.train.iterations = 2;
  cfg.eval.k_grid = {0, 1, 3};
  cfg.eval.n_per_k = 20;
  const auto dims = effective_dims(cfg, data.vocab, data.sequences);
  CHECK(dims.vocab == static_cast<int>(data.vocab.size()));
  std::size_t longest = 0;
  for (const auto& s : data.sequences) longest = std::max(longest, s.token_ids.size());
  CHECK(dims.max_positions == static_cast<int>(longest));

  for (auto precision : {Precision::f64, Precision::f32}) {
    cfg.train.precision = precision;
    const auto out = run_training(cfg, data.vocab, data.sequences);
    CHECK(out.model.precision == precision);
    CHECK(out.log.steps.size() == 2 * data.sequences.size());
    const auto params = out.model.as_double();
    CHECK(params.dims == dims);
    const auto reports = evaluate_tasks(params, data.vocab, data.eval_pools, cfg.eval);
    CHECK(reports.size() == 2);
    const auto pooled = pooled_report(reports);
    REQUIRE(pooled.rows.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(pooled.rows[i].accuracy == doctest::Approx((reports[0].rows[i].accuracy + reports[1].rows[i].accuracy) / 2));
    }
  }
  cfg.model.max_positions = 8;
  CHECK_THROWS_AS(run_training(cfg, data.vocab, data.sequences), Error);
}

}  // TEST_SUITE
