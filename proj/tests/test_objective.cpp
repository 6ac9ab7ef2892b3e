#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dricl/objective.hpp"
#include "dricl/oracle.hpp"
#include "dricl/verify.hpp"
#include "helpers.hpp"

using namespace dricl;

namespace {

LossTrace make_trace(std::vector<double> losses) {
  LossTrace t;
  t.losses = std::move(losses);
  return t;
}

DrIclConfig config(int W, int S, double gamma = 11.0) {
  DrIclConfig c;
  c.window_size = W;
  c.sample_size = S;
  c.gamma = gamma;
  return c;
}

double gaussian(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
}

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("window_index") {
  CHECK(window_index(5, 10) == 0);
  CHECK(window_index(10, 10) == 0);
  CHECK(window_index(11, 10) == 1);
  CHECK(window_index(25, 10) == 2);
  std::vector<double> losses(25);
  for (std::size_t k = 0; k < 25; ++k) losses[k] = 0.1 * static_cast<double>(k + 1);
  const auto model = importance_weights(make_trace(losses), 2, config(10, 1));
  std::vector<std::size_t> expect;
  for (std::size_t i = 11; i <= 20; ++i) expect.push_back(i);
  CHECK(model.indices == expect);
  CHECK_THROWS_AS(window_index(0, 10), Error);
}

TEST_CASE("importance weights") {
  SUBCASE("symmetric window peaks at the mean") {
    const auto m = importance_weights(make_trace({1.0, 2.0, 3.0, 0.0, 0.0, 0.0}), 1, config(3, 1));
    REQUIRE(m.weights.size() == 3);
    CHECK(m.weights[1] > m.weights[0]);
    CHECK(m.weights[1] > m.weights[2]);
    CHECK(m.mean == doctest::Approx(2.0));
  }
  SUBCASE("[1, 1, 1, 10] against a brute-force density") {
    const std::vector<double> w = {1.0, 1.0, 1.0, 10.0};
    std::vector<double> losses = w;
    losses.resize(8, 0.5);
    const auto m = importance_weights(make_trace(losses), 1, config(4, 1));
    double mean = 0.0;
    for (double x : w) mean += x / 4.0;
    double var = 0.0;
    for (double x : w) var += (x - mean) * (x - mean) / 4.0;
    const double q = 1.0 / (10.0 - 1.0);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(m.weights[i] == doctest::Approx(gaussian(w[i], mean, std::sqrt(var)) / q).epsilon(1e-12));
    }
    CHECK(m.weights[0] > m.weights[3]);
    CHECK(select_samples(m, 1) == std::vector<std::size_t>{1});
  }
  SUBCASE("equal losses give equal weights") {
    const auto m = importance_weights(make_trace({0.7, 0.7, 0.7, 0.7, 1.0}), 1, config(4, 2));
    for (double x : m.weights) CHECK(x == m.weights[0]);
    CHECK(select_samples(m, 2) == std::vector<std::size_t>{1, 2});
  }
}

TEST_CASE("select_samples") {
  ImportanceModel m;
  m.indices = {1, 2, 3};
  m.weights = {0.1, 0.9, 0.3};
  CHECK(select_samples(m, 1) == std::vector<std::size_t>{2});
  CHECK(select_samples(m, 2) == std::vector<std::size_t>{2, 3});
  m.weights = {0.5, 0.5, 0.5};
  CHECK(select_samples(m, 1) == std::vector<std::size_t>{1});
  ImportanceModel two;
  two.indices = {4, 5};
  two.weights = {0.2, 0.1};
  CHECK(select_samples(two, 3) == std::vector<std::size_t>{4, 5});
}

TEST_CASE("sampling loss, reward and advantage") {
  const auto t = make_trace({1.5, 1.0, 3.0});
  CHECK(sampling_loss(t, {1}) == 1.5);
  CHECK(sampling_loss(t, {2, 3}) == 2.0);
  const double s = sampling_loss(t, {1, 2, 3});
  CHECK(s >= 1.0);
  CHECK(s <= 3.0);

  CHECK(reward(2.0, 1.5) == 0.5);
  CHECK(reward(1.5, 1.5) == 0.0);
  CHECK(reward(1.0, 1.5) == -0.5);

  const auto c = config(10, 1, 11.0);
  CHECK(advantage(0.0, c) == 1.0);
  CHECK(advantage(11.0, c) == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
  CHECK(advantage(-11.0, c) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  // Strictly increasing inside the clip, flat outside it.
  double prev = 0.0;
  for (double r = -54.0; r <= 54.0; r += 1.5) {
    const double a = advantage(r, c);
    CHECK(a > prev);
    prev = a;
  }
  CHECK(advantage(80.0, c) == advantage(55.0, c));
  CHECK(advantage(-80.0, c) == advantage(-55.0, c));
  CHECK(advantage(55.0, c) == doctest::Approx(std::exp(5.0)));
}

TEST_CASE("loss arithmetic") {
  CHECK(reweighted_many_shot_loss(make_trace({1.0, 1.0}), {1.0, 1.0}).value == 1.0);
  CHECK(reweighted_many_shot_loss(make_trace({1.0, 2.0}), {1.0, 2.0}).value == 2.5);
  const auto t = make_trace({0.3, 1.7, 2.2, 0.9});
  CHECK(reweighted_many_shot_loss(t, {1, 1, 1, 1}).value == doctest::Approx((0.3 + 1.7 + 2.2 + 0.9) / 4));
  CHECK(differentiated_loss(1.0, 1.0, 0.2) == doctest::Approx(2.0));
  CHECK(differentiated_loss(0.5, 1.0, 0.4) == doctest::Approx(1.3));
  CHECK(differentiated_loss(0.8, 1.1, 0.0) == doctest::Approx(1.9));
  const auto node = differentiated_loss(reweighted_many_shot_loss(t, {1, 2, 1, 1}), mean_zero_shot_loss(t), 0.2);
  CHECK(node.many_weights[1] == doctest::Approx(1.2 * 2.0 / 4.0));
  CHECK(node.zero_weights[0] == doctest::Approx(0.8 / 4.0));
}

TEST_CASE("sequence objective") {
  const auto many = make_trace({1.0, 2.0, 0.5, 1.5, 2.5});
  const auto zero = make_trace({2.0, 2.0, 1.0, 3.0, 1.0});
  SUBCASE("K <= W is a plain weighted sum") {
    auto c = config(10, 1);
    c.alpha = 0.3;
    const auto obj = compute_sequence_objective(many, zero, c);
    for (const auto& r : obj.records) CHECK(r.advantage == 1.0);
    CHECK(obj.loss.value == doctest::Approx(1.3 * 7.5 / 5 + 0.7 * 9.0 / 5).epsilon(1e-15));
  }
  SUBCASE("metaicl is the plain many-shot mean") {
    auto c = config(2, 1, 0.1);
    c.mode = TrainMode::metaicl;
    const auto obj = compute_sequence_objective(many, zero, c);
    CHECK(std::abs(obj.loss.value - 7.5 / 5) <= 1e-10);
    for (double w : obj.loss.zero_weights) CHECK(w == 0.0);
    for (const auto& r : obj.records) CHECK(r.advantage == 1.0);
  }
  SUBCASE("it is the plain zero-shot mean") {
    auto c = config(2, 1);
    c.mode = TrainMode::it;
    const auto obj = compute_sequence_objective(many, zero, c);
    CHECK(obj.loss.value == doctest::Approx(9.0 / 5));
    for (double w : obj.loss.many_weights) CHECK(w == 0.0);
  }
  SUBCASE("reweight off forces neutral advantages") {
    auto c = config(2, 1, 0.1);
    c.reweight = false;
    const auto obj = compute_sequence_objective(many, zero, c);
    for (const auto& r : obj.records) CHECK(r.advantage == 1.0);
    CHECK(obj.loss.value == doctest::Approx(1.2 * 7.5 / 5 + 0.8 * 9.0 / 5));
  }
}

TEST_CASE("K=25, W=10, S=1 trace matches the oracle replay") {
  oracle::TraceFixture fx;
  fx.K = 25;
  for (std::size_t k = 1; k <= 25; ++k) fx.losses.push_back(static_cast<double>(k) / 10.0);
  fx.config = config(10, 1, 11.0);
  const auto engine = compute_advantages(make_trace(fx.losses), fx.config);
  CHECK(oracle::max_record_error(engine, oracle::replay_advantages(fx)) == 0.0);
  const auto& r21 = engine[20];
  CHECK(r21.k == 21);
  CHECK(r21.window == 2);
  CHECK(r21.sampled_indices == std::vector<std::size_t>{15});
  CHECK(r21.sampling_loss == 1.5);
  CHECK(r21.reward == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(r21.advantage == doctest::Approx(std::exp(0.6 / 11.0)).epsilon(1e-14));
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(engine[k].window == 0);
    CHECK(engine[k].advantage == 1.0);
    CHECK(engine[k].sampled_indices.empty());
  }
}

TEST_CASE("advantages flatten as gamma grows") {
  oracle::FixtureOptions bounded;
  bounded.spike_rate = 0.0;  // losses stay in [0, 6], so |R| <= 6
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CAPTURE(seed);
    auto fx = oracle::make_fixture(seed, bounded);
    fx.config.gamma = 1e9;
    double worst = 0.0;
    for (const auto& r : compute_advantages(make_trace(fx.losses), fx.config)) {
      worst = std::max(worst, std::abs(r.advantage - 1.0));
    }
    CHECK(worst <= 1e-8);
  }
}

TEST_CASE("advantage deviation is bounded by the reward clip") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CAPTURE(seed);
    auto fx = oracle::make_fixture(seed);
    fx.config.gamma = 1e9;
    const double bound = std::expm1(fx.config.reward_clip / fx.config.gamma) * (1.0 + 1e-12);
    for (const auto& r : compute_advantages(make_trace(fx.losses), fx.config)) {
      CHECK(std::abs(r.advantage - 1.0) <= bound);
    }
  }
}

TEST_CASE("replay agreement and fault detection") {
  const auto ok = run_replay_suite({200, 0, 1e-12});
  CHECK(ok.passed);
  CHECK(ok.max_error <= 1e-12);
  for (const char* fault : {"missing-clip", "gamma-ignored", "stale-window"}) {
    CAPTURE(fault);
    const auto bad = run_replay_suite({200, 0, 1e-12}, faulty_advantage_engine(fault));
    CHECK_FALSE(bad.passed);
    CHECK(bad.failing_seed.has_value());
  }
  CHECK_THROWS_AS(faulty_advantage_engine("nonsense"), Error);
}

TEST_CASE("audit log round-trip") {
  const auto fx = oracle::make_fixture(3);
  auto trace = make_trace(fx.losses);
  trace.sequence_id = 42;
  const auto records = compute_advantages(trace, fx.config);
  std::stringstream ss;
  write_audit_header(ss, fx.config);
  write_audit_records(ss, trace, records);
  test::TempDir dir("audit");
  test::write_file(dir / "a.jsonl", ss.str());
  const auto log = read_audit_log(dir / "a.jsonl");
  CHECK(log.config == fx.config);
  REQUIRE(log.entries.size() == records.size());
  oracle::TraceFixture replay;
  replay.config = log.config;
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(log.entries[i].record == records[i]);
    CHECK(log.entries[i].sequence_id == 42);
    replay.losses.push_back(log.entries[i].many_loss);
  }
  replay.K = replay.losses.size();
  CHECK(oracle::max_record_error(oracle::replay_advantages(replay), records) == 0.0);
}

TEST_CASE("config validation") {
  auto c = config(3, 4);
  CHECK_THROWS_AS(c.validate(), Error);
  c = config(3, 1, 0.0);
  CHECK_THROWS_AS(c.validate(), Error);
  c = config(3, 1);
  c.alpha = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(parse_train_mode("sft"), Error);
  CHECK(parse_train_mode("metaicl") == TrainMode::metaicl);
}

}  // TEST_SUITE
