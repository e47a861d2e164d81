#include <doctest.h>

#include <random>

#include "cref/error.hpp"
#include "cref/metrics.hpp"
#include "oracles.hpp"

using namespace cref;

namespace {

std::vector<std::vector<bool>> random_matrix(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> rows(1, 10);
  std::uniform_int_distribution<int> cols(1, 5);
  std::bernoulli_distribution cell(0.3);
  std::vector<std::vector<bool>> m(rows(rng));
  const int k = cols(rng);
  for (auto& row : m) {
    for (int c = 0; c < k; ++c) row.push_back(cell(rng));
  }
  return m;
}

const char* kIncorrect = "int main(){int a,b;cin>>a>>b;cout<<a-b;return 0;}";
const char* kCorrected = "int main(){int a,b;cin>>a>>b;cout<<a+b;return 0;}";

Corpus tiny_corpus() {
  Problem p1;
  p1.id = "p1";
  p1.tier = 1;
  p1.test_cases = {{1, "1 2\n", "3\n"}};
  Problem p2 = p1;
  p2.id = "p2";
  p2.tier = 4;
  Submission s1{"s1", "p1", "", kIncorrect, "guide", kCorrected};
  Submission s2{"s2", "p2", "", kIncorrect, "guide", kCorrected};
  return Corpus({p1, p2}, {s1, s2});
}

AttemptRecord attempt(const std::string& sub, int trial, bool success,
                      const std::string& code = kCorrected,
                      StrategyKind strategy = StrategyKind::cref()) {
  AttemptRecord a;
  a.submission_id = sub;
  a.provider_id = "m";
  a.strategy = strategy;
  a.trial_index = trial;
  a.complete = true;
  StageRecord st;
  st.extracted_code = code;
  st.passed = success;
  a.stages.push_back(st);
  a.success = success;
  if (success) a.succeeded_stage = 1;
  return a;
}

}  // namespace

TEST_CASE("top_k and avg_k agree with the brute-force oracle") {
  std::mt19937_64 rng(2024);
  for (int round = 0; round < 200; ++round) {
    const auto m = random_matrix(rng);
    const OutcomeMatrix matrix(m);
    const auto top = oracle::top_k(m);
    const auto avg = oracle::avg_k(m);
    CHECK(top_k(matrix).num * top.den == top.num * top_k(matrix).den);
    CHECK(avg_k(matrix).num * avg.den == avg.num * avg_k(matrix).den);
    // top >= avg as rationals
    CHECK(top_k(matrix).num * avg_k(matrix).den >= avg_k(matrix).num * top_k(matrix).den);
  }
}

TEST_CASE("ratios compare as rationals") {
  CHECK(Ratio{1, 2} == Ratio{2, 4});
  CHECK_FALSE(Ratio{1, 3} == Ratio{2, 5});
  CHECK(format_percent(Ratio{1, 3}) == "33.3%");
  CHECK(format_percent(Ratio{2, 3}) == "66.7%");
  CHECK(format_percent(Ratio{0, 6}) == "0.0%");
  CHECK(format_rpsr(std::nullopt) == "/");
  CHECK(format_rpsr(0.5) == "0.500");
}

TEST_CASE("outcome matrix rejects ragged rows and empty input") {
  OutcomeMatrix m;
  CHECK_THROWS_AS(top_k(m), Error);
  CHECK_THROWS_AS(avg_k(m), Error);
  m.add_row({true, false});
  CHECK_THROWS_AS(m.add_row({true}), Error);
  CHECK_THROWS_AS(m.add_row({}), Error);
}

TEST_CASE("rpsr anchors and rps range") {
  const SyntaxTree i = parse_ast(kIncorrect);
  const SyntaxTree c = parse_ast(kCorrected);
  CHECK(rpsr(i, c, c) == 1.0);
  CHECK(rpsr(i, c, i) == 0.0);
  CHECK(rps(i, i) == 0.0);
  CHECK_THROWS_AS(rpsr(i, i, c), Error);
  // a near-empty program on the incorrect side makes any real patch huge
  const SyntaxTree tiny = parse_ast("int main(){}");
  CHECK(rps(tiny, c) > 1.0);
  const PatchMeasure pm = measure_patch("s", kIncorrect, kCorrected, kCorrected);
  CHECK(pm.ted_ic == 1);
  CHECK(pm.rpsr == 1.0);
  CHECK(pm.incorrect_size == i.size());
}

TEST_CASE("aggregate builds one row per strategy and model") {
  const Corpus corpus = tiny_corpus();
  std::vector<AttemptRecord> attempts;
  for (int t = 1; t <= 3; ++t) {
    attempts.push_back(attempt("s1", t, t == 2));
    attempts.push_back(attempt("s2", t, false));
    attempts.push_back(attempt("s1", t, true, kCorrected, StrategyKind::baseline()));
    attempts.push_back(attempt("s2", t, t == 3, kIncorrect, StrategyKind::baseline()));
  }
  const MetricsReport r = aggregate(attempts, corpus);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].strategy == StrategyKind::baseline());
  CHECK(r.rows[0].top == Ratio{2, 2});
  CHECK(r.rows[0].avg == Ratio{4, 6});
  // s1 first success rpsr 1.0, s2 "repaired" to the incorrect code: 0.0
  REQUIRE(r.rows[0].rpsr.has_value());
  CHECK(*r.rows[0].rpsr == 0.5);
  CHECK(r.rows[0].tier_avg.at(1) == Ratio{3, 3});
  CHECK(r.rows[0].tier_avg.at(4) == Ratio{1, 3});
  CHECK(r.rows[1].top == Ratio{1, 2});
  CHECK(r.rows[1].avg == Ratio{1, 6});
  CHECK(r.rows[1].k == 3);

  const std::string md = r.to_markdown();
  CHECK(md.find("| m | 100.0% | 66.7% | 0.500 |") != std::string::npos);
  CHECK(md.find("| T4 | 33.3% |") != std::string::npos);
  CHECK(md.find("| T2 | / |") != std::string::npos);
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("model,strategy,k,submissions,top_k,avg_k,rpsr,rpsr_samples,T1", 0) == 0);
}

TEST_CASE("rpsr shows a slash when nothing succeeded and skips flagged ground truths") {
  const Corpus corpus = tiny_corpus();
  std::vector<AttemptRecord> attempts;
  for (int t = 1; t <= 2; ++t) {
    attempts.push_back(attempt("s1", t, false));
    attempts.push_back(attempt("s2", t, true));
  }
  AggregateOptions opts;
  opts.flagged_ground_truths = {"s2"};
  const MetricsReport r = aggregate(attempts, corpus, opts);
  CHECK_FALSE(r.rows[0].rpsr.has_value());
  CHECK(r.rows[0].avg == Ratio{1, 2});
  CHECK(r.to_markdown().find("| m | 50.0% | 50.0% | / |") != std::string::npos);
}

TEST_CASE("all-successes aggregation averages every successful trial") {
  const Corpus corpus = tiny_corpus();
  std::vector<AttemptRecord> attempts{attempt("s1", 1, true, kCorrected),
                                      attempt("s1", 2, true, kIncorrect)};
  AggregateOptions opts;
  opts.rpsr_aggregation = RpsrAggregation::kAllSuccesses;
  CHECK(*aggregate(attempts, corpus, opts).rows[0].rpsr == 0.5);
  CHECK(*aggregate(attempts, corpus).rows[0].rpsr == 1.0);
}

TEST_CASE("aggregate rejects malformed attempt sets") {
  const Corpus corpus = tiny_corpus();
  CHECK_THROWS_AS(aggregate({}, corpus), Error);
  CHECK_THROWS_AS(aggregate({attempt("s1", 1, true), attempt("s1", 1, false)}, corpus), Error);
  CHECK_THROWS_AS(aggregate({attempt("s1", 1, true), attempt("s1", 3, false)}, corpus), Error);
  CHECK_THROWS_AS(aggregate({attempt("nope", 1, true)}, corpus), Error);
}

TEST_CASE("unparseable repairs become warnings, not failures") {
  const Corpus corpus = tiny_corpus();
  const MetricsReport r = aggregate({attempt("s1", 1, true, "int main(){ /* open")}, corpus);
  CHECK_FALSE(r.rows[0].rpsr.has_value());
  CHECK(r.warnings.size() == 1);
}
