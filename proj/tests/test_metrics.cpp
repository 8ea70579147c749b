#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "fairsearch/metrics.hpp"
#include "support.hpp"

using namespace fairsearch;

namespace {

// One query whose ranked ids are g0, g1, ... labeled by the given string
// of M/F/N characters.
struct Fixture {
  LabelMap labels;
  std::vector<RetrievalResult> results;

  void add_query(const std::string& text_id, const std::string& genders) {
    RetrievalResult r{text_id, {}};
    for (std::size_t i = 0; i < genders.size(); ++i) {
      const auto id = text_id + "_img" + std::to_string(i);
      labels[id] = genders[i] == 'M' ? Gender::Male : genders[i] == 'F' ? Gender::Female : Gender::Neutral;
      r.ranked.push_back({id, 1.0 - 0.01 * static_cast<double>(i)});
    }
    results.push_back(std::move(r));
  }
};

double oracle_bias(const std::vector<RetrievalResult>& results, const LabelMap& labels, std::size_t k) {
  double total = 0.0;
  for (const auto& r : results) {
    int m = 0, f = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto g = labels.at(r.ranked[i].image_id);
      if (g == Gender::Male) ++m;
      if (g == Gender::Female) ++f;
    }
    total += m + f == 0 ? 0.0 : static_cast<double>(m - f) / static_cast<double>(m + f);
  }
  return total / static_cast<double>(results.size());
}

double oracle_recall(const std::vector<RetrievalResult>& results, const TruthMap& truth, std::size_t k) {
  int hits = 0;
  for (const auto& r : results) {
    for (std::size_t i = 0; i < k; ++i) hits += r.ranked[i].image_id == truth.at(r.text_id);
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

struct RandomCase {
  LabelMap labels;
  TruthMap truth;
  std::vector<RetrievalResult> results;
};

RandomCase random_case(std::mt19937_64& rng) {
  RandomCase c;
  const std::size_t n_images = 5 + rng() % 40;
  const std::size_t n_queries = 1 + rng() % 30;
  const std::size_t depth = 1 + rng() % n_images;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n_images; ++i) {
    ids.push_back("i" + std::to_string(i));
    c.labels[ids.back()] = static_cast<Gender>(rng() % 3);
  }
  for (std::size_t q = 0; q < n_queries; ++q) {
    auto order = ids;
    std::shuffle(order.begin(), order.end(), rng);
    RetrievalResult r{"t" + std::to_string(q), {}};
    for (std::size_t i = 0; i < depth; ++i) r.ranked.push_back({order[i], 0.0});
    c.truth[r.text_id] = ids[rng() % n_images];
    c.results.push_back(std::move(r));
  }
  return c;
}

}  // namespace

TEST_CASE("delta_k examples") {
  Fixture f;
  f.add_query("a", "MMFN");
  f.add_query("b", "NNNN");
  f.add_query("c", "FFF");
  f.add_query("d", "MMM");
  CHECK(delta_k(f.results[0], f.labels) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(delta_k(f.results[1], f.labels) == 0.0);
  CHECK(delta_k(f.results[2], f.labels) == -1.0);
  CHECK(delta_k(f.results[3], f.labels) == 1.0);
  CHECK(delta_k(std::span<const ScoredImage>{}, f.labels) == 0.0);

  RetrievalResult unknown{"x", {{"nobody", 1.0}}};
  CHECK_THROWS_AS(delta_k(unknown, f.labels), ValidationError);
}

TEST_CASE("bias_at_k examples") {
  Fixture f;
  f.add_query("a", "MMM");
  f.add_query("b", "FFF");
  CHECK(bias_at_k(f.results, f.labels, 3).bias_at_k == 0.0);

  Fixture g;
  g.add_query("q", "MFMMNNNNNN");
  auto report = bias_at_k(g.results, g.labels, 10);
  CHECK(report.bias_at_k == 0.5);
  CHECK(report.n_queries == 1);
  REQUIRE(report.per_query.size() == 1);
  CHECK(report.per_query[0] == std::pair<std::string, double>{"q", 0.5});
  CHECK(report.male_share() == 0.75);
}

TEST_CASE("bias_at_k errors") {
  Fixture f;
  f.add_query("a", "MF");
  CHECK_THROWS_AS(bias_at_k(std::vector<RetrievalResult>{}, f.labels, 1), ValidationError);
  CHECK_THROWS_AS(bias_at_k(f.results, f.labels, 3), ValidationError);
  CHECK_THROWS_AS(bias_at_k(f.results, f.labels, 0), ValidationError);
}

TEST_CASE("male share is (1 + bias) / 2") {
  BiasReport r;
  r.bias_at_k = 0.3960;
  CHECK(r.male_share() == (1.0 + 0.3960) / 2.0);
  CHECK(r.male_share() == doctest::Approx(0.698));
}

TEST_CASE("recall_at_k examples") {
  Fixture f;
  for (int q = 0; q < 4; ++q) f.add_query("t" + std::to_string(q), "NNNNNNN");
  TruthMap first, never, mixed;
  for (int q = 0; q < 4; ++q) {
    const auto t = "t" + std::to_string(q);
    first[t] = t + "_img0";
    never[t] = "elsewhere";
    mixed[t] = t + (q < 2 ? "_img4" : "_img6");
  }
  CHECK(recall_at_k(f.results, first, 1).recall_at_k == 1.0);
  CHECK(recall_at_k(f.results, never, 7).recall_at_k == 0.0);
  auto r = recall_at_k(f.results, mixed, 5);
  CHECK(r.recall_at_k == 0.5);
  CHECK(r.hits == 2);

  TruthMap partial{{"t0", "x"}};
  CHECK_THROWS_AS(recall_at_k(f.results, partial, 1), ValidationError);
}

TEST_CASE("metrics match counting oracles on random configurations") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    auto c = random_case(rng);
    const std::size_t depth = c.results.front().ranked.size();
    for (std::size_t k = 1; k <= depth; k += 1 + depth / 5) {
      CHECK(std::fabs(bias_at_k(c.results, c.labels, k).bias_at_k - oracle_bias(c.results, c.labels, k)) <= 1e-12);
      CHECK(std::fabs(recall_at_k(c.results, c.truth, k).recall_at_k - oracle_recall(c.results, c.truth, k)) <=
            1e-12);
    }
  }
}

TEST_CASE("metric properties") {
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 200; ++trial) {
    auto c = random_case(rng);
    const std::size_t k = 1 + rng() % c.results.front().ranked.size();
    const auto bias = bias_at_k(c.results, c.labels, k).bias_at_k;
    const auto recall = recall_at_k(c.results, c.truth, k).recall_at_k;
    CHECK(bias >= -1.0);
    CHECK(bias <= 1.0);
    CHECK(recall >= 0.0);
    CHECK(recall <= 1.0);

    auto swapped = c.labels;
    for (auto& [id, g] : swapped) {
      if (g == Gender::Male) g = Gender::Female;
      else if (g == Gender::Female) g = Gender::Male;
    }
    CHECK(bias_at_k(c.results, swapped, k).bias_at_k == doctest::Approx(-bias).epsilon(1e-12));

    auto shuffled = c.results;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(bias_at_k(shuffled, c.labels, k).bias_at_k == doctest::Approx(bias).epsilon(1e-12));
    CHECK(recall_at_k(shuffled, c.truth, k).recall_at_k == doctest::Approx(recall).epsilon(1e-12));

    auto truncated = c.results;
    for (auto& r : truncated) r.ranked.resize(k);
    CHECK(bias_at_k(truncated, c.labels, k).bias_at_k == bias);
    CHECK(recall_at_k(truncated, c.truth, k).recall_at_k == recall);
  }
}

TEST_CASE("occupation_bias examples") {
  EmbeddingTable images(2);
  LabelMap labels;
  images.add("m", std::vector<double>{1, 1});
  images.add("f", std::vector<double>{1, -1});
  images.add("n", std::vector<double>{5, 0});
  labels = {{"m", Gender::Male}, {"f", Gender::Female}, {"n", Gender::Neutral}};
  std::vector<double> term{1, 0};
  CHECK(*occupation_bias(term, images, labels) == doctest::Approx(0.0));

  EmbeddingTable aligned(2);
  aligned.add("m1", std::vector<double>{1, 0});
  aligned.add("m2", std::vector<double>{2, 0});
  aligned.add("f1", std::vector<double>{0, 3});
  LabelMap l2{{"m1", Gender::Male}, {"m2", Gender::Male}, {"f1", Gender::Female}};
  CHECK(*occupation_bias(term, aligned, l2) == doctest::Approx(1.0));

  LabelMap only_male{{"m1", Gender::Male}, {"m2", Gender::Male}, {"f1", Gender::Neutral}};
  CHECK_FALSE(occupation_bias(term, aligned, only_male));
}

TEST_CASE("occupation_bias matches per-image averaging on planted data") {
  SynthConfig cfg;
  cfg.seed = 4;
  cfg.n_images = 300;
  cfg.dim = 6;
  cfg.bias_dims = {0};
  cfg.skew = 0.6;
  auto ds = synth_dataset(cfg);
  std::vector<double> term{1, 0.2, 0, 0, 0.1, 0};
  double sm = 0, sf = 0;
  int nm = 0, nf = 0;
  for (std::size_t r = 0; r < ds.images.size(); ++r) {
    auto v = ds.images.row(r);
    double d = 0, nv = 0, nt = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      d += v[j] * term[j];
      nv += v[j] * v[j];
      nt += term[j] * term[j];
    }
    const double c = d / std::sqrt(nv * nt);
    const auto g = ds.labels.at(ds.images.id(r));
    if (g == Gender::Male) sm += c, ++nm;
    if (g == Gender::Female) sf += c, ++nf;
  }
  const double expected = sm / nm - sf / nf;
  CHECK(expected > 0.1);
  CHECK(std::fabs(*occupation_bias(term, ds.images, ds.labels) - expected) <= 1e-12);
}

TEST_CASE("occupation_report excludes one-sided occupations and honors memberships") {
  EmbeddingTable images(2);
  images.add("m1", std::vector<double>{1, 0});
  images.add("f1", std::vector<double>{0, 1});
  images.add("m2", std::vector<double>{1, 1});
  LabelMap labels{{"m1", Gender::Male}, {"f1", Gender::Female}, {"m2", Gender::Male}};
  EmbeddingTable terms(2);
  terms.add("doctor", std::vector<double>{1, 0});
  terms.add("nurse", std::vector<double>{0, 1});

  auto all = occupation_report(terms, images, labels);
  REQUIRE(all.per_occupation.size() == 2);
  CHECK(all.excluded.empty());
  double mean = 0;
  for (const auto& [name, b] : all.per_occupation) mean += std::fabs(b);
  CHECK(all.mean_abs_bias == doctest::Approx(mean / 2));

  MembershipMap members{{"m1", "doctor"}, {"f1", "doctor"}, {"m2", "nurse"}};
  auto scoped = occupation_report(terms, images, labels, &members);
  REQUIRE(scoped.per_occupation.size() == 1);
  CHECK(scoped.per_occupation[0].first == "doctor");
  CHECK(scoped.per_occupation[0].second == doctest::Approx(1.0));
  CHECK(scoped.excluded == std::vector<std::string>{"nurse"});
  CHECK(scoped.mean_abs_bias == doctest::Approx(1.0));
}

TEST_CASE("symmetric occupations have near-zero mean absolute bias") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t dim = 8;
  EmbeddingTable images(dim), terms(dim);
  LabelMap labels;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> v(dim);
    for (auto& x : v) x = n(rng);
    v[0] = std::fabs(v[0]) + 0.5;
    images.add("m" + std::to_string(i), v);
    labels["m" + std::to_string(i)] = Gender::Male;
    v[0] = -v[0];
    images.add("f" + std::to_string(i), v);
    labels["f" + std::to_string(i)] = Gender::Female;
  }
  for (int t = 0; t < 20; ++t) {
    std::vector<double> v(dim);
    for (auto& x : v) x = n(rng);
    v[0] = 0.0;
    terms.add("occ" + std::to_string(t), v);
  }
  auto report = occupation_report(terms, images, labels);
  CHECK(report.per_occupation.size() == 20);
  CHECK(report.mean_abs_bias < 0.01);
}

TEST_CASE("memberships load and reject duplicates") {
  TempDir dir;
  write_text_file(dir.file("m.jsonl"), "{\"image_id\":\"a\",\"occupation\":\"doctor\"}\n");
  CHECK(load_memberships(dir.file("m.jsonl")) == MembershipMap{{"a", "doctor"}});
  write_text_file(dir.file("d.jsonl"), "{\"image_id\":\"a\",\"occupation\":\"x\"}\n{\"image_id\":\"a\",\"occupation\":\"y\"}\n");
  CHECK_THROWS_AS(load_memberships(dir.file("d.jsonl")), ValidationError);
}
