#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fairsearch/retrieval.hpp"
#include "support.hpp"

using namespace fairsearch;

namespace {

EmbeddingTable random_table(std::size_t n, std::size_t dim, std::uint64_t seed, const char* prefix = "i") {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  EmbeddingTable t(dim);
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& x : v) x = normal(rng);
    t.add(prefix + std::to_string(i), v);
  }
  return t;
}

// Scores every image, sorts all of them, keeps the first k.
std::vector<std::pair<std::size_t, double>> oracle_topk(std::span<const double> q, const EmbeddingTable& images,
                                                        std::size_t k) {
  std::vector<std::pair<std::size_t, double>> all;
  for (std::size_t r = 0; r < images.size(); ++r) {
    auto v = images.row(r);
    long double d = 0, nq = 0, nv = 0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      d += static_cast<long double>(q[j]) * v[j];
      nq += static_cast<long double>(q[j]) * q[j];
      nv += static_cast<long double>(v[j]) * v[j];
    }
    all.emplace_back(r, static_cast<double>(d / std::sqrt(nq * nv)));
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  all.resize(std::min(k, all.size()));
  return all;
}

}  // namespace

TEST_CASE("cosine examples") {
  std::vector<double> a{1, 0}, b{0, 1}, c{1, 1}, d{2, 2};
  CHECK(cosine(a, a) == 1.0);
  CHECK(cosine(a, b) == 0.0);
  CHECK(cosine(c, d) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(c, d) <= 1.0);
  std::vector<double> z{0, 0}, e{1, 2, 3};
  CHECK_THROWS_AS(cosine(a, z), ValidationError);
  CHECK_THROWS_AS(cosine(a, e), ValidationError);
}

TEST_CASE("cosine stays within [-1, 1]") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> v{u(rng), u(rng), u(rng)};
    auto w = v;
    for (auto& x : w) x *= 3.0;
    CHECK(cosine(v, w) <= 1.0);
    for (auto& x : w) x = -x;
    CHECK(cosine(v, w) >= -1.0);
  }
}

TEST_CASE("retrieve_topk exact scores") {
  EmbeddingTable images(2);
  images.add("a", std::vector<double>{1, 0});
  images.add("b", std::vector<double>{0, 1});
  images.add("c", std::vector<double>{-1, 0});
  std::vector<double> q{1, 0};
  auto r = retrieve_topk(q, images, 2, "q");
  CHECK(r.text_id == "q");
  CHECK(r.ranked == std::vector<ScoredImage>{{"a", 1.0}, {"b", 0.0}});
}

TEST_CASE("ties keep file order") {
  EmbeddingTable images(3);
  for (const char* id : {"z", "y", "x", "w", "v"}) images.add(id, std::vector<double>{1, 2, 3});
  std::vector<double> q{1, 2, 3};
  auto r = retrieve_topk(q, images, 3);
  REQUIRE(r.ranked.size() == 3);
  CHECK(r.ranked[0].image_id == "z");
  CHECK(r.ranked[1].image_id == "y");
  CHECK(r.ranked[2].image_id == "x");
  for (const auto& s : r.ranked) CHECK(s.score == doctest::Approx(1.0));
}

TEST_CASE("k larger than the gallery returns every image") {
  auto images = random_table(4, 3, 1);
  std::vector<double> q{1, 0, 0};
  CHECK(retrieve_topk(q, images, 10).ranked.size() == 4);
  CHECK_THROWS_AS(retrieve_topk(q, images, 0), ValidationError);
  std::vector<double> bad{1, 0};
  CHECK_THROWS_AS(retrieve_topk(bad, images, 1), ValidationError);
}

TEST_CASE("retrieve_topk matches the sort-everything oracle") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto images = random_table(50, 8, seed);
    auto queries = random_table(5, 8, seed + 1000, "t");
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      auto got = retrieve_topk(queries.row(qi), images, 10);
      auto want = oracle_topk(queries.row(qi), images, 10);
      REQUIRE(got.ranked.size() == want.size());
      for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(got.ranked[i].image_id == images.id(want[i].first));
        CHECK(std::fabs(got.ranked[i].score - want[i].second) <= 1e-12);
      }
    }
  }
}

TEST_CASE("ranking properties") {
  auto images = random_table(200, 16, 9);
  auto queries = random_table(20, 16, 10, "t");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    auto q = queries.row(qi);
    auto base = retrieve_topk(q, images, 30);

    SUBCASE("scores are non-increasing and ids distinct") {
      for (std::size_t i = 1; i < base.ranked.size(); ++i) CHECK(base.ranked[i - 1].score >= base.ranked[i].score);
      std::set<std::string> ids;
      for (const auto& s : base.ranked) ids.insert(s.image_id);
      CHECK(ids.size() == base.ranked.size());
    }
    SUBCASE("scale invariance") {
      std::vector<double> scaled(q.begin(), q.end());
      const double lambda = scale(rng);
      for (auto& x : scaled) x *= lambda;
      auto r = retrieve_topk(scaled, images, 30);
      for (std::size_t i = 0; i < r.ranked.size(); ++i) CHECK(r.ranked[i].image_id == base.ranked[i].image_id);
    }
    SUBCASE("monotone containment") {
      for (std::size_t k = 1; k < 30; ++k) {
        auto small = retrieve_topk(q, images, k);
        auto big = retrieve_topk(q, images, k + 1);
        for (std::size_t i = 0; i < k; ++i) CHECK(small.ranked[i] == big.ranked[i]);
      }
    }
  }
}

TEST_CASE("retrieve_all equals per-query calls and ignores thread count") {
  auto images = random_table(300, 12, 21);
  auto texts = random_table(37, 12, 22, "t");
  auto serial = retrieve_all(texts, images, 7, 1);
  REQUIRE(serial.size() == texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    CHECK(serial[i] == retrieve_topk(texts.row(i), images, 7, texts.id(i)));
  }
  for (std::size_t threads : {2, 3, 8, 64}) CHECK(retrieve_all(texts, images, 7, threads) == serial);

  CHECK(retrieve_all(EmbeddingTable(12), images, 5).empty());
  CHECK_THROWS_AS(retrieve_all(random_table(2, 3, 1), images, 5), ValidationError);
}

TEST_CASE("results round-trip through JSONL") {
  TempDir dir;
  auto images = random_table(20, 4, 1);
  auto texts = random_table(5, 4, 2, "t");
  auto results = retrieve_all(texts, images, 4);
  save_results(results, dir.file("r.jsonl"));
  CHECK(load_results(dir.file("r.jsonl")) == results);
}
