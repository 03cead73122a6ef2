#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <numeric>
#include <random>
#include <set>

#include "constbert/errors.hpp"
#include "constbert/retrieval.hpp"
#include "constbert/scoring.hpp"
#include "oracles.hpp"

using namespace constbert;

namespace {

struct Fixture {
  // Removes the directory once the fixture (and its mapped index) is gone.
  std::shared_ptr<const std::filesystem::path> dir;
  std::vector<oracle::Rows> docs;
  Index index;

  static Fixture make(std::size_t n, std::size_t c, std::size_t k, std::uint64_t seed) {
    auto dir = std::filesystem::temp_directory_path() / ("constbert_retr_" + std::to_string(seed) + "_" + std::to_string(n));
    std::filesystem::create_directories(dir);
    std::mt19937_64 gen(seed);
    std::vector<oracle::Rows> docs;
    IndexWriter w(dir / "i.cbix", {static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(k), DType::F32, 64, false});
    for (std::size_t i = 0; i < n; ++i) {
      docs.push_back(oracle::random_rows(gen, c, k));
      w.add("d" + std::to_string(i), oracle::to_matrix(docs.back()));
    }
    w.finish();
    auto guard = std::shared_ptr<const std::filesystem::path>(
        new std::filesystem::path(dir), [](const std::filesystem::path* p) {
          std::filesystem::remove_all(*p);
          delete p;
        });
    return Fixture{guard, std::move(docs), open_index(dir / "i.cbix")};
  }

  // Full-sort oracle over every document.
  std::vector<std::pair<std::uint64_t, double>> oracle_ranking(const oracle::Rows& q) const {
    std::vector<std::pair<std::uint64_t, double>> all;
    for (std::size_t i = 0; i < docs.size(); ++i) all.emplace_back(i, oracle::maxsim_f32(q, docs[i]));
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    return all;
  }
};

CandidateList ids_of(const std::string& qid, const std::vector<std::uint64_t>& ids) {
  CandidateList c{qid, {}};
  for (auto id : ids) c.doc_ids.push_back("d" + std::to_string(id));
  return c;
}

}  // namespace

TEST_CASE("search_exact") {
  std::mt19937_64 gen(77);
  SUBCASE("single document corpus") {
    auto fx = Fixture::make(1, 3, 4, 1);
    const auto q = oracle::random_rows(gen, 2, 4);
    const auto res = search_exact(fx.index, oracle::to_matrix(q), 5);
    REQUIRE(res.size() == 1);
    CHECK(res[0].external_id == "d0");
    CHECK(res[0].score == maxsim(oracle::to_matrix(q), fx.index.get_doc(0)).value);
  }
  SUBCASE("topk larger than the corpus") {
    auto fx = Fixture::make(7, 2, 4, 2);
    CHECK(search_exact(fx.index, oracle::to_matrix(oracle::random_rows(gen, 2, 4)), 50).size() == 7);
  }
  SUBCASE("500 documents match the full-sort oracle, threaded or not") {
    auto fx = Fixture::make(500, 4, 8, 3);
    for (int trial = 0; trial < 5; ++trial) {
      const auto q = oracle::random_rows(gen, 3, 8);
      const auto expected = fx.oracle_ranking(q);
      SearchStats stats;
      const auto res = search_exact(fx.index, oracle::to_matrix(q), 10, 1, &stats);
      REQUIRE(res.size() == 10);
      for (std::size_t i = 0; i < 10; ++i) {
        CHECK(res[i].doc_id == expected[i].first);
        CHECK(res[i].score == expected[i].second);
      }
      CHECK(stats.docs_decoded == 500);
      CHECK(stats.maxsim_calls == 500);
      CHECK(search_exact(fx.index, oracle::to_matrix(q), 10, 4) == res);
    }
  }
  SUBCASE("ties break by ascending doc id") {
    const auto dir = std::filesystem::temp_directory_path() / "constbert_ties";
    std::filesystem::create_directories(dir);
    IndexWriter w(dir / "t.cbix", {1, 2, DType::F32, 64, false});
    for (int i = 0; i < 5; ++i) w.add("t" + std::to_string(i), EmbeddingMatrix::from_rows({{1, 0}}));
    w.finish();
    const auto index = open_index(dir / "t.cbix");
    const auto res = search_exact(index, EmbeddingMatrix::from_rows({{1, 0}}), 3);
    CHECK(res[0].doc_id == 0);
    CHECK(res[1].doc_id == 1);
    CHECK(res[2].doc_id == 2);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("dimension mismatch") {
    auto fx = Fixture::make(3, 2, 4, 4);
    CHECK_THROWS_AS(search_exact(fx.index, EmbeddingMatrix(2, 5), 1), ShapeError);
    CHECK_THROWS_AS(search_exact(fx.index, EmbeddingMatrix(2, 4), 0), ConfigError);
  }
}

TEST_CASE("rerank") {
  std::mt19937_64 gen(88);
  auto fx = Fixture::make(200, 3, 8, 5);
  const auto q = oracle::to_matrix(oracle::random_rows(gen, 4, 8));

  SUBCASE("whole corpus as candidates equals exact search") {
    std::vector<std::uint64_t> all(200);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), gen);
    CHECK(rerank(fx.index, q, ids_of("q", all), 10) == search_exact(fx.index, q, 10));
  }
  SUBCASE("single candidate") {
    const auto res = rerank(fx.index, q, ids_of("q", {42}), 10);
    REQUIRE(res.size() == 1);
    CHECK(res[0].doc_id == 42);
    CHECK(res[0].score == maxsim(q, fx.index.get_doc(42)).value);
  }
  SUBCASE("candidate sets containing the exact top-10") {
    const auto exact = search_exact(fx.index, q, 10);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::uint64_t> cands;
      for (const auto& r : exact) cands.push_back(r.doc_id);
      for (int extra = 0; extra < 30; ++extra) cands.push_back(gen() % 200);
      std::shuffle(cands.begin(), cands.end(), gen);
      CHECK(rerank(fx.index, q, ids_of("q", cands), 10) == exact);
    }
  }
  SUBCASE("shrinking the candidate set never adds documents") {
    std::vector<std::uint64_t> big;
    for (int i = 0; i < 80; ++i) big.push_back(gen() % 200);
    const auto big_res = rerank(fx.index, q, ids_of("q", big), 200);
    const std::vector<std::uint64_t> small(big.begin(), big.begin() + 30);
    for (const auto& r : rerank(fx.index, q, ids_of("q", small), 200)) {
      CHECK(std::any_of(big_res.begin(), big_res.end(), [&](const ScoredDoc& b) { return b.doc_id == r.doc_id; }));
    }
  }
  SUBCASE("unknown ids are errors unless lenient") {
    CandidateList c{"q9", {"d1", "nope", "d2"}};
    try {
      rerank(fx.index, q, c, 10);
      FAIL("expected LookupError");
    } catch (const LookupError& e) {
      CHECK(std::string(e.what()).find("nope") != std::string::npos);
    }
    CHECK(rerank(fx.index, q, c, 10, true).size() == 2);
  }
  SUBCASE("duplicate candidates collapse") {
    CHECK(rerank(fx.index, q, ids_of("q", {3, 3, 3, 4}), 10).size() == 2);
  }
}

TEST_CASE("first_stage_overlap") {
  const std::vector<std::vector<std::uint32_t>> corpus = {{1, 2, 3}, {2, 3, 4}, {5, 6}, {2, 2, 7}};
  const OverlapRetriever retriever(corpus, {"a", "b", "c", "d"});

  SUBCASE("a token unique to one document ranks it first") {
    const auto res = retriever.retrieve("q", std::vector<std::uint32_t>{7, 3}, 4);
    REQUIRE_FALSE(res.candidates.doc_ids.empty());
    CHECK(res.candidates.doc_ids.front() == "d");
  }
  SUBCASE("no shared token gives an empty, flagged list") {
    const auto res = retriever.retrieve("q", std::vector<std::uint32_t>{99}, 10);
    CHECK(res.candidates.doc_ids.empty());
    CHECK(res.no_overlap);
  }
  SUBCASE("empty query rejected") {
    CHECK_THROWS_AS(retriever.retrieve("q", std::vector<std::uint32_t>{}, 10), ConfigError);
  }
  SUBCASE("document frequency counts documents, not occurrences") {
    CHECK(retriever.document_frequency(2) == 3);
    CHECK(retriever.idf(2) == doctest::Approx(std::log(1.0 + (4 - 3 + 0.5) / (3 + 0.5))));
  }
  SUBCASE("seeded 20-document corpus matches the formula") {
    std::mt19937_64 gen(20);
    std::vector<std::vector<std::uint32_t>> docs(20);
    std::vector<std::string> ids;
    for (std::size_t d = 0; d < 20; ++d) {
      for (int t = 0; t < 6; ++t) docs[d].push_back(static_cast<std::uint32_t>(gen() % 30));
      ids.push_back("x" + std::to_string(d));
    }
    const OverlapRetriever r(docs, ids);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<std::uint32_t> q;
      for (int t = 0; t < 4; ++t) q.push_back(static_cast<std::uint32_t>(gen() % 35));
      // Brute force: df by scanning, score by set intersection.
      std::vector<std::pair<double, std::size_t>> expected;
      std::set<std::uint32_t> qset(q.begin(), q.end());
      for (std::size_t d = 0; d < 20; ++d) {
        std::set<std::uint32_t> dset(docs[d].begin(), docs[d].end());
        double s = 0.0;
        for (auto t : qset) {
          if (!dset.contains(t)) continue;
          double df = 0;
          for (const auto& other : docs) df += std::find(other.begin(), other.end(), t) != other.end();
          s += std::log(1.0 + (20.0 - df + 0.5) / (df + 0.5));
        }
        if (s > 0.0) expected.emplace_back(s, d);
      }
      std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
        return std::abs(a.first - b.first) > 1e-12 ? a.first > b.first : a.second < b.second;
      });
      const auto res = r.retrieve("q", q, 5);
      REQUIRE(res.candidates.doc_ids.size() == std::min<std::size_t>(5, expected.size()));
      for (std::size_t i = 0; i < res.candidates.doc_ids.size(); ++i) {
        CHECK(res.candidates.doc_ids[i] == ids[expected[i].second]);
      }
      const auto dense = r.scores(q);
      for (const auto& [s, d] : expected) CHECK(dense[d] == doctest::Approx(s).epsilon(1e-12));
    }
  }
}
