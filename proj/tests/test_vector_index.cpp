#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "evsearch/error.hpp"
#include "evsearch/vector_index.hpp"
#include "test_support.hpp"

using namespace evsearch;
using evsearch::test_support::error_message;
using evsearch::test_support::make_record;
using evsearch::test_support::random_corpus;
using evsearch::test_support::random_vector;

namespace {

Corpus abc() {
    return Corpus(2, {make_record("a", {1, 0}, "A"), make_record("b", {0, 1}, "B"), make_record("c", {1, 1}, "C")});
}

std::vector<std::string> ids(const HitList& hits) {
    std::vector<std::string> out;
    for (const auto& h : hits) out.push_back(h.id);
    return out;
}

}  // namespace

TEST(VectorIndex, BuildKeepsCountAndOrder) {
    const VectorIndex index(abc());
    EXPECT_EQ(index.count(), 3u);
    EXPECT_EQ(index.dimension(), 2u);
    EXPECT_EQ(index.id(2), "c");
    EXPECT_EQ(index.find("b"), 1u);
    EXPECT_FALSE(index.find("zz"));
    EXPECT_EQ(index.label_set(), (std::vector<std::string>{"A", "B", "C"}));
}

TEST(VectorIndex, EmptyCorpusIsRejected) {
    EXPECT_FALSE(error_message([] { VectorIndex(Corpus(3, {})); }).empty());
}

TEST(VectorIndex, TiesGoToEarlierInsertion) {
    const VectorIndex index(abc());
    const std::vector<double> q = {1, 0};
    const auto hits = index.search(q, 2);
    EXPECT_EQ(ids(hits), (std::vector<std::string>{"a", "c"}));
    EXPECT_EQ(hits[0].score, 1.0);
    EXPECT_EQ(hits[1].score, 1.0);
    EXPECT_EQ(hits[0].label, "A");
    EXPECT_EQ(hits[1].position, 2u);
}

TEST(VectorIndex, OrthogonalQueryScoresZero) {
    const VectorIndex index(Corpus(3, {make_record("a", {1, 0, 0}), make_record("b", {0, 1, 0})}));
    const std::vector<double> q = {0, 0, 1};
    const auto hits = index.search(q, 1);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits[0].id, "a");
    EXPECT_EQ(hits[0].score, 0.0);
}

TEST(VectorIndex, KLargerThanCountReturnsEverything) {
    const VectorIndex index(abc());
    const std::vector<double> q = {0.2, 0.7};
    EXPECT_EQ(index.search(q, 50).size(), 3u);
    EXPECT_EQ(ids(index.search(q, 50)), (std::vector<std::string>{"c", "b", "a"}));
}

TEST(VectorIndex, SingleEntry) {
    const VectorIndex index(Corpus(2, {make_record("only", {3, -1})}));
    const std::vector<double> q = {-5, 2};
    EXPECT_EQ(ids(index.search(q, 4)), std::vector<std::string>{"only"});
    EXPECT_EQ(ids(index.brute_force_search(q, 4)), std::vector<std::string>{"only"});
}

TEST(VectorIndex, QueryValidation) {
    const VectorIndex index(abc());
    const std::vector<double> q = {1, 0};
    const std::vector<double> wrong = {1, 0, 0};
    const std::vector<double> nan = {std::numeric_limits<double>::quiet_NaN(), 0};
    EXPECT_NE(error_message([&] { index.search(q, 0); }).find("k must be"), std::string::npos);
    EXPECT_NE(error_message([&] { index.search(wrong, 1); }).find("query has 3"), std::string::npos);
    EXPECT_NE(error_message([&] { index.search(nan, 1); }).find("non-finite"), std::string::npos);
    EXPECT_NE(error_message([&] { index.brute_force_search(q, 0); }).find("k must be"), std::string::npos);
}

TEST(VectorIndex, OverflowingScoreIsAnError) {
    const VectorIndex index(Corpus(1, {make_record("big", {1e300})}));
    const std::vector<double> q = {1e300};
    EXPECT_NE(error_message([&] { index.search(q, 1); }).find("overflowed"), std::string::npos);
}

TEST(VectorIndex, NormalizeOption) {
    const VectorIndex index(Corpus(2, {make_record("a", {3, 4}), make_record("z", {0, 0})}), IndexOptions{true});
    EXPECT_TRUE(index.normalized());
    EXPECT_DOUBLE_EQ(index.vector(0)[0], 0.6);
    EXPECT_DOUBLE_EQ(index.vector(0)[1], 0.8);
    EXPECT_EQ(index.vector(1)[0], 0.0);
}

TEST(VectorIndex, SearchMatchesBruteForceOnRandomCorpora) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t dim = 2 + rng() % 40;
        const std::size_t n = 1 + rng() % 600;
        const Corpus corpus = random_corpus(n, dim, rng);
        const VectorIndex index(corpus);
        const auto q = random_vector(dim, rng);
        const std::size_t k = 1 + rng() % 30;
        EXPECT_EQ(index.search(q, k), index.brute_force_search(q, k)) << "trial " << trial;
    }
}

TEST(VectorIndex, DuplicateVectorsStayStable) {
    std::vector<EmbeddingRecord> records;
    for (int i = 0; i < 300; ++i) {
        records.push_back(make_record("d" + std::to_string(i), {static_cast<double>(i % 3), 1.0}));
    }
    const VectorIndex index(Corpus(2, std::move(records)));
    const std::vector<double> q = {1, 1};
    const auto hits = index.search(q, 120);
    EXPECT_EQ(hits, index.brute_force_search(q, 120));
    EXPECT_EQ(hits[0].id, "d2");
    EXPECT_EQ(hits[1].id, "d5");
}

TEST(VectorIndex, ScoresAreExactDotProducts) {
    std::mt19937_64 rng(3);
    const Corpus corpus = random_corpus(40, 7, rng);
    const VectorIndex index(corpus);
    const auto q = random_vector(7, rng);
    for (const auto& hit : index.search(q, 40)) {
        double expected = 0.0;
        const auto& v = corpus.records()[hit.position].vector;
        for (std::size_t i = 0; i < v.size(); ++i) expected += q[i] * v[i];
        EXPECT_EQ(hit.score, expected);
    }
}

TEST(VectorIndex, BatchEqualsSingles) {
    std::mt19937_64 rng(5);
    const VectorIndex index(random_corpus(800, 16, rng));
    std::vector<std::vector<double>> queries;
    for (int i = 0; i < 16; ++i) queries.push_back(random_vector(16, rng));
    for (unsigned threads : {1u, 3u, 0u}) {
        const auto results = index.batch_search(queries, 20, threads);
        ASSERT_EQ(results.size(), queries.size());
        for (std::size_t i = 0; i < queries.size(); ++i) EXPECT_EQ(results[i], index.search(queries[i], 20));
    }
    EXPECT_TRUE(index.batch_search({}, 5).empty());
}

TEST(VectorIndex, BatchReportsFailingQuery) {
    const VectorIndex index(abc());
    const std::vector<std::vector<double>> queries = {{1, 0}, {1, 0, 0}};
    EXPECT_NE(error_message([&] { index.batch_search(queries, 1); }).find("query 1"), std::string::npos);
}

TEST(VectorIndex, HitsCarryTargets) {
    auto r = make_record("t", {1, 1}, "A");
    r.target_months = 42;
    const VectorIndex index(Corpus(2, {r}));
    const std::vector<double> q = {1, 0};
    EXPECT_EQ(index.search(q, 1)[0].target_months, 42);
}
