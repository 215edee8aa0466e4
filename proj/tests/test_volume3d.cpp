#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "evsearch/error.hpp"
#include "evsearch/volume3d.hpp"
#include "test_support.hpp"

using namespace evsearch;
using evsearch::test_support::error_message;
using evsearch::test_support::random_vector;

namespace {

EmbeddingRecord slice(const std::string& volume, std::int64_t index, std::vector<double> v,
                      std::optional<std::string> flag = std::nullopt, std::optional<std::string> stage = std::nullopt) {
    EmbeddingRecord r;
    r.id = volume + "/" + std::to_string(index);
    r.vector = std::move(v);
    r.volume_id = volume;
    r.slice_index = index;
    if (flag) r.attributes["tumor_flag"] = *flag;
    if (stage) r.attributes["tumor_stage"] = *stage;
    return r;
}

}  // namespace

TEST(Aggregate, MedianOddAndEven) {
    EXPECT_EQ(aggregate_slices({{1, 5}, {3, 1}, {2, 9}}), (std::vector<double>{2, 5}));
    EXPECT_EQ(aggregate_slices({{0, 0}, {2, 4}}), (std::vector<double>{1, 2}));
}

TEST(Aggregate, MeanMaxStdev) {
    const std::vector<std::vector<double>> s = {{1, 3}, {3, 3}};
    EXPECT_EQ(aggregate_slices(s, Aggregation::mean), (std::vector<double>{2, 3}));
    EXPECT_EQ(aggregate_slices(s, Aggregation::max), (std::vector<double>{3, 3}));
    EXPECT_EQ(aggregate_slices(s, Aggregation::stdev), (std::vector<double>{1, 0}));
}

TEST(Aggregate, SingleSliceAndErrors) {
    EXPECT_EQ(aggregate_slices({{4, -2}}, Aggregation::median), (std::vector<double>{4, -2}));
    EXPECT_EQ(aggregate_slices({{4, -2}}, Aggregation::stdev), (std::vector<double>{0, 0}));
    EXPECT_FALSE(error_message([] { aggregate_slices({}); }).empty());
    EXPECT_FALSE(error_message([] { aggregate_slices({{1, 2}, {1}}); }).empty());
    EXPECT_EQ(parse_aggregation("stdev"), Aggregation::stdev);
    EXPECT_FALSE(error_message([] { parse_aggregation("min"); }).empty());
}

TEST(Aggregate, SliceOrderDoesNotMatter) {
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::vector<double>> slices;
        const std::size_t n = 1 + rng() % 12;
        for (std::size_t i = 0; i < n; ++i) slices.push_back(random_vector(6, rng));
        auto shuffled = slices;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        for (auto m : {Aggregation::median, Aggregation::mean, Aggregation::max, Aggregation::stdev}) {
            EXPECT_EQ(aggregate_slices(slices, m), aggregate_slices(shuffled, m));
        }
    }
}

TEST(VolumeIndex, TwoVolumesOfThreeSlices) {
    const Corpus corpus(2, {slice("v1", 0, {1, 0}, "true", "T1"), slice("v1", 1, {2, 0}, "true", "T1"),
                            slice("v2", 0, {0, 1}, "false"), slice("v1", 2, {3, 0}, "true", "T1"),
                            slice("v2", 2, {0, 3}, "false"), slice("v2", 1, {0, 2}, "false")});
    const auto index = build_volume_index(corpus);
    ASSERT_EQ(index.count(), 2u);
    EXPECT_EQ(index.volumes()[0].volume_id, "v1");
    EXPECT_EQ(index.volumes()[0].vector, (std::vector<double>{2, 0}));
    EXPECT_EQ(index.volumes()[0].slice_count, 3u);
    EXPECT_EQ(index.volumes()[0].tumor_flag, true);
    EXPECT_EQ(index.volumes()[0].tumor_stage, "T1");
    EXPECT_EQ(index.volumes()[1].tumor_flag, false);
    EXPECT_FALSE(index.volumes()[1].tumor_stage);
}

TEST(VolumeIndex, ConflictingTumorFlagNamesVolume) {
    const Corpus corpus(2, {slice("vx", 0, {1, 0}, "true"), slice("vx", 1, {2, 0}, "false")});
    const auto message = error_message([&] { build_volume_index(corpus); });
    EXPECT_NE(message.find("'vx'"), std::string::npos);
    EXPECT_NE(message.find("tumor_flag"), std::string::npos);
}

TEST(VolumeIndex, RejectsDuplicateSlicesAndLooseRecords) {
    auto second = slice("v", 0, {2});
    second.id = "v/0b";
    const Corpus dup(1, {slice("v", 0, {1}), second});
    EXPECT_NE(error_message([&] { build_volume_index(dup); }).find("repeats slice_index"), std::string::npos);
    EXPECT_FALSE(error_message([&] { build_volume_index(dup); }).empty());
    EmbeddingRecord loose;
    loose.id = "loose";
    loose.vector = {1};
    EXPECT_FALSE(error_message([&] { build_volume_index(Corpus(1, {loose})); }).empty());
}

TEST(VolumeIndex, ShuffledRecordsGiveIdenticalVectors) {
    std::mt19937_64 rng(47);
    std::vector<EmbeddingRecord> records;
    for (int v = 0; v < 5; ++v) {
        for (int s = 0; s < 7; ++s) records.push_back(slice("v" + std::to_string(v), s, random_vector(4, rng)));
    }
    auto shuffled = records;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (auto m : {Aggregation::median, Aggregation::mean, Aggregation::max, Aggregation::stdev}) {
        auto a = volume_embeddings(Corpus(4, records), m);
        auto b = volume_embeddings(Corpus(4, shuffled), m);
        auto by_id = [](const VolumeEmbedding& x, const VolumeEmbedding& y) { return x.volume_id < y.volume_id; };
        std::sort(a.begin(), a.end(), by_id);
        std::sort(b.begin(), b.end(), by_id);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].vector, b[i].vector);
    }
}

TEST(Retrieve, SelfQueryComesFirst) {
    const Corpus corpus(2, {slice("a", 0, {5, 0}), slice("a", 1, {6, 0}), slice("b", 0, {0, 5}),
                            slice("b", 1, {0, 6}), slice("c", 0, {3, 3})});
    const auto index = build_volume_index(corpus, Aggregation::mean);
    const auto hits = retrieve_volumes(index, {{0, 6}, {0, 5}}, Aggregation::mean, 2);
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].id, "b");
    EXPECT_EQ(retrieve_volumes(index, {{1, 1}}, Aggregation::mean, 10).size(), 3u);
}

TEST(Retrieve, AggregationMismatch) {
    const Corpus corpus(1, {slice("a", 0, {1})});
    const auto index = build_volume_index(corpus, Aggregation::median);
    EXPECT_NE(error_message([&] { retrieve_volumes(index, {{1}}, Aggregation::max, 1); }).find("aggregation mismatch"),
              std::string::npos);
}

TEST(Retrieve, RankingMatchesBruteForce) {
    std::mt19937_64 rng(53);
    std::vector<EmbeddingRecord> records;
    for (int v = 0; v < 5; ++v) {
        for (int s = 0; s < 4; ++s) records.push_back(slice("v" + std::to_string(v), s, random_vector(3, rng)));
    }
    const auto index = build_volume_index(Corpus(3, records));
    std::vector<std::vector<double>> q = {random_vector(3, rng), random_vector(3, rng)};
    const auto hits = retrieve_volumes(index, q, Aggregation::median, 5);
    const auto query = aggregate_slices(q);
    std::vector<std::pair<double, std::size_t>> oracle;
    for (std::size_t i = 0; i < index.volumes().size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) s += query[j] * index.volumes()[i].vector[j];
        oracle.emplace_back(-s, i);
    }
    std::sort(oracle.begin(), oracle.end());
    for (std::size_t i = 0; i < hits.size(); ++i) EXPECT_EQ(hits[i].position, oracle[i].second);
}

TEST(Precision, FixedPatterns) {
    EXPECT_DOUBLE_EQ(precision_at_k({true, false, true}, 3), 2.0 / 3.0);
    EXPECT_EQ(precision_at_k({true, true, true, true}, 2), 1.0);
    EXPECT_DOUBLE_EQ(precision_at_k({true, false, true}, 5), 2.0 / 3.0);
    EXPECT_FALSE(error_message([] { precision_at_k({true}, 0); }).empty());
}

TEST(Precision, AveragePrecisionPatterns) {
    EXPECT_DOUBLE_EQ(average_precision({true, false, true}), 5.0 / 6.0);
    EXPECT_EQ(average_precision({false, false, false}), 0.0);
}

TEST(Precision, TwelveHitsAgainstRankSummation) {
    std::mt19937_64 rng(59);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<bool> rel(12);
        for (std::size_t i = 0; i < rel.size(); ++i) rel[i] = rng() % 2;
        double total = 0.0;
        int relevant = 0;
        for (std::size_t rank = 1; rank <= rel.size(); ++rank) {
            if (!rel[rank - 1]) continue;
            int upto = 0;
            for (std::size_t j = 0; j < rank; ++j) upto += rel[j];
            total += static_cast<double>(upto) / rank;
            ++relevant;
        }
        EXPECT_NEAR(average_precision(rel), relevant ? total / relevant : 0.0, 1e-15);
    }
}

TEST(Precision, HitPredicateForm) {
    HitList hits(3);
    hits[0].label = "x";
    hits[1].label = "y";
    hits[2].label = "x";
    const HitPredicate is_x = [](const NeighborHit& h) { return h.label == "x"; };
    EXPECT_DOUBLE_EQ(precision_at_k(hits, is_x, 2), 0.5);
    EXPECT_DOUBLE_EQ(average_precision(hits, is_x), 5.0 / 6.0);
}

TEST(RetrievalReport, FlagAndStageRows) {
    const Corpus db(2, {slice("a", 0, {1, 0}, "true", "T2"), slice("b", 0, {0.9, 0.1}, "true", "T1"),
                        slice("c", 0, {0, 1}, "false")});
    const Corpus queries(2, {slice("q", 0, {1, 0}, "true", "T1")});
    const auto index = build_volume_index(db);
    const auto report = evaluate_volume_retrieval(index, queries, {1, 2});
    ASSERT_EQ(report.rows.size(), 2u);
    EXPECT_EQ(report.rows[0].mode, Relevance::tumor_flag);
    EXPECT_EQ(report.rows[0].precision, (std::vector<double>{1.0, 1.0}));
    EXPECT_EQ(report.rows[0].average_precision, 1.0);
    EXPECT_EQ(report.rows[1].precision, (std::vector<double>{0.0, 0.5}));
    EXPECT_EQ(report.rows[1].average_precision, 0.5);
    EXPECT_EQ(report.rows[1].queries, 1u);
}
