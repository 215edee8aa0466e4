#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <thread>

#include "evsearch/json_codec.hpp"
#include "evsearch/serialize.hpp"
#include "evsearch/service.hpp"
#include "fixtures.hpp"
#include "test_support.hpp"

using namespace evsearch;
using evsearch::test_support::clinical_corpus;
using evsearch::test_support::make_record;
using evsearch::test_support::volume_corpus;

namespace {

ServiceResponse post(Service& s, const std::string& path, const Json& body, const QueryParams& params = {}) {
    return s.handle("POST", path, params, dump_json(body));
}

ServiceResponse get(Service& s, const std::string& path) { return s.handle("GET", path, {}, ""); }

std::string error_of(const ServiceResponse& r) { return parse_json(r.body).value("error", ""); }

Json vec(const std::vector<double>& v) {
    Json out = Json::array();
    for (double x : v) out.push_back(x);
    return out;
}

// The service sees the corpus through its record-line text; the library
// side of every comparison starts from the same text.
struct Loaded {
    Service service;
    Corpus corpus;

    explicit Loaded(const Corpus& source, const std::string& name = "fx")
        : corpus(parse_any(records_text(source), name)) {
        const auto r = service.handle("POST", "/corpus", {{"name", name}}, records_text(source));
        EXPECT_EQ(r.status, 200) << r.body;
    }
};

}  // namespace

TEST(ServiceParity, HealthAndCorpus) {
    Service s;
    EXPECT_EQ(get(s, "/health").body, R"({"status":"ok","generation":0})");
    const Corpus c = clinical_corpus();
    const auto r = s.handle("POST", "/corpus", {{"name", "fx"}}, records_text(c));
    ASSERT_EQ(r.status, 200);
    const Corpus parsed = parse_any(records_text(c), "fx");
    EXPECT_EQ(r.body, dump_json(corpus_summary(parsed)));
    EXPECT_EQ(r.generation, 1u);
    EXPECT_EQ(get(s, "/health").body, R"({"status":"ok","generation":1})");
    EXPECT_EQ(get(s, "/corpus/snapshot").body, snapshot_text(parsed));
}

TEST(ServiceParity, SnapshotUploadRoundTrips) {
    Service s;
    const Corpus c = clinical_corpus(20);
    const auto r = s.handle("POST", "/corpus", {}, snapshot_text(c));
    ASSERT_EQ(r.status, 200) << r.body;
    EXPECT_EQ(get(s, "/corpus/snapshot").body, snapshot_text(c));
}

TEST(ServiceParity, IndexSearchAndBatch) {
    Loaded fx(clinical_corpus());
    const auto r = post(fx.service, "/index", {{"split", "database"}});
    ASSERT_EQ(r.status, 200) << r.body;
    const VectorIndex index(select_split(fx.corpus, Split::database));
    EXPECT_EQ(r.body, dump_json(index_summary(index)));

    const std::vector<double> q = {1.0, 0.5, -0.2, 0.9};
    const auto search = post(fx.service, "/search", {{"vector", vec(q)}, {"k", 7}});
    ASSERT_EQ(search.status, 200) << search.body;
    EXPECT_EQ(search.body, dump_json(Json{{"hits", hits_json(index.search(q, 7), &index)}}));
    const auto by_default = post(fx.service, "/search", {{"vector", vec(q)}});
    EXPECT_EQ(by_default.body, dump_json(Json{{"hits", hits_json(index.search(q, 20), &index)}}));

    std::vector<std::vector<double>> queries;
    Json vectors = Json::array();
    const Corpus test = select_split(fx.corpus, Split::test);
    for (const auto& rec : test.records()) {
        queries.push_back(rec.vector);
        vectors.push_back(vec(rec.vector));
    }
    const auto batch = post(fx.service, "/search/batch", {{"vectors", vectors}, {"k", 5}});
    ASSERT_EQ(batch.status, 200) << batch.body;
    const Json results = parse_json(batch.body)["results"];
    ASSERT_EQ(results.size(), queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto single = post(fx.service, "/search", {{"vector", vec(queries[i])}, {"k", 5}});
        EXPECT_EQ(dump_json(Json{{"hits", results[i]}}), single.body);
    }
}

TEST(ServiceParity, ClassifyThreeHitFixture) {
    Service s;
    const Corpus c(2, {make_record("a", {0.9, 0}, "A"), make_record("b", {0.8, 0}, "B"),
                       make_record("c", {0.5, 0}, "A")});
    s.handle("POST", "/corpus", {{"index", "1"}}, records_text(c));
    const auto r = post(s, "/classify", {{"vector", vec({1, 0})}, {"k", 3}});
    ASSERT_EQ(r.status, 200) << r.body;
    const VectorIndex index(c);
    KnnOptions options;
    options.class_universe = index.label_set();
    const std::vector<double> q = {1, 0};
    EXPECT_EQ(r.body, dump_json(to_json(classify_knn(index.search(q, 3), 3, options))));
    EXPECT_NEAR(parse_json(r.body)["probabilities"][0].get<double>(), 0.6456563062257954, 1e-15);
}

TEST(ServiceParity, ClassifyDefaultsAndRegress) {
    Loaded fx(clinical_corpus());
    post(fx.service, "/index", Json::object());
    const VectorIndex index(fx.corpus);
    const std::vector<double> q = {0.1, 1.9, 0.2, 1.0};
    KnnOptions mean;
    mean.vote = VoteAggregation::mean;
    mean.class_universe = index.label_set();
    const auto r = post(fx.service, "/classify", {{"vector", vec(q)}, {"vote", "mean"}});
    EXPECT_EQ(r.body, dump_json(to_json(classify_knn(index.search(q, 20), 20, mean))));
    const auto months = post(fx.service, "/regress", {{"vector", vec(q)}});
    EXPECT_EQ(months.body, dump_json(Json{{"months", regress_knn(index.search(q, 100), 100)}}));
}

TEST(ServiceParity, ZeroShotHead) {
    Service s;
    EXPECT_EQ(error_of(post(s, "/classify", {{"vector", vec({1, 0})}, {"mode", "zeroshot"}})), "no head");
    const ClassifierHead head({"A", "B"}, {{1, 0}, {0, 1}}, 1.0, "h");
    const auto loaded = s.handle("POST", "/heads", {}, head_text(head));
    ASSERT_EQ(loaded.status, 200) << loaded.body;
    EXPECT_EQ(loaded.body, dump_json(head_summary(head)));
    const std::vector<double> q = {1, 0};
    const auto r = post(s, "/classify", {{"vector", vec(q)}, {"mode", "zeroshot"}});
    ASSERT_EQ(r.status, 200) << r.body;
    EXPECT_EQ(r.body, dump_json(to_json(zeroshot_classify(q, head))));
    EXPECT_NEAR(parse_json(r.body)["probabilities"][0].get<double>(), 0.7310585786300049, 1e-15);
    EXPECT_EQ(get(s, "/heads").body, dump_json(Json{{"heads", Json::array({head_summary(head)})}}));
    EXPECT_EQ(post(s, "/classify", {{"vector", vec(q)}, {"mode", "zeroshot"}, {"head", "zz"}}).status, 400);
}

TEST(ServiceParity, HeadFromCorpus) {
    Loaded fx(clinical_corpus(3));
    const auto r = fx.service.handle("POST", "/heads", {{"from", "corpus"}, {"name", "anch"}, {"temperature", "0.5"}},
                                     "");
    ASSERT_EQ(r.status, 200) << r.body;
    const auto built = head_from_corpus(fx.corpus, 0.5);
    EXPECT_EQ(r.body, dump_json(head_summary(ClassifierHead(built.classes(), built.anchors(), 0.5, "anch"))));
}

TEST(ServiceParity, EvaluateRunsRocFairness) {
    Loaded fx(clinical_corpus());
    post(fx.service, "/index", {{"split", "database"}});
    const auto r = post(fx.service, "/evaluate", {{"name", "r1"}, {"k", 9}});
    ASSERT_EQ(r.status, 200) << r.body;

    const VectorIndex index(select_split(fx.corpus, Split::database));
    EvaluationOptions options;
    options.k = 9;
    const auto run = evaluate_knn(index, select_split(fx.corpus, Split::test), options, "r1");
    EXPECT_EQ(r.body, dump_json(to_json(run)));

    std::vector<std::vector<double>> probs;
    std::vector<std::string> truth;
    for (const auto& o : run.outcomes) {
        probs.push_back(o.probabilities);
        truth.push_back(o.true_label);
    }
    EXPECT_EQ(parse_json(r.body)["mauc"].get<double>(), mauc(run.classes, probs, truth).mauc);

    EXPECT_EQ(get(fx.service, "/runs").body, dump_json(Json{{"runs", Json::array({to_json(run)})}}));
    EXPECT_EQ(get(fx.service, "/runs/r1/outcomes").body, dump_json(Json{{"outcomes", outcomes_json(run)}}));
    for (const auto& [name, curve] : run.roc) {
        EXPECT_EQ(get(fx.service, "/roc/r1/" + name).body, dump_json(to_json(curve)));
    }
    for (auto grouping : {FairnessGrouping::gender, FairnessGrouping::age_bucket}) {
        const auto f = post(fx.service, "/fairness", {{"run", "r1"}, {"grouping", std::string(to_string(grouping))}});
        ASSERT_EQ(f.status, 200) << f.body;
        EXPECT_EQ(f.body, dump_json(to_json(fairness_from_run(run, grouping))));
    }
    EXPECT_EQ(error_of(get(fx.service, "/roc/nope/L0")), "unknown run");
    EXPECT_EQ(get(fx.service, "/roc/nope/L0").status, 404);
    EXPECT_EQ(error_of(get(fx.service, "/roc/r1/L9")), "unknown class");
    EXPECT_EQ(get(fx.service, "/runs/nope/outcomes").status, 404);
    EXPECT_EQ(post(fx.service, "/fairness", {{"run", "nope"}}).status, 404);
}

TEST(ServiceParity, ZeroShotEvaluation) {
    Loaded fx(clinical_corpus());
    const ClassifierHead head({"L0", "L1", "L2"}, {{2, 0, 0, 1}, {0, 2, 0, 1}, {0, 0, 2, 1}}, 0.5, "h");
    fx.service.handle("POST", "/heads", {}, head_text(head));
    const auto r = post(fx.service, "/evaluate", {{"mode", "zeroshot"}, {"head", "h"}, {"split", "all"}});
    ASSERT_EQ(r.status, 200) << r.body;
    EXPECT_EQ(r.body, dump_json(to_json(evaluate_zeroshot(head, fx.corpus, "run"))));
}

TEST(ServiceParity, PerfectSplitRocIsOne) {
    std::vector<EmbeddingRecord> records;
    for (int i = 0; i < 20; ++i) {
        auto r = make_record("x" + std::to_string(i), {i % 2 ? 1.0 : -1.0, 0.01 * i}, i % 2 ? "pos" : "neg");
        r.split = i < 14 ? Split::database : Split::test;
        records.push_back(r);
    }
    Loaded fx(Corpus(2, records));
    post(fx.service, "/index", {{"split", "database"}});
    ASSERT_EQ(post(fx.service, "/evaluate", {{"name", "p"}, {"k", 3}}).status, 200);
    const Json roc = parse_json(get(fx.service, "/roc/p/pos").body);
    EXPECT_EQ(roc["auc"].get<double>(), 1.0);
    EXPECT_TRUE(roc["points"][0]["threshold"].is_null());
}

TEST(ServiceParity, Volumes) {
    Loaded fx(volume_corpus());
    const auto r = post(fx.service, "/volumes/index", {{"aggregation", "mean"}});
    ASSERT_EQ(r.status, 200) << r.body;
    const auto index = build_volume_index(fx.corpus, Aggregation::mean);
    EXPECT_EQ(r.body, dump_json(volume_index_summary(index)));

    const std::vector<std::vector<double>> slices = {{1.2, 0.8, 0.1}, {1.6, 1.1, -0.2}};
    const auto hits = post(fx.service, "/volumes/search", {{"slices", Json::array({vec(slices[0]), vec(slices[1])})}});
    ASSERT_EQ(hits.status, 200) << hits.body;
    EXPECT_EQ(hits.body, dump_json(Json{{"hits", hits_json(retrieve_volumes(index, slices, Aggregation::mean, 10),
                                                           &index.index())}}));

    const auto mismatch = post(fx.service, "/volumes/search",
                               {{"slices", Json::array({vec(slices[0])})}, {"aggregation", "max"}, {"index", "mean"}});
    EXPECT_EQ(mismatch.status, 400);
    EXPECT_NE(parse_json(mismatch.body)["detail"].get<std::string>().find("aggregation mismatch"), std::string::npos);

    const auto eval = post(fx.service, "/volumes/evaluate", {{"ks", Json::array({1, 3})}});
    ASSERT_EQ(eval.status, 200) << eval.body;
    EXPECT_EQ(eval.body, dump_json(to_json(evaluate_volume_retrieval(index, fx.corpus, {1, 3}))));
}

TEST(ServiceErrors, MissingAndStaleIndex) {
    Service s;
    EXPECT_EQ(error_of(post(s, "/index", Json::object())), "no corpus");
    s.handle("POST", "/corpus", {}, records_text(clinical_corpus(10)));
    const auto none = post(s, "/search", {{"vector", vec({1, 0, 0, 0})}});
    EXPECT_EQ(none.status, 409);
    EXPECT_EQ(error_of(none), "no index");
    post(s, "/index", Json::object());
    EXPECT_EQ(post(s, "/search", {{"vector", vec({1, 0, 0, 0})}}).status, 200);
    s.handle("POST", "/corpus", {}, records_text(clinical_corpus(12)));
    EXPECT_EQ(error_of(post(s, "/search", {{"vector", vec({1, 0, 0, 0})}})), "stale index");
    EXPECT_EQ(error_of(post(s, "/volumes/search", {{"slices", Json::array({vec({1, 0, 0, 0})})}})), "no index");
}

TEST(ServiceErrors, BadRequests) {
    Service s;
    s.handle("POST", "/corpus", {{"index", "1"}}, records_text(clinical_corpus(10)));
    EXPECT_EQ(post(s, "/search", {{"vector", vec({1, 0, 0, 0})}, {"k", 0}}).status, 400);
    EXPECT_EQ(post(s, "/search", {{"vector", vec({1, 0})}}).status, 400);
    EXPECT_EQ(post(s, "/search", Json::object()).status, 400);
    EXPECT_EQ(s.handle("POST", "/search", {}, "{nope").status, 400);
    EXPECT_EQ(post(s, "/classify", {{"vector", vec({1, 0, 0, 0})}, {"mode", "psychic"}}).status, 400);
    EXPECT_EQ(post(s, "/volumes/index", {{"aggregation", "min"}}).status, 400);

    const std::string dup = record_line(make_record("twin", {1, 0, 0, 0})) + "\n" +
                            record_line(make_record("twin", {0, 1, 0, 0})) + "\n";
    const auto r = s.handle("POST", "/corpus", {}, dup);
    EXPECT_EQ(r.status, 400);
    EXPECT_NE(parse_json(r.body)["detail"].get<std::string>().find("twin"), std::string::npos);
    EXPECT_EQ(get(s, "/health").body, R"({"status":"ok","generation":1})");

    EXPECT_EQ(get(s, "/nowhere").status, 404);
    EXPECT_EQ(get(s, "/search").status, 405);
}

TEST(ServiceErrors, BodyCap) {
    Service s(ServiceConfig{100, 1});
    const auto r = s.handle("POST", "/corpus", {}, std::string(200, ' '));
    EXPECT_EQ(r.status, 413);
    EXPECT_EQ(error_of(r), "payload too large");
}

TEST(ServiceHttp, RoundTripCarriesGeneration) {
    Service s;
    httplib::Server server;
    mount(server, s);
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    const Corpus c = clinical_corpus(15);
    auto up = client.Post("/corpus?index=1&name=fx", records_text(c), "application/x-ndjson");
    ASSERT_TRUE(up);
    EXPECT_EQ(up->status, 200);
    EXPECT_EQ(up->get_header_value(kGenerationHeader), "1");

    const std::string body = dump_json(Json{{"vector", vec({1, 0, 0, 1})}, {"k", 4}});
    auto hit = client.Post("/search", body, "application/json");
    ASSERT_TRUE(hit);
    EXPECT_EQ(hit->body, s.handle("POST", "/search", {}, body).body);

    auto missing = client.Get("/runs/none/outcomes");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);
    EXPECT_EQ(parse_json(missing->body)["error"], "unknown run");

    server.stop();
    thread.join();
}

TEST(ServiceConcurrency, ReadersNeverSeeMixedGenerations) {
    Service s(ServiceConfig{std::size_t{64} << 20, 1});
    auto corpus_text = [](int g) { return records_text(clinical_corpus(90, g, "g" + std::to_string(g) + "-")); };
    s.handle("POST", "/corpus", {{"index", "1"}}, corpus_text(1));

    std::atomic<bool> done{false};
    std::atomic<int> mixed{0};
    std::atomic<int> answered{0};
    std::vector<std::thread> readers;
    for (int t = 0; t < 8; ++t) {
        readers.emplace_back([&] {
            const std::string body = dump_json(Json{{"vector", vec({1, 1, 1, 1})}, {"k", 30}});
            while (!done) {
                const auto r = s.handle("POST", "/search", {}, body);
                if (r.status != 200) {
                    ++mixed;
                    continue;
                }
                const std::string prefix = "g" + std::to_string(r.generation) + "-";
                for (const auto& hit : parse_json(r.body)["hits"]) {
                    if (hit["id"].get<std::string>().rfind(prefix, 0) != 0) ++mixed;
                }
                ++answered;
            }
        });
    }
    for (int g = 2; g <= 20; ++g) s.handle("POST", "/corpus", {{"index", "1"}}, corpus_text(g));
    done = true;
    for (auto& t : readers) t.join();
    EXPECT_EQ(mixed.load(), 0);
    EXPECT_GT(answered.load(), 0);
}
