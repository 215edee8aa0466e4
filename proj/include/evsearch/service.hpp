#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "evsearch/corpus.hpp"
#include "evsearch/evaluation.hpp"
#include "evsearch/knn_decision.hpp"
#include "evsearch/vector_index.hpp"
#include "evsearch/volume3d.hpp"

namespace httplib {
class Server;
}

namespace evsearch {

inline constexpr const char* kGenerationHeader = "X-Corpus-Generation";

struct ServiceConfig {
    std::size_t max_body_bytes = std::size_t{64} << 20;
    unsigned search_threads = 0;
};

struct ServiceResponse {
    int status = 200;
    std::string body;
    // Corpus generation the request observed; 0 before the first upload.
    std::uint64_t generation = 0;
};

using QueryParams = std::multimap<std::string, std::string>;

/// JSON API over a single active corpus.
///
/// handle() is the whole API: routing, state and error mapping. The HTTP
/// layer only forwards requests to it. Readers share the state lock for the
/// full duration of a request; corpus replacement and index installation
/// take it exclusively, so every response reflects exactly one generation.
///
/// Routes:
///   GET  /health
///   POST /corpus            body: snapshot or record lines; ?index=1 also builds the index
///   GET  /corpus/snapshot
///   POST /index             {split?, normalize?}
///   POST /search            {vector, k?}
///   POST /search/batch      {vectors, k?}
///   POST /classify          {vector, mode?, k?, vote?, head?}
///   POST /regress           {vector, k?}
///   POST /heads             body: head file; ?name= renames, ?from=corpus builds from the corpus
///   GET  /heads
///   POST /evaluate          {name?, mode?, k?, regression_k?, vote?, head?, split?}
///   GET  /runs
///   GET  /runs/{run}/outcomes
///   GET  /roc/{run}/{class}
///   POST /fairness          {run, grouping}
///   POST /volumes/index     {aggregation?, split?}
///   POST /volumes/search    {slices, k?, aggregation?, index?}
///   POST /volumes/evaluate  {aggregation?, ks?, split?}
class Service {
public:
    explicit Service(ServiceConfig config = {});

    ServiceResponse handle(const std::string& method, const std::string& path, const QueryParams& params,
                           const std::string& body);

    const ServiceConfig& config() const noexcept { return config_; }

private:
    struct State {
        std::uint64_t generation = 0;
        std::shared_ptr<const Corpus> corpus;
        std::shared_ptr<const VectorIndex> index;
        std::uint64_t index_generation = 0;
        std::map<Aggregation, std::shared_ptr<const VolumeIndex>> volume_indexes;
        std::map<Aggregation, std::uint64_t> volume_generations;
        std::optional<Aggregation> last_volume_aggregation;
        std::map<std::string, std::shared_ptr<const ClassifierHead>> heads;
        std::map<std::string, std::shared_ptr<const EvaluationRun>> runs;
    };

    ServiceResponse route(const std::string& method, const std::string& path, const QueryParams& params,
                          const std::string& body);

    ServiceResponse post_corpus(const QueryParams& params, const std::string& body);
    ServiceResponse get_snapshot();
    ServiceResponse post_index(const std::string& body);
    ServiceResponse post_search(const std::string& body);
    ServiceResponse post_search_batch(const std::string& body);
    ServiceResponse post_classify(const std::string& body);
    ServiceResponse post_regress(const std::string& body);
    ServiceResponse post_heads(const QueryParams& params, const std::string& body);
    ServiceResponse get_heads();
    ServiceResponse post_evaluate(const std::string& body);
    ServiceResponse get_runs();
    ServiceResponse get_outcomes(const std::string& run);
    ServiceResponse get_roc(const std::string& run, const std::string& class_name);
    ServiceResponse post_fairness(const std::string& body);
    ServiceResponse post_volume_index(const std::string& body);
    ServiceResponse post_volume_search(const std::string& body);
    ServiceResponse post_volume_evaluate(const std::string& body);

    // Callers hold the lock.
    const VectorIndex& current_index() const;
    const Corpus& current_corpus() const;
    const VolumeIndex& current_volume_index(std::optional<Aggregation> method) const;
    std::shared_ptr<const ClassifierHead> find_head(const std::string& name) const;

    // Writers hold gate_ while waiting for the exclusive lock, so a steady
    // stream of readers cannot starve a corpus replacement.
    std::shared_lock<std::shared_mutex> read_lock() const;
    std::unique_lock<std::shared_mutex> write_lock();

    ServiceConfig config_;
    mutable std::mutex gate_;
    mutable std::shared_mutex mutex_;
    State state_;
};

// Installs the catch-all routes that forward to `service`.
void mount(httplib::Server& server, Service& service);

// Blocks serving on host:port until the server stops.
bool serve(Service& service, const std::string& host, int port);

}  // namespace evsearch
