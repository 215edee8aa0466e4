#include "evsearch/vector_index.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <thread>

#include "evsearch/error.hpp"

namespace evsearch {

namespace {

constexpr std::size_t kBlockRows = 256;

struct Candidate {
    double score;
    std::size_t position;
};

// True when a ranks ahead of b.
bool ranks_before(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.position < b.position;
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

VectorIndex::VectorIndex(const Corpus& corpus, IndexOptions options)
    : dimension_(corpus.dimension()), normalized_(options.normalize) {
    if (corpus.empty()) throw invalid_input("cannot build an index over an empty corpus");
    const auto n = corpus.size();
    data_.reserve(n * dimension_);
    ids_.reserve(n);
    labels_.reserve(n);
    attributes_.reserve(n);
    target_months_.reserve(n);
    for (const auto& record : corpus.records()) {
        double scale = 1.0;
        if (normalized_) {
            const double norm = std::sqrt(dot(record.vector, record.vector));
            if (norm > 0.0) scale = 1.0 / norm;
        }
        for (double v : record.vector) data_.push_back(normalized_ ? v * scale : v);
        ids_.push_back(record.id);
        labels_.push_back(record.label);
        attributes_.push_back(record.attributes);
        target_months_.push_back(record.target_months);
    }
}

std::optional<std::size_t> VectorIndex::find(const std::string& id) const {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (ids_[i] == id) return i;
    }
    return std::nullopt;
}

std::vector<std::string> VectorIndex::label_set() const {
    std::set<std::string> labels;
    for (const auto& label : labels_) {
        if (label) labels.insert(*label);
    }
    return {labels.begin(), labels.end()};
}

void VectorIndex::check_query(std::span<const double> query, std::size_t k) const {
    if (k == 0) throw invalid_input("k must be a positive integer");
    if (query.size() != dimension_) {
        throw invalid_input("query has " + std::to_string(query.size()) +
                            " components, index dimension is " + std::to_string(dimension_));
    }
    for (double v : query) {
        if (!std::isfinite(v)) throw invalid_input("query contains a non-finite component");
    }
}

NeighborHit VectorIndex::make_hit(std::size_t position, double score) const {
    if (!std::isfinite(score)) {
        throw invalid_input("dot product with entry '" + ids_[position] + "' overflowed");
    }
    return NeighborHit{ids_[position], score, labels_[position], position, target_months_[position]};
}

HitList VectorIndex::search(std::span<const double> query, std::size_t k) const {
    check_query(query, k);
    const std::size_t n = count();
    const std::size_t keep = std::min(k, n);

    auto worse_on_top = [](const Candidate& a, const Candidate& b) { return ranks_before(a, b); };
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse_on_top)> heap(worse_on_top);

    double scores[kBlockRows];
    for (std::size_t begin = 0; begin < n; begin += kBlockRows) {
        const std::size_t end = std::min(n, begin + kBlockRows);
        for (std::size_t row = begin; row < end; ++row) scores[row - begin] = dot(query, vector(row));
        for (std::size_t row = begin; row < end; ++row) {
            const double s = scores[row - begin];
            if (heap.size() < keep) {
                heap.push({s, row});
            } else if (s > heap.top().score) {
                // Positions arrive in ascending order, so an equal score never
                // outranks the current worst.
                heap.pop();
                heap.push({s, row});
            }
        }
    }

    std::vector<Candidate> best;
    best.reserve(heap.size());
    while (!heap.empty()) {
        best.push_back(heap.top());
        heap.pop();
    }
    std::reverse(best.begin(), best.end());

    HitList hits;
    hits.reserve(best.size());
    for (const auto& c : best) hits.push_back(make_hit(c.position, c.score));
    return hits;
}

HitList VectorIndex::brute_force_search(std::span<const double> query, std::size_t k) const {
    check_query(query, k);
    std::vector<Candidate> all;
    all.reserve(count());
    for (std::size_t row = 0; row < count(); ++row) all.push_back({dot(query, vector(row)), row});
    std::sort(all.begin(), all.end(), ranks_before);
    all.resize(std::min(k, all.size()));

    HitList hits;
    for (const auto& c : all) hits.push_back(make_hit(c.position, c.score));
    return hits;
}

std::vector<HitList> VectorIndex::batch_search(std::span<const std::vector<double>> queries,
                                               std::size_t k, unsigned threads) const {
    for (std::size_t i = 0; i < queries.size(); ++i) {
        try {
            check_query(queries[i], k);
        } catch (const Error& e) {
            throw invalid_input("query " + std::to_string(i) + ": " + e.what());
        }
    }
    std::vector<HitList> results(queries.size());
    if (queries.empty()) return results;

    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, queries.size()));
    if (threads <= 1) {
        for (std::size_t i = 0; i < queries.size(); ++i) results[i] = search(queries[i], k);
        return results;
    }

    std::vector<std::exception_ptr> failures(threads);
    std::vector<std::thread> workers;
    workers.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        workers.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < queries.size(); i += threads) {
                    results[i] = search(queries[i], k);
                }
            } catch (...) {
                failures[t] = std::current_exception();
            }
        });
    }
    for (auto& worker : workers) worker.join();
    for (const auto& failure : failures) {
        if (failure) std::rethrow_exception(failure);
    }
    return results;
}

VectorIndex build_index(const Corpus& corpus, IndexOptions options) {
    return VectorIndex(corpus, options);
}

}  // namespace evsearch
