#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evsearch/corpus.hpp"

namespace evsearch {

/// One piece of retrieval evidence. `position` is the entry's insertion
/// index inside the index it came from; `target_months` is carried through
/// for regression.
struct NeighborHit {
    std::string id;
    double score = 0.0;
    std::optional<std::string> label;
    std::size_t position = 0;
    std::optional<std::int64_t> target_months;

    bool operator==(const NeighborHit&) const = default;
};

using HitList = std::vector<NeighborHit>;

struct IndexOptions {
    // L2-normalize stored vectors at build time. Zero vectors are kept as is.
    bool normalize = false;
};

// Dot product accumulated in ascending component order. Both search paths
// use it so their scores agree bit for bit.
double dot(std::span<const double> a, std::span<const double> b);

/// Immutable exact dot-product index over a Corpus.
///
/// Vectors live in one row-major buffer. Ranking is by descending score with
/// ties resolved by ascending insertion position, which makes every result
/// list fully deterministic.
class VectorIndex {
public:
    explicit VectorIndex(const Corpus& corpus, IndexOptions options = {});

    std::size_t dimension() const noexcept { return dimension_; }
    std::size_t count() const noexcept { return ids_.size(); }
    bool normalized() const noexcept { return normalized_; }

    const std::string& id(std::size_t position) const { return ids_[position]; }
    const std::optional<std::string>& label(std::size_t position) const { return labels_[position]; }
    const std::map<std::string, std::string>& attributes(std::size_t position) const {
        return attributes_[position];
    }
    std::optional<std::int64_t> target_months(std::size_t position) const {
        return target_months_[position];
    }
    std::span<const double> vector(std::size_t position) const {
        return {data_.data() + position * dimension_, dimension_};
    }
    std::optional<std::size_t> find(const std::string& id) const;

    // Sorted distinct labels present in the index.
    std::vector<std::string> label_set() const;

    // Size-k selection over blocked score computation.
    HitList search(std::span<const double> query, std::size_t k) const;

    // Full scan followed by a full sort. Kept deliberately naive; it is the
    // reference the optimized path is tested against.
    HitList brute_force_search(std::span<const double> query, std::size_t k) const;

    // Element i equals search(queries[i], k). Work is spread over
    // `threads` workers (0 picks the hardware concurrency).
    std::vector<HitList> batch_search(std::span<const std::vector<double>> queries, std::size_t k,
                                      unsigned threads = 0) const;

private:
    void check_query(std::span<const double> query, std::size_t k) const;
    NeighborHit make_hit(std::size_t position, double score) const;

    std::size_t dimension_;
    bool normalized_;
    std::vector<double> data_;
    std::vector<std::string> ids_;
    std::vector<std::optional<std::string>> labels_;
    std::vector<std::map<std::string, std::string>> attributes_;
    std::vector<std::optional<std::int64_t>> target_months_;
};

VectorIndex build_index(const Corpus& corpus, IndexOptions options = {});

}  // namespace evsearch
