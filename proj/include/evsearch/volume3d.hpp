#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evsearch/corpus.hpp"
#include "evsearch/vector_index.hpp"

namespace evsearch {

enum class Aggregation { median, mean, max, stdev };

std::string_view to_string(Aggregation method);
Aggregation parse_aggregation(std::string_view text);

// Componentwise pooling over slices. Even-count median is the midpoint of
// the middle pair; stdev divides by n. Each component's values are sorted
// before reduction, so the result does not depend on slice order at all.
std::vector<double> aggregate_slices(const std::vector<std::vector<double>>& slices,
                                     Aggregation method = Aggregation::median);

struct VolumeEmbedding {
    std::string volume_id;
    std::vector<double> vector;
    Aggregation aggregation = Aggregation::median;
    std::size_t slice_count = 0;
    std::optional<bool> tumor_flag;
    std::optional<std::string> tumor_stage;
};

// Groups slice records by volume_id (first-appearance order), orders slices
// by slice_index and aggregates them. Tumor attributes must agree across all
// slices of a volume.
std::vector<VolumeEmbedding> volume_embeddings(const Corpus& corpus, Aggregation method);

/// One entry per volume, searchable by dot product. Hit positions index
/// into volumes().
class VolumeIndex {
public:
    VolumeIndex(std::vector<VolumeEmbedding> volumes, Aggregation method);

    Aggregation aggregation() const noexcept { return aggregation_; }
    const std::vector<VolumeEmbedding>& volumes() const noexcept { return volumes_; }
    const VectorIndex& index() const noexcept { return index_; }
    std::size_t count() const noexcept { return volumes_.size(); }

private:
    Aggregation aggregation_;
    std::vector<VolumeEmbedding> volumes_;
    VectorIndex index_;
};

VolumeIndex build_volume_index(const Corpus& corpus, Aggregation method = Aggregation::median);

// Aggregates the query slices with `method` (which must equal the index's
// method) and runs a top-k search.
HitList retrieve_volumes(const VolumeIndex& index, const std::vector<std::vector<double>>& query_slices,
                         Aggregation method, std::size_t k);

using HitPredicate = std::function<bool(const NeighborHit&)>;

double precision_at_k(const std::vector<bool>& relevance, std::size_t k);
double precision_at_k(std::span<const NeighborHit> hits, const HitPredicate& relevant, std::size_t k);

// Mean of P@i over the ranks i of relevant hits in the returned list; 0 when
// the list holds nothing relevant.
double average_precision(const std::vector<bool>& relevance);
double average_precision(std::span<const NeighborHit> hits, const HitPredicate& relevant);

enum class Relevance { tumor_flag, tumor_stage };

std::string_view to_string(Relevance mode);

struct RetrievalRow {
    Relevance mode;
    std::vector<double> precision;  // aligned with RetrievalReport::ks
    double average_precision = 0.0;
    std::size_t queries = 0;
};

struct RetrievalReport {
    Aggregation aggregation = Aggregation::median;
    std::vector<std::size_t> ks;
    std::vector<RetrievalRow> rows;
};

// Treats every volume in `queries` as a query; precision values and AP are
// averaged over the queries that carry the attribute of each mode. AP is
// taken over the top max(ks) list.
RetrievalReport evaluate_volume_retrieval(const VolumeIndex& index, const Corpus& queries,
                                          const std::vector<std::size_t>& ks = {3, 5, 10});

}  // namespace evsearch
