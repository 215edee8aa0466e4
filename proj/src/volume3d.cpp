#include "evsearch/volume3d.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "evsearch/error.hpp"

namespace evsearch {

std::string_view to_string(Aggregation method) {
    switch (method) {
        case Aggregation::median: return "median";
        case Aggregation::mean: return "mean";
        case Aggregation::max: return "max";
        case Aggregation::stdev: return "stdev";
    }
    return "median";
}

Aggregation parse_aggregation(std::string_view text) {
    if (text == "median") return Aggregation::median;
    if (text == "mean" || text == "average") return Aggregation::mean;
    if (text == "max") return Aggregation::max;
    if (text == "stdev" || text == "std") return Aggregation::stdev;
    throw invalid_input("unknown aggregation '" + std::string(text) + "'");
}

std::vector<double> aggregate_slices(const std::vector<std::vector<double>>& slices, Aggregation method) {
    if (slices.empty()) throw invalid_input("cannot aggregate an empty slice list");
    const std::size_t dim = slices.front().size();
    if (dim == 0) throw invalid_input("slice vectors must be non-empty");
    for (const auto& slice : slices) {
        if (slice.size() != dim) throw invalid_input("slice vectors have ragged dimensions");
    }
    const std::size_t n = slices.size();
    std::vector<double> out(dim);
    std::vector<double> values(n);
    for (std::size_t c = 0; c < dim; ++c) {
        for (std::size_t s = 0; s < n; ++s) values[s] = slices[s][c];
        std::sort(values.begin(), values.end());
        switch (method) {
            case Aggregation::median:
                out[c] = n % 2 == 1 ? values[n / 2] : std::midpoint(values[n / 2 - 1], values[n / 2]);
                break;
            case Aggregation::max:
                out[c] = values.back();
                break;
            case Aggregation::mean:
            case Aggregation::stdev: {
                double sum = 0.0;
                for (double v : values) sum += v;
                const double mean = sum / static_cast<double>(n);
                if (method == Aggregation::mean) {
                    out[c] = mean;
                    break;
                }
                double squares = 0.0;
                for (double v : values) squares += (v - mean) * (v - mean);
                out[c] = std::sqrt(squares / static_cast<double>(n));
                break;
            }
        }
    }
    return out;
}

namespace {

struct SliceGroup {
    std::string volume_id;
    std::vector<std::pair<std::int64_t, const std::vector<double>*>> slices;
    std::optional<std::string> flag;
    std::optional<std::string> stage;
};

std::optional<std::string> attribute(const EmbeddingRecord& record, std::string_view key) {
    auto it = record.attributes.find(std::string(key));
    if (it == record.attributes.end()) return std::nullopt;
    return it->second;
}

Corpus volume_corpus(const std::vector<VolumeEmbedding>& volumes) {
    if (volumes.empty()) throw invalid_input("no volumes to index");
    std::vector<EmbeddingRecord> records;
    records.reserve(volumes.size());
    for (const auto& volume : volumes) {
        EmbeddingRecord record;
        record.id = volume.volume_id;
        record.vector = volume.vector;
        record.label = volume.tumor_stage;
        if (volume.tumor_flag) {
            record.attributes[std::string(kTumorFlagAttribute)] = *volume.tumor_flag ? "true" : "false";
        }
        if (volume.tumor_stage) record.attributes[std::string(kTumorStageAttribute)] = *volume.tumor_stage;
        records.push_back(std::move(record));
    }
    return Corpus(volumes.front().vector.size(), std::move(records), "volumes");
}

}  // namespace

std::vector<VolumeEmbedding> volume_embeddings(const Corpus& corpus, Aggregation method) {
    std::vector<SliceGroup> groups;
    std::map<std::string, std::size_t> group_of;
    for (const auto& record : corpus.records()) {
        if (!record.volume_id || !record.slice_index) {
            throw invalid_input("record '" + record.id + "' lacks volume_id/slice_index");
        }
        auto [it, inserted] = group_of.try_emplace(*record.volume_id, groups.size());
        const auto flag = attribute(record, kTumorFlagAttribute);
        const auto stage = attribute(record, kTumorStageAttribute);
        if (inserted) {
            groups.push_back({*record.volume_id, {}, flag, stage});
        } else {
            const auto& group = groups[it->second];
            if (group.flag != flag) {
                throw invalid_input("volume '" + group.volume_id + "' has inconsistent tumor_flag across slices");
            }
            if (group.stage != stage) {
                throw invalid_input("volume '" + group.volume_id + "' has inconsistent tumor_stage across slices");
            }
        }
        groups[it->second].slices.emplace_back(*record.slice_index, &record.vector);
    }

    std::vector<VolumeEmbedding> volumes;
    volumes.reserve(groups.size());
    for (auto& group : groups) {
        std::sort(group.slices.begin(), group.slices.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<std::vector<double>> slices;
        for (std::size_t i = 0; i < group.slices.size(); ++i) {
            if (i > 0 && group.slices[i].first == group.slices[i - 1].first) {
                throw invalid_input("volume '" + group.volume_id + "' repeats slice_index " +
                                    std::to_string(group.slices[i].first));
            }
            slices.push_back(*group.slices[i].second);
        }
        VolumeEmbedding volume;
        volume.volume_id = group.volume_id;
        volume.vector = aggregate_slices(slices, method);
        volume.aggregation = method;
        volume.slice_count = slices.size();
        if (group.flag) {
            if (*group.flag == "true") volume.tumor_flag = true;
            else if (*group.flag == "false") volume.tumor_flag = false;
            else throw invalid_input("volume '" + group.volume_id + "' has tumor_flag '" + *group.flag +
                                     "', expected \"true\" or \"false\"");
        }
        volume.tumor_stage = group.stage;
        volumes.push_back(std::move(volume));
    }
    return volumes;
}

VolumeIndex::VolumeIndex(std::vector<VolumeEmbedding> volumes, Aggregation method)
    : aggregation_(method), volumes_(std::move(volumes)), index_(volume_corpus(volumes_)) {
    for (const auto& volume : volumes_) {
        if (volume.aggregation != method) throw invalid_input("aggregation mismatch inside volume index");
    }
}

VolumeIndex build_volume_index(const Corpus& corpus, Aggregation method) {
    return VolumeIndex(volume_embeddings(corpus, method), method);
}

HitList retrieve_volumes(const VolumeIndex& index, const std::vector<std::vector<double>>& query_slices,
                         Aggregation method, std::size_t k) {
    if (method != index.aggregation()) {
        throw invalid_input("aggregation mismatch: index uses " + std::string(to_string(index.aggregation())) +
                            ", query uses " + std::string(to_string(method)));
    }
    const auto query = aggregate_slices(query_slices, method);
    return index.index().search(query, k);
}

double precision_at_k(const std::vector<bool>& relevance, std::size_t k) {
    if (k == 0) throw invalid_input("k must be a positive integer");
    if (relevance.empty()) throw invalid_input("precision@k of an empty hit list");
    const std::size_t cutoff = std::min(k, relevance.size());
    std::size_t relevant = 0;
    for (std::size_t i = 0; i < cutoff; ++i) relevant += relevance[i] ? 1 : 0;
    return static_cast<double>(relevant) / static_cast<double>(cutoff);
}

double average_precision(const std::vector<bool>& relevance) {
    if (relevance.empty()) throw invalid_input("average precision of an empty hit list");
    double sum = 0.0;
    std::size_t relevant = 0;
    for (std::size_t i = 0; i < relevance.size(); ++i) {
        if (!relevance[i]) continue;
        ++relevant;
        sum += static_cast<double>(relevant) / static_cast<double>(i + 1);
    }
    return relevant == 0 ? 0.0 : sum / static_cast<double>(relevant);
}

namespace {

std::vector<bool> relevance_of(std::span<const NeighborHit> hits, const HitPredicate& relevant) {
    std::vector<bool> out;
    out.reserve(hits.size());
    for (const auto& hit : hits) out.push_back(relevant(hit));
    return out;
}

}  // namespace

double precision_at_k(std::span<const NeighborHit> hits, const HitPredicate& relevant, std::size_t k) {
    return precision_at_k(relevance_of(hits, relevant), k);
}

double average_precision(std::span<const NeighborHit> hits, const HitPredicate& relevant) {
    return average_precision(relevance_of(hits, relevant));
}

std::string_view to_string(Relevance mode) {
    return mode == Relevance::tumor_flag ? "tumor_flag" : "tumor_stage";
}

RetrievalReport evaluate_volume_retrieval(const VolumeIndex& index, const Corpus& queries,
                                          const std::vector<std::size_t>& ks) {
    if (ks.empty()) throw invalid_input("at least one cutoff k is required");
    for (std::size_t k : ks) {
        if (k == 0) throw invalid_input("cutoffs must be positive");
    }
    const auto query_volumes = volume_embeddings(queries, index.aggregation());
    const std::size_t depth = *std::max_element(ks.begin(), ks.end());

    RetrievalReport report;
    report.aggregation = index.aggregation();
    report.ks = ks;
    for (Relevance mode : {Relevance::tumor_flag, Relevance::tumor_stage}) {
        RetrievalRow row{mode, std::vector<double>(ks.size(), 0.0), 0.0, 0};
        for (const auto& query : query_volumes) {
            HitPredicate relevant;
            if (mode == Relevance::tumor_flag) {
                if (!query.tumor_flag) continue;
                relevant = [&](const NeighborHit& hit) {
                    return index.volumes()[hit.position].tumor_flag == query.tumor_flag;
                };
            } else {
                if (!query.tumor_stage) continue;
                relevant = [&](const NeighborHit& hit) {
                    return index.volumes()[hit.position].tumor_stage == query.tumor_stage;
                };
            }
            const auto hits = index.index().search(query.vector, depth);
            for (std::size_t i = 0; i < ks.size(); ++i) row.precision[i] += precision_at_k(hits, relevant, ks[i]);
            row.average_precision += average_precision(hits, relevant);
            ++row.queries;
        }
        if (row.queries > 0) {
            for (double& p : row.precision) p /= static_cast<double>(row.queries);
            row.average_precision /= static_cast<double>(row.queries);
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace evsearch
