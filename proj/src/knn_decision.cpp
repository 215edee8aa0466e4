#include "evsearch/knn_decision.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "evsearch/error.hpp"
#include "evsearch/json_codec.hpp"
#include "evsearch/metrics.hpp"

namespace evsearch {

std::size_t ClassScores::argmax() const {
    if (probabilities.empty()) throw invalid_input("no classes to choose from");
    return static_cast<std::size_t>(std::max_element(probabilities.begin(), probabilities.end()) -
                                    probabilities.begin());
}

ClassScores softmax_scores(std::vector<std::string> classes, std::vector<double> raw) {
    if (classes.empty() || classes.size() != raw.size()) {
        throw invalid_input("softmax needs one raw score per class");
    }
    const double shift = *std::max_element(raw.begin(), raw.end());
    std::vector<double> probabilities(raw.size());
    double total = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        probabilities[i] = std::exp(raw[i] - shift);
        total += probabilities[i];
    }
    for (double& p : probabilities) p /= total;
    return ClassScores{std::move(classes), std::move(raw), std::move(probabilities)};
}

std::string_view to_string(VoteAggregation vote) {
    return vote == VoteAggregation::sum ? "sum" : "mean";
}

VoteAggregation parse_vote(std::string_view text) {
    if (text == "sum") return VoteAggregation::sum;
    if (text == "mean") return VoteAggregation::mean;
    throw invalid_input("unknown vote aggregation '" + std::string(text) + "'");
}

ClassScores classify_knn(std::span<const NeighborHit> hits, std::size_t k, const KnnOptions& options) {
    if (k == 0) throw invalid_input("k must be a positive integer");
    if (hits.empty()) throw invalid_input("no labeled hits to vote with");
    const std::size_t used = std::min(k, hits.size());

    struct Tally {
        double sum = 0.0;
        std::size_t count = 0;
    };
    std::map<std::string, Tally> tallies;
    for (const auto& name : options.class_universe) tallies[name];
    for (std::size_t i = 0; i < used; ++i) {
        if (!hits[i].label) {
            throw invalid_input("hit '" + hits[i].id + "' at rank " + std::to_string(i + 1) +
                                " has no label");
        }
        auto& tally = tallies[*hits[i].label];
        tally.sum += hits[i].score;
        ++tally.count;
    }

    std::vector<std::string> classes;
    std::vector<double> raw;
    for (const auto& [name, tally] : tallies) {
        classes.push_back(name);
        if (options.vote == VoteAggregation::mean) {
            raw.push_back(tally.count == 0 ? 0.0 : tally.sum / static_cast<double>(tally.count));
        } else {
            raw.push_back(tally.sum);
        }
    }
    return softmax_scores(std::move(classes), std::move(raw));
}

std::int64_t regress_knn(std::span<const NeighborHit> hits, std::size_t k) {
    if (k == 0) throw invalid_input("k must be a positive integer");
    const std::size_t used = std::min(k, hits.size());
    std::map<std::int64_t, double> weight;
    for (std::size_t i = 0; i < used; ++i) {
        if (hits[i].target_months) weight[*hits[i].target_months] += hits[i].score;
    }
    if (weight.empty()) throw invalid_input("no usable hits: none of the first k carry target_months");
    auto best = weight.begin();
    for (auto it = weight.begin(); it != weight.end(); ++it) {
        if (it->second > best->second) best = it;
    }
    return best->first;
}

ClassifierHead::ClassifierHead(std::vector<std::string> classes,
                               std::vector<std::vector<double>> anchors, double temperature,
                               std::string name)
    : classes_(std::move(classes)),
      anchors_(std::move(anchors)),
      temperature_(temperature),
      name_(std::move(name)) {
    if (classes_.empty()) throw invalid_input("classifier head needs at least one class");
    if (classes_.size() != anchors_.size()) throw invalid_input("classifier head needs one anchor per class");
    if (!(temperature_ > 0.0) || !std::isfinite(temperature_)) {
        throw invalid_input("classifier head temperature must be a positive finite number");
    }
    std::set<std::string> seen;
    for (const auto& name_i : classes_) {
        if (!seen.insert(name_i).second) throw invalid_input("duplicate class '" + name_i + "' in head");
    }
    const std::size_t dim = anchors_.front().size();
    if (dim == 0) throw invalid_input("classifier head anchors must be non-empty");
    for (const auto& anchor : anchors_) {
        if (anchor.size() != dim) throw invalid_input("classifier head anchors differ in dimension");
        for (double v : anchor) {
            if (!std::isfinite(v)) throw invalid_input("classifier head anchor is not finite");
        }
    }
}

ClassifierHead head_from_corpus(const Corpus& corpus, double temperature) {
    std::vector<std::string> classes;
    std::vector<std::vector<double>> anchors;
    for (const auto& record : corpus.records()) {
        if (!record.label) throw invalid_input("head record '" + record.id + "' has no label");
        classes.push_back(*record.label);
        anchors.push_back(record.vector);
    }
    return ClassifierHead(std::move(classes), std::move(anchors), temperature, corpus.name());
}

std::string head_text(const ClassifierHead& head) {
    std::vector<EmbeddingRecord> records;
    for (std::size_t i = 0; i < head.classes().size(); ++i) {
        EmbeddingRecord record;
        record.id = head.classes()[i];
        record.vector = head.anchors()[i];
        record.label = head.classes()[i];
        records.push_back(std::move(record));
    }
    const Corpus corpus(head.dimension(), std::move(records), head.name());
    const std::string body = records_text(corpus);
    Json header;
    header["dimension"] = head.dimension();
    header["name"] = head.name();
    header["temperature"] = head.temperature();
    header["checksum"] = checksum_hex(body);
    return dump_json(header) + "\n" + body;
}

ClassifierHead parse_head(std::string_view text) {
    const auto newline = text.find('\n');
    if (newline == std::string_view::npos) throw invalid_input("classifier head: missing header line");
    const Json header = parse_json(std::string(text.substr(0, newline)));
    if (!header.is_object() || !header.contains("dimension") || !header["dimension"].is_number_unsigned()) {
        throw invalid_input("classifier head: header needs a positive 'dimension'");
    }
    double temperature = 1.0;
    if (header.contains("temperature")) {
        if (!header["temperature"].is_number()) throw invalid_input("classifier head: bad temperature");
        temperature = header["temperature"].get<double>();
    }
    Corpus corpus = header.contains("checksum")
                        ? parse_snapshot(text)
                        : parse_records(text.substr(newline + 1), header["dimension"].get<std::size_t>(),
                                        header.value("name", std::string{}));
    if (corpus.empty()) throw invalid_input("classifier head has no anchors");
    return head_from_corpus(corpus, temperature);
}

ClassifierHead load_head(const std::filesystem::path& path) { return parse_head(read_file(path)); }

ClassScores zeroshot_classify(std::span<const double> image_embedding, const ClassifierHead& head) {
    if (image_embedding.size() != head.dimension()) {
        throw invalid_input("image embedding has " + std::to_string(image_embedding.size()) +
                            " components, head dimension is " + std::to_string(head.dimension()));
    }
    std::vector<double> raw;
    raw.reserve(head.classes().size());
    for (const auto& anchor : head.anchors()) {
        raw.push_back(dot(image_embedding, anchor) / head.temperature());
    }
    return softmax_scores(head.classes(), std::move(raw));
}

std::string_view to_string(TuneMetric metric) { return metric == TuneMetric::mauc ? "mAUC" : "BACC"; }

TuneMetric parse_tune_metric(std::string_view text) {
    if (text == "mAUC" || text == "mauc") return TuneMetric::mauc;
    if (text == "BACC" || text == "bacc") return TuneMetric::bacc;
    throw invalid_input("unknown metric '" + std::string(text) + "'");
}

TuneResult tune_k(const VectorIndex& index, const Corpus& validation,
                  const std::vector<std::size_t>& candidate_ks, TuneMetric metric,
                  const KnnOptions& options) {
    if (validation.empty()) throw invalid_input("validation set is empty");
    if (candidate_ks.empty()) throw invalid_input("candidate k list is empty");
    for (std::size_t k : candidate_ks) {
        if (k == 0) throw invalid_input("candidate k values must be positive");
    }

    TuneResult result;
    KnnOptions knn = options;
    std::set<std::string> universe(knn.class_universe.begin(), knn.class_universe.end());
    for (const auto& label : index.label_set()) universe.insert(label);
    knn.class_universe.assign(universe.begin(), universe.end());

    std::vector<std::string> truths;
    std::set<std::string> missing;
    for (const auto& record : validation.records()) {
        if (!record.label) throw invalid_input("validation record '" + record.id + "' has no label");
        truths.push_back(*record.label);
        if (!universe.contains(*record.label)) missing.insert(*record.label);
    }
    for (const auto& name : missing) {
        result.warnings.push_back("class '" + name +
                                  "' is absent from the database; it is not scored one-vs-rest");
    }

    // Hit lists for smaller k are prefixes of the largest one.
    const std::size_t max_k = *std::max_element(candidate_ks.begin(), candidate_ks.end());
    std::vector<HitList> hits;
    hits.reserve(validation.size());
    for (const auto& record : validation.records()) hits.push_back(index.search(record.vector, max_k));

    for (std::size_t k : candidate_ks) {
        std::vector<std::vector<double>> probabilities;
        std::vector<std::string> predictions;
        for (const auto& list : hits) {
            auto scores = classify_knn(list, k, knn);
            predictions.push_back(scores.predicted());
            probabilities.push_back(std::move(scores.probabilities));
        }
        const double value = metric == TuneMetric::mauc
                                 ? mauc(knn.class_universe, probabilities, truths).mauc
                                 : balanced_accuracy(predictions, truths);
        result.table.push_back({k, value});
    }

    const TuneRow* best = &result.table.front();
    for (const auto& row : result.table) {
        if (row.value > best->value || (row.value == best->value && row.k < best->k)) best = &row;
    }
    result.best_k = best->k;
    return result;
}

}  // namespace evsearch
