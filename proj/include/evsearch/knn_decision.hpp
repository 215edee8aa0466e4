#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evsearch/corpus.hpp"
#include "evsearch/vector_index.hpp"

namespace evsearch {

// Operating points used throughout: 20 neighbours for classification votes,
// 100 for the regression mode.
inline constexpr std::size_t kDefaultClassifyK = 20;
inline constexpr std::size_t kDefaultRegressK = 100;

struct ClassScores {
    std::vector<std::string> classes;
    std::vector<double> raw;
    std::vector<double> probabilities;

    // First class holding the maximal probability.
    std::size_t argmax() const;
    const std::string& predicted() const { return classes[argmax()]; }
};

// Numerically stable softmax (max-shifted) over `raw`.
ClassScores softmax_scores(std::vector<std::string> classes, std::vector<double> raw);

enum class VoteAggregation { sum, mean };

std::string_view to_string(VoteAggregation vote);
VoteAggregation parse_vote(std::string_view text);

struct KnnOptions {
    VoteAggregation vote = VoteAggregation::sum;
    // Classes that always appear in the output. A class with no neighbour
    // among the first k gets raw score 0.
    std::vector<std::string> class_universe;
};

// Weighted vote over the first min(k, |hits|) hits: raw[c] is the sum (or
// mean) of the scores of hits labelled c, probabilities = softmax(raw).
// Classes come out sorted by name.
ClassScores classify_knn(std::span<const NeighborHit> hits, std::size_t k = kDefaultClassifyK,
                         const KnnOptions& options = {});

// Weighted mode of target_months over the first min(k, |hits|) hits; hits
// without a target are skipped. Ties go to the smaller month value.
std::int64_t regress_knn(std::span<const NeighborHit> hits, std::size_t k = kDefaultRegressK);

/// Text-side class anchors for zero-shot scoring.
class ClassifierHead {
public:
    ClassifierHead(std::vector<std::string> classes, std::vector<std::vector<double>> anchors,
                   double temperature = 1.0, std::string name = {});

    const std::vector<std::string>& classes() const noexcept { return classes_; }
    const std::vector<std::vector<double>>& anchors() const noexcept { return anchors_; }
    double temperature() const noexcept { return temperature_; }
    std::size_t dimension() const noexcept { return anchors_.front().size(); }
    const std::string& name() const noexcept { return name_; }

private:
    std::vector<std::string> classes_;
    std::vector<std::vector<double>> anchors_;
    double temperature_;
    std::string name_;
};

// Anchors come from labelled records, one per class, in file order.
ClassifierHead head_from_corpus(const Corpus& corpus, double temperature = 1.0);

// Head files use the snapshot layout with a "temperature" key in the header
// line. The checksum is verified when present.
std::string head_text(const ClassifierHead& head);
ClassifierHead parse_head(std::string_view text);
ClassifierHead load_head(const std::filesystem::path& path);

// raw[c] = dot(image, anchor_c) / temperature, in head class order.
ClassScores zeroshot_classify(std::span<const double> image_embedding, const ClassifierHead& head);

enum class TuneMetric { mauc, bacc };

std::string_view to_string(TuneMetric metric);
TuneMetric parse_tune_metric(std::string_view text);

struct TuneRow {
    std::size_t k;
    double value;
};

struct TuneResult {
    std::size_t best_k = 0;
    std::vector<TuneRow> table;  // candidate order
    std::vector<std::string> warnings;
};

// Scores every candidate k on the validation records and keeps the best,
// preferring the smaller k on ties.
TuneResult tune_k(const VectorIndex& index, const Corpus& validation,
                  const std::vector<std::size_t>& candidate_ks, TuneMetric metric,
                  const KnnOptions& options = {});

}  // namespace evsearch
