#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evsearch/corpus.hpp"
#include "evsearch/knn_decision.hpp"
#include "evsearch/metrics.hpp"
#include "evsearch/vector_index.hpp"

namespace evsearch {

struct RecordOutcome {
    std::string id;
    std::string true_label;
    std::string predicted;
    std::vector<double> probabilities;  // aligned with EvaluationRun::classes
    std::map<std::string, std::string> attributes;
    std::optional<std::int64_t> true_months;
    std::optional<std::int64_t> predicted_months;
};

/// Everything a labelled evaluation pass produces: per-record outcomes,
/// per-class AUC with ROC curves for the scorable classes, summary
/// accuracy figures, and the regression error when targets are available.
struct EvaluationRun {
    std::string name;
    std::string mode;  // "knn" or "zeroshot"
    std::size_t k = 0;
    std::vector<std::string> classes;
    std::vector<RecordOutcome> outcomes;
    MaucResult auc;
    double accuracy = 0.0;
    double balanced_accuracy = 0.0;
    std::optional<double> l1_months;
    std::vector<std::pair<std::string, RocCurve>> roc;  // class order, scorable classes only
    std::vector<std::string> notes;

    const RocCurve* find_roc(const std::string& class_name) const;
};

struct EvaluationOptions {
    std::size_t k = kDefaultClassifyK;
    std::size_t regression_k = kDefaultRegressK;
    VoteAggregation vote = VoteAggregation::sum;
};

// Classifies every query with search + classify_knn over the index's label
// set. The L1 month error is filled in only when every query and at least
// one database entry carries target_months.
EvaluationRun evaluate_knn(const VectorIndex& index, const Corpus& queries,
                           const EvaluationOptions& options = {}, std::string name = "run");

EvaluationRun evaluate_zeroshot(const ClassifierHead& head, const Corpus& queries,
                                std::string name = "run");

FairnessReport fairness_from_run(const EvaluationRun& run, FairnessGrouping grouping);

}  // namespace evsearch
