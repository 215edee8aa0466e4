#include "evsearch/evaluation.hpp"

#include <algorithm>
#include <set>

#include "evsearch/error.hpp"

namespace evsearch {

const RocCurve* EvaluationRun::find_roc(const std::string& class_name) const {
    for (const auto& [name, curve] : roc) {
        if (name == class_name) return &curve;
    }
    return nullptr;
}

namespace {

void require_labels(const Corpus& queries) {
    if (queries.empty()) throw invalid_input("no query records to evaluate");
    for (const auto& record : queries.records()) {
        if (!record.label) throw invalid_input("query record '" + record.id + "' has no label");
    }
}

// Fills the summary metrics and curves from run.outcomes.
void summarize(EvaluationRun& run) {
    std::vector<std::vector<double>> probabilities;
    std::vector<std::string> truths;
    std::vector<std::string> predictions;
    for (const auto& outcome : run.outcomes) {
        probabilities.push_back(outcome.probabilities);
        truths.push_back(outcome.true_label);
        predictions.push_back(outcome.predicted);
    }
    run.auc = mauc(run.classes, probabilities, truths);
    run.accuracy = accuracy(predictions, truths);
    run.balanced_accuracy = balanced_accuracy(predictions, truths);

    std::vector<double> column(truths.size());
    std::vector<bool> positive(truths.size());
    for (std::size_t c = 0; c < run.classes.size(); ++c) {
        if (!run.auc.per_class[c].auc) {
            run.notes.push_back("class '" + run.classes[c] + "' is unscorable on this query set");
            continue;
        }
        for (std::size_t r = 0; r < truths.size(); ++r) {
            column[r] = probabilities[r][c];
            positive[r] = truths[r] == run.classes[c];
        }
        run.roc.emplace_back(run.classes[c], roc_curve(column, positive));
    }
    for (const auto& truth : std::set<std::string>(truths.begin(), truths.end())) {
        if (std::find(run.classes.begin(), run.classes.end(), truth) == run.classes.end()) {
            run.notes.push_back("query class '" + truth + "' has no database support");
        }
    }
}

}  // namespace

EvaluationRun evaluate_knn(const VectorIndex& index, const Corpus& queries,
                           const EvaluationOptions& options, std::string name) {
    require_labels(queries);
    if (queries.dimension() != index.dimension()) {
        throw invalid_input("query dimension does not match the index");
    }
    EvaluationRun run;
    run.name = std::move(name);
    run.mode = "knn";
    run.k = options.k;
    run.classes = index.label_set();
    if (run.classes.empty()) throw invalid_input("the index holds no labelled entries");

    bool has_targets = false;
    for (std::size_t i = 0; i < index.count() && !has_targets; ++i) {
        has_targets = index.target_months(i).has_value();
    }
    const bool regress = has_targets && std::all_of(queries.records().begin(), queries.records().end(),
                                                    [](const auto& r) { return r.target_months.has_value(); });

    KnnOptions knn{options.vote, run.classes};
    const std::size_t search_k = regress ? std::max(options.k, options.regression_k) : options.k;
    std::vector<std::int64_t> predicted_months;
    std::vector<std::int64_t> true_months;
    for (const auto& record : queries.records()) {
        const auto hits = index.search(record.vector, search_k);
        auto scores = classify_knn(hits, options.k, knn);
        RecordOutcome outcome;
        outcome.id = record.id;
        outcome.true_label = *record.label;
        outcome.predicted = scores.predicted();
        outcome.probabilities = std::move(scores.probabilities);
        outcome.attributes = record.attributes;
        outcome.true_months = record.target_months;
        if (regress) {
            outcome.predicted_months = regress_knn(hits, options.regression_k);
            predicted_months.push_back(*outcome.predicted_months);
            true_months.push_back(*record.target_months);
        }
        run.outcomes.push_back(std::move(outcome));
    }
    summarize(run);
    if (regress) {
        run.l1_months = mean_abs_months(predicted_months, true_months);
    } else {
        run.notes.push_back("no regression targets; L1 month error omitted");
    }
    return run;
}

EvaluationRun evaluate_zeroshot(const ClassifierHead& head, const Corpus& queries, std::string name) {
    require_labels(queries);
    EvaluationRun run;
    run.name = std::move(name);
    run.mode = "zeroshot";
    run.classes = head.classes();
    for (const auto& record : queries.records()) {
        auto scores = zeroshot_classify(record.vector, head);
        RecordOutcome outcome;
        outcome.id = record.id;
        outcome.true_label = *record.label;
        outcome.predicted = scores.predicted();
        outcome.probabilities = std::move(scores.probabilities);
        outcome.attributes = record.attributes;
        outcome.true_months = record.target_months;
        run.outcomes.push_back(std::move(outcome));
    }
    summarize(run);
    run.notes.push_back("no regression targets; L1 month error omitted");
    return run;
}

FairnessReport fairness_from_run(const EvaluationRun& run, FairnessGrouping grouping) {
    std::vector<ScoredRecord> records;
    records.reserve(run.outcomes.size());
    for (const auto& outcome : run.outcomes) {
        records.push_back({outcome.attributes, outcome.probabilities, outcome.true_label});
    }
    return fairness_report(run.classes, records, grouping);
}

}  // namespace evsearch
