#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evsearch {

/// One ROC operating point. The confusion counts are exported alongside the
/// rates so a consumer can recompute sensitivity and specificity exactly.
struct RocPoint {
    double threshold;  // +inf for the leading sentinel
    double fpr;
    double tpr;
    std::size_t true_positives;
    std::size_t false_positives;

    bool operator==(const RocPoint&) const = default;
};

/// Points run from the (+inf, 0, 0) sentinel through one point per distinct
/// score in decreasing order, ending at (1, 1). Equal scores form a single
/// step.
struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

// Both require equal lengths >= 2, finite scores, and at least one positive
// and one negative label. roc_curve integrates the staircase with the
// trapezoid rule; auc uses the tie-averaged rank sum (Mann-Whitney U).
RocCurve roc_curve(std::span<const double> scores, const std::vector<bool>& labels);
double auc(std::span<const double> scores, const std::vector<bool>& labels);

struct ClassAuc {
    std::string class_name;
    std::optional<double> auc;  // empty when the class is unscorable
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

struct MaucResult {
    double mauc = 0.0;
    std::vector<ClassAuc> per_class;
};

// One-vs-rest AUC per class column, macro mean over scorable classes (at
// least one positive and one negative). probabilities[r][c] is record r's
// score for classes[c]. Throws when no class is scorable.
MaucResult mauc(const std::vector<std::string>& classes,
                const std::vector<std::vector<double>>& probabilities,
                const std::vector<std::string>& true_labels);

double accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& truths);
// Unweighted mean of per-class recall over classes present in `truths`.
double balanced_accuracy(const std::vector<std::string>& predictions,
                         const std::vector<std::string>& truths);

double mean_abs_months(std::span<const std::int64_t> predicted, std::span<const std::int64_t> truth);

enum class FairnessGrouping { gender, age_bucket };

std::string_view to_string(FairnessGrouping grouping);
// Accepts "gender", "age_bucket" and "age"; throws on anything else.
FairnessGrouping parse_grouping(std::string_view text);

struct ScoredRecord {
    std::map<std::string, std::string> attributes;
    std::vector<double> probabilities;  // aligned with the report's classes
    std::string true_label;
};

struct FairnessRow {
    std::string group;
    std::vector<ClassAuc> per_class;
    std::optional<double> mauc;  // empty when no class in the group is scorable
    std::size_t support = 0;
};

struct FairnessReport {
    FairnessGrouping grouping = FairnessGrouping::gender;
    std::vector<std::string> classes;
    std::vector<FairnessRow> rows;
    std::size_t excluded_count = 0;
    std::vector<std::string> warnings;
};

// Age buckets: [0,20], (20,40], (40,60], (60,80], (80,100]; ages above 100,
// negative or unparseable ages are excluded. Gender groups are "F" and "M";
// any other value is excluded. Every group gets a row, even when empty.
std::optional<std::string> age_bucket(double age_years);
FairnessReport fairness_report(const std::vector<std::string>& classes,
                               const std::vector<ScoredRecord>& records, FairnessGrouping grouping);

}  // namespace evsearch
