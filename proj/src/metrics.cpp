#include "evsearch/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include "evsearch/corpus.hpp"
#include "evsearch/error.hpp"

namespace evsearch {

namespace {

struct LabelCounts {
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

LabelCounts check_binary_input(std::span<const double> scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) throw invalid_input("scores and labels differ in length");
    if (scores.size() < 2) throw invalid_input("at least two scored items are required");
    LabelCounts counts;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw invalid_input("scores must be finite");
        if (labels[i]) ++counts.positives;
        else ++counts.negatives;
    }
    if (counts.positives == 0 || counts.negatives == 0) {
        throw invalid_input("degenerate label set: need at least one positive and one negative");
    }
    return counts;
}

}  // namespace

RocCurve roc_curve(std::span<const double> scores, const std::vector<bool>& labels) {
    const auto counts = check_binary_input(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    const double p = static_cast<double>(counts.positives);
    const double n = static_cast<double>(counts.negatives);

    RocCurve curve;
    curve.positives = counts.positives;
    curve.negatives = counts.negatives;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0, 0, 0});

    std::size_t tp = 0;
    std::size_t fp = 0;
    std::uint64_t twice_area = 0;  // sum of dFP * (TP_prev + TP_cur)
    for (std::size_t i = 0; i < order.size();) {
        const double threshold = scores[order[i]];
        const std::size_t prev_tp = tp;
        const std::size_t prev_fp = fp;
        for (; i < order.size() && scores[order[i]] == threshold; ++i) {
            if (labels[order[i]]) ++tp;
            else ++fp;
        }
        twice_area += static_cast<std::uint64_t>(fp - prev_fp) * (prev_tp + tp);
        curve.points.push_back({threshold, static_cast<double>(fp) / n, static_cast<double>(tp) / p, tp, fp});
    }
    curve.auc = static_cast<double>(twice_area) / (2.0 * p * n);
    return curve;
}

double auc(std::span<const double> scores, const std::vector<bool>& labels) {
    const auto counts = check_binary_input(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Ranks are 1-based; a tie group spanning ranks first+1..last gets the
    // average rank, kept doubled so it stays an integer.
    std::uint64_t doubled_rank_sum = 0;
    for (std::size_t first = 0; first < order.size();) {
        std::size_t last = first;
        while (last < order.size() && scores[order[last]] == scores[order[first]]) ++last;
        const std::uint64_t doubled_rank = first + 1 + last;
        for (std::size_t i = first; i < last; ++i) {
            if (labels[order[i]]) doubled_rank_sum += doubled_rank;
        }
        first = last;
    }
    const std::uint64_t p = counts.positives;
    const std::uint64_t twice_u = doubled_rank_sum - p * (p + 1);
    return static_cast<double>(twice_u) /
           (2.0 * static_cast<double>(counts.positives) * static_cast<double>(counts.negatives));
}

namespace {

// Shared by mauc and the fairness rows; empty result means nothing scorable.
std::optional<MaucResult> macro_auc(const std::vector<std::string>& classes,
                                    const std::vector<std::vector<double>>& probabilities,
                                    const std::vector<std::string>& true_labels) {
    if (probabilities.size() != true_labels.size()) {
        throw invalid_input("probability rows and labels differ in length");
    }
    for (const auto& row : probabilities) {
        if (row.size() != classes.size()) {
            throw invalid_input("probability row width does not match the class list");
        }
    }
    MaucResult result;
    double sum = 0.0;
    std::size_t scorable = 0;
    std::vector<double> column(probabilities.size());
    std::vector<bool> positive(probabilities.size());
    for (std::size_t c = 0; c < classes.size(); ++c) {
        ClassAuc entry{classes[c], std::nullopt, 0, 0};
        for (std::size_t r = 0; r < probabilities.size(); ++r) {
            column[r] = probabilities[r][c];
            positive[r] = true_labels[r] == classes[c];
            if (positive[r]) ++entry.positives;
            else ++entry.negatives;
        }
        if (entry.positives > 0 && entry.negatives > 0) {
            entry.auc = auc(column, positive);
            sum += *entry.auc;
            ++scorable;
        }
        result.per_class.push_back(std::move(entry));
    }
    if (scorable == 0) return std::nullopt;
    result.mauc = sum / static_cast<double>(scorable);
    return result;
}

void check_paired(std::size_t a, std::size_t b) {
    if (a != b) throw invalid_input("predictions and truths differ in length");
    if (a == 0) throw invalid_input("empty input");
}

}  // namespace

MaucResult mauc(const std::vector<std::string>& classes,
                const std::vector<std::vector<double>>& probabilities,
                const std::vector<std::string>& true_labels) {
    auto result = macro_auc(classes, probabilities, true_labels);
    if (!result) throw invalid_input("no scorable class: every class needs a positive and a negative");
    return *result;
}

double accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& truths) {
    check_paired(predictions.size(), truths.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truths.size(); ++i) correct += predictions[i] == truths[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(truths.size());
}

double balanced_accuracy(const std::vector<std::string>& predictions,
                         const std::vector<std::string>& truths) {
    check_paired(predictions.size(), truths.size());
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_class;  // correct, total
    for (std::size_t i = 0; i < truths.size(); ++i) {
        auto& [correct, total] = per_class[truths[i]];
        ++total;
        if (predictions[i] == truths[i]) ++correct;
    }
    double sum = 0.0;
    for (const auto& [name, tally] : per_class) {
        sum += static_cast<double>(tally.first) / static_cast<double>(tally.second);
    }
    return sum / static_cast<double>(per_class.size());
}

double mean_abs_months(std::span<const std::int64_t> predicted, std::span<const std::int64_t> truth) {
    check_paired(predicted.size(), truth.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        sum += static_cast<double>(predicted[i] > truth[i] ? predicted[i] - truth[i] : truth[i] - predicted[i]);
    }
    return sum / static_cast<double>(truth.size());
}

std::string_view to_string(FairnessGrouping grouping) {
    return grouping == FairnessGrouping::gender ? "gender" : "age_bucket";
}

FairnessGrouping parse_grouping(std::string_view text) {
    if (text == "gender") return FairnessGrouping::gender;
    if (text == "age_bucket" || text == "age") return FairnessGrouping::age_bucket;
    throw invalid_input("unknown grouping '" + std::string(text) + "'");
}

std::optional<std::string> age_bucket(double age_years) {
    if (!std::isfinite(age_years) || age_years < 0.0 || age_years > 100.0) return std::nullopt;
    if (age_years <= 20.0) return "[0,20]";
    if (age_years <= 40.0) return "(20,40]";
    if (age_years <= 60.0) return "(40,60]";
    if (age_years <= 80.0) return "(60,80]";
    return "(80,100]";
}

namespace {

std::optional<double> parse_decimal(const std::string& text) {
    double value = 0.0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) return std::nullopt;
    return value;
}

}  // namespace

FairnessReport fairness_report(const std::vector<std::string>& classes,
                               const std::vector<ScoredRecord>& records, FairnessGrouping grouping) {
    FairnessReport report;
    report.grouping = grouping;
    report.classes = classes;

    const std::vector<std::string> groups =
        grouping == FairnessGrouping::gender
            ? std::vector<std::string>{"F", "M"}
            : std::vector<std::string>{"[0,20]", "(20,40]", "(40,60]", "(60,80]", "(80,100]"};
    std::vector<std::vector<std::size_t>> members(groups.size());

    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& attributes = records[r].attributes;
        std::optional<std::string> group;
        if (grouping == FairnessGrouping::gender) {
            auto it = attributes.find(std::string(kGenderAttribute));
            if (it != attributes.end() && (it->second == "F" || it->second == "M")) group = it->second;
        } else {
            auto it = attributes.find(std::string(kAgeAttribute));
            if (it == attributes.end()) {
                report.warnings.push_back("record " + std::to_string(r) + ": missing age, excluded");
            } else if (auto age = parse_decimal(it->second); !age) {
                report.warnings.push_back("record " + std::to_string(r) + ": unparseable age '" +
                                          it->second + "', excluded");
            } else if (*age < 0.0) {
                report.warnings.push_back("record " + std::to_string(r) + ": negative age, excluded");
            } else {
                group = age_bucket(*age);
            }
        }
        if (!group) {
            ++report.excluded_count;
            continue;
        }
        const auto g = std::find(groups.begin(), groups.end(), *group) - groups.begin();
        members[static_cast<std::size_t>(g)].push_back(r);
    }

    for (std::size_t g = 0; g < groups.size(); ++g) {
        FairnessRow row;
        row.group = groups[g];
        row.support = members[g].size();
        std::vector<std::vector<double>> probabilities;
        std::vector<std::string> truths;
        for (std::size_t r : members[g]) {
            probabilities.push_back(records[r].probabilities);
            truths.push_back(records[r].true_label);
        }
        if (auto result = macro_auc(classes, probabilities, truths)) {
            row.mauc = result->mauc;
            row.per_class = std::move(result->per_class);
        } else {
            for (const auto& name : classes) {
                std::size_t positives = 0;
                for (const auto& t : truths) positives += t == name ? 1 : 0;
                row.per_class.push_back({name, std::nullopt, positives, truths.size() - positives});
            }
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace evsearch
