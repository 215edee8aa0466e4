#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "evsearch/evaluation.hpp"
#include "evsearch/json_codec.hpp"
#include "evsearch/metrics.hpp"
#include "evsearch/volume3d.hpp"

namespace evsearch {

// Exit codes: 0 success, 1 data error, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitData = 1;
inline constexpr int kExitUsage = 2;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Columns: kind, name, auc, mAUC, ACC, BACC, L1_months, support. One "class"
// row per class, one "summary" row, and a "regression" row when the run has
// an L1 figure. Missing cells are empty; unscorable AUCs read NA.
std::string report_tsv(const EvaluationRun& run);
Json report_json(const EvaluationRun& run);

// threshold, fpr, tpr, true_positives, false_positives; the sentinel
// threshold is written as inf.
std::string roc_tsv(const RocCurve& curve);
std::string roc_file_name(const std::string& class_name);

// Writes report.tsv, report.json and roc_<class>.tsv into `dir`.
void emit_report(const EvaluationRun& run, const std::filesystem::path& dir);

// Columns: grouping, group, mAUC, support, then one AUC column per class;
// a final "excluded" row carries the excluded count as support.
std::string fairness_tsv(const FairnessReport& report);

// Columns: aggregation, relevance, P@k for every k, AP, queries.
std::string retrieval_tsv(const RetrievalReport& report);

}  // namespace evsearch
