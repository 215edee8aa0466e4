#pragma once

#include <optional>
#include <string>
#include <vector>

#include "evsearch/corpus.hpp"
#include "evsearch/evaluation.hpp"
#include "evsearch/json_codec.hpp"
#include "evsearch/knn_decision.hpp"
#include "evsearch/metrics.hpp"
#include "evsearch/unicl.hpp"
#include "evsearch/vector_index.hpp"
#include "evsearch/volume3d.hpp"

// JSON views of library results. The service and the CLI both go through
// these, so a response body and a CLI json dump of the same call match byte
// for byte once passed through dump_json.
namespace evsearch {

Json to_json(const NeighborHit& hit);
// With an index, every hit also carries the stored attributes of its entry.
Json hits_json(const HitList& hits, const VectorIndex* index = nullptr);

Json to_json(const ClassScores& scores);
Json to_json(const RocPoint& point);
Json to_json(const RocCurve& curve);
Json to_json(const ClassAuc& value);
Json to_json(const MaucResult& value);
Json to_json(const TuneResult& value);
Json to_json(const FairnessReport& report);
Json to_json(const RetrievalReport& report);
Json to_json(const GradientCheck& check);

// Summary of a run without per-record outcomes.
Json to_json(const EvaluationRun& run);
Json outcomes_json(const EvaluationRun& run);

Json corpus_summary(const Corpus& corpus);
Json index_summary(const VectorIndex& index);
Json head_summary(const ClassifierHead& head);
Json volume_index_summary(const VolumeIndex& index);

Json optional_real(const std::optional<double>& value);

std::vector<double> vector_from_json(const Json& value, const char* field);
std::vector<std::vector<double>> matrix_from_json(const Json& value, const char* field);

}  // namespace evsearch
