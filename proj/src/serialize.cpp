#include "evsearch/serialize.hpp"

#include "evsearch/error.hpp"

namespace evsearch {

Json optional_real(const std::optional<double>& value) {
    return value ? Json(*value) : Json(nullptr);
}

Json to_json(const NeighborHit& hit) {
    Json out = Json::object();
    out["id"] = hit.id;
    out["score"] = hit.score;
    out["label"] = hit.label ? Json(*hit.label) : Json(nullptr);
    out["position"] = hit.position;
    if (hit.target_months) out["target_months"] = *hit.target_months;
    return out;
}

Json hits_json(const HitList& hits, const VectorIndex* index) {
    Json out = Json::array();
    for (const auto& hit : hits) {
        Json item = to_json(hit);
        if (index) {
            Json attrs = Json::object();
            for (const auto& [key, value] : index->attributes(hit.position)) attrs[key] = value;
            item["attributes"] = std::move(attrs);
        }
        out.push_back(std::move(item));
    }
    return out;
}

Json to_json(const ClassScores& scores) {
    Json out = Json::object();
    out["classes"] = scores.classes;
    out["raw"] = scores.raw;
    out["probabilities"] = scores.probabilities;
    out["predicted"] = scores.classes.empty() ? Json(nullptr) : Json(scores.predicted());
    return out;
}

Json to_json(const RocPoint& point) {
    Json out = Json::object();
    out["threshold"] = point.threshold;  // +inf leaves as null
    out["fpr"] = point.fpr;
    out["tpr"] = point.tpr;
    out["true_positives"] = point.true_positives;
    out["false_positives"] = point.false_positives;
    return out;
}

Json to_json(const RocCurve& curve) {
    Json out = Json::object();
    out["auc"] = curve.auc;
    out["positives"] = curve.positives;
    out["negatives"] = curve.negatives;
    Json points = Json::array();
    for (const auto& p : curve.points) points.push_back(to_json(p));
    out["points"] = std::move(points);
    return out;
}

Json to_json(const ClassAuc& value) {
    Json out = Json::object();
    out["class"] = value.class_name;
    out["auc"] = optional_real(value.auc);
    out["positives"] = value.positives;
    out["negatives"] = value.negatives;
    return out;
}

Json to_json(const MaucResult& value) {
    Json out = Json::object();
    out["mauc"] = value.mauc;
    Json rows = Json::array();
    for (const auto& c : value.per_class) rows.push_back(to_json(c));
    out["per_class"] = std::move(rows);
    return out;
}

Json to_json(const TuneResult& value) {
    Json out = Json::object();
    out["best_k"] = value.best_k;
    Json table = Json::array();
    for (const auto& row : value.table) table.push_back(Json{{"k", row.k}, {"value", row.value}});
    out["table"] = std::move(table);
    out["warnings"] = value.warnings;
    return out;
}

Json to_json(const FairnessReport& report) {
    Json out = Json::object();
    out["grouping"] = std::string(to_string(report.grouping));
    out["classes"] = report.classes;
    Json rows = Json::array();
    for (const auto& row : report.rows) {
        Json r = Json::object();
        r["group"] = row.group;
        r["mauc"] = optional_real(row.mauc);
        r["support"] = row.support;
        Json per = Json::array();
        for (const auto& c : row.per_class) per.push_back(to_json(c));
        r["per_class"] = std::move(per);
        rows.push_back(std::move(r));
    }
    out["rows"] = std::move(rows);
    out["excluded"] = report.excluded_count;
    out["warnings"] = report.warnings;
    return out;
}

Json to_json(const RetrievalReport& report) {
    Json out = Json::object();
    out["aggregation"] = std::string(to_string(report.aggregation));
    out["ks"] = report.ks;
    Json rows = Json::array();
    for (const auto& row : report.rows) {
        Json r = Json::object();
        r["relevance"] = std::string(to_string(row.mode));
        r["precision"] = row.precision;
        r["average_precision"] = row.average_precision;
        r["queries"] = row.queries;
        rows.push_back(std::move(r));
    }
    out["rows"] = std::move(rows);
    return out;
}

Json to_json(const GradientCheck& check) {
    Json out = Json::object();
    out["max_relative_error"] = check.max_relative_error;
    out["max_abs_analytic"] = check.max_abs_analytic;
    out["components"] = check.components;
    return out;
}

Json to_json(const EvaluationRun& run) {
    Json out = Json::object();
    out["name"] = run.name;
    out["mode"] = run.mode;
    out["k"] = run.k;
    out["classes"] = run.classes;
    out["support"] = run.outcomes.size();
    out["mauc"] = run.auc.mauc;
    Json per = Json::array();
    for (const auto& c : run.auc.per_class) per.push_back(to_json(c));
    out["per_class"] = std::move(per);
    out["accuracy"] = run.accuracy;
    out["balanced_accuracy"] = run.balanced_accuracy;
    out["l1_months"] = optional_real(run.l1_months);
    out["notes"] = run.notes;
    return out;
}

Json outcomes_json(const EvaluationRun& run) {
    Json out = Json::array();
    for (const auto& o : run.outcomes) {
        Json r = Json::object();
        r["id"] = o.id;
        r["true_label"] = o.true_label;
        r["predicted"] = o.predicted;
        r["probabilities"] = o.probabilities;
        if (o.true_months) r["true_months"] = *o.true_months;
        if (o.predicted_months) r["predicted_months"] = *o.predicted_months;
        out.push_back(std::move(r));
    }
    return out;
}

Json corpus_summary(const Corpus& corpus) {
    Json out = Json::object();
    out["name"] = corpus.name();
    out["dimension"] = corpus.dimension();
    out["count"] = corpus.size();
    return out;
}

Json index_summary(const VectorIndex& index) {
    Json out = Json::object();
    out["count"] = index.count();
    out["dimension"] = index.dimension();
    out["normalized"] = index.normalized();
    out["labels"] = index.label_set();
    return out;
}

Json head_summary(const ClassifierHead& head) {
    Json out = Json::object();
    out["name"] = head.name();
    out["classes"] = head.classes();
    out["dimension"] = head.dimension();
    out["temperature"] = head.temperature();
    return out;
}

Json volume_index_summary(const VolumeIndex& index) {
    Json out = Json::object();
    out["aggregation"] = std::string(to_string(index.aggregation()));
    out["volumes"] = index.count();
    out["dimension"] = index.index().dimension();
    return out;
}

std::vector<double> vector_from_json(const Json& value, const char* field) {
    if (!value.is_array()) throw invalid_input(std::string("'") + field + "' must be an array of numbers");
    std::vector<double> out;
    out.reserve(value.size());
    for (const auto& x : value) {
        if (!x.is_number()) throw invalid_input(std::string("'") + field + "' must be an array of numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

std::vector<std::vector<double>> matrix_from_json(const Json& value, const char* field) {
    if (!value.is_array()) throw invalid_input(std::string("'") + field + "' must be an array of arrays");
    std::vector<std::vector<double>> out;
    for (const auto& row : value) out.push_back(vector_from_json(row, field));
    return out;
}

}  // namespace evsearch
