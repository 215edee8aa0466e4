#include "evsearch/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "evsearch/corpus.hpp"
#include "evsearch/error.hpp"
#include "evsearch/knn_decision.hpp"
#include "evsearch/serialize.hpp"
#include "evsearch/service.hpp"
#include "evsearch/unicl.hpp"
#include "evsearch/vector_index.hpp"

namespace evsearch {

namespace {

std::string cell(const std::optional<double>& value) {
    return value ? format_real(*value) : "NA";
}

std::string threshold_cell(double threshold) {
    if (std::isinf(threshold)) return threshold > 0 ? "inf" : "-inf";
    return format_real(threshold);
}

}  // namespace

std::string report_tsv(const EvaluationRun& run) {
    std::ostringstream out;
    out << "kind\tname\tauc\tmAUC\tACC\tBACC\tL1_months\tsupport\n";
    for (const auto& c : run.auc.per_class) {
        out << "class\t" << c.class_name << '\t' << cell(c.auc) << "\t\t\t\t\t" << c.positives << '\n';
    }
    out << "summary\t" << run.name << "\t\t" << format_real(run.auc.mauc) << '\t' << format_real(run.accuracy)
        << '\t' << format_real(run.balanced_accuracy) << "\t\t" << run.outcomes.size() << '\n';
    if (run.l1_months) {
        out << "regression\t" << run.name << "\t\t\t\t\t" << format_real(*run.l1_months) << '\t'
            << run.outcomes.size() << '\n';
    }
    return out.str();
}

Json report_json(const EvaluationRun& run) {
    Json out = to_json(run);
    Json files = Json::object();
    for (const auto& [name, curve] : run.roc) files[name] = roc_file_name(name);
    out["roc_files"] = std::move(files);
    return out;
}

std::string roc_tsv(const RocCurve& curve) {
    std::ostringstream out;
    out << "threshold\tfpr\ttpr\ttrue_positives\tfalse_positives\n";
    for (const auto& p : curve.points) {
        out << threshold_cell(p.threshold) << '\t' << format_real(p.fpr) << '\t' << format_real(p.tpr) << '\t'
            << p.true_positives << '\t' << p.false_positives << '\n';
    }
    return out.str();
}

std::string roc_file_name(const std::string& class_name) {
    std::string safe;
    for (char ch : class_name) {
        const bool keep = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                          ch == '-' || ch == '_' || ch == '.';
        safe.push_back(keep ? ch : '_');
    }
    return "roc_" + safe + ".tsv";
}

void emit_report(const EvaluationRun& run, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
    write_file(dir / "report.tsv", report_tsv(run));
    write_file(dir / "report.json", dump_json(report_json(run)) + "\n");
    for (const auto& [name, curve] : run.roc) write_file(dir / roc_file_name(name), roc_tsv(curve));
}

std::string fairness_tsv(const FairnessReport& report) {
    std::ostringstream out;
    const std::string grouping(to_string(report.grouping));
    out << "grouping\tgroup\tmAUC\tsupport";
    for (const auto& c : report.classes) out << "\tauc_" << c;
    out << '\n';
    for (const auto& row : report.rows) {
        out << grouping << '\t' << row.group << '\t' << cell(row.mauc) << '\t' << row.support;
        for (const auto& c : row.per_class) out << '\t' << cell(c.auc);
        out << '\n';
    }
    out << grouping << "\texcluded\t\t" << report.excluded_count;
    for (std::size_t i = 0; i < report.classes.size(); ++i) out << '\t';
    out << '\n';
    return out.str();
}

std::string retrieval_tsv(const RetrievalReport& report) {
    std::ostringstream out;
    out << "aggregation\trelevance";
    for (std::size_t k : report.ks) out << "\tP@" << k;
    out << "\tAP\tqueries\n";
    for (const auto& row : report.rows) {
        out << to_string(report.aggregation) << '\t' << to_string(row.mode);
        for (double p : row.precision) out << '\t' << format_real(p);
        out << '\t' << format_real(row.average_precision) << '\t' << row.queries << '\n';
    }
    return out.str();
}

namespace {

struct Globals {
    std::uint64_t seed = 0;
    bool quiet = false;
    std::string format = "tsv";
};

struct Context {
    Globals globals;
    std::ostream& out;
    std::ostream& err;

    void emit(const std::string& tsv, const Json& json) const {
        if (globals.format == "json") {
            out << dump_json(json) << '\n';
        } else {
            out << tsv;
        }
    }
    void info(const std::string& message) const {
        if (!globals.quiet) err << message << '\n';
    }
};

Corpus load_input(const std::string& path, const std::string& split) {
    Corpus corpus = load_any(path);
    if (split.empty() || split == "all") return corpus;
    auto parsed = parse_split(split);
    if (!parsed) throw invalid_input("unknown split '" + split + "'");
    return select_split(corpus, *parsed);
}

std::vector<std::size_t> parse_counts(const std::string& text, const char* what) {
    std::vector<std::size_t> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t used = 0;
        long long value = -1;
        try {
            value = std::stoll(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size() || value <= 0) throw invalid_input(std::string("bad ") + what + " '" + text + "'");
        out.push_back(static_cast<std::size_t>(value));
    }
    if (out.empty()) throw invalid_input(std::string("bad ") + what + " '" + text + "'");
    return out;
}

SplitRatios parse_ratios(const std::string& text) {
    std::vector<double> values;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t used = 0;
        double value = 0.0;
        try {
            value = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw invalid_input("bad ratios '" + text + "'");
        values.push_back(value);
    }
    if (values.size() != 3) throw invalid_input("ratios need three comma-separated values");
    return {values[0], values[1], values[2]};
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
}

struct DbOptions {
    std::string db;
    std::string db_split;
    bool normalize = false;
    std::string queries;
    std::string query_split;

    void add_to(CLI::App* cmd, bool with_db = true) {
        if (with_db) {
            cmd->add_option("--db", db, "Database corpus (snapshot or record lines)")->required();
            cmd->add_option("--db-split", db_split, "Use only database records tagged with this split");
            cmd->add_flag("--normalize", normalize, "L2-normalize indexed vectors");
        }
        cmd->add_option("--queries", queries, "Query records")->required();
        cmd->add_option("--query-split", query_split, "Use only query records tagged with this split");
    }
    VectorIndex index() const { return VectorIndex(load_input(db, db_split), IndexOptions{normalize}); }
    Corpus query_corpus() const { return load_input(queries, query_split); }
};

std::vector<std::vector<double>> query_vectors(const Corpus& queries) {
    std::vector<std::vector<double>> out;
    for (const auto& r : queries.records()) out.push_back(r.vector);
    return out;
}

int cmd_ingest(const Context& ctx, const std::string& input, const std::string& output, std::size_t dim) {
    Corpus corpus = load_any(input);
    if (dim != 0 && corpus.dimension() != dim) {
        throw invalid_input("corpus dimension " + std::to_string(corpus.dimension()) + " != expected " +
                            std::to_string(dim));
    }
    if (!output.empty()) {
        save_snapshot(corpus, output);
        ctx.info("wrote " + output);
    }
    ctx.emit("name\tdimension\tcount\n" + corpus.name() + "\t" + std::to_string(corpus.dimension()) + "\t" +
                 std::to_string(corpus.size()) + "\n",
             corpus_summary(corpus));
    return kExitOk;
}

int cmd_split(const Context& ctx, const std::string& input, const std::string& ratios_text, std::string prefix) {
    const Corpus corpus = load_any(input);
    const auto parts = split_corpus(corpus, parse_ratios(ratios_text), ctx.globals.seed);
    if (prefix.empty()) prefix = (std::filesystem::path(input).parent_path() / std::filesystem::path(input).stem()).string();
    std::string tsv = "split\tcount\tpath\n";
    Json json = Json::array();
    for (const auto& [name, part] : {std::pair<const char*, const Corpus*>{"database", &parts.database},
                                     {"validation", &parts.validation},
                                     {"test", &parts.test}}) {
        const std::string path = prefix + "." + name + ".jsonl";
        write_records(*part, path);
        tsv += std::string(name) + "\t" + std::to_string(part->size()) + "\t" + path + "\n";
        json.push_back(Json{{"split", name}, {"count", part->size()}, {"path", path}});
    }
    ctx.emit(tsv, Json{{"splits", std::move(json)}});
    return kExitOk;
}

int cmd_index(const Context& ctx, const std::string& input, const std::string& split, bool normalize,
              const std::string& output) {
    const Corpus corpus = load_input(input, split);
    const VectorIndex index(corpus, IndexOptions{normalize});
    if (!output.empty()) {
        std::vector<EmbeddingRecord> records = corpus.records();
        for (std::size_t i = 0; i < records.size(); ++i) {
            auto v = index.vector(i);
            records[i].vector.assign(v.begin(), v.end());
        }
        save_snapshot(Corpus(corpus.dimension(), std::move(records), corpus.name()), output);
        ctx.info("wrote " + output);
    }
    std::string labels;
    for (const auto& l : index.label_set()) labels += (labels.empty() ? "" : ",") + l;
    ctx.emit("count\tdimension\tnormalized\tlabels\n" + std::to_string(index.count()) + "\t" +
                 std::to_string(index.dimension()) + "\t" + (index.normalized() ? "true" : "false") + "\t" + labels +
                 "\n",
             index_summary(index));
    return kExitOk;
}

int cmd_search(const Context& ctx, const DbOptions& db, std::size_t k) {
    const VectorIndex index = db.index();
    const Corpus queries = db.query_corpus();
    const auto results = index.batch_search(query_vectors(queries), k);
    std::ostringstream tsv;
    tsv << "query\trank\tid\tscore\tlabel\n";
    Json json = Json::array();
    for (std::size_t q = 0; q < results.size(); ++q) {
        const auto& id = queries.records()[q].id;
        for (std::size_t r = 0; r < results[q].size(); ++r) {
            const auto& hit = results[q][r];
            tsv << id << '\t' << r + 1 << '\t' << hit.id << '\t' << format_real(hit.score) << '\t'
                << hit.label.value_or("") << '\n';
        }
        json.push_back(Json{{"query", id}, {"hits", hits_json(results[q], &index)}});
    }
    ctx.emit(tsv.str(), Json{{"results", std::move(json)}});
    return kExitOk;
}

std::string scores_tsv(const std::vector<std::string>& ids, const std::vector<ClassScores>& scores) {
    std::ostringstream tsv;
    tsv << "query\tpredicted";
    if (!scores.empty()) {
        for (const auto& c : scores.front().classes) tsv << "\tp_" << c;
    }
    tsv << '\n';
    for (std::size_t q = 0; q < scores.size(); ++q) {
        tsv << ids[q] << '\t' << scores[q].predicted();
        for (double p : scores[q].probabilities) tsv << '\t' << format_real(p);
        tsv << '\n';
    }
    return tsv.str();
}

Json scores_json(const std::vector<std::string>& ids, const std::vector<ClassScores>& scores) {
    Json json = Json::array();
    for (std::size_t q = 0; q < scores.size(); ++q) {
        json.push_back(Json{{"query", ids[q]}, {"scores", to_json(scores[q])}});
    }
    return Json{{"results", std::move(json)}};
}

int cmd_classify(const Context& ctx, const DbOptions& db, std::size_t k, const std::string& vote) {
    const VectorIndex index = db.index();
    const Corpus queries = db.query_corpus();
    KnnOptions options;
    options.vote = parse_vote(vote);
    options.class_universe = index.label_set();
    const auto results = index.batch_search(query_vectors(queries), k);
    std::vector<std::string> ids;
    std::vector<ClassScores> scores;
    for (std::size_t q = 0; q < results.size(); ++q) {
        ids.push_back(queries.records()[q].id);
        scores.push_back(classify_knn(results[q], k, options));
    }
    ctx.emit(scores_tsv(ids, scores), scores_json(ids, scores));
    return kExitOk;
}

int cmd_regress(const Context& ctx, const DbOptions& db, std::size_t k) {
    const VectorIndex index = db.index();
    const Corpus queries = db.query_corpus();
    const auto results = index.batch_search(query_vectors(queries), k);
    std::string tsv = "query\tmonths\n";
    Json json = Json::array();
    for (std::size_t q = 0; q < results.size(); ++q) {
        const auto& id = queries.records()[q].id;
        const auto months = regress_knn(results[q], k);
        tsv += id + "\t" + std::to_string(months) + "\n";
        json.push_back(Json{{"query", id}, {"months", months}});
    }
    ctx.emit(tsv, Json{{"results", std::move(json)}});
    return kExitOk;
}

int cmd_zeroshot(const Context& ctx, const std::string& head_path, const DbOptions& db) {
    const ClassifierHead head = load_head(head_path);
    const Corpus queries = db.query_corpus();
    std::vector<std::string> ids;
    std::vector<ClassScores> scores;
    for (const auto& r : queries.records()) {
        ids.push_back(r.id);
        scores.push_back(zeroshot_classify(r.vector, head));
    }
    ctx.emit(scores_tsv(ids, scores), scores_json(ids, scores));
    return kExitOk;
}

struct EvalOptions {
    DbOptions db;
    std::string mode = "knn";
    std::string head;
    std::size_t k = kDefaultClassifyK;
    std::size_t regression_k = kDefaultRegressK;
    std::string vote = "sum";
    std::string name = "run";
    std::string tune_ks;
    std::string validation;
    std::string tune_metric = "mauc";
    std::string out_dir;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--mode", mode, "knn or zeroshot")->check(CLI::IsMember({"knn", "zeroshot"}));
        cmd->add_option("--db", db.db, "Database corpus (knn mode)");
        cmd->add_option("--db-split", db.db_split, "Use only database records tagged with this split");
        cmd->add_flag("--normalize", db.normalize, "L2-normalize indexed vectors");
        cmd->add_option("--head", head, "Classifier head file (zeroshot mode)");
        cmd->add_option("--queries", db.queries, "Labelled query records")->required();
        cmd->add_option("--query-split", db.query_split, "Use only query records tagged with this split");
        cmd->add_option("--k", k, "Neighbours per vote")->check(CLI::PositiveNumber);
        cmd->add_option("--regression-k", regression_k, "Neighbours for the month estimate")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--vote", vote, "sum or mean")->check(CLI::IsMember({"sum", "mean"}));
        cmd->add_option("--name", name, "Run name");
        cmd->add_option("--tune-ks", tune_ks, "Comma-separated candidate k values tuned on --validation");
        cmd->add_option("--validation", validation, "Validation records for k tuning");
        cmd->add_option("--tune-metric", tune_metric, "mauc or bacc")->check(CLI::IsMember({"mauc", "bacc"}));
    }

    EvaluationRun run(const Context& ctx) const {
        if (mode == "zeroshot") {
            if (head.empty()) throw invalid_input("zeroshot mode needs --head");
            return evaluate_zeroshot(load_head(head), db.query_corpus(), name);
        }
        if (db.db.empty()) throw invalid_input("knn mode needs --db");
        const VectorIndex index = db.index();
        EvaluationOptions options;
        options.k = k;
        options.regression_k = regression_k;
        options.vote = parse_vote(vote);
        if (!tune_ks.empty()) {
            if (validation.empty()) throw invalid_input("--tune-ks needs --validation");
            KnnOptions knn;
            knn.vote = options.vote;
            const auto tuned = tune_k(index, load_any(validation), parse_counts(tune_ks, "k list"),
                                      parse_tune_metric(tune_metric), knn);
            for (const auto& w : tuned.warnings) ctx.info("warning: " + w);
            for (const auto& row : tuned.table) {
                ctx.info("tune k=" + std::to_string(row.k) + " " + tune_metric + "=" + format_real(row.value));
            }
            options.k = tuned.best_k;
            if (!out_dir.empty()) {
                ensure_dir(out_dir);
                write_file(std::filesystem::path(out_dir) / "tuning.json", dump_json(to_json(tuned)) + "\n");
            }
        }
        return evaluate_knn(index, db.query_corpus(), options, name);
    }
};

int cmd_evaluate(const Context& ctx, const EvalOptions& options) {
    const EvaluationRun run = options.run(ctx);
    if (!options.out_dir.empty()) {
        emit_report(run, options.out_dir);
        ctx.info("wrote report to " + options.out_dir);
    }
    for (const auto& note : run.notes) ctx.info("note: " + note);
    ctx.emit(report_tsv(run), report_json(run));
    return kExitOk;
}

int cmd_fairness(const Context& ctx, const EvalOptions& options, const std::string& grouping) {
    const EvaluationRun run = options.run(ctx);
    const FairnessReport report = fairness_from_run(run, parse_grouping(grouping));
    for (const auto& w : report.warnings) ctx.info("warning: " + w);
    if (!options.out_dir.empty()) {
        ensure_dir(options.out_dir);
        write_file(std::filesystem::path(options.out_dir) / "fairness.tsv", fairness_tsv(report));
        write_file(std::filesystem::path(options.out_dir) / "fairness.json", dump_json(to_json(report)) + "\n");
    }
    ctx.emit(fairness_tsv(report), to_json(report));
    return kExitOk;
}

Corpus volume_records(const VolumeIndex& index) {
    std::vector<EmbeddingRecord> records;
    for (const auto& v : index.volumes()) {
        EmbeddingRecord r;
        r.id = v.volume_id;
        r.vector = v.vector;
        r.label = v.tumor_stage;
        r.attributes["aggregation"] = std::string(to_string(v.aggregation));
        r.attributes["slice_count"] = std::to_string(v.slice_count);
        if (v.tumor_flag) r.attributes[std::string(kTumorFlagAttribute)] = *v.tumor_flag ? "true" : "false";
        if (v.tumor_stage) r.attributes[std::string(kTumorStageAttribute)] = *v.tumor_stage;
        records.push_back(std::move(r));
    }
    return Corpus(index.index().dimension(), std::move(records), "volumes");
}

int cmd_volume_index(const Context& ctx, const std::string& input, const std::string& split,
                     const std::string& aggregation, const std::string& output) {
    const VolumeIndex index = build_volume_index(load_input(input, split), parse_aggregation(aggregation));
    if (!output.empty()) {
        write_records(volume_records(index), output);
        ctx.info("wrote " + output);
    }
    ctx.emit("aggregation\tvolumes\tdimension\n" + aggregation + "\t" + std::to_string(index.count()) + "\t" +
                 std::to_string(index.index().dimension()) + "\n",
             volume_index_summary(index));
    return kExitOk;
}

int cmd_volume_search(const Context& ctx, const DbOptions& db, const std::string& aggregation, std::size_t k) {
    const Aggregation method = parse_aggregation(aggregation);
    const VolumeIndex index = build_volume_index(load_input(db.db, db.db_split), method);
    const Corpus queries = db.query_corpus();
    std::ostringstream tsv;
    tsv << "query\trank\tvolume\tscore\ttumor_stage\n";
    Json json = Json::array();
    for (const auto& query : volume_embeddings(queries, method)) {
        const auto hits = index.index().search(query.vector, k);
        for (std::size_t r = 0; r < hits.size(); ++r) {
            tsv << query.volume_id << '\t' << r + 1 << '\t' << hits[r].id << '\t' << format_real(hits[r].score)
                << '\t' << hits[r].label.value_or("") << '\n';
        }
        json.push_back(Json{{"query", query.volume_id}, {"hits", hits_json(hits, &index.index())}});
    }
    ctx.emit(tsv.str(), Json{{"results", std::move(json)}});
    return kExitOk;
}

int cmd_volume_eval(const Context& ctx, const DbOptions& db, const std::string& aggregation,
                    const std::string& ks, const std::string& out_dir) {
    const VolumeIndex index = build_volume_index(load_input(db.db, db.db_split), parse_aggregation(aggregation));
    const RetrievalReport report = evaluate_volume_retrieval(index, db.query_corpus(), parse_counts(ks, "k list"));
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        write_file(std::filesystem::path(out_dir) / "retrieval.tsv", retrieval_tsv(report));
        write_file(std::filesystem::path(out_dir) / "retrieval.json", dump_json(to_json(report)) + "\n");
    }
    ctx.emit(retrieval_tsv(report), to_json(report));
    return kExitOk;
}

struct CheckOptions {
    std::size_t batches = 100;
    std::size_t max_n = 8;
    std::size_t max_d = 16;
    double epsilon = 1e-5;
    double tolerance = 1e-5;
};

int cmd_unicl_check(const Context& ctx, const CheckOptions& options) {
    std::mt19937_64 rng(ctx.globals.seed);
    std::uniform_int_distribution<std::size_t> pick_n(1, options.max_n);
    std::uniform_int_distribution<std::size_t> pick_d(1, options.max_d);
    const double temperatures[] = {0.1, 1.0, 5.0};
    GradientCheck worst;
    std::size_t components = 0;
    for (std::size_t b = 0; b < options.batches; ++b) {
        const std::size_t n = pick_n(rng);
        const std::size_t d = pick_d(rng);
        const auto batch = random_batch(rng, n, d, temperatures[b % 3]);
        const auto check = finite_diff_check(batch, options.epsilon);
        components += check.components;
        if (check.max_relative_error >= worst.max_relative_error) worst = check;
    }
    worst.components = components;
    Json json = to_json(worst);
    json["batches"] = options.batches;
    json["tolerance"] = options.tolerance;
    json["passed"] = worst.max_relative_error <= options.tolerance;
    ctx.emit("batches\tcomponents\tmax_relative_error\tpassed\n" + std::to_string(options.batches) + "\t" +
                 std::to_string(components) + "\t" + format_real(worst.max_relative_error) + "\t" +
                 (worst.max_relative_error <= options.tolerance ? "true" : "false") + "\n",
             json);
    if (worst.max_relative_error > options.tolerance) {
        ctx.err << "error: gradient check failed, max relative error " << format_real(worst.max_relative_error)
                << '\n';
        return kExitData;
    }
    return kExitOk;
}

struct TrainOptions {
    ClusterSpec spec{3, 16, 4.0, 1.0};
    TrainConfig config;
    std::size_t eval_samples = 0;
    std::string out_dir;
};

int cmd_unicl_train(const Context& ctx, TrainOptions options) {
    options.config.seed = ctx.globals.seed;
    const TrainResult result = toy_train(options.spec, options.config);
    const double first = result.trace.front().loss;
    // Final loss is the mean raw loss over the last (up to) 50 steps.
    const std::size_t tail = std::min<std::size_t>(50, result.trace.size());
    double last = 0.0;
    for (std::size_t i = result.trace.size() - tail; i < result.trace.size(); ++i) last += result.trace[i].loss;
    last /= static_cast<double>(tail);
    const double reduction = (first - last) / first;
    Json json = Json::object();
    json["steps"] = result.trace.size();
    json["initial_loss"] = first;
    json["final_loss"] = result.trace.back().loss;
    json["tail_mean_loss"] = last;
    json["final_smoothed_loss"] = result.trace.back().smoothed;
    json["reduction"] = reduction;
    std::string tsv = "steps\tinitial_loss\ttail_mean_loss\treduction";

    const SyntheticClusters clusters(options.spec);
    const ClassifierHead head = trained_head(result, clusters);
    std::optional<double> zeroshot_mauc;
    if (options.eval_samples > 0) {
        std::mt19937_64 rng(ctx.globals.seed ^ 0x9e3779b97f4a7c15ULL);
        const Corpus held_out = clusters.sample_corpus(options.eval_samples, rng, "eval");
        zeroshot_mauc = evaluate_zeroshot(head, embed_corpus(result, held_out), "toy").auc.mauc;
        json["zeroshot_mauc"] = *zeroshot_mauc;
        tsv += "\tzeroshot_mauc";
    }
    tsv += "\n" + std::to_string(result.trace.size()) + "\t" + format_real(first) + "\t" + format_real(last) +
           "\t" + format_real(reduction);
    if (zeroshot_mauc) tsv += "\t" + format_real(*zeroshot_mauc);
    tsv += "\n";

    if (!options.out_dir.empty()) {
        const std::filesystem::path dir(options.out_dir);
        ensure_dir(dir);
        write_file(dir / "loss.tsv", loss_trace_text(result.trace));
        write_records(maps_corpus(result), dir / "maps.jsonl");
        write_file(dir / "head.es", head_text(head));
        ctx.info("wrote loss.tsv, maps.jsonl and head.es to " + options.out_dir);
    }
    ctx.emit(tsv, json);
    return kExitOk;
}

struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    double max_body_mb = 64;
    std::string corpus;
};

int cmd_serve(const Context& ctx, const ServeOptions& options) {
    if (!(options.max_body_mb > 0)) throw invalid_input("--max-body-mb must be positive");
    ServiceConfig config;
    config.max_body_bytes = static_cast<std::size_t>(options.max_body_mb * 1024.0 * 1024.0);
    Service service(config);
    if (!options.corpus.empty()) {
        const auto loaded = service.handle("POST", "/corpus", {{"index", "1"}}, read_file(options.corpus));
        if (loaded.status != 200) throw invalid_input("cannot load " + options.corpus + ": " + loaded.body);
    }
    ctx.info("listening on " + options.host + ":" + std::to_string(options.port));
    if (!serve(service, options.host, options.port)) {
        throw Error(ErrorKind::io, "cannot listen on " + options.host + ":" + std::to_string(options.port));
    }
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Exact embedding search, KNN decisions and evaluation", "evsearch"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals globals;
    app.add_option("--seed", globals.seed, "Seed for every random choice");
    app.add_flag("--quiet", globals.quiet, "Suppress informational messages");
    app.add_option("--format", globals.format, "Output format")->check(CLI::IsMember({"tsv", "json"}));

    std::string input;
    std::string output;
    std::string split;
    std::size_t dim = 0;
    auto* ingest = app.add_subcommand("ingest", "Validate a corpus and write a snapshot");
    ingest->add_option("input", input, "Record lines or snapshot")->required();
    ingest->add_option("--out", output, "Snapshot path");
    ingest->add_option("--dim", dim, "Expected dimension");

    std::string ratios = "0.64,0.16,0.20";
    std::string prefix;
    auto* split_cmd = app.add_subcommand("split", "Deterministic database/validation/test split");
    split_cmd->add_option("input", input, "Record lines or snapshot")->required();
    split_cmd->add_option("--ratios", ratios, "database,validation,test ratios");
    split_cmd->add_option("--out-prefix", prefix, "Output prefix; files are <prefix>.<split>.jsonl");

    bool normalize = false;
    auto* index_cmd = app.add_subcommand("index", "Build an index and report on it");
    index_cmd->add_option("input", input, "Record lines or snapshot")->required();
    index_cmd->add_option("--split", split, "Index only records tagged with this split");
    index_cmd->add_flag("--normalize", normalize, "L2-normalize vectors");
    index_cmd->add_option("--out", output, "Write the indexed vectors as a snapshot");

    DbOptions search_db;
    std::size_t search_k = kDefaultClassifyK;
    auto* search = app.add_subcommand("search", "Top-k neighbours for every query record");
    search_db.add_to(search);
    search->add_option("--k", search_k, "Neighbours per query")->check(CLI::PositiveNumber);

    DbOptions classify_db;
    std::size_t classify_k = kDefaultClassifyK;
    std::string vote = "sum";
    auto* classify = app.add_subcommand("classify", "Weighted KNN class probabilities");
    classify_db.add_to(classify);
    classify->add_option("--k", classify_k, "Neighbours per vote")->check(CLI::PositiveNumber);
    classify->add_option("--vote", vote, "sum or mean")->check(CLI::IsMember({"sum", "mean"}));

    DbOptions regress_db;
    std::size_t regress_k = kDefaultRegressK;
    auto* regress = app.add_subcommand("regress", "Weighted-mode month estimate");
    regress_db.add_to(regress);
    regress->add_option("--k", regress_k, "Neighbours per estimate")->check(CLI::PositiveNumber);

    DbOptions zeroshot_db;
    std::string head;
    auto* zeroshot = app.add_subcommand("zeroshot", "Class scores against text anchors");
    zeroshot_db.add_to(zeroshot, false);
    zeroshot->add_option("--head", head, "Classifier head file")->required();

    EvalOptions eval;
    auto* evaluate = app.add_subcommand("evaluate", "Labelled evaluation with report files");
    eval.add_to(evaluate);
    evaluate->add_option("--out-dir", eval.out_dir, "Directory for report.tsv, report.json and ROC files");

    EvalOptions fair;
    std::string grouping = "gender";
    auto* fairness = app.add_subcommand("fairness", "Per-group mAUC");
    fair.add_to(fairness);
    fairness->add_option("--grouping", grouping, "gender or age_bucket")
        ->check(CLI::IsMember({"gender", "age_bucket", "age"}));
    fairness->add_option("--out-dir", fair.out_dir, "Directory for fairness.tsv and fairness.json");

    auto* volumes = app.add_subcommand("volumes", "3D volume retrieval");
    volumes->require_subcommand(1);
    volumes->fallthrough();
    std::string aggregation = "median";
    auto* vol_index = volumes->add_subcommand("index", "Aggregate slices into volume embeddings");
    vol_index->add_option("input", input, "Slice records")->required();
    vol_index->add_option("--split", split, "Use only records tagged with this split");
    vol_index->add_option("--aggregation", aggregation, "median, mean, max or stdev");
    vol_index->add_option("--out", output, "Write volume embeddings as record lines");
    DbOptions vol_db;
    std::size_t vol_k = 10;
    auto* vol_search = volumes->add_subcommand("search", "Retrieve volumes for query volumes");
    vol_search->add_option("--db", vol_db.db, "Slice records to index")->required();
    vol_search->add_option("--db-split", vol_db.db_split, "Use only database records tagged with this split");
    vol_search->add_option("--queries", vol_db.queries, "Query slice records")->required();
    vol_search->add_option("--query-split", vol_db.query_split, "Use only query records tagged with this split");
    vol_search->add_option("--aggregation", aggregation, "median, mean, max or stdev");
    vol_search->add_option("--k", vol_k, "Volumes per query")->check(CLI::PositiveNumber);
    std::string ks = "3,5,10";
    std::string vol_out;
    auto* vol_eval = volumes->add_subcommand("eval", "Precision@k and AP per relevance mode");
    vol_eval->add_option("--db", vol_db.db, "Slice records to index")->required();
    vol_eval->add_option("--db-split", vol_db.db_split, "Use only database records tagged with this split");
    vol_eval->add_option("--queries", vol_db.queries, "Query slice records")->required();
    vol_eval->add_option("--query-split", vol_db.query_split, "Use only query records tagged with this split");
    vol_eval->add_option("--aggregation", aggregation, "median, mean, max or stdev");
    vol_eval->add_option("--ks", ks, "Comma-separated cutoffs");
    vol_eval->add_option("--out-dir", vol_out, "Directory for retrieval.tsv and retrieval.json");

    auto* unicl = app.add_subcommand("unicl", "Contrastive objective tools");
    unicl->require_subcommand(1);
    unicl->fallthrough();
    CheckOptions check;
    auto* check_cmd = unicl->add_subcommand("check", "Finite-difference gradient check on random batches");
    check_cmd->add_option("--batches", check.batches, "Number of random batches")->check(CLI::PositiveNumber);
    check_cmd->add_option("--max-n", check.max_n, "Largest batch size")->check(CLI::PositiveNumber);
    check_cmd->add_option("--max-d", check.max_d, "Largest embedding dimension")->check(CLI::PositiveNumber);
    check_cmd->add_option("--epsilon", check.epsilon, "Central-difference step")->check(CLI::PositiveNumber);
    check_cmd->add_option("--tolerance", check.tolerance, "Largest accepted relative error");
    TrainOptions train;
    auto* train_cmd = unicl->add_subcommand("train", "Toy two-tower training on synthetic clusters");
    train_cmd->add_option("--steps", train.config.steps, "Gradient steps")->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", train.config.learning_rate, "Learning rate")->check(CLI::PositiveNumber);
    train_cmd->add_option("--clusters", train.spec.clusters, "Cluster count")->check(CLI::PositiveNumber);
    train_cmd->add_option("--dim", train.spec.dimension, "Feature dimension")->check(CLI::PositiveNumber);
    train_cmd->add_option("--separation", train.spec.separation, "Distance between cluster centres");
    train_cmd->add_option("--noise", train.spec.noise, "Per-component noise scale");
    train_cmd->add_option("--batch-per-cluster", train.config.per_cluster_batch, "Samples per cluster and step")
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--temperature", train.config.temperature, "Softmax temperature")
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--weight-decay", train.config.weight_decay, "L2 penalty on both maps");
    train_cmd->add_option("--eval-samples", train.eval_samples, "Held-out samples for a zero-shot mAUC");
    train_cmd->add_option("--out-dir", train.out_dir, "Directory for loss.tsv, maps.jsonl and head.es");

    ServeOptions serve_options;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP JSON API");
    serve_cmd->add_option("--host", serve_options.host, "Listen address")->envname("ES_HOST");
    serve_cmd->add_option("--port", serve_options.port, "Listen port")->envname("ES_PORT")->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--max-body-mb", serve_options.max_body_mb, "Request body cap in MiB");
    serve_cmd->add_option("--corpus", serve_options.corpus, "Corpus to load and index at startup");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    const Context ctx{globals, out, err};
    try {
        if (*ingest) return cmd_ingest(ctx, input, output, dim);
        if (*split_cmd) return cmd_split(ctx, input, ratios, prefix);
        if (*index_cmd) return cmd_index(ctx, input, split, normalize, output);
        if (*search) return cmd_search(ctx, search_db, search_k);
        if (*classify) return cmd_classify(ctx, classify_db, classify_k, vote);
        if (*regress) return cmd_regress(ctx, regress_db, regress_k);
        if (*zeroshot) return cmd_zeroshot(ctx, head, zeroshot_db);
        if (*evaluate) return cmd_evaluate(ctx, eval);
        if (*fairness) return cmd_fairness(ctx, fair, grouping);
        if (*vol_index) return cmd_volume_index(ctx, input, split, aggregation, output);
        if (*vol_search) return cmd_volume_search(ctx, vol_db, aggregation, vol_k);
        if (*vol_eval) return cmd_volume_eval(ctx, vol_db, aggregation, ks, vol_out);
        if (*check_cmd) return cmd_unicl_check(ctx, check);
        if (*train_cmd) return cmd_unicl_train(ctx, train);
        if (*serve_cmd) return cmd_serve(ctx, serve_options);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace evsearch
