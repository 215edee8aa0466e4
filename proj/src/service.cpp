#include "evsearch/service.hpp"

#include <httplib.h>

#include <mutex>
#include <utility>

#include "evsearch/error.hpp"
#include "evsearch/json_codec.hpp"
#include "evsearch/serialize.hpp"

namespace evsearch {

namespace {

struct HttpError {
    int status;
    std::string error;
    std::string detail;
};

ServiceResponse error_response(int status, const std::string& error, const std::string& detail) {
    Json body = Json::object();
    body["error"] = error;
    body["detail"] = detail;
    return {status, dump_json(body), 0};
}

ServiceResponse ok(const Json& body, std::uint64_t generation) {
    return {200, dump_json(body), generation};
}

Json request_object(const std::string& body) {
    if (body.find_first_not_of(" \t\r\n") == std::string::npos) return Json::object();
    Json value = parse_json(body);
    if (!value.is_object()) throw invalid_input("request body must be a JSON object");
    return value;
}

std::optional<std::size_t> count_field(const Json& request, const char* field) {
    auto it = request.find(field);
    if (it == request.end() || it->is_null()) return std::nullopt;
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
        throw invalid_input(std::string("'") + field + "' must be a non-negative integer");
    }
    return it->get<std::size_t>();
}

std::optional<std::string> string_field(const Json& request, const char* field) {
    auto it = request.find(field);
    if (it == request.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw invalid_input(std::string("'") + field + "' must be a string");
    return it->get<std::string>();
}

bool bool_field(const Json& request, const char* field) {
    auto it = request.find(field);
    if (it == request.end() || it->is_null()) return false;
    if (!it->is_boolean()) throw invalid_input(std::string("'") + field + "' must be a boolean");
    return it->get<bool>();
}

const Json& required(const Json& request, const char* field) {
    auto it = request.find(field);
    if (it == request.end()) throw invalid_input(std::string("missing field '") + field + "'");
    return *it;
}

std::optional<std::string> param(const QueryParams& params, const std::string& key) {
    auto it = params.find(key);
    if (it == params.end()) return std::nullopt;
    return it->second;
}

Split split_value(const std::string& text) {
    auto split = parse_split(text);
    if (!split) throw invalid_input("unknown split '" + text + "'");
    return *split;
}

Corpus maybe_select(const Corpus& corpus, const std::optional<std::string>& split) {
    if (!split || *split == "all") return corpus;
    return select_split(corpus, split_value(*split));
}

const char* kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_input: return "invalid input";
        case ErrorKind::conflict: return "conflict";
        case ErrorKind::not_found: return "not found";
        case ErrorKind::io: return "io";
    }
    return "error";
}

int kind_status(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_input: return 400;
        case ErrorKind::conflict: return 409;
        case ErrorKind::not_found: return 404;
        case ErrorKind::io: return 500;
    }
    return 500;
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= path.size()) {
        std::size_t end = path.find('/', start);
        if (end == std::string::npos) end = path.size();
        if (end > start) parts.push_back(path.substr(start, end - start));
        start = end + 1;
    }
    return parts;
}

}  // namespace

Service::Service(ServiceConfig config) : config_(config) {}

std::shared_lock<std::shared_mutex> Service::read_lock() const {
    std::lock_guard gate(gate_);
    return std::shared_lock(mutex_);
}

std::unique_lock<std::shared_mutex> Service::write_lock() {
    std::lock_guard gate(gate_);
    return std::unique_lock(mutex_);
}

ServiceResponse Service::handle(const std::string& method, const std::string& path, const QueryParams& params,
                                const std::string& body) {
    if (body.size() > config_.max_body_bytes) {
        return error_response(413, "payload too large",
                              "body of " + std::to_string(body.size()) + " bytes exceeds the cap of " +
                                  std::to_string(config_.max_body_bytes));
    }
    try {
        return route(method, path, params, body);
    } catch (const HttpError& e) {
        return error_response(e.status, e.error, e.detail);
    } catch (const Error& e) {
        return error_response(kind_status(e.kind()), kind_name(e.kind()), e.what());
    } catch (const Json::exception& e) {
        return error_response(400, "invalid input", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal", e.what());
    }
}

ServiceResponse Service::route(const std::string& method, const std::string& path, const QueryParams& params,
                               const std::string& body) {
    const auto parts = split_path(path);
    const bool get = method == "GET";
    const bool post = method == "POST";
    auto is = [&](std::initializer_list<const char*> expected) {
        if (parts.size() != expected.size()) return false;
        std::size_t i = 0;
        for (const char* p : expected) {
            if (parts[i++] != p) return false;
        }
        return true;
    };
    auto wrong_method = [&]() -> ServiceResponse {
        throw HttpError{405, "method not allowed", method + " " + path};
    };

    if (is({"health"})) {
        if (!get) return wrong_method();
        auto lock = read_lock();
        return ok(Json{{"status", "ok"}, {"generation", state_.generation}}, state_.generation);
    }
    if (is({"corpus"})) return post ? post_corpus(params, body) : wrong_method();
    if (is({"corpus", "snapshot"})) return get ? get_snapshot() : wrong_method();
    if (is({"index"})) return post ? post_index(body) : wrong_method();
    if (is({"search"})) return post ? post_search(body) : wrong_method();
    if (is({"search", "batch"})) return post ? post_search_batch(body) : wrong_method();
    if (is({"classify"})) return post ? post_classify(body) : wrong_method();
    if (is({"regress"})) return post ? post_regress(body) : wrong_method();
    if (is({"heads"})) {
        if (post) return post_heads(params, body);
        return get ? get_heads() : wrong_method();
    }
    if (is({"evaluate"})) return post ? post_evaluate(body) : wrong_method();
    if (is({"runs"})) return get ? get_runs() : wrong_method();
    if (parts.size() == 3 && parts[0] == "runs" && parts[2] == "outcomes") {
        return get ? get_outcomes(parts[1]) : wrong_method();
    }
    if (parts.size() == 3 && parts[0] == "roc") return get ? get_roc(parts[1], parts[2]) : wrong_method();
    if (is({"fairness"})) return post ? post_fairness(body) : wrong_method();
    if (is({"volumes", "index"})) return post ? post_volume_index(body) : wrong_method();
    if (is({"volumes", "search"})) return post ? post_volume_search(body) : wrong_method();
    if (is({"volumes", "evaluate"})) return post ? post_volume_evaluate(body) : wrong_method();
    throw HttpError{404, "not found", "no route for " + method + " " + path};
}

const Corpus& Service::current_corpus() const {
    if (!state_.corpus) throw HttpError{409, "no corpus", "POST /corpus first"};
    return *state_.corpus;
}

const VectorIndex& Service::current_index() const {
    if (!state_.index) throw HttpError{409, "no index", "POST /index first"};
    if (state_.index_generation != state_.generation) {
        throw HttpError{409, "stale index", "the corpus was replaced; POST /index to rebuild"};
    }
    return *state_.index;
}

const VolumeIndex& Service::current_volume_index(std::optional<Aggregation> method) const {
    if (!method) method = state_.last_volume_aggregation;
    auto it = method ? state_.volume_indexes.find(*method) : state_.volume_indexes.end();
    if (it == state_.volume_indexes.end()) {
        throw HttpError{409, "no index", "POST /volumes/index first"};
    }
    if (state_.volume_generations.at(*method) != state_.generation) {
        throw HttpError{409, "stale index", "the corpus was replaced; POST /volumes/index to rebuild"};
    }
    return *it->second;
}

std::shared_ptr<const ClassifierHead> Service::find_head(const std::string& name) const {
    auto it = state_.heads.find(name);
    if (it == state_.heads.end()) throw invalid_input("unknown head '" + name + "'");
    return it->second;
}

ServiceResponse Service::post_corpus(const QueryParams& params, const std::string& body) {
    auto corpus = std::make_shared<const Corpus>(parse_any(body, param(params, "name").value_or("corpus")));
    std::shared_ptr<const VectorIndex> index;
    const auto build = param(params, "index");
    if (build && *build != "0" && *build != "false") {
        IndexOptions options;
        const auto normalize = param(params, "normalize");
        options.normalize = normalize && *normalize != "0" && *normalize != "false";
        index = std::make_shared<const VectorIndex>(*corpus, options);
    }
    auto lock = write_lock();
    ++state_.generation;
    state_.corpus = corpus;
    if (index) {
        state_.index = index;
        state_.index_generation = state_.generation;
    }
    return ok(corpus_summary(*corpus), state_.generation);
}

ServiceResponse Service::get_snapshot() {
    auto lock = read_lock();
    return {200, snapshot_text(current_corpus()), state_.generation};
}

ServiceResponse Service::post_index(const std::string& body) {
    const Json request = request_object(body);
    IndexOptions options;
    options.normalize = bool_field(request, "normalize");
    const auto split = string_field(request, "split");

    std::shared_ptr<const Corpus> corpus;
    std::uint64_t generation = 0;
    {
        auto lock = read_lock();
        current_corpus();
        corpus = state_.corpus;
        generation = state_.generation;
    }
    auto index = std::make_shared<const VectorIndex>(maybe_select(*corpus, split), options);

    auto lock = write_lock();
    if (state_.generation != generation) {
        throw HttpError{409, "conflict", "the corpus was replaced while the index was being built"};
    }
    state_.index = index;
    state_.index_generation = generation;
    return ok(index_summary(*index), generation);
}

ServiceResponse Service::post_search(const std::string& body) {
    const Json request = request_object(body);
    const auto query = vector_from_json(required(request, "vector"), "vector");
    const std::size_t k = count_field(request, "k").value_or(kDefaultClassifyK);
    auto lock = read_lock();
    const VectorIndex& index = current_index();
    return ok(Json{{"hits", hits_json(index.search(query, k), &index)}}, state_.generation);
}

ServiceResponse Service::post_search_batch(const std::string& body) {
    const Json request = request_object(body);
    const auto queries = matrix_from_json(required(request, "vectors"), "vectors");
    const std::size_t k = count_field(request, "k").value_or(kDefaultClassifyK);
    auto lock = read_lock();
    const VectorIndex& index = current_index();
    Json results = Json::array();
    for (const auto& hits : index.batch_search(queries, k, config_.search_threads)) {
        results.push_back(hits_json(hits, &index));
    }
    return ok(Json{{"results", std::move(results)}}, state_.generation);
}

ServiceResponse Service::post_classify(const std::string& body) {
    const Json request = request_object(body);
    const auto query = vector_from_json(required(request, "vector"), "vector");
    const std::string mode = string_field(request, "mode").value_or("knn");
    auto lock = read_lock();
    if (mode == "knn") {
        const std::size_t k = count_field(request, "k").value_or(kDefaultClassifyK);
        KnnOptions options;
        options.vote = parse_vote(string_field(request, "vote").value_or("sum"));
        const VectorIndex& index = current_index();
        options.class_universe = index.label_set();
        const auto hits = index.search(query, k);
        return ok(to_json(classify_knn(hits, k, options)), state_.generation);
    }
    if (mode == "zeroshot") {
        const auto name = string_field(request, "head");
        std::shared_ptr<const ClassifierHead> head;
        if (name) {
            head = find_head(*name);
        } else if (state_.heads.size() == 1) {
            head = state_.heads.begin()->second;
        } else if (state_.heads.empty()) {
            throw HttpError{409, "no head", "POST /heads first"};
        } else {
            throw invalid_input("several heads are loaded; name one with 'head'");
        }
        return ok(to_json(zeroshot_classify(query, *head)), state_.generation);
    }
    throw invalid_input("unknown mode '" + mode + "', expected knn or zeroshot");
}

ServiceResponse Service::post_regress(const std::string& body) {
    const Json request = request_object(body);
    const auto query = vector_from_json(required(request, "vector"), "vector");
    const std::size_t k = count_field(request, "k").value_or(kDefaultRegressK);
    auto lock = read_lock();
    const auto hits = current_index().search(query, k);
    return ok(Json{{"months", regress_knn(hits, k)}}, state_.generation);
}

ServiceResponse Service::post_heads(const QueryParams& params, const std::string& body) {
    const auto name = param(params, "name");
    std::shared_ptr<const ClassifierHead> head;
    if (param(params, "from").value_or("") == "corpus") {
        if (!name) throw invalid_input("a head built from the corpus needs ?name=");
        double temperature = 1.0;
        if (auto text = param(params, "temperature")) {
            try {
                temperature = std::stod(*text);
            } catch (const std::exception&) {
                throw invalid_input("temperature must be a number");
            }
        }
        auto lock = read_lock();
        const auto built = head_from_corpus(current_corpus(), temperature);
        head = std::make_shared<const ClassifierHead>(built.classes(), built.anchors(), built.temperature(), *name);
    } else {
        auto parsed = parse_head(body);
        head = std::make_shared<const ClassifierHead>(parsed.classes(), parsed.anchors(), parsed.temperature(),
                                                      name.value_or(parsed.name()));
    }
    if (head->name().empty()) throw invalid_input("the head has no name; pass ?name=");
    auto lock = write_lock();
    state_.heads[head->name()] = head;
    return ok(head_summary(*head), state_.generation);
}

ServiceResponse Service::get_heads() {
    auto lock = read_lock();
    Json heads = Json::array();
    for (const auto& [name, head] : state_.heads) heads.push_back(head_summary(*head));
    return ok(Json{{"heads", std::move(heads)}}, state_.generation);
}

ServiceResponse Service::post_evaluate(const std::string& body) {
    const Json request = request_object(body);
    const std::string name = string_field(request, "name").value_or("run");
    const std::string mode = string_field(request, "mode").value_or("knn");
    const auto split = string_field(request, "split").value_or("test");

    std::shared_ptr<const EvaluationRun> run;
    std::uint64_t generation = 0;
    {
        auto lock = read_lock();
        generation = state_.generation;
        const Corpus queries = maybe_select(current_corpus(), split);
        if (mode == "knn") {
            EvaluationOptions options;
            options.k = count_field(request, "k").value_or(kDefaultClassifyK);
            options.regression_k = count_field(request, "regression_k").value_or(kDefaultRegressK);
            options.vote = parse_vote(string_field(request, "vote").value_or("sum"));
            run = std::make_shared<const EvaluationRun>(evaluate_knn(current_index(), queries, options, name));
        } else if (mode == "zeroshot") {
            const auto head_name = string_field(request, "head");
            if (!head_name) throw invalid_input("zeroshot evaluation needs 'head'");
            run = std::make_shared<const EvaluationRun>(evaluate_zeroshot(*find_head(*head_name), queries, name));
        } else {
            throw invalid_input("unknown mode '" + mode + "', expected knn or zeroshot");
        }
    }
    auto lock = write_lock();
    state_.runs[name] = run;
    return ok(to_json(*run), generation);
}

ServiceResponse Service::get_runs() {
    auto lock = read_lock();
    Json runs = Json::array();
    for (const auto& [name, run] : state_.runs) runs.push_back(to_json(*run));
    return ok(Json{{"runs", std::move(runs)}}, state_.generation);
}

ServiceResponse Service::get_outcomes(const std::string& name) {
    auto lock = read_lock();
    auto it = state_.runs.find(name);
    if (it == state_.runs.end()) throw HttpError{404, "unknown run", "no run named '" + name + "'"};
    return ok(Json{{"outcomes", outcomes_json(*it->second)}}, state_.generation);
}

ServiceResponse Service::get_roc(const std::string& name, const std::string& class_name) {
    auto lock = read_lock();
    auto it = state_.runs.find(name);
    if (it == state_.runs.end()) throw HttpError{404, "unknown run", "no run named '" + name + "'"};
    const RocCurve* curve = it->second->find_roc(class_name);
    if (!curve) {
        throw HttpError{404, "unknown class", "run '" + name + "' has no curve for class '" + class_name + "'"};
    }
    return ok(to_json(*curve), state_.generation);
}

ServiceResponse Service::post_fairness(const std::string& body) {
    const Json request = request_object(body);
    const auto name = string_field(request, "run");
    if (!name) throw invalid_input("missing field 'run'");
    const auto grouping = parse_grouping(string_field(request, "grouping").value_or("gender"));
    auto lock = read_lock();
    auto it = state_.runs.find(*name);
    if (it == state_.runs.end()) throw HttpError{404, "unknown run", "no run named '" + *name + "'"};
    return ok(to_json(fairness_from_run(*it->second, grouping)), state_.generation);
}

ServiceResponse Service::post_volume_index(const std::string& body) {
    const Json request = request_object(body);
    const Aggregation method = parse_aggregation(string_field(request, "aggregation").value_or("median"));
    const auto split = string_field(request, "split");

    std::shared_ptr<const Corpus> corpus;
    std::uint64_t generation = 0;
    {
        auto lock = read_lock();
        current_corpus();
        corpus = state_.corpus;
        generation = state_.generation;
    }
    auto index = std::make_shared<const VolumeIndex>(build_volume_index(maybe_select(*corpus, split), method));

    auto lock = write_lock();
    if (state_.generation != generation) {
        throw HttpError{409, "conflict", "the corpus was replaced while the index was being built"};
    }
    state_.volume_indexes[method] = index;
    state_.volume_generations[method] = generation;
    state_.last_volume_aggregation = method;
    return ok(volume_index_summary(*index), generation);
}

ServiceResponse Service::post_volume_search(const std::string& body) {
    const Json request = request_object(body);
    const auto slices = matrix_from_json(required(request, "slices"), "slices");
    const std::size_t k = count_field(request, "k").value_or(10);
    const auto query_method = string_field(request, "aggregation");
    auto index_method = string_field(request, "index");
    auto lock = read_lock();
    std::optional<Aggregation> wanted;
    if (index_method) {
        wanted = parse_aggregation(*index_method);
    } else if (query_method && state_.volume_indexes.count(parse_aggregation(*query_method))) {
        wanted = parse_aggregation(*query_method);
    }
    const VolumeIndex& index = current_volume_index(wanted);
    const Aggregation method = query_method ? parse_aggregation(*query_method) : index.aggregation();
    const auto hits = retrieve_volumes(index, slices, method, k);
    return ok(Json{{"hits", hits_json(hits, &index.index())}}, state_.generation);
}

ServiceResponse Service::post_volume_evaluate(const std::string& body) {
    const Json request = request_object(body);
    std::optional<Aggregation> method;
    if (auto text = string_field(request, "aggregation")) method = parse_aggregation(*text);
    std::vector<std::size_t> ks = {3, 5, 10};
    if (auto it = request.find("ks"); it != request.end()) {
        if (!it->is_array()) throw invalid_input("'ks' must be an array of positive integers");
        ks.clear();
        for (const auto& k : *it) {
            if (!k.is_number_integer() || k.get<std::int64_t>() <= 0) {
                throw invalid_input("'ks' must be an array of positive integers");
            }
            ks.push_back(k.get<std::size_t>());
        }
    }
    const auto split = string_field(request, "split");
    auto lock = read_lock();
    const VolumeIndex& index = current_volume_index(method);
    const auto report = evaluate_volume_retrieval(index, maybe_select(current_corpus(), split), ks);
    return ok(to_json(report), state_.generation);
}

void mount(httplib::Server& server, Service& service) {
    auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
        QueryParams params(req.params.begin(), req.params.end());
        const auto out = service.handle(req.method, req.path, params, req.body);
        res.status = out.status;
        res.set_header(kGenerationHeader, std::to_string(out.generation));
        const bool text = out.status == 200 && req.path == "/corpus/snapshot";
        res.set_content(out.body, text ? "text/plain" : "application/json");
    };
    server.Get(".*", forward);
    server.Post(".*", forward);
    server.Put(".*", forward);
    server.Delete(".*", forward);
    // Bodies slightly over the cap still reach handle(), which reports them
    // in the standard error shape.
    server.set_payload_max_length(service.config().max_body_bytes + (std::size_t{1} << 20));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (!res.body.empty()) return;
        const auto out = error_response(res.status, res.status == 413 ? "payload too large" : "http error",
                                        httplib::status_message(res.status));
        res.set_content(out.body, "application/json");
    });
}

bool serve(Service& service, const std::string& host, int port) {
    httplib::Server server;
    mount(server, service);
    return server.listen(host, port);
}

}  // namespace evsearch
