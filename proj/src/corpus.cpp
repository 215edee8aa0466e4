#include "evsearch/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "evsearch/error.hpp"
#include "evsearch/json_codec.hpp"

namespace evsearch {

std::string_view to_string(Split split) {
    switch (split) {
        case Split::database: return "database";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "database";
}

std::optional<Split> parse_split(std::string_view text) {
    if (text == "database") return Split::database;
    if (text == "validation") return Split::validation;
    if (text == "test") return Split::test;
    return std::nullopt;
}

namespace {

// Returns an empty string when the record satisfies every per-record
// invariant, otherwise a description of the first violation.
std::string record_problem(const EmbeddingRecord& record, std::size_t dimension) {
    if (record.id.empty()) return "record id is empty";
    if (record.vector.size() != dimension) {
        return "record '" + record.id + "' has " + std::to_string(record.vector.size()) +
               " components, expected " + std::to_string(dimension);
    }
    for (std::size_t i = 0; i < record.vector.size(); ++i) {
        if (!std::isfinite(record.vector[i])) {
            return "record '" + record.id + "' has a non-finite component at position " +
                   std::to_string(i);
        }
    }
    if (record.volume_id.has_value() != record.slice_index.has_value()) {
        return "record '" + record.id + "' must carry both volume_id and slice_index or neither";
    }
    if (record.slice_index && *record.slice_index < 0) {
        return "record '" + record.id + "' has a negative slice_index";
    }
    if (record.target_months && *record.target_months < 0) {
        return "record '" + record.id + "' has a negative target_months";
    }
    return {};
}

std::int64_t non_negative_integer(const Json& value, const char* key) {
    if (value.is_number_unsigned()) {
        return static_cast<std::int64_t>(value.get<std::uint64_t>());
    }
    if (value.is_number_integer()) {
        const auto v = value.get<std::int64_t>();
        if (v < 0) throw invalid_input(std::string("'") + key + "' must be non-negative");
        return v;
    }
    throw invalid_input(std::string("'") + key + "' must be a non-negative integer");
}

EmbeddingRecord record_from_json(const Json& object) {
    if (!object.is_object()) throw invalid_input("record is not a JSON object");
    EmbeddingRecord record;
    bool has_id = false;
    bool has_vector = false;
    for (auto it = object.begin(); it != object.end(); ++it) {
        const std::string& key = it.key();
        const Json& value = it.value();
        if (key == "id") {
            if (!value.is_string()) throw invalid_input("'id' must be a string");
            record.id = value.get<std::string>();
            has_id = true;
        } else if (key == "vector") {
            if (!value.is_array()) throw invalid_input("'vector' must be an array of numbers");
            record.vector.reserve(value.size());
            for (const auto& component : value) {
                if (!component.is_number()) {
                    throw invalid_input("'vector' must be an array of numbers");
                }
                record.vector.push_back(component.get<double>());
            }
            has_vector = true;
        } else if (key == "label") {
            if (value.is_null()) continue;
            if (!value.is_string()) throw invalid_input("'label' must be a string");
            record.label = value.get<std::string>();
        } else if (key == "attributes") {
            if (!value.is_object()) throw invalid_input("'attributes' must be an object");
            for (auto attr = value.begin(); attr != value.end(); ++attr) {
                if (!attr.value().is_string()) {
                    throw invalid_input("attribute '" + attr.key() + "' must be a string");
                }
                record.attributes[attr.key()] = attr.value().get<std::string>();
            }
        } else if (key == "split") {
            if (value.is_null()) continue;
            if (!value.is_string()) throw invalid_input("'split' must be a string");
            auto split = parse_split(value.get<std::string>());
            if (!split) throw invalid_input("unknown split '" + value.get<std::string>() + "'");
            record.split = split;
        } else if (key == "volume_id") {
            if (value.is_null()) continue;
            if (!value.is_string()) throw invalid_input("'volume_id' must be a string");
            record.volume_id = value.get<std::string>();
        } else if (key == "slice_index") {
            if (value.is_null()) continue;
            record.slice_index = non_negative_integer(value, "slice_index");
        } else if (key == "target_months") {
            if (value.is_null()) continue;
            record.target_months = non_negative_integer(value, "target_months");
        } else {
            throw invalid_input("unknown key '" + key + "'");
        }
    }
    if (!has_id) throw invalid_input("missing 'id'");
    if (!has_vector) throw invalid_input("missing 'vector'");
    return record;
}

struct ParsedLines {
    std::optional<std::size_t> dimension;
    std::vector<EmbeddingRecord> records;
};

ParsedLines parse_lines(std::string_view text, std::optional<std::size_t> expected_dimension,
                        std::size_t first_line_number) {
    ParsedLines parsed;
    parsed.dimension = expected_dimension;
    std::unordered_set<std::string> seen;
    std::size_t line_number = first_line_number;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto end = text.find('\n', pos);
        std::string_view line = text.substr(pos, end == std::string_view::npos ? text.npos : end - pos);
        pos = end == std::string_view::npos ? text.size() : end + 1;
        const std::size_t this_line = line_number++;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

        const std::string prefix = "line " + std::to_string(this_line) + ": ";
        EmbeddingRecord record;
        try {
            record = record_from_json(parse_json(std::string(line)));
        } catch (const Error& e) {
            throw invalid_input(prefix + e.what());
        }
        if (!parsed.dimension) {
            if (record.vector.empty()) throw invalid_input(prefix + "record has an empty vector");
            parsed.dimension = record.vector.size();
        }
        if (auto problem = record_problem(record, *parsed.dimension); !problem.empty()) {
            throw invalid_input(prefix + problem);
        }
        if (!seen.insert(record.id).second) {
            throw invalid_input(prefix + "duplicate id '" + record.id + "'");
        }
        parsed.records.push_back(std::move(record));
    }
    return parsed;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace

Corpus::Corpus(std::size_t dimension, std::vector<EmbeddingRecord> records, std::string name)
    : dimension_(dimension), records_(std::move(records)), name_(std::move(name)) {
    if (dimension_ == 0) throw invalid_input("corpus dimension must be at least 1");
    std::unordered_set<std::string> seen;
    seen.reserve(records_.size());
    for (const auto& record : records_) {
        if (auto problem = record_problem(record, dimension_); !problem.empty()) {
            throw invalid_input(problem);
        }
        if (!seen.insert(record.id).second) {
            throw invalid_input("duplicate id '" + record.id + "'");
        }
    }
}

Corpus parse_records(std::string_view text, std::optional<std::size_t> expected_dimension,
                     std::string name) {
    if (expected_dimension && *expected_dimension == 0) {
        throw invalid_input("expected dimension must be positive");
    }
    auto parsed = parse_lines(text, expected_dimension, 1);
    if (parsed.records.empty()) throw invalid_input("empty corpus");
    return Corpus(*parsed.dimension, std::move(parsed.records), std::move(name));
}

Corpus load_corpus(const std::filesystem::path& path, std::optional<std::size_t> expected_dimension) {
    return parse_records(read_file(path), expected_dimension, path.stem().string());
}

std::string record_line(const EmbeddingRecord& record) {
    Json object;
    object["id"] = record.id;
    Json vector = Json::array();
    for (double v : record.vector) vector.push_back(v);
    object["vector"] = std::move(vector);
    if (record.label) object["label"] = *record.label;
    if (!record.attributes.empty()) {
        Json attributes = Json::object();
        for (const auto& [key, value] : record.attributes) attributes[key] = value;
        object["attributes"] = std::move(attributes);
    }
    if (record.split) object["split"] = std::string(to_string(*record.split));
    if (record.volume_id) object["volume_id"] = *record.volume_id;
    if (record.slice_index) object["slice_index"] = *record.slice_index;
    if (record.target_months) object["target_months"] = *record.target_months;
    return dump_json(object);
}

std::string records_text(const Corpus& corpus) {
    std::string out;
    for (const auto& record : corpus.records()) {
        out += record_line(record);
        out.push_back('\n');
    }
    return out;
}

void write_records(const Corpus& corpus, const std::filesystem::path& path) {
    write_file(path, records_text(corpus));
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string checksum_hex(std::string_view body) { return hex64(fnv1a64(body)); }

std::string snapshot_text(const Corpus& corpus) {
    const std::string body = records_text(corpus);
    Json header;
    header["dimension"] = corpus.dimension();
    header["name"] = corpus.name();
    header["checksum"] = checksum_hex(body);
    return dump_json(header) + "\n" + body;
}

Corpus parse_snapshot(std::string_view text) {
    const auto newline = text.find('\n');
    if (newline == std::string_view::npos) throw invalid_input("corrupt snapshot: missing header line");
    Json header;
    try {
        header = parse_json(std::string(text.substr(0, newline)));
    } catch (const Error& e) {
        throw invalid_input(std::string("corrupt snapshot header: ") + e.what());
    }
    if (!header.is_object() || !header.contains("dimension") || !header.contains("checksum") ||
        !header["dimension"].is_number_unsigned() || !header["checksum"].is_string()) {
        throw invalid_input("corrupt snapshot header: expected dimension and checksum");
    }
    const auto dimension = header["dimension"].get<std::size_t>();
    std::string name;
    if (header.contains("name") && header["name"].is_string()) name = header["name"].get<std::string>();

    const std::string_view body = text.substr(newline + 1);
    const std::string expected = header["checksum"].get<std::string>();
    const std::string actual = checksum_hex(body);
    if (expected != actual) {
        throw invalid_input("corrupt snapshot: checksum mismatch (header " + expected + ", body " +
                            actual + ")");
    }
    if (dimension == 0) throw invalid_input("corrupt snapshot: dimension must be positive");
    auto parsed = parse_lines(body, dimension, 2);
    return Corpus(dimension, std::move(parsed.records), std::move(name));
}

void save_snapshot(const Corpus& corpus, const std::filesystem::path& path) {
    write_file(path, snapshot_text(corpus));
}

Corpus load_snapshot(const std::filesystem::path& path) { return parse_snapshot(read_file(path)); }

bool looks_like_snapshot(std::string_view text) {
    const auto start = text.find_first_not_of(" \t\r\n");
    if (start == std::string_view::npos) return false;
    const auto end = text.find('\n', start);
    const std::string first(text.substr(start, end == text.npos ? text.npos : end - start));
    try {
        const Json header = Json::parse(first);
        return header.is_object() && header.contains("checksum") && !header.contains("id");
    } catch (const Json::exception&) {
        return false;
    }
}

Corpus parse_any(std::string_view text, std::string name) {
    if (looks_like_snapshot(text)) return parse_snapshot(text);
    return parse_records(text, std::nullopt, std::move(name));
}

Corpus load_any(const std::filesystem::path& path) {
    return parse_any(read_file(path), path.stem().string());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    if (in.bad()) throw Error(ErrorKind::io, "failed reading '" + path.string() + "'");
    return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
}

std::uint64_t SplitMix64::next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<std::size_t> deterministic_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    SplitMix64 stream(seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(stream.next() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

CorpusSplit split_corpus(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed) {
    for (double r : {ratios.database, ratios.validation, ratios.test}) {
        if (!(r >= 0.0 && r <= 1.0)) throw invalid_input("split ratios must lie in [0, 1]");
    }
    if (std::abs(ratios.database + ratios.validation + ratios.test - 1.0) > 1e-9) {
        throw invalid_input("split ratios must sum to 1");
    }
    const std::size_t n = corpus.size();
    // The nudge absorbs representation error such as 100 * 0.29 = 28.999...
    auto portion = [n](double r) {
        return std::min(n, static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9)));
    };
    const std::size_t n_db = portion(ratios.database);
    const std::size_t n_val = std::min(n - n_db, portion(ratios.validation));

    const auto order = deterministic_permutation(n, seed);
    std::vector<EmbeddingRecord> parts[3];
    for (std::size_t i = 0; i < n; ++i) {
        EmbeddingRecord record = corpus.records()[order[i]];
        const int part = i < n_db ? 0 : (i < n_db + n_val ? 1 : 2);
        record.split = part == 0 ? Split::database : (part == 1 ? Split::validation : Split::test);
        parts[part].push_back(std::move(record));
    }
    const auto& base = corpus.name();
    return CorpusSplit{
        Corpus(corpus.dimension(), std::move(parts[0]), base + ".database"),
        Corpus(corpus.dimension(), std::move(parts[1]), base + ".validation"),
        Corpus(corpus.dimension(), std::move(parts[2]), base + ".test"),
    };
}

std::vector<std::uint8_t> hu_window(std::span<const double> values, double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi > lo)) {
        throw invalid_input("hu_window requires finite bounds with hi > lo");
    }
    std::vector<std::uint8_t> out;
    out.reserve(values.size());
    const double width = hi - lo;
    for (double v : values) {
        if (std::isnan(v)) throw invalid_input("hu_window input contains NaN");
        const double clamped = std::clamp(v, lo, hi);
        const double scaled = (clamped - lo) / width * 255.0;
        out.push_back(static_cast<std::uint8_t>(std::floor(scaled + 0.5)));
    }
    return out;
}

Corpus select_split(const Corpus& corpus, Split split) {
    std::vector<EmbeddingRecord> records;
    for (const auto& record : corpus.records()) {
        if (record.split == split) records.push_back(record);
    }
    return Corpus(corpus.dimension(), std::move(records), corpus.name() + "." + std::string(to_string(split)));
}

}  // namespace evsearch
