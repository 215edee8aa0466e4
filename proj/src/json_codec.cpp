#include "evsearch/json_codec.hpp"

#include <cmath>
#include <cstdio>

#include "evsearch/error.hpp"

namespace evsearch {

std::string format_real(double value) {
    if (!std::isfinite(value)) return "null";
    if (value == 0.0) return std::signbit(value) ? "-0.0" : "0";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

namespace {

void append(std::string& out, const Json& value) {
    switch (value.type()) {
        case Json::value_t::object: {
            out.push_back('{');
            bool first = true;
            for (auto it = value.begin(); it != value.end(); ++it) {
                if (!first) out.push_back(',');
                first = false;
                out += Json(it.key()).dump();
                out.push_back(':');
                append(out, it.value());
            }
            out.push_back('}');
            break;
        }
        case Json::value_t::array: {
            out.push_back('[');
            bool first = true;
            for (const auto& item : value) {
                if (!first) out.push_back(',');
                first = false;
                append(out, item);
            }
            out.push_back(']');
            break;
        }
        case Json::value_t::number_float:
            out += format_real(value.get<double>());
            break;
        default:
            out += value.dump(-1, ' ', false, Json::error_handler_t::strict);
            break;
    }
}

}  // namespace

std::string dump_json(const Json& value) {
    std::string out;
    append(out, value);
    return out;
}

Json parse_json(const std::string& text) {
    try {
        return Json::parse(text);
    } catch (const Json::out_of_range& e) {
        throw invalid_input(std::string("non-finite number in JSON: ") + e.what());
    } catch (const Json::exception& e) {
        throw invalid_input(std::string("malformed JSON: ") + e.what());
    }
}

}  // namespace evsearch
