#pragma once

#include <string>

#include <json.hpp>

namespace evsearch {

using Json = nlohmann::ordered_json;

// Every real leaving the process goes through format_real: 17 significant
// digits, so parsing the text back yields the identical double. Negative zero
// is written as "-0.0" to keep its sign through integer-looking parsers.
// Non-finite values have no JSON spelling and are written as null.
std::string format_real(double value);

// Compact serialization of a Json tree using format_real for floats. Object
// keys keep insertion order.
std::string dump_json(const Json& value);

Json parse_json(const std::string& text);

}  // namespace evsearch
