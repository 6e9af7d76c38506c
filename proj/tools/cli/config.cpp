#include "cli/config.hpp"

#include "embfuse/error.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace embfuse::cli {

namespace {

using Scalar = ConfigValue::Scalar;

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
        ++b;
    }
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
        --e;
    }
    return std::string(s.substr(b, e - b));
}

// Drops a trailing comment, ignoring '#' inside double quotes.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') {
            quoted = !quoted;
        } else if (line[i] == '#' && !quoted) {
            return line.substr(0, i);
        }
    }
    return line;
}

class LineError {
public:
    explicit LineError(std::size_t line) : line_{line} {}
    [[noreturn]] void parse(const std::string& what) const {
        throw Error(ErrorCode::Parse, "config line " + std::to_string(line_) + ": " + what);
    }
    [[noreturn]] void invalid(const std::string& what) const {
        throw Error(ErrorCode::Validation, "config line " + std::to_string(line_) + ": " + what);
    }

private:
    std::size_t line_;
};

Scalar parse_scalar(const std::string& text, const LineError& err) {
    if (text.empty()) {
        err.parse("missing value");
    }
    if (text.front() == '"') {
        if (text.size() < 2 || text.back() != '"') {
            err.parse("unterminated string " + text);
        }
        return text.substr(1, text.size() - 2);
    }
    if (text == "true") {
        return true;
    }
    if (text == "false") {
        return false;
    }
    std::int64_t integer = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), integer);
    if (ec == std::errc{} && ptr == text.data() + text.size()) {
        return integer;
    }
    char* end = nullptr;
    const double real = std::strtod(text.c_str(), &end);
    if (end == text.c_str() + text.size() && std::isfinite(real)) {
        return real;
    }
    err.parse("cannot parse value " + text);
}

ConfigValue parse_value(const std::string& text, const LineError& err) {
    if (!text.empty() && text.front() == '[') {
        if (text.back() != ']') {
            err.parse("unterminated list " + text);
        }
        std::vector<Scalar> items;
        std::istringstream body(text.substr(1, text.size() - 2));
        std::string item;
        while (std::getline(body, item, ',')) {
            item = trim(item);
            if (!item.empty()) {
                items.push_back(parse_scalar(item, err));
            }
        }
        return {items};
    }
    return {parse_scalar(text, err)};
}

const Scalar& scalar_of(const ConfigValue& v, const LineError& err) {
    const auto* s = std::get_if<Scalar>(&v.value);
    if (s == nullptr) {
        err.invalid("expected a single value, got a list");
    }
    return *s;
}

std::int64_t as_int(const Scalar& s, const LineError& err) {
    if (const auto* i = std::get_if<std::int64_t>(&s)) {
        return *i;
    }
    err.invalid("expected an integer");
}

std::size_t as_count(const Scalar& s, const LineError& err) {
    const auto v = as_int(s, err);
    if (v < 0) {
        err.invalid("expected a non-negative integer");
    }
    return static_cast<std::size_t>(v);
}

double as_real(const Scalar& s, const LineError& err) {
    if (const auto* d = std::get_if<double>(&s)) {
        return *d;
    }
    if (const auto* i = std::get_if<std::int64_t>(&s)) {
        return static_cast<double>(*i);
    }
    err.invalid("expected a number");
}

bool as_bool(const Scalar& s, const LineError& err) {
    if (const auto* b = std::get_if<bool>(&s)) {
        return *b;
    }
    err.invalid("expected true or false");
}

std::string as_string(const Scalar& s, const LineError& err) {
    if (const auto* str = std::get_if<std::string>(&s)) {
        return *str;
    }
    err.invalid("expected a quoted string");
}

std::vector<Scalar> as_list(const ConfigValue& v) {
    if (const auto* list = std::get_if<std::vector<Scalar>>(&v.value)) {
        return *list;
    }
    return {std::get<Scalar>(v.value)};
}

using Setter = std::function<void(PipelineConfig&, const ConfigValue&, const LineError&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"batch_size", [](auto& c, const auto& v, const auto& e) { c.batch_size = as_count(scalar_of(v, e), e); }},
        {"epochs", [](auto& c, const auto& v, const auto& e) { c.epochs = as_count(scalar_of(v, e), e); }},
        {"learning_rate", [](auto& c, const auto& v, const auto& e) { c.learning_rate = as_real(scalar_of(v, e), e); }},
        {"optimizer", [](auto& c, const auto& v, const auto& e) { c.optimizer = as_string(scalar_of(v, e), e); }},
        {"beta1", [](auto& c, const auto& v, const auto& e) { c.beta1 = as_real(scalar_of(v, e), e); }},
        {"beta2", [](auto& c, const auto& v, const auto& e) { c.beta2 = as_real(scalar_of(v, e), e); }},
        {"epsilon", [](auto& c, const auto& v, const auto& e) { c.epsilon = as_real(scalar_of(v, e), e); }},
        {"momentum", [](auto& c, const auto& v, const auto& e) { c.momentum = as_real(scalar_of(v, e), e); }},
        {"seed", [](auto& c, const auto& v, const auto& e) { c.seed = as_count(scalar_of(v, e), e); }},
        {"validation_fraction",
         [](auto& c, const auto& v, const auto& e) { c.validation_fraction = as_real(scalar_of(v, e), e); }},
        {"normalize_inputs",
         [](auto& c, const auto& v, const auto& e) { c.normalize_inputs = as_bool(scalar_of(v, e), e); }},
        {"activation", [](auto& c, const auto& v, const auto& e) { c.activation = as_string(scalar_of(v, e), e); }},
        {"d_out", [](auto& c, const auto& v, const auto& e) { c.d_out = as_count(scalar_of(v, e), e); }},
        {"stops",
         [](auto& c, const auto& v, const auto& e) {
             std::vector<std::size_t> stops;
             for (const auto& s : as_list(v)) {
                 stops.push_back(as_count(s, e));
             }
             c.stops = stops;
         }},
        {"bits", [](auto& c, const auto& v, const auto& e) { c.bits = static_cast<unsigned>(as_count(scalar_of(v, e), e)); }},
        {"dproj", [](auto& c, const auto& v, const auto& e) { c.dproj = as_count(scalar_of(v, e), e); }},
        {"k", [](auto& c, const auto& v, const auto& e) { c.k = as_count(scalar_of(v, e), e); }},
        {"gains", [](auto& c, const auto& v, const auto& e) { c.gains = as_string(scalar_of(v, e), e); }},
        {"task", [](auto& c, const auto& v, const auto& e) { c.task = as_string(scalar_of(v, e), e); }},
        {"inputs",
         [](auto& c, const auto& v, const auto& e) {
             for (const auto& s : as_list(v)) {
                 c.inputs.emplace_back(as_string(s, e));
             }
         }},
        {"output", [](auto& c, const auto& v, const auto& e) { c.output = as_string(scalar_of(v, e), e); }},
        {"checkpoint", [](auto& c, const auto& v, const auto& e) { c.checkpoint = as_string(scalar_of(v, e), e); }},
        {"calibration", [](auto& c, const auto& v, const auto& e) { c.calibration = as_string(scalar_of(v, e), e); }},
        {"projector", [](auto& c, const auto& v, const auto& e) { c.projector = as_string(scalar_of(v, e), e); }},
        {"queries", [](auto& c, const auto& v, const auto& e) { c.queries = as_string(scalar_of(v, e), e); }},
        {"query_ids", [](auto& c, const auto& v, const auto& e) { c.query_ids = as_string(scalar_of(v, e), e); }},
        {"docs", [](auto& c, const auto& v, const auto& e) { c.docs = as_string(scalar_of(v, e), e); }},
        {"doc_ids", [](auto& c, const auto& v, const auto& e) { c.doc_ids = as_string(scalar_of(v, e), e); }},
        {"qrels", [](auto& c, const auto& v, const auto& e) { c.qrels = as_string(scalar_of(v, e), e); }},
    };
    return table;
}

}  // namespace

PipelineConfig parse_config(const std::string& text) {
    PipelineConfig config;
    std::set<std::string> seen;
    std::istringstream lines(text);
    std::string raw;
    std::size_t number = 0;
    while (std::getline(lines, raw)) {
        ++number;
        const LineError err(number);
        const auto line = trim(strip_comment(raw));
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            err.parse("expected key = value");
        }
        const auto key = trim(std::string_view(line).substr(0, eq));
        const auto value = trim(std::string_view(line).substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) {
            err.invalid("unknown key \"" + key + "\"");
        }
        if (!seen.insert(key).second) {
            err.invalid("duplicate key \"" + key + "\"");
        }
        it->second(config, parse_value(value, err), err);
    }
    return config;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open config " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return parse_config(buffer.str());
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

}  // namespace embfuse::cli
