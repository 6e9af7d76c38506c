#include "embfuse/embio.hpp"

#include "binary_io.hpp"
#include "embfuse/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <utility>

namespace embfuse {

namespace {

constexpr std::string_view kEmbfMagic = "EMBF";
constexpr std::string_view kEmbqMagic = "EMBQ";

std::string context_of(const std::filesystem::path& path) { return path.string(); }

EmbfHeader parse_embf_header(detail::ByteReader& in, const std::string& context) {
    detail::expect_magic(in, kEmbfMagic, context);
    if (in.remaining() < kEmbfHeaderBytes - kEmbfMagic.size()) {
        throw Error(ErrorCode::Corruption, context + ": truncated header");
    }
    EmbfHeader header;
    header.version = in.u32();
    header.rows = in.u64();
    header.dims = in.u32();
    header.dtype = in.u8();
    if (header.version != kEmbfVersion) {
        throw Error(ErrorCode::Format,
                    context + ": unsupported EMBF version " + std::to_string(header.version));
    }
    if (header.dims < 1) {
        throw Error(ErrorCode::Format, context + ": dims must be >= 1");
    }
    if (header.dtype != kDtypeFloat32) {
        throw Error(ErrorCode::UnsupportedDtype,
                    context + ": unsupported dtype code " + std::to_string(header.dtype));
    }
    return header;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream fields(line);
    std::vector<std::string> out;
    std::string field;
    while (fields >> field) {
        out.push_back(field);
    }
    return out;
}

template <typename T>
bool parse_number(const std::string& text, T& value) {
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    return ec == std::errc{} && ptr == last;
}

// from_chars for double is unavailable on some toolchains; strtod is locale-bound
// but the C locale is never changed here.
bool parse_double(const std::string& text, double& value) {
    if (text.empty()) {
        return false;
    }
    char* end = nullptr;
    value = std::strtod(text.c_str(), &end);
    return end == text.c_str() + text.size() && std::isfinite(value);
}

template <typename Fn>
void for_each_line(const std::string& text, Fn&& fn) {
    std::istringstream lines(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(lines, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        auto fields = split_ws(line);
        if (fields.empty()) {
            continue;
        }
        fn(number, fields);
    }
}

}  // namespace

EmbfHeader read_embeddings_header(const std::filesystem::path& path) {
    const auto data = detail::slurp(path);
    detail::ByteReader in(data, context_of(path));
    return parse_embf_header(in, context_of(path));
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
    const auto data = detail::slurp(path);
    const auto context = context_of(path);
    detail::ByteReader in(data, context);
    const auto header = parse_embf_header(in, context);
    const std::uint64_t count = header.rows * header.dims;
    const std::uint64_t expected = count * sizeof(float);
    if (in.remaining() != expected) {
        throw Error(ErrorCode::Corruption, context + ": payload has " +
                                               std::to_string(in.remaining()) + " bytes, expected " +
                                               std::to_string(expected));
    }
    std::vector<float> values(count);
    for (auto& v : values) {
        v = in.f32();
    }
    return {header.rows, header.dims, std::move(values)};
}

void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
    require_finite(m, path.string().c_str());
    detail::ByteWriter out;
    out.bytes(kEmbfMagic);
    out.u32(kEmbfVersion);
    out.u64(m.rows());
    out.u32(static_cast<std::uint32_t>(std::max<std::size_t>(m.dims(), 1)));
    out.u8(kDtypeFloat32);
    for (float v : m.data()) {
        out.f32(v);
    }
    detail::dump(out.buffer(), path);
}

PackedCodes pack_codes(const QuantizedCodes& codes) {
    if (codes.bits < 1 || codes.bits > 8) {
        throw Error(ErrorCode::Validation, "bits must be in [1, 8], got " + std::to_string(codes.bits));
    }
    if (codes.symbols.size() != codes.rows * codes.dims) {
        throw Error(ErrorCode::Dimension, "symbol count does not match rows x dims");
    }
    PackedCodes packed{codes.rows, codes.dims, codes.bits, {}};
    const std::size_t row_bytes = packed.row_bytes();
    packed.payload.assign(codes.rows * row_bytes, 0);
    const unsigned limit = 1u << codes.bits;
    for (std::size_t i = 0; i < codes.rows; ++i) {
        std::uint8_t* row = packed.payload.data() + i * row_bytes;
        std::size_t bit = 0;
        for (std::size_t j = 0; j < codes.dims; ++j) {
            const unsigned symbol = codes.at(i, j);
            if (symbol >= limit) {
                throw Error(ErrorCode::Validation, "symbol " + std::to_string(symbol) +
                                                       " does not fit in " +
                                                       std::to_string(codes.bits) + " bits");
            }
            for (int b = static_cast<int>(codes.bits) - 1; b >= 0; --b, ++bit) {
                if ((symbol >> b) & 1u) {
                    row[bit / 8] |= static_cast<std::uint8_t>(0x80u >> (bit % 8));
                }
            }
        }
    }
    return packed;
}

QuantizedCodes unpack_codes(const PackedCodes& packed) {
    if (packed.bits < 1 || packed.bits > 8) {
        throw Error(ErrorCode::Validation, "bits must be in [1, 8], got " + std::to_string(packed.bits));
    }
    const std::size_t row_bytes = packed.row_bytes();
    if (packed.payload.size() != packed.rows * row_bytes) {
        throw Error(ErrorCode::Corruption, "packed payload has " +
                                               std::to_string(packed.payload.size()) +
                                               " bytes, expected " +
                                               std::to_string(packed.rows * row_bytes));
    }
    QuantizedCodes codes{packed.rows, packed.dims, packed.bits, {}};
    codes.symbols.resize(packed.rows * packed.dims);
    for (std::size_t i = 0; i < packed.rows; ++i) {
        const std::uint8_t* row = packed.payload.data() + i * row_bytes;
        std::size_t bit = 0;
        for (std::size_t j = 0; j < packed.dims; ++j) {
            unsigned symbol = 0;
            for (unsigned b = 0; b < packed.bits; ++b, ++bit) {
                symbol = (symbol << 1) | ((row[bit / 8] >> (7 - bit % 8)) & 1u);
            }
            codes.symbols[i * packed.dims + j] = static_cast<std::uint8_t>(symbol);
        }
    }
    return codes;
}

PackedCodes read_packed_codes(const std::filesystem::path& path) {
    const auto data = detail::slurp(path);
    const auto context = context_of(path);
    detail::ByteReader in(data, context);
    detail::expect_magic(in, kEmbqMagic, context);
    const auto version = in.u32();
    if (version != kEmbqVersion) {
        throw Error(ErrorCode::Format, context + ": unsupported EMBQ version " + std::to_string(version));
    }
    PackedCodes packed;
    packed.rows = in.u64();
    packed.dims = in.u32();
    packed.bits = in.u8();
    if (packed.bits < 1 || packed.bits > 8) {
        throw Error(ErrorCode::Format, context + ": bits must be in [1, 8]");
    }
    if (packed.dims < 1) {
        throw Error(ErrorCode::Format, context + ": dims must be >= 1");
    }
    const std::size_t expected = packed.rows * packed.row_bytes();
    if (in.remaining() != expected) {
        throw Error(ErrorCode::Corruption, context + ": payload has " +
                                               std::to_string(in.remaining()) + " bytes, expected " +
                                               std::to_string(expected));
    }
    const auto payload = in.take(expected);
    packed.payload.assign(payload.begin(), payload.end());
    return packed;
}

void write_packed_codes(const PackedCodes& codes, const std::filesystem::path& path) {
    if (codes.payload.size() != codes.rows * codes.row_bytes()) {
        throw Error(ErrorCode::Validation, "packed payload size does not match header");
    }
    detail::ByteWriter out;
    out.bytes(kEmbqMagic);
    out.u32(kEmbqVersion);
    out.u64(codes.rows);
    out.u32(static_cast<std::uint32_t>(codes.dims));
    out.u8(static_cast<std::uint8_t>(codes.bits));
    out.raw(codes.payload);
    detail::dump(out.buffer(), path);
}

Qrels parse_qrels(const std::string& text) {
    Qrels qrels;
    std::set<std::pair<std::string, std::string>> seen;
    for_each_line(text, [&](std::size_t line, const std::vector<std::string>& fields) {
        const auto where = "qrels line " + std::to_string(line);
        if (fields.size() != 4) {
            throw Error(ErrorCode::Parse, where + ": expected 4 fields, got " +
                                              std::to_string(fields.size()));
        }
        int relevance = 0;
        if (!parse_number(fields[3], relevance)) {
            throw Error(ErrorCode::Parse, where + ": relevance \"" + fields[3] + "\" is not an integer");
        }
        if (relevance < 0) {
            throw Error(ErrorCode::Validation, where + ": negative relevance " + fields[3]);
        }
        if (!seen.emplace(fields[0], fields[2]).second) {
            throw Error(ErrorCode::Validation,
                        where + ": duplicate judgment for (" + fields[0] + ", " + fields[2] + ")");
        }
        qrels.entries.push_back({fields[0], fields[2], relevance});
    });
    return qrels;
}

Qrels read_qrels(const std::filesystem::path& path) {
    try {
        return parse_qrels(detail::slurp_text(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Io) {
            throw;
        }
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

std::string format_qrels(const Qrels& qrels) {
    std::string out;
    for (const auto& e : qrels.entries) {
        out += e.query_id + " 0 " + e.doc_id + " " + std::to_string(e.relevance) + "\n";
    }
    return out;
}

void write_qrels(const Qrels& qrels, const std::filesystem::path& path) {
    const auto text = format_qrels(qrels);
    detail::dump(text, path);
}

void validate_run(const RunFile& run) {
    std::map<std::string, std::vector<const RunEntry*>> by_query;
    for (const auto& e : run.entries) {
        by_query[e.query_id].push_back(&e);
    }
    for (auto& [query, entries] : by_query) {
        std::sort(entries.begin(), entries.end(),
                  [](const RunEntry* a, const RunEntry* b) { return a->rank < b->rank; });
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i]->rank != static_cast<int>(i + 1)) {
                throw Error(ErrorCode::Validation,
                            "run query " + query + ": ranks are not contiguous from 1 (found rank " +
                                std::to_string(entries[i]->rank) + " at position " +
                                std::to_string(i + 1) + ")");
            }
            if (i > 0 && entries[i]->score > entries[i - 1]->score) {
                throw Error(ErrorCode::Validation,
                            "run query " + query + ": score increases from rank " +
                                std::to_string(i) + " to rank " + std::to_string(i + 1));
            }
        }
    }
}

RunFile parse_run(const std::string& text) {
    RunFile run;
    for_each_line(text, [&](std::size_t line, const std::vector<std::string>& fields) {
        const auto where = "run line " + std::to_string(line);
        if (fields.size() != 6) {
            throw Error(ErrorCode::Parse, where + ": expected 6 fields, got " +
                                              std::to_string(fields.size()));
        }
        RunEntry e{fields[0], fields[2], 0, 0.0, fields[5]};
        if (!parse_number(fields[3], e.rank)) {
            throw Error(ErrorCode::Parse, where + ": rank \"" + fields[3] + "\" is not an integer");
        }
        if (!parse_double(fields[4], e.score)) {
            throw Error(ErrorCode::Parse, where + ": score \"" + fields[4] + "\" is not a finite number");
        }
        run.entries.push_back(std::move(e));
    });
    validate_run(run);
    return run;
}

RunFile read_run(const std::filesystem::path& path) {
    try {
        return parse_run(detail::slurp_text(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Io) {
            throw;
        }
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

std::string format_run(const RunFile& run) {
    std::string out;
    char score[64];
    for (const auto& e : run.entries) {
        std::snprintf(score, sizeof score, "%.6f", e.score);
        out += e.query_id + " Q0 " + e.doc_id + " " + std::to_string(e.rank) + " " + score + " " +
               e.tag + "\n";
    }
    return out;
}

void write_run(const RunFile& run, const std::filesystem::path& path) {
    validate_run(run);
    detail::dump(format_run(run), path);
}

std::vector<std::string> read_ids(const std::filesystem::path& path) {
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for_each_line(detail::slurp_text(path), [&](std::size_t line, const std::vector<std::string>& fields) {
        if (fields.size() != 1) {
            throw Error(ErrorCode::Parse, path.string() + " line " + std::to_string(line) +
                                              ": expected a single identifier");
        }
        if (!seen.insert(fields[0]).second) {
            throw Error(ErrorCode::Validation, path.string() + " line " + std::to_string(line) +
                                                   ": duplicate id " + fields[0]);
        }
        ids.push_back(fields[0]);
    });
    return ids;
}

void write_ids(const std::vector<std::string>& ids, const std::filesystem::path& path) {
    std::string text;
    for (const auto& id : ids) {
        text += id + "\n";
    }
    detail::dump(text, path);
}

}  // namespace embfuse
