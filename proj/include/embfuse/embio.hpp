#pragma once

#include "embfuse/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace embfuse {

// EMBF: magic "EMBF", version u32, rows u64, dims u32, dtype u8, then
// rows*dims little-endian float32 values, row-major. All integers LE.
inline constexpr std::uint32_t kEmbfVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 0;
inline constexpr std::size_t kEmbfHeaderBytes = 21;

struct EmbfHeader {
    std::uint32_t version{kEmbfVersion};
    std::uint64_t rows{0};
    std::uint32_t dims{1};
    std::uint8_t dtype{kDtypeFloat32};
};

EmbfHeader read_embeddings_header(const std::filesystem::path& path);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
/// Rejects non-finite entries. A matrix with zero dims is written with dims = 1.
void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);

// EMBQ: magic "EMBQ", version u32, rows u64, dims u32, bits u8, then each row
// packed MSB-first into ceil(dims * bits / 8) bytes.
inline constexpr std::uint32_t kEmbqVersion = 1;

/// Unpacked b-bit symbols, one byte per symbol.
struct QuantizedCodes {
    std::size_t rows{0};
    std::size_t dims{0};
    unsigned bits{1};
    std::vector<std::uint8_t> symbols;

    std::uint8_t at(std::size_t i, std::size_t j) const { return symbols[i * dims + j]; }
    bool operator==(const QuantizedCodes&) const = default;
};

/// Bit-packed symbols exactly as stored in the EMBQ payload.
struct PackedCodes {
    std::size_t rows{0};
    std::size_t dims{0};
    unsigned bits{1};
    std::vector<std::uint8_t> payload;

    std::size_t row_bytes() const { return (dims * bits + 7) / 8; }
    bool operator==(const PackedCodes&) const = default;
};

/// Throws Validation if a symbol does not fit in `bits`.
PackedCodes pack_codes(const QuantizedCodes& codes);
QuantizedCodes unpack_codes(const PackedCodes& packed);

PackedCodes read_packed_codes(const std::filesystem::path& path);
void write_packed_codes(const PackedCodes& codes, const std::filesystem::path& path);

inline QuantizedCodes read_codes(const std::filesystem::path& path) {
    return unpack_codes(read_packed_codes(path));
}
inline void write_codes(const QuantizedCodes& codes, const std::filesystem::path& path) {
    write_packed_codes(pack_codes(codes), path);
}

// TREC qrels: "qid 0 docid rel" per line.
struct QrelEntry {
    std::string query_id;
    std::string doc_id;
    int relevance{0};
    bool operator==(const QrelEntry&) const = default;
};

struct Qrels {
    std::vector<QrelEntry> entries;
    bool operator==(const Qrels&) const = default;
};

Qrels parse_qrels(const std::string& text);
Qrels read_qrels(const std::filesystem::path& path);
std::string format_qrels(const Qrels& qrels);
void write_qrels(const Qrels& qrels, const std::filesystem::path& path);

// TREC run: "qid Q0 docid rank score tag" per line; scores printed with 6 decimals.
struct RunEntry {
    std::string query_id;
    std::string doc_id;
    int rank{1};
    double score{0.0};
    std::string tag;
    bool operator==(const RunEntry&) const = default;
};

struct RunFile {
    std::vector<RunEntry> entries;
    bool operator==(const RunFile&) const = default;
};

/// Ranks per query must be exactly 1..k, scores non-increasing with rank.
void validate_run(const RunFile& run);
RunFile parse_run(const std::string& text);
RunFile read_run(const std::filesystem::path& path);
std::string format_run(const RunFile& run);
void write_run(const RunFile& run, const std::filesystem::path& path);

/// Newline-delimited identifiers, one per matrix row.
std::vector<std::string> read_ids(const std::filesystem::path& path);
void write_ids(const std::vector<std::string>& ids, const std::filesystem::path& path);

}  // namespace embfuse
