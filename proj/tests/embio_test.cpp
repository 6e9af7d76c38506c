#include "embfuse/embio.hpp"
#include "embfuse/error.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

using namespace embfuse;
using embfuse::testing::random_matrix;
using embfuse::testing::TempDir;
using embfuse::testing::code_of;

namespace {

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream(path, std::ios::binary) << bytes;
}

std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string le(std::uint64_t v, int n) {
    std::string out;
    for (int i = 0; i < n; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    return out;
}

std::string embf_header(std::uint64_t rows, std::uint32_t dims, std::uint8_t dtype = 0) {
    return "EMBF" + le(1, 4) + le(rows, 8) + le(dims, 4) + le(dtype, 1);
}

std::string f32(float v) { return le(std::bit_cast<std::uint32_t>(v), 4); }

}  // namespace

TEST_CASE("hand-written EMBF file reads back exactly") {
    TempDir dir("embio_hand");
    std::string bytes = embf_header(2, 3);
    for (float v : {1.f, 0.f, 0.f, 0.f, 1.f, 0.f}) {
        bytes += f32(v);
    }
    write_bytes(dir / "m.embf", bytes);
    CHECK(read_embeddings(dir / "m.embf") == EmbeddingMatrix(2, 3, {1, 0, 0, 0, 1, 0}));

    // The writer produces the same bytes.
    write_embeddings(EmbeddingMatrix(2, 3, {1, 0, 0, 0, 1, 0}), dir / "w.embf");
    CHECK(read_bytes(dir / "w.embf") == bytes);
}

TEST_CASE("EMBF round trip is bit exact") {
    TempDir dir("embio_roundtrip");
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto m = random_matrix(100, 384, seed);
        m(0, 0) = -0.0f;
        m(1, 1) = std::numeric_limits<float>::denorm_min();
        m(2, 2) = std::numeric_limits<float>::max();
        write_embeddings(m, dir / "m.embf");
        const auto back = read_embeddings(dir / "m.embf");
        REQUIRE(back.rows() == m.rows());
        REQUIRE(back.dims() == m.dims());
        for (std::size_t i = 0; i < m.data().size(); ++i) {
            CHECK(std::bit_cast<std::uint32_t>(back.data()[i]) == std::bit_cast<std::uint32_t>(m.data()[i]));
        }
    }
}

TEST_CASE("EMBF error paths") {
    TempDir dir("embio_errors");
    write_bytes(dir / "short.embf", embf_header(1, 4) + std::string(12, '\0'));
    CHECK(code_of([&] { read_embeddings(dir / "short.embf"); }) == ErrorCode::Corruption);

    write_bytes(dir / "long.embf", embf_header(1, 1) + std::string(8, '\0'));
    CHECK(code_of([&] { read_embeddings(dir / "long.embf"); }) == ErrorCode::Corruption);

    write_bytes(dir / "magic.embf", "EMBX" + embf_header(0, 1).substr(4));
    CHECK(code_of([&] { read_embeddings(dir / "magic.embf"); }) == ErrorCode::Format);

    write_bytes(dir / "dtype.embf", embf_header(1, 1, 1) + std::string(4, '\0'));
    CHECK(code_of([&] { read_embeddings(dir / "dtype.embf"); }) == ErrorCode::UnsupportedDtype);

    write_bytes(dir / "header.embf", "EMBF" + le(1, 4));
    CHECK(code_of([&] { read_embeddings(dir / "header.embf"); }) == ErrorCode::Corruption);

    CHECK(code_of([&] { read_embeddings(dir / "missing.embf"); }) == ErrorCode::Io);

    auto bad = random_matrix(2, 2, 1);
    bad(1, 0) = std::nanf("");
    CHECK(code_of([&] { write_embeddings(bad, dir / "nan.embf"); }) == ErrorCode::NonFinite);
    CHECK_FALSE(std::filesystem::exists(dir / "nan.embf"));

    CHECK(code_of([&] { write_embeddings(random_matrix(2, 2, 1), dir.path() / "no_dir" / "x.embf"); }) ==
          ErrorCode::Io);
}

TEST_CASE("empty corpus writes a valid header") {
    TempDir dir("embio_empty");
    write_embeddings(EmbeddingMatrix(0, 0), dir / "empty.embf");
    const auto header = read_embeddings_header(dir / "empty.embf");
    CHECK(header.rows == 0);
    CHECK(header.dims == 1);
    CHECK(read_embeddings(dir / "empty.embf").rows() == 0);

    write_embeddings(EmbeddingMatrix(0, 384), dir / "empty384.embf");
    CHECK(read_embeddings_header(dir / "empty384.embf").dims == 384);
}

TEST_CASE("code packing is MSB first with per-row padding") {
    QuantizedCodes codes{2, 3, 3, {0b101, 0b011, 0b111, 0, 1, 2}};
    const auto packed = pack_codes(codes);
    CHECK(packed.row_bytes() == 2);
    REQUIRE(packed.payload.size() == 4);
    // row 0: 101 011 111 -> 10101111 1(0000000)
    CHECK(packed.payload[0] == 0b10101111);
    CHECK(packed.payload[1] == 0b10000000);
    // row 1: 000 001 010 -> 00000101 0(0000000)
    CHECK(packed.payload[2] == 0b00000101);
    CHECK(packed.payload[3] == 0b00000000);
    CHECK(unpack_codes(packed) == codes);

    QuantizedCodes overflow{1, 1, 2, {4}};
    CHECK_THROWS_AS(pack_codes(overflow), Error);
}

TEST_CASE("property: unpack(pack(Q)) == Q for random codes at every width") {
    Rng rng(5);
    for (unsigned bits = 1; bits <= 8; ++bits) {
        for (int trial = 0; trial < 5; ++trial) {
            const std::size_t rows = 1 + rng.below(20);
            const std::size_t dims = 1 + rng.below(40);
            QuantizedCodes codes{rows, dims, bits, {}};
            for (std::size_t i = 0; i < rows * dims; ++i) {
                codes.symbols.push_back(static_cast<std::uint8_t>(rng.below(1u << bits)));
            }
            const auto packed = pack_codes(codes);
            CHECK(packed.payload.size() == rows * ((dims * bits + 7) / 8));
            CHECK(unpack_codes(packed) == codes);
        }
    }
}

TEST_CASE("EMBQ file round trip and validation") {
    TempDir dir("embio_embq");
    QuantizedCodes codes{3, 5, 4, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 15}};
    write_codes(codes, dir / "c.embq");
    CHECK(read_codes(dir / "c.embq") == codes);
    auto bytes = read_bytes(dir / "c.embq");
    CHECK(bytes.size() == 21 + 3 * 3);
    write_bytes(dir / "trunc.embq", bytes.substr(0, bytes.size() - 1));
    CHECK(code_of([&] { read_codes(dir / "trunc.embq"); }) == ErrorCode::Corruption);
    bytes[20] = 9;  // bits
    write_bytes(dir / "bits.embq", bytes);
    CHECK(code_of([&] { read_codes(dir / "bits.embq"); }) == ErrorCode::Format);
}

TEST_CASE("qrels parsing") {
    const auto q = parse_qrels("q1 0 d7 1\n\nq1 0 d8 0\nq2\t0\td7\t2\r\n");
    REQUIRE(q.entries.size() == 3);
    CHECK(q.entries[0] == QrelEntry{"q1", "d7", 1});
    CHECK(q.entries[2] == QrelEntry{"q2", "d7", 2});
    CHECK(parse_qrels(format_qrels(q)) == q);

    CHECK(code_of([] { parse_qrels("q1 0 d7 1\nq1 0 d7 1\n"); }) == ErrorCode::Validation);
    CHECK(code_of([] { parse_qrels("q1 0 d7 -1\n"); }) == ErrorCode::Validation);
    try {
        parse_qrels("q1 0 d7 1\nq1 0 d8\n");
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Parse);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK(code_of([] { parse_qrels("q1 0 d7 x\n"); }) == ErrorCode::Parse);
}

TEST_CASE("run files") {
    RunFile run;
    run.entries = {{"q1", "a", 1, 0.9, "t"}, {"q1", "b", 2, 0.5, "t"}, {"q1", "c", 3, 0.1, "t"}};
    CHECK(format_run(run) == "q1 Q0 a 1 0.900000 t\nq1 Q0 b 2 0.500000 t\nq1 Q0 c 3 0.100000 t\n");
    CHECK(parse_run(format_run(run)) == run);

    RunFile gap = run;
    gap.entries[2].rank = 4;
    CHECK(code_of([&] { validate_run(gap); }) == ErrorCode::Validation);

    RunFile rising = run;
    rising.entries[2].score = 0.95;
    CHECK(code_of([&] { validate_run(rising); }) == ErrorCode::Validation);
    CHECK(code_of([] { parse_run("q1 Q0 a 1 nope t\n"); }) == ErrorCode::Parse);
    CHECK(code_of([] { parse_run("q1 Q0 a 2 0.5 t\n"); }) == ErrorCode::Validation);
}

TEST_CASE("property: random runs round trip within 1e-6") {
    TempDir dir("embio_run");
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        RunFile run;
        const std::size_t queries = 1 + rng.below(5);
        for (std::size_t q = 0; q < queries; ++q) {
            const std::size_t depth = 1 + rng.below(10);
            double score = rng.uniform(-1.0, 1.0);
            for (std::size_t r = 0; r < depth; ++r) {
                run.entries.push_back({"q" + std::to_string(q), "d" + std::to_string(rng.below(1000)),
                                       static_cast<int>(r + 1), score, "tag"});
                score -= rng.uniform(0.0, 0.2);
            }
        }
        write_run(run, dir / "run.txt");
        const auto back = read_run(dir / "run.txt");
        REQUIRE(back.entries.size() == run.entries.size());
        for (std::size_t i = 0; i < run.entries.size(); ++i) {
            CHECK(back.entries[i].query_id == run.entries[i].query_id);
            CHECK(back.entries[i].doc_id == run.entries[i].doc_id);
            CHECK(back.entries[i].rank == run.entries[i].rank);
            CHECK(back.entries[i].tag == run.entries[i].tag);
            CHECK(std::abs(back.entries[i].score - run.entries[i].score) <= 1e-6);
        }
    }
}

TEST_CASE("id lists") {
    TempDir dir("embio_ids");
    write_ids({"a", "b", "c"}, dir / "ids.txt");
    CHECK(read_ids(dir / "ids.txt") == std::vector<std::string>{"a", "b", "c"});
    write_bytes(dir / "dup.txt", "a\nb\na\n");
    CHECK(code_of([&] { read_ids(dir / "dup.txt"); }) == ErrorCode::Validation);
}
