#include "embfuse/error.hpp"
#include "embfuse/linalg.hpp"
#include "embfuse/quantizer.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>

using namespace embfuse;
using embfuse::testing::code_of;
using embfuse::testing::random_matrix;
using embfuse::testing::TempDir;

namespace {

EmbeddingMatrix column(std::vector<float> values) {
    const auto n = values.size();
    return EmbeddingMatrix(n, 1, std::move(values));
}

// Reference percentile: rank (n - 1) q / 100, interpolated between neighbours.
double reference_percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = (static_cast<double>(v.size()) - 1.0) * q / 100.0;
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

TEST_CASE("one-bit calibration hand example") {
    const auto cal = calibrate(column({4, 1, 3, 2}), 1);
    REQUIRE(cal.breakpoints_of(0).size() == 1);
    CHECK(cal.breakpoints_of(0)[0] == 2.5f);
    CHECK(cal.minimum[0] == 1.0f);
    CHECK(cal.maximum[0] == 4.0f);
    CHECK(quantize_value(cal, 0, 3.0f) == 1);
    CHECK(quantize_value(cal, 0, 2.0f) == 0);
    CHECK(quantize_value(cal, 0, 2.5f) == 0);
    // Bucket means of {1, 2} and {3, 4}.
    CHECK(cal.reps_of(0)[0] == 1.5f);
    CHECK(cal.reps_of(0)[1] == 3.5f);
}

TEST_CASE("two-bit calibration hand example") {
    const auto cal = calibrate(column({1, 2, 3, 4, 5, 6, 7, 8}), 2);
    const auto bp = cal.breakpoints_of(0);
    REQUIRE(bp.size() == 3);
    CHECK(bp[0] == 2.75f);
    CHECK(bp[1] == 4.5f);
    CHECK(bp[2] == 6.25f);
    CHECK(quantize_value(cal, 0, 5.0f) == 2);
    CHECK(quantize_value(cal, 0, 1.0f) == 0);
    CHECK(quantize_value(cal, 0, 7.0f) == 3);
    CHECK(quantize_value(cal, 0, 100.0f) == 3);
    CHECK(quantize_value(cal, 0, -100.0f) == 0);
}

TEST_CASE("percentiles match a reference implementation") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(1 + rng.below(50));
        for (auto& x : v) x = rng.normal();
        std::vector<double> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        for (double q : {0.0, 12.5, 25.0, 50.0, 99.0, 100.0}) {
            CHECK(percentile_sorted(sorted, q) == doctest::Approx(reference_percentile(v, q)).epsilon(1e-12));
        }
    }
}

TEST_CASE("constant dimension dequantizes to the constant") {
    EmbeddingMatrix ref(20, 2);
    for (std::size_t i = 0; i < 20; ++i) {
        ref(i, 0) = 0.75f;
        ref(i, 1) = static_cast<float>(i);
    }
    for (unsigned bits : {1u, 2u, 4u}) {
        const auto cal = calibrate(ref, bits);
        const auto back = dequantize(cal, quantize(cal, ref));
        for (std::size_t i = 0; i < 20; ++i) CHECK(back(i, 0) == 0.75f);
    }
}

TEST_CASE("buckets hold equal mass on the reference") {
    const auto ref = random_matrix(20000, 3, 11);
    for (unsigned bits : {1u, 2u, 4u, 8u}) {
        const auto cal = calibrate(ref, bits);
        const auto codes = quantize(cal, ref);
        const double expected = 20000.0 / static_cast<double>(cal.levels());
        for (std::size_t j = 0; j < 3; ++j) {
            std::vector<std::size_t> counts(cal.levels());
            for (std::size_t i = 0; i < ref.rows(); ++i) ++counts[codes.at(i, j)];
            for (auto c : counts) CHECK(std::abs(static_cast<double>(c) - expected) <= 0.02 * expected + 1.0);
        }
    }
}

TEST_CASE("symbols are monotone and reps lie in their bucket") {
    const auto ref = random_matrix(2000, 4, 12);
    const auto probe = random_matrix(500, 4, 13);
    for (unsigned bits : {1u, 3u, 8u}) {
        const auto cal = calibrate(ref, bits);
        for (std::size_t j = 0; j < 4; ++j) {
            std::vector<float> col;
            for (std::size_t i = 0; i < probe.rows(); ++i) col.push_back(probe(i, j));
            std::sort(col.begin(), col.end());
            for (std::size_t i = 1; i < col.size(); ++i) {
                CHECK(quantize_value(cal, j, col[i - 1]) <= quantize_value(cal, j, col[i]));
            }
            const auto reps = cal.reps_of(j);
            for (std::size_t s = 0; s < reps.size(); ++s) {
                CHECK(quantize_value(cal, j, reps[s]) == s);
            }
        }
    }
}

TEST_CASE("quantize is idempotent through dequantize") {
    const auto ref = random_matrix(3000, 5, 14);
    const auto h = random_matrix(300, 5, 15);
    for (unsigned bits : {1u, 2u, 4u, 8u}) {
        const auto cal = calibrate(ref, bits);
        const auto codes = quantize(cal, h);
        CHECK(quantize(cal, dequantize(cal, codes)) == codes);
    }
}

TEST_CASE("eight bits preserve cosine") {
    const auto ref = random_matrix(10000, 64, 16);
    const auto cal = calibrate(ref, 8);
    const auto back = dequantize(cal, quantize(cal, ref));
    double mean = 0;
    std::size_t below = 0;
    for (std::size_t i = 0; i < ref.rows(); ++i) {
        const double c = cosine(ref.row(i), back.row(i));
        mean += c;
        below += c <= 0.99;
    }
    mean /= static_cast<double>(ref.rows());
    CHECK(mean > 0.99);
    // Rows with extreme coordinates land in the wide tail buckets.
    CHECK(below * 100 <= ref.rows());
}

TEST_CASE("calibration input validation") {
    CHECK(code_of([] { calibrate(random_matrix(10, 2, 1), 0); }) == ErrorCode::Validation);
    CHECK(code_of([] { calibrate(random_matrix(10, 2, 1), 9); }) == ErrorCode::Validation);
    CHECK(code_of([] { calibrate(random_matrix(3, 2, 1), 2); }) == ErrorCode::Validation);
    const auto cal = calibrate(random_matrix(10, 2, 1), 1);
    CHECK(code_of([&] { quantize(cal, random_matrix(4, 3, 1)); }) == ErrorCode::Dimension);

    QuantizedCodes bad{1, 2, 1, {0, 2}};
    CHECK(code_of([&] { dequantize(cal, bad); }) == ErrorCode::Corruption);
}

TEST_CASE("calibration file round trip") {
    TempDir dir("quant_cal");
    const auto cal = calibrate(random_matrix(500, 7, 17), 4);
    write_calibration(cal, dir / "c.embc");
    CHECK(read_calibration(dir / "c.embc") == cal);

    std::ofstream(dir / "c.embc", std::ios::binary | std::ios::app) << 'x';
    CHECK(code_of([&] { read_calibration(dir / "c.embc"); }) == ErrorCode::Corruption);
    std::ofstream(dir / "bad.embc", std::ios::binary) << "EMBF";
    CHECK(code_of([&] { read_calibration(dir / "bad.embc"); }) == ErrorCode::Format);
}
