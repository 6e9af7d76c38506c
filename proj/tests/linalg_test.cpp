#include "embfuse/error.hpp"
#include "embfuse/linalg.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace embfuse;
using embfuse::testing::random_matrix;
using embfuse::testing::relative_error;

namespace {

// Naive double loops, kept independent of the library kernels.
double naive_dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += double(a[i]) * double(b[i]);
    }
    return s;
}

double naive_cosine(std::span<const float> a, std::span<const float> b) {
    return naive_dot(a, b) / (std::sqrt(naive_dot(a, a)) * std::sqrt(naive_dot(b, b)));
}

std::vector<EmbeddingMatrix> parts_of(std::initializer_list<EmbeddingMatrix> list) { return list; }

}  // namespace

TEST_CASE("concat joins rows in list order") {
    const EmbeddingMatrix a(2, 2, {1, 2, 3, 4});
    const EmbeddingMatrix b(2, 1, {5, 6});
    const auto parts = parts_of({a, b});
    const auto c = concat(std::span<const EmbeddingMatrix>(parts));
    CHECK(c == EmbeddingMatrix(2, 3, {1, 2, 5, 3, 4, 6}));

    const auto single = parts_of({a});
    CHECK(concat(std::span<const EmbeddingMatrix>(single)) == a);
}

TEST_CASE("concat of four 384-d sources is 1536-d") {
    std::vector<EmbeddingMatrix> sources;
    for (int s = 0; s < 4; ++s) {
        sources.push_back(random_matrix(5, 384, 10 + s));
    }
    CHECK(concat(std::span<const EmbeddingMatrix>(sources)).dims() == 1536);
}

TEST_CASE("concat rejects mismatched rows and empty lists") {
    const auto parts = parts_of({random_matrix(100, 3, 1), random_matrix(99, 3, 2)});
    try {
        concat(std::span<const EmbeddingMatrix>(parts));
        FAIL("expected dimension error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Dimension);
        CHECK(std::string(e.what()) == "row count mismatch: 100 vs 99");
    }
    CHECK_THROWS_AS(concat(std::span<const EmbeddingMatrix>()), Error);
}

TEST_CASE("concat is associative and truncation recovers the first part") {
    const auto a = random_matrix(7, 3, 1);
    const auto b = random_matrix(7, 4, 2);
    const auto c = random_matrix(7, 2, 3);
    const auto bc_parts = parts_of({b, c});
    const auto nested_parts = parts_of({a, concat(std::span<const EmbeddingMatrix>(bc_parts))});
    const auto flat_parts = parts_of({a, b, c});
    CHECK(concat(std::span<const EmbeddingMatrix>(nested_parts)) ==
          concat(std::span<const EmbeddingMatrix>(flat_parts)));
    const auto ab_parts = parts_of({a, b});
    CHECK(truncate(concat(std::span<const EmbeddingMatrix>(ab_parts)), a.dims()) == a);
}

TEST_CASE("cosine hand values") {
    CHECK(cosine({1.0, 0.0}, {0.0, 1.0}) == 0.0);
    CHECK(cosine({1.0, 1.0}, {1.0, 0.0}) == doctest::Approx(0.70710678).epsilon(1e-8));
    const std::vector<double> x{0.3, -2.0, 5.5};
    CHECK(cosine(x, x) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("cosine of a zero vector is an error") {
    try {
        cosine({0.0, 0.0}, {1.0, 0.0});
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UndefinedSimilarity);
    }
}

TEST_CASE("cosine is symmetric and scale invariant") {
    const auto m = random_matrix(40, 16, 7);
    for (std::size_t i = 0; i + 1 < m.rows(); i += 2) {
        const auto u = m.row(i);
        const auto v = m.row(i + 1);
        CHECK(cosine(u, v) == cosine(v, u));
        std::vector<float> scaled(u.begin(), u.end());
        for (auto& x : scaled) {
            x *= 3.7f;
        }
        CHECK(std::abs(cosine(std::span<const float>(scaled), v) - cosine(u, v)) < 1e-6);
    }
}

TEST_CASE("truncate copies the first k columns") {
    const EmbeddingMatrix m(1, 3, {1, 2, 3});
    CHECK(truncate(m, 2) == EmbeddingMatrix(1, 2, {1, 2}));
    CHECK(truncate(m, 3) == m);
    CHECK_THROWS_AS(truncate(m, 0), Error);
    CHECK_THROWS_AS(truncate(m, 4), Error);
}

TEST_CASE("cosine of truncated rows equals cosine of first-k slices") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto m = random_matrix(10, 8, 100 + seed);
        for (std::size_t k = 1; k <= 8; ++k) {
            const auto t = truncate(m, k);
            for (std::size_t i = 0; i < 10; ++i) {
                for (std::size_t j = 0; j < 10; ++j) {
                    const double expected = naive_cosine(m.row(i).first(k), m.row(j).first(k));
                    CHECK(relative_error(cosine(t.row(i), t.row(j)), expected) < 1e-12);
                }
            }
        }
    }
}

TEST_CASE("l2 normalization") {
    const EmbeddingMatrix m(1, 2, {3, 4});
    const auto n = l2_normalize_rows(m);
    CHECK(n(0, 0) == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(n(0, 1) == doctest::Approx(0.8).epsilon(1e-7));

    const auto r = random_matrix(50, 12, 3);
    const auto once = l2_normalize_rows(r);
    const auto twice = l2_normalize_rows(once);
    for (std::size_t i = 0; i < r.rows(); ++i) {
        CHECK(std::abs(l2_norm(once.row(i)) - 1.0) < 1e-6);
        for (std::size_t j = 0; j < r.dims(); ++j) {
            CHECK(std::abs(once(i, j) - twice(i, j)) < 1e-6);
        }
    }
    for (std::size_t i = 0; i + 1 < r.rows(); ++i) {
        CHECK(std::abs(dot(once.row(i), once.row(i + 1)) - naive_cosine(r.row(i), r.row(i + 1))) < 1e-6);
    }
}

TEST_CASE("normalizing a zero row names the row") {
    const EmbeddingMatrix m(3, 2, {1, 0, 0, 0, 0, 1});
    try {
        l2_normalize_rows(m);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Normalization);
        CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
}

TEST_CASE("reductions agree with a naive double loop") {
    const auto a = random_matrix(100, 64, 11);
    const auto b = random_matrix(100, 64, 12);
    const auto prod = matmul_nt(a, b);
    const auto gram = pairwise_cosine(a);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        CHECK(relative_error(l2_norm(a.row(i)), std::sqrt(naive_dot(a.row(i), a.row(i)))) < 1e-10);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double expected = naive_dot(a.row(i), b.row(j));
            CHECK(std::abs(prod(i, j) - expected) <= 1e-10 * std::max(1.0, std::abs(expected)));
            CHECK(std::abs(gram(i, j) - naive_cosine(a.row(i), a.row(j))) < 1e-10);
        }
    }
    const auto tn = matmul_tn(a, b);
    for (std::size_t i = 0; i < 64; i += 7) {
        for (std::size_t j = 0; j < 64; j += 5) {
            double expected = 0.0;
            for (std::size_t r = 0; r < a.rows(); ++r) {
                expected += double(a(r, i)) * double(b(r, j));
            }
            CHECK(std::abs(tn(i, j) - expected) <= 1e-10 * std::max(1.0, std::abs(expected)));
        }
    }
    std::vector<double> x(64);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = std::sin(double(i));
    }
    const auto y = matvec(a, x);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double expected = 0.0;
        for (std::size_t j = 0; j < 64; ++j) {
            expected += double(a(i, j)) * x[j];
        }
        CHECK(std::abs(y[i] - expected) <= 1e-10 * std::max(1.0, std::abs(expected)));
    }
}

TEST_CASE("matrix constructor checks the data length") {
    CHECK_THROWS_AS(EmbeddingMatrix(2, 3, std::vector<float>(5)), Error);
}
