#include "embfuse/linalg.hpp"

#include "embfuse/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace embfuse {

template <typename T>
Matrix<T> concat(std::span<const Matrix<T>> parts) {
    if (parts.empty()) {
        throw Error(ErrorCode::Dimension, "concat needs at least one part");
    }
    const std::size_t rows = parts.front().rows();
    std::size_t dims = 0;
    for (const auto& part : parts) {
        if (part.rows() != rows) {
            throw Error(ErrorCode::Dimension, "row count mismatch: " + std::to_string(rows) +
                                                  " vs " + std::to_string(part.rows()));
        }
        dims += part.dims();
    }
    Matrix<T> out(rows, dims);
    for (std::size_t i = 0; i < rows; ++i) {
        auto dst = out.row(i).begin();
        for (const auto& part : parts) {
            const auto src = part.row(i);
            dst = std::copy(src.begin(), src.end(), dst);
        }
    }
    return out;
}

template <typename T>
Matrix<T> truncate(const Matrix<T>& m, std::size_t k) {
    if (k < 1 || k > m.dims()) {
        throw Error(ErrorCode::Dimension, "truncation to " + std::to_string(k) +
                                              " columns out of range [1, " +
                                              std::to_string(m.dims()) + "]");
    }
    Matrix<T> out(m.rows(), k);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto src = m.row(i).first(k);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

template <typename T, typename U>
double dot(std::span<const T> u, std::span<const U> v) {
    if (u.size() != v.size()) {
        throw Error(ErrorCode::Dimension, "dot of vectors with lengths " +
                                              std::to_string(u.size()) + " and " +
                                              std::to_string(v.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        acc += static_cast<double>(u[i]) * static_cast<double>(v[i]);
    }
    return acc;
}

template <typename T>
double l2_norm(std::span<const T> u) {
    return std::sqrt(dot(u, u));
}

template <typename T, typename U>
double cosine(std::span<const T> u, std::span<const U> v) {
    const double uv = dot(u, v);
    const double nu = l2_norm(u);
    const double nv = l2_norm(v);
    if (nu == 0.0 || nv == 0.0) {
        throw Error(ErrorCode::UndefinedSimilarity, "cosine of a zero vector is undefined");
    }
    return uv / (nu * nv);
}

double cosine(const std::vector<double>& u, const std::vector<double>& v) {
    return cosine(std::span<const double>(u), std::span<const double>(v));
}

template <typename T>
Matrix<T> l2_normalize_rows(const Matrix<T>& m) {
    Matrix<T> out(m.rows(), m.dims());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double norm = l2_norm(m.row(i));
        if (norm == 0.0) {
            throw Error(ErrorCode::Normalization,
                        "cannot normalize zero row " + std::to_string(i));
        }
        const auto src = m.row(i);
        auto dst = out.row(i);
        for (std::size_t j = 0; j < m.dims(); ++j) {
            dst[j] = static_cast<T>(static_cast<double>(src[j]) / norm);
        }
    }
    return out;
}

template <typename T, typename U>
MatrixD matmul_nt(const Matrix<T>& a, const Matrix<U>& b) {
    if (a.dims() != b.dims()) {
        throw Error(ErrorCode::Dimension, "matmul_nt inner dimensions " +
                                              std::to_string(a.dims()) + " and " +
                                              std::to_string(b.dims()));
    }
    MatrixD out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            out(i, j) = dot(ai, b.row(j));
        }
    }
    return out;
}

template <typename T, typename U>
MatrixD matmul_tn(const Matrix<T>& a, const Matrix<U>& b) {
    if (a.rows() != b.rows()) {
        throw Error(ErrorCode::Dimension, "matmul_tn row counts " + std::to_string(a.rows()) +
                                              " and " + std::to_string(b.rows()));
    }
    MatrixD out(a.dims(), b.dims());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto ar = a.row(r);
        const auto br = b.row(r);
        for (std::size_t i = 0; i < a.dims(); ++i) {
            const double scale = static_cast<double>(ar[i]);
            if (scale == 0.0) {
                continue;
            }
            auto dst = out.row(i);
            for (std::size_t j = 0; j < b.dims(); ++j) {
                dst[j] += scale * static_cast<double>(br[j]);
            }
        }
    }
    return out;
}

template <typename T>
std::vector<double> matvec(const Matrix<T>& m, std::span<const double> x) {
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        out[i] = dot(m.row(i), x);
    }
    return out;
}

template <typename T>
MatrixD pairwise_cosine(const Matrix<T>& m) {
    const std::size_t n = m.rows();
    std::vector<double> inv_norm(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double norm = l2_norm(m.row(i));
        if (norm == 0.0) {
            throw Error(ErrorCode::UndefinedSimilarity,
                        "row " + std::to_string(i) + " is zero; cosine undefined");
        }
        inv_norm[i] = 1.0 / norm;
    }
    MatrixD out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        out(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double c = dot(m.row(i), m.row(j)) * inv_norm[i] * inv_norm[j];
            out(i, j) = c;
            out(j, i) = c;
        }
    }
    return out;
}

template Matrix<float> concat(std::span<const Matrix<float>>);
template Matrix<double> concat(std::span<const Matrix<double>>);
template Matrix<float> truncate(const Matrix<float>&, std::size_t);
template Matrix<double> truncate(const Matrix<double>&, std::size_t);
template Matrix<float> l2_normalize_rows(const Matrix<float>&);
template Matrix<double> l2_normalize_rows(const Matrix<double>&);
template double dot(std::span<const float>, std::span<const float>);
template double dot(std::span<const double>, std::span<const double>);
template double dot(std::span<const float>, std::span<const double>);
template double dot(std::span<const double>, std::span<const float>);
template double l2_norm(std::span<const float>);
template double l2_norm(std::span<const double>);
template double cosine(std::span<const float>, std::span<const float>);
template double cosine(std::span<const double>, std::span<const double>);
template double cosine(std::span<const float>, std::span<const double>);
template double cosine(std::span<const double>, std::span<const float>);
template MatrixD matmul_nt(const Matrix<float>&, const Matrix<float>&);
template MatrixD matmul_nt(const Matrix<double>&, const Matrix<double>&);
template MatrixD matmul_nt(const Matrix<float>&, const Matrix<double>&);
template MatrixD matmul_nt(const Matrix<double>&, const Matrix<float>&);
template MatrixD matmul_tn(const Matrix<float>&, const Matrix<float>&);
template MatrixD matmul_tn(const Matrix<double>&, const Matrix<double>&);
template MatrixD matmul_tn(const Matrix<float>&, const Matrix<double>&);
template MatrixD matmul_tn(const Matrix<double>&, const Matrix<float>&);
template std::vector<double> matvec(const Matrix<float>&, std::span<const double>);
template std::vector<double> matvec(const Matrix<double>&, std::span<const double>);
template MatrixD pairwise_cosine(const Matrix<float>&);
template MatrixD pairwise_cosine(const Matrix<double>&);

}  // namespace embfuse
