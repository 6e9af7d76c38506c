#pragma once

#include "embfuse/matrix.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace embfuse {

/// Horizontal concatenation in list order. All parts must share a row count.
template <typename T>
Matrix<T> concat(std::span<const Matrix<T>> parts);

/// First k columns, copied. Requires 1 <= k <= dims.
template <typename T>
Matrix<T> truncate(const Matrix<T>& m, std::size_t k);

/// Rows scaled to unit L2 norm. Zero rows raise Normalization with the row index.
template <typename T>
Matrix<T> l2_normalize_rows(const Matrix<T>& m);

// 64-bit accumulating kernels.

template <typename T, typename U>
double dot(std::span<const T> u, std::span<const U> v);

template <typename T>
double l2_norm(std::span<const T> u);

/// u.v / (|u| |v|). Zero vectors raise UndefinedSimilarity.
template <typename T, typename U>
double cosine(std::span<const T> u, std::span<const U> v);

/// Convenience overload for brace-initialized vectors.
double cosine(const std::vector<double>& u, const std::vector<double>& v);

/// A * B^T, i.e. out(i, j) = dot(a.row(i), b.row(j)).
template <typename T, typename U>
MatrixD matmul_nt(const Matrix<T>& a, const Matrix<U>& b);

/// A^T * B, out is a.dims() x b.dims().
template <typename T, typename U>
MatrixD matmul_tn(const Matrix<T>& a, const Matrix<U>& b);

/// m * x.
template <typename T>
std::vector<double> matvec(const Matrix<T>& m, std::span<const double> x);

/// B x B matrix of pairwise cosines between rows. Zero rows raise UndefinedSimilarity.
template <typename T>
MatrixD pairwise_cosine(const Matrix<T>& m);

}  // namespace embfuse
