#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace embfuse {

/// Dense row-major matrix. Rows are embeddings, columns are dimensions.
template <typename T>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t dims) : rows_{rows}, dims_{dims}, data_(rows * dims, T{}) {}
    /// Throws Dimension if data.size() != rows * dims.
    Matrix(std::size_t rows, std::size_t dims, std::vector<T> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dims() const noexcept { return dims_; }
    bool empty() const noexcept { return rows_ == 0; }

    std::span<const T> row(std::size_t i) const { return {data_.data() + i * dims_, dims_}; }
    std::span<T> row(std::size_t i) { return {data_.data() + i * dims_, dims_}; }

    T operator()(std::size_t i, std::size_t j) const { return data_[i * dims_ + j]; }
    T& operator()(std::size_t i, std::size_t j) { return data_[i * dims_ + j]; }

    std::span<const T> data() const noexcept { return data_; }
    std::span<T> data() noexcept { return data_; }
    std::vector<T> release() && { return std::move(data_); }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_{0};
    std::size_t dims_{0};
    std::vector<T> data_;
};

/// 32-bit storage type for embeddings on disk and in pipelines.
using EmbeddingMatrix = Matrix<float>;
/// 64-bit working matrix for training and gradients.
using MatrixD = Matrix<double>;

template <typename To, typename From>
Matrix<To> matrix_cast(const Matrix<From>& m) {
    std::vector<To> out(m.data().begin(), m.data().end());
    return Matrix<To>(m.rows(), m.dims(), std::move(out));
}

/// True iff every entry is finite.
template <typename T>
bool all_finite(std::span<const T> values);

/// Throws NonFinite naming the first offending (row, column).
template <typename T>
void require_finite(const Matrix<T>& m, const char* what);

}  // namespace embfuse
