#include "embfuse/matrix.hpp"

#include "embfuse/error.hpp"

#include <cmath>
#include <string>

namespace embfuse {

template <typename T>
Matrix<T>::Matrix(std::size_t rows, std::size_t dims, std::vector<T> data)
    : rows_{rows}, dims_{dims}, data_(std::move(data)) {
    if (data_.size() != rows_ * dims_) {
        throw Error(ErrorCode::Dimension,
                    "matrix data holds " + std::to_string(data_.size()) + " values, expected " +
                        std::to_string(rows_) + "x" + std::to_string(dims_));
    }
}

template <typename T>
bool all_finite(std::span<const T> values) {
    for (T v : values) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

template <typename T>
void require_finite(const Matrix<T>& m, const char* what) {
    const auto values = m.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw Error(ErrorCode::NonFinite, std::string(what) + ": non-finite value at row " +
                                                  std::to_string(i / m.dims()) + ", column " +
                                                  std::to_string(i % m.dims()));
        }
    }
}

template class Matrix<float>;
template class Matrix<double>;
template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);
template void require_finite<float>(const Matrix<float>&, const char*);
template void require_finite<double>(const Matrix<double>&, const char*);

}  // namespace embfuse
