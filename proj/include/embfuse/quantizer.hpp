#pragma once

#include "embfuse/embio.hpp"
#include "embfuse/matrix.hpp"

#include <cstddef>
#include <filesystem>
#include <vector>

namespace embfuse {

/// Per-dimension equal-mass break-points for b-bit scalar quantization.
///
/// For dimension j the break-points are the empirical percentiles at
/// 100 k / 2^b, k = 1 .. 2^b - 1, of the reference column (linear
/// interpolation between closest ranks). A value's symbol is the number of
/// break-points it strictly exceeds.
struct QuantizerCalibration {
    std::size_t dims{0};
    unsigned bits{1};
    std::vector<float> minimum;      // dims
    std::vector<float> maximum;      // dims
    std::vector<float> breakpoints;  // dims x (2^b - 1)
    std::vector<float> bucket_reps;  // dims x 2^b

    std::size_t levels() const { return std::size_t{1} << bits; }
    std::span<const float> breakpoints_of(std::size_t j) const {
        return {breakpoints.data() + j * (levels() - 1), levels() - 1};
    }
    std::span<const float> reps_of(std::size_t j) const {
        return {bucket_reps.data() + j * levels(), levels()};
    }
    bool operator==(const QuantizerCalibration&) const = default;
};

/// Linear-interpolation percentile, q in [0, 100], of already sorted values.
double percentile_sorted(std::span<const double> sorted, double q);

/// Requires reference.rows() >= 2^bits and 1 <= bits <= 8.
QuantizerCalibration calibrate(const EmbeddingMatrix& reference, unsigned bits);

/// Symbol of a single value in dimension j.
std::uint8_t quantize_value(const QuantizerCalibration& cal, std::size_t j, float value);
QuantizedCodes quantize(const QuantizerCalibration& cal, const EmbeddingMatrix& h);
/// Maps each symbol to its bucket representative.
EmbeddingMatrix dequantize(const QuantizerCalibration& cal, const QuantizedCodes& codes);

// EMBC: magic, version u32, dims u32, bits u8, then per dimension min, max,
// 2^b - 1 break-points and 2^b representatives as float32 LE.
void write_calibration(const QuantizerCalibration& cal, const std::filesystem::path& path);
QuantizerCalibration read_calibration(const std::filesystem::path& path);

}  // namespace embfuse
