#include "embfuse/quantizer.hpp"

#include "binary_io.hpp"
#include "embfuse/error.hpp"
#include "embfuse/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace embfuse {

namespace {

constexpr std::string_view kCalibrationMagic = "EMBC";
constexpr std::uint32_t kCalibrationVersion = 1;

void require_bits(unsigned bits) {
    if (bits < 1 || bits > 8) {
        throw Error(ErrorCode::Validation, "bits must be in [1, 8], got " + std::to_string(bits));
    }
}

// Lower and upper edge of bucket k: [min, t_1], (t_1, t_2], ..., (t_{L-1}, max].
std::pair<float, float> bucket_bounds(const QuantizerCalibration& cal, std::size_t j, std::size_t k) {
    const auto bp = cal.breakpoints_of(j);
    const float lo = k == 0 ? cal.minimum[j] : bp[k - 1];
    const float hi = k + 1 == cal.levels() ? cal.maximum[j] : bp[k];
    return {lo, hi};
}

}  // namespace

double percentile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) {
        throw Error(ErrorCode::Validation, "percentile of an empty sample");
    }
    const double pos = static_cast<double>(sorted.size() - 1) * q / 100.0;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

QuantizerCalibration calibrate(const EmbeddingMatrix& reference, unsigned bits) {
    require_bits(bits);
    require_finite(reference, "calibration reference");
    const std::size_t levels = std::size_t{1} << bits;
    if (reference.rows() < levels) {
        throw Error(ErrorCode::Validation, "calibration with " + std::to_string(bits) +
                                               " bits needs at least " + std::to_string(levels) +
                                               " reference rows, got " +
                                               std::to_string(reference.rows()));
    }
    QuantizerCalibration cal;
    cal.dims = reference.dims();
    cal.bits = bits;
    cal.minimum.resize(cal.dims);
    cal.maximum.resize(cal.dims);
    cal.breakpoints.resize(cal.dims * (levels - 1));
    cal.bucket_reps.resize(cal.dims * levels);

    const std::size_t n = reference.rows();
    parallel_for(cal.dims, [&](std::size_t j) {
        std::vector<double> column(n);
        for (std::size_t i = 0; i < n; ++i) {
            column[i] = reference(i, j);
        }
        std::sort(column.begin(), column.end());
        cal.minimum[j] = static_cast<float>(column.front());
        cal.maximum[j] = static_cast<float>(column.back());
        float* bp = cal.breakpoints.data() + j * (levels - 1);
        for (std::size_t k = 1; k < levels; ++k) {
            const double q = 100.0 * static_cast<double>(k) / static_cast<double>(levels);
            bp[k - 1] = static_cast<float>(percentile_sorted(column, q));
        }

        // Bucket means over the reference, assigned with the same indicator sum as quantize.
        std::vector<double> sum(levels, 0.0);
        std::vector<std::size_t> count(levels, 0);
        for (double v : column) {
            const auto k = quantize_value(cal, j, static_cast<float>(v));
            sum[k] += v;
            ++count[k];
        }
        float* reps = cal.bucket_reps.data() + j * levels;
        for (std::size_t k = 0; k < levels; ++k) {
            const auto [lo, hi] = bucket_bounds(cal, j, k);
            if (count[k] > 0) {
                reps[k] = static_cast<float>(sum[k] / static_cast<double>(count[k]));
            } else {
                reps[k] = static_cast<float>(0.5 * (static_cast<double>(lo) + hi));
                // Adjacent floats: the midpoint can round onto the open lower edge.
                if (k > 0 && reps[k] <= lo) {
                    reps[k] = hi;
                }
            }
        }
    });
    return cal;
}

std::uint8_t quantize_value(const QuantizerCalibration& cal, std::size_t j, float value) {
    unsigned symbol = 0;
    for (float t : cal.breakpoints_of(j)) {
        symbol += value > t ? 1u : 0u;
    }
    return static_cast<std::uint8_t>(symbol);
}

QuantizedCodes quantize(const QuantizerCalibration& cal, const EmbeddingMatrix& h) {
    if (h.dims() != cal.dims) {
        throw Error(ErrorCode::Dimension, "calibration covers " + std::to_string(cal.dims) +
                                              " dims, input has " + std::to_string(h.dims()));
    }
    QuantizedCodes codes{h.rows(), h.dims(), cal.bits, {}};
    codes.symbols.resize(h.rows() * h.dims());
    parallel_for(h.rows(), [&](std::size_t i) {
        const auto row = h.row(i);
        for (std::size_t j = 0; j < h.dims(); ++j) {
            codes.symbols[i * h.dims() + j] = quantize_value(cal, j, row[j]);
        }
    });
    return codes;
}

EmbeddingMatrix dequantize(const QuantizerCalibration& cal, const QuantizedCodes& codes) {
    if (codes.dims != cal.dims || codes.bits != cal.bits) {
        throw Error(ErrorCode::Dimension, "codes (" + std::to_string(codes.dims) + " dims, " +
                                              std::to_string(codes.bits) +
                                              " bits) do not match calibration (" +
                                              std::to_string(cal.dims) + " dims, " +
                                              std::to_string(cal.bits) + " bits)");
    }
    EmbeddingMatrix out(codes.rows, codes.dims);
    for (std::size_t i = 0; i < codes.rows; ++i) {
        auto row = out.row(i);
        for (std::size_t j = 0; j < codes.dims; ++j) {
            const auto symbol = codes.at(i, j);
            if (symbol >= cal.levels()) {
                throw Error(ErrorCode::Corruption, "symbol " + std::to_string(symbol) + " at row " +
                                                       std::to_string(i) + " exceeds " +
                                                       std::to_string(cal.bits) + "-bit range");
            }
            row[j] = cal.reps_of(j)[symbol];
        }
    }
    return out;
}

void write_calibration(const QuantizerCalibration& cal, const std::filesystem::path& path) {
    require_bits(cal.bits);
    detail::ByteWriter out;
    out.bytes(kCalibrationMagic);
    out.u32(kCalibrationVersion);
    out.u32(static_cast<std::uint32_t>(cal.dims));
    out.u8(static_cast<std::uint8_t>(cal.bits));
    for (std::size_t j = 0; j < cal.dims; ++j) {
        out.f32(cal.minimum[j]);
        out.f32(cal.maximum[j]);
        for (float t : cal.breakpoints_of(j)) {
            out.f32(t);
        }
        for (float r : cal.reps_of(j)) {
            out.f32(r);
        }
    }
    detail::dump(out.buffer(), path);
}

QuantizerCalibration read_calibration(const std::filesystem::path& path) {
    const auto data = detail::slurp(path);
    const auto context = path.string();
    detail::ByteReader in(data, context);
    detail::expect_magic(in, kCalibrationMagic, context);
    const auto version = in.u32();
    if (version != kCalibrationVersion) {
        throw Error(ErrorCode::Format, context + ": unsupported EMBC version " + std::to_string(version));
    }
    QuantizerCalibration cal;
    cal.dims = in.u32();
    cal.bits = in.u8();
    if (cal.bits < 1 || cal.bits > 8) {
        throw Error(ErrorCode::Format, context + ": bits must be in [1, 8]");
    }
    const std::size_t levels = cal.levels();
    const std::size_t per_dim = 2 + (levels - 1) + levels;
    if (in.remaining() != cal.dims * per_dim * 4) {
        in.corrupt("payload has " + std::to_string(in.remaining()) + " bytes, expected " +
                   std::to_string(cal.dims * per_dim * 4));
    }
    cal.minimum.resize(cal.dims);
    cal.maximum.resize(cal.dims);
    cal.breakpoints.resize(cal.dims * (levels - 1));
    cal.bucket_reps.resize(cal.dims * levels);
    for (std::size_t j = 0; j < cal.dims; ++j) {
        cal.minimum[j] = in.f32();
        cal.maximum[j] = in.f32();
        for (std::size_t k = 0; k + 1 < levels; ++k) {
            cal.breakpoints[j * (levels - 1) + k] = in.f32();
        }
        for (std::size_t k = 0; k < levels; ++k) {
            cal.bucket_reps[j * levels + k] = in.f32();
        }
    }
    return cal;
}

}  // namespace embfuse
