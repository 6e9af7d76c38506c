#include "embfuse/lsh.hpp"

#include "binary_io.hpp"
#include "embfuse/error.hpp"
#include "embfuse/linalg.hpp"
#include "embfuse/parallel.hpp"
#include "embfuse/rng.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <string>

namespace embfuse {

namespace {
constexpr std::string_view kProjectorMagic = "EMBL";
constexpr std::uint32_t kProjectorVersion = 1;
}  // namespace

LshProjector::LshProjector(std::size_t d_in, std::size_t d_proj, std::uint64_t seed)
    : d_in_{d_in}, d_proj_{d_proj}, seed_{seed} {
    if (d_in < 1 || d_proj < 1) {
        throw Error(ErrorCode::Validation, "projector dimensions must be positive");
    }
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_proj));
    std::vector<float> values(d_proj * d_in);
    for (auto& v : values) {
        v = static_cast<float>(rng.normal() * scale);
    }
    projection_ = Matrix<float>(d_proj, d_in, std::move(values));
}

BitCodes project_and_binarize(const LshProjector& projector, const EmbeddingMatrix& m) {
    if (m.dims() != projector.d_in()) {
        throw Error(ErrorCode::Dimension, "projector expects " + std::to_string(projector.d_in()) +
                                              "-d input, got " + std::to_string(m.dims()));
    }
    BitCodes codes{m.rows(), projector.d_proj(), {}};
    const std::size_t row_bytes = codes.row_bytes();
    codes.packed.assign(m.rows() * row_bytes, 0);
    const auto& p = projector.projection();
    parallel_for(m.rows(), [&](std::size_t i) {
        const auto row = m.row(i);
        std::uint8_t* out = codes.packed.data() + i * row_bytes;
        for (std::size_t j = 0; j < projector.d_proj(); ++j) {
            if (dot(p.row(j), row) > 0.0) {
                out[j / 8] |= static_cast<std::uint8_t>(0x80u >> (j % 8));
            }
        }
    });
    return codes;
}

std::size_t hamming_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::Dimension, "bit rows of different lengths: " +
                                              std::to_string(a.size()) + " and " +
                                              std::to_string(b.size()) + " bytes");
    }
    std::size_t distance = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        distance += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(a[i] ^ b[i])));
    }
    return distance;
}

double hamming_similarity(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                          std::size_t d_proj) {
    if (a.size() != (d_proj + 7) / 8) {
        throw Error(ErrorCode::Dimension, "bit row length does not match d_proj " + std::to_string(d_proj));
    }
    const double h = static_cast<double>(hamming_distance(a, b));
    return std::cos(std::numbers::pi * h / static_cast<double>(d_proj));
}

double compression_factor(std::size_t d_in, std::size_t float_bits, std::size_t d_proj) {
    if (d_in == 0 || float_bits == 0 || d_proj == 0) {
        throw Error(ErrorCode::Validation, "compression factor needs positive arguments");
    }
    return static_cast<double>(d_in * float_bits) / static_cast<double>(d_proj);
}

PackedCodes to_packed(const BitCodes& codes) {
    return {codes.rows, codes.bits_per_row, 1, codes.packed};
}

BitCodes from_packed(const PackedCodes& packed) {
    if (packed.bits != 1) {
        throw Error(ErrorCode::Format, "LSH codes must be stored with 1 bit per symbol, got " +
                                           std::to_string(packed.bits));
    }
    return {packed.rows, packed.dims, packed.payload};
}

void write_projector(const LshProjector& projector, const std::filesystem::path& path) {
    detail::ByteWriter out;
    out.bytes(kProjectorMagic);
    out.u32(kProjectorVersion);
    out.u32(static_cast<std::uint32_t>(projector.d_in()));
    out.u32(static_cast<std::uint32_t>(projector.d_proj()));
    out.u64(projector.seed());
    detail::dump(out.buffer(), path);
}

LshProjector read_projector(const std::filesystem::path& path) {
    const auto data = detail::slurp(path);
    const auto context = path.string();
    detail::ByteReader in(data, context);
    detail::expect_magic(in, kProjectorMagic, context);
    const auto version = in.u32();
    if (version != kProjectorVersion) {
        throw Error(ErrorCode::Format, context + ": unsupported EMBL version " + std::to_string(version));
    }
    const auto d_in = in.u32();
    const auto d_proj = in.u32();
    const auto seed = in.u64();
    if (in.remaining() != 0) {
        in.corrupt("trailing bytes after projector descriptor");
    }
    return {d_in, d_proj, seed};
}

}  // namespace embfuse
