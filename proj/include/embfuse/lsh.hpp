#pragma once

#include "embfuse/embio.hpp"
#include "embfuse/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace embfuse {

/// Gaussian random projection (entries N(0, 1) / sqrt(d_proj)) regenerated from its seed.
class LshProjector {
public:
    LshProjector(std::size_t d_in, std::size_t d_proj, std::uint64_t seed);

    std::size_t d_in() const { return d_in_; }
    std::size_t d_proj() const { return d_proj_; }
    std::uint64_t seed() const { return seed_; }
    const Matrix<float>& projection() const { return projection_; }

private:
    std::size_t d_in_;
    std::size_t d_proj_;
    std::uint64_t seed_;
    Matrix<float> projection_;  // d_proj x d_in
};

/// Sign bits of projected rows, packed MSB-first with rows padded to whole bytes.
struct BitCodes {
    std::size_t rows{0};
    std::size_t bits_per_row{0};
    std::vector<std::uint8_t> packed;

    std::size_t row_bytes() const { return (bits_per_row + 7) / 8; }
    std::span<const std::uint8_t> row(std::size_t i) const {
        return {packed.data() + i * row_bytes(), row_bytes()};
    }
    bool bit(std::size_t i, std::size_t j) const {
        return (packed[i * row_bytes() + j / 8] >> (7 - j % 8)) & 1u;
    }
    bool operator==(const BitCodes&) const = default;
};

/// bit(i, j) = [(P row_i)_j > 0].
BitCodes project_and_binarize(const LshProjector& projector, const EmbeddingMatrix& m);

std::size_t hamming_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// SimHash cosine estimate cos(pi * hamming / d_proj), in [-1, 1].
double hamming_similarity(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                          std::size_t d_proj);

/// (d_in * float_bits) / d_proj.
double compression_factor(std::size_t d_in, std::size_t float_bits, std::size_t d_proj);

PackedCodes to_packed(const BitCodes& codes);
BitCodes from_packed(const PackedCodes& packed);

// EMBL: magic, version u32, d_in u32, d_proj u32, seed u64.
void write_projector(const LshProjector& projector, const std::filesystem::path& path);
LshProjector read_projector(const std::filesystem::path& path);

}  // namespace embfuse
