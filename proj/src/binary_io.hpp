#pragma once

#include "embfuse/error.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace embfuse::detail {

// Little-endian encoders over a byte buffer.
class ByteWriter {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { uint(v, 4); }
    void u64(std::uint64_t v) { uint(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(std::span<const std::uint8_t> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

    const std::vector<char>& buffer() const { return buf_; }

private:
    void uint(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
        }
    }
    std::vector<char> buf_;
};

class ByteReader {
public:
    ByteReader(std::span<const char> data, std::string context)
        : data_{data}, context_{std::move(context)} {}

    std::string bytes(std::size_t n) {
        need(n);
        std::string out(data_.data() + pos_, n);
        pos_ += n;
        return out;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(uint(1)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
    std::uint64_t u64() { return uint(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }
    std::span<const char> take(std::size_t n) {
        need(n);
        auto out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    [[noreturn]] void corrupt(const std::string& what) const {
        throw Error(ErrorCode::Corruption, context_ + ": " + what);
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) {
            corrupt("truncated (needed " + std::to_string(n) + " more bytes at offset " +
                    std::to_string(pos_) + ", " + std::to_string(remaining()) + " available)");
        }
    }
    std::uint64_t uint(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const char> data_;
    std::string context_;
    std::size_t pos_{0};
};

inline std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open " + path.string() + " for reading");
    }
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw Error(ErrorCode::Io, "read failed for " + path.string());
    }
    return data;
}

inline std::string slurp_text(const std::filesystem::path& path) {
    const auto data = slurp(path);
    return {data.begin(), data.end()};
}

inline void dump(std::span<const char> data, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
    }
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) {
        throw Error(ErrorCode::Io, "write failed for " + path.string());
    }
}

inline void expect_magic(ByteReader& in, std::string_view magic, const std::string& context) {
    if (in.remaining() < magic.size() || in.bytes(magic.size()) != magic) {
        throw Error(ErrorCode::Format, context + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
}

}  // namespace embfuse::detail
