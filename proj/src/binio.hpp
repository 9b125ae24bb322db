#pragma once

// Little-endian byte encoding shared by the embedding and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "mkd/errors.hpp"

namespace mkd::binio {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline void put_f64(std::string& out, double f) { put_u64(out, std::bit_cast<std::uint64_t>(f)); }

/// Bounds-checked cursor; every failure names the file and byte offset.
class Reader {
public:
    Reader(std::string_view bytes, std::string file) : bytes_(bytes), file_(std::move(file)) {}

    std::uint64_t offset() const { return pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }
    const std::string& file() const { return file_; }

    std::string_view take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw IngestError(file_, pos_,
                              std::string("truncated while reading ") + what + " (need " +
                                  std::to_string(n) + " bytes, have " +
                                  std::to_string(bytes_.size() - pos_) + ")");
        }
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint32_t u32(const char* what) {
        auto s = take(4, what);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[i]);
        return v;
    }

    std::uint64_t u64(const char* what) {
        auto s = take(8, what);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[i]);
        return v;
    }

    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

    [[noreturn]] void fail(const std::string& msg, std::uint64_t at) const {
        throw IngestError(file_, at, msg);
    }

private:
    std::string_view bytes_;
    std::string file_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);

/// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::string& path, std::string_view bytes);

} // namespace mkd::binio
