#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>

namespace earvit {

// Little-endian encoder used by the checkpoint and embedding file formats.
class ByteWriter {
   public:
    void put_bytes(std::string_view bytes) { out_.append(bytes); }
    void put_u32(std::uint32_t v) { put_le(v, 4); }
    void put_i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v), 4); }
    void put_u64(std::uint64_t v) { put_le(v, 8); }
    void put_f32(float v) { put_le(std::bit_cast<std::uint32_t>(v), 4); }
    void put_f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
    void put_string(std::string_view s) {
        put_u32(static_cast<std::uint32_t>(s.size()));
        put_bytes(s);
    }

    const std::string& bytes() const { return out_; }
    std::string take() { return std::move(out_); }

   private:
    void put_le(std::uint64_t v, int width) {
        for (int i = 0; i < width; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    std::string out_;
};

// Bounds-checked little-endian decoder. Truncated input raises FormatError
// naming `what`.
class ByteReader {
   public:
    ByteReader(std::string_view bytes, std::string what) : in_(bytes), what_(std::move(what)) {}

    std::string_view get_bytes(std::size_t n);
    std::uint32_t get_u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::int32_t get_i32() { return static_cast<std::int32_t>(get_u32()); }
    std::uint64_t get_u64() { return get_le(8); }
    float get_f32() { return std::bit_cast<float>(get_u32()); }
    double get_f64() { return std::bit_cast<double>(get_u64()); }
    std::string get_string(std::size_t max_len = 1 << 20);

    bool at_end() const { return pos_ == in_.size(); }
    [[noreturn]] void fail(const std::string& why) const;

   private:
    std::uint64_t get_le(int width);

    std::string_view in_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace earvit
