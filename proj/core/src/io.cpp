#include "earvit/io.hpp"

#include <fstream>
#include <iterator>

#include "earvit/error.hpp"

namespace earvit {

std::string_view ByteReader::get_bytes(std::size_t n) {
    if (in_.size() - pos_ < n) fail("unexpected end of data");
    auto out = in_.substr(pos_, n);
    pos_ += n;
    return out;
}

std::string ByteReader::get_string(std::size_t max_len) {
    const std::uint32_t n = get_u32();
    if (n > max_len) fail("string length " + std::to_string(n) + " exceeds limit");
    return std::string(get_bytes(n));
}

std::uint64_t ByteReader::get_le(int width) {
    auto raw = get_bytes(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
    return v;
}

void ByteReader::fail(const std::string& why) const {
    throw FormatError(what_ + ": " + why + " at byte " + std::to_string(pos_));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace earvit
