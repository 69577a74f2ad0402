#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace suslab::io {

// Little-endian primitives shared by the packed, dataset, and checkpoint
// formats. Doubles are moved as raw bit patterns, never re-rounded.

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw std::runtime_error("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw std::runtime_error("unexpected end of stream");
}

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    write_bytes(os, buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    read_bytes(is, buf, sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(v);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_le<std::uint64_t>(os, bits);
}

inline double read_f64(std::istream& is) {
    std::uint64_t bits = read_le<std::uint64_t>(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void write_magic(std::ostream& os, const char (&magic)[4]) {
    write_bytes(os, magic, 4);
}

inline void expect_magic(std::istream& is, const char (&magic)[4], const std::string& what) {
    char buf[4];
    read_bytes(is, buf, 4);
    if (std::memcmp(buf, magic, 4) != 0)
        throw std::runtime_error(what + ": bad magic");
}

}  // namespace suslab::io
