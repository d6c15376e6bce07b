#pragma once

// Little-endian scalar encoding shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace splatlab::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline void write_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void write_f32(std::ostream& out, float v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) {
        throw std::runtime_error("unexpected end of binary stream");
    }
    return v;
}

inline std::uint8_t read_u8(std::istream& in) { return read_pod<std::uint8_t>(in); }
inline std::uint32_t read_u32(std::istream& in) { return read_pod<std::uint32_t>(in); }
inline std::uint64_t read_u64(std::istream& in) { return read_pod<std::uint64_t>(in); }
inline float read_f32(std::istream& in) { return read_pod<float>(in); }

}  // namespace splatlab::io
