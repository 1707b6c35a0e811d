#pragma once

// Weight file format (all integers and reals little-endian):
//   "PNAV" | u32 version | record*
//   record := u32 name_len | name (UTF-8) | u32 rank | u64 extents[rank] | f64 payload[prod(extents)]
// Records run to end of file.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "pnav/autodiff/array.hpp"

namespace pnav::ad {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct NamedArray {
    std::string name;
    Array value;
    friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

using ParamList = std::vector<NamedArray>;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
bool get_le(std::istream& is, T& v) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) return false;
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    return true;
}

}  // namespace detail

inline void write_weights(std::ostream& os, const ParamList& params) {
    os.write("PNAV", 4);
    detail::put_le<std::uint32_t>(os, kWeightFormatVersion);
    for (const auto& p : params) {
        detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
        for (auto e : p.value.shape()) detail::put_le<std::uint64_t>(os, e);
        for (double v : p.value.data()) detail::put_le<double>(os, v);
    }
}

inline ParamList read_weights(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "PNAV", 4) != 0) throw FormatError("weights: bad magic");
    std::uint32_t version = 0;
    if (!detail::get_le(is, version)) throw FormatError("weights: truncated header");
    if (version != kWeightFormatVersion) throw FormatError("weights: unsupported version " + std::to_string(version));
    ParamList out;
    std::uint32_t name_len = 0;
    while (detail::get_le(is, name_len)) {
        NamedArray p;
        p.name.resize(name_len);
        std::uint32_t rank = 0;
        if (!is.read(p.name.data(), name_len) || !detail::get_le(is, rank)) throw FormatError("weights: truncated record");
        Shape shape(rank);
        for (auto& e : shape) {
            std::uint64_t v = 0;
            if (!detail::get_le(is, v)) throw FormatError("weights: truncated extents");
            e = static_cast<std::size_t>(v);
        }
        std::vector<double> data(shape_size(shape));
        for (auto& d : data)
            if (!detail::get_le(is, d)) throw FormatError("weights: truncated payload for " + p.name);
        p.value = Array(std::move(shape), std::move(data));
        out.push_back(std::move(p));
    }
    return out;
}

inline void save_weights(const std::filesystem::path& path, const ParamList& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_weights(os, params);
}

inline ParamList load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open weight file " + path.string());
    return read_weights(is);
}

}  // namespace pnav::ad
