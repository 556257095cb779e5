#include "ltlab/matrix_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace ltlab {

namespace {

constexpr std::array<char, 4> kMagic = {'L', 'T', 'M', 'X'};

void put_u32_le(std::ostream& out, std::uint32_t v) {
    std::array<unsigned char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b.data()), 4);
}

void put_f64_le(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b.data()), 8);
}

std::uint32_t get_u32_le(std::istream& in, std::size_t offset) {
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
        throw FormatError("matrix record truncated in header", offset);
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64_le(std::istream& in, std::size_t offset) {
    std::array<unsigned char, 8> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 8)) {
        throw FormatError("matrix record truncated in payload", offset);
    }
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void write_matrix(std::ostream& out, const Matrix& m) {
    out.write(kMagic.data(), kMagic.size());
    put_u32_le(out, static_cast<std::uint32_t>(m.rows()));
    put_u32_le(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.raw()) put_f64_le(out, v);
}

Matrix read_matrix(std::istream& in, std::size_t base_offset) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size())) {
        throw FormatError("missing matrix magic", base_offset);
    }
    if (magic != kMagic) {
        throw FormatError("bad matrix magic", base_offset);
    }
    const std::uint32_t rows = get_u32_le(in, base_offset + 4);
    const std::uint32_t cols = get_u32_le(in, base_offset + 8);
    Matrix m(rows, cols);
    std::size_t offset = base_offset + 12;
    for (double& v : m.raw()) {
        v = get_f64_le(in, offset);
        offset += 8;
    }
    return m;
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    write_matrix(out, m);
    if (!out) throw Error("write failed: " + path.string());
}

Matrix load_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open for reading: " + path.string());
    return read_matrix(in);
}

}  // namespace ltlab
