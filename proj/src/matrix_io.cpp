#include "twincov/matrix_io.hpp"

#include "atomic_file.hpp"
#include "twincov/error.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace twincov {

namespace {

constexpr std::array<char, 4> kMagic{'M', 'A', 'T', '1'};
constexpr std::size_t kHeaderBytes = 20;

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint64_t get_u64(std::string_view in, std::size_t offset) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + static_cast<std::size_t>(i)])) << (8 * i);
    }
    return v;
}

}  // namespace

std::string encode_mat1(const Eigen::MatrixXd& m) {
    std::string out;
    const auto count = static_cast<std::size_t>(m.size());
    out.reserve(kHeaderBytes + 8 * count);
    out.append(kMagic.data(), kMagic.size());
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) put_u64(out, std::bit_cast<std::uint64_t>(m(r, c)));
    }
    return out;
}

Eigen::MatrixXd decode_mat1(std::string_view bytes, const std::string& context) {
    require(bytes.size() >= kHeaderBytes && std::memcmp(bytes.data(), kMagic.data(), 4) == 0, ErrorCode::Parse,
            context + ": missing MAT1 magic");
    const auto rows = get_u64(bytes, 4);
    const auto cols = get_u64(bytes, 12);
    require(rows < (1ULL << 32) && cols < (1ULL << 32), ErrorCode::Parse, context + ": implausible dimensions");
    const auto count = rows * cols;
    require(bytes.size() == kHeaderBytes + 8 * count, ErrorCode::Parse,
            context + ": payload size does not match header dimensions");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t offset = kHeaderBytes;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = std::bit_cast<double>(get_u64(bytes, offset));
            offset += 8;
        }
    }
    return m;
}

void write_mat1(const std::string& path, const Eigen::MatrixXd& m) {
    detail::write_file_atomically(path, encode_mat1(m));
}

Eigen::MatrixXd read_mat1(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_mat1(bytes, "'" + path + "'");
}

bool looks_like_mat1(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::array<char, 4> head{};
    if (!in.read(head.data(), 4)) return false;
    return head == kMagic;
}

}  // namespace twincov
