#pragma once

// BFR1 binary container.
//
//   "BFR1" | u32 version (=1) | u32 layer count | {u32 rows, u32 cols} per layer
//   | f64 weights (row-major) then f64 bias, per layer in table order
//   | zero or more tagged sections: 4-byte tag | u64 byte length | payload
//
// All integers and floats are little-endian. A bare network checkpoint is the
// prefix up to the last bias; generator metadata, latent caches and sample
// dumps ride along as sections (a layer count of zero is valid).

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace bfr::container {

inline constexpr std::array<char, 4> kMagic{'B', 'F', 'R', '1'};
inline constexpr std::uint32_t kVersion = 1;

using Tag = std::array<char, 4>;

constexpr Tag make_tag(const char (&s)[5]) { return {s[0], s[1], s[2], s[3]}; }

struct Section {
    Tag tag{};
    std::string payload;
};

struct File {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    std::vector<Section> sections;

    const Section* find(Tag tag) const;
    const Section& require(Tag tag) const;
};

class ByteWriter {
public:
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void bytes(std::string_view s) { buf_.append(s); }
    void f64s(const Eigen::MatrixXd& m);  // row-major
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string_view bytes(std::size_t n);
    Eigen::MatrixXd f64s(Eigen::Index rows, Eigen::Index cols);  // row-major
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) const;
    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string encode(const File& file);
File decode(std::string_view bytes);

void write_bytes(const std::filesystem::path& path, std::string_view bytes);
std::string read_bytes(const std::filesystem::path& path);

inline void save(const File& file, const std::filesystem::path& path) {
    write_bytes(path, encode(file));
}
inline File load(const std::filesystem::path& path) { return decode(read_bytes(path)); }

// FNV-1a over a byte string; used as the identity of generators.
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace bfr::container
